"""Finite-dimensional quantum theory: Kraus maps, density operators, effects.

States and effects are the special cases of maps with a trivial (dimension 1)
input or output, so every event can be carried as a :class:`KrausMap`;
:class:`QState` and :class:`QEffect` are the matrix views used at the edges.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

OP_TOL = 1e-9
EQ_TOL = 1e-12
MAX_DIM = 1024


class DimensionError(ValueError):
    pass


class DimensionCapError(DimensionError):
    pass


def _check_cap(dim: int, cap: int = MAX_DIM):
    if dim > cap:
        raise DimensionCapError(f"composite dimension {dim} exceeds cap {cap}")


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class QSystem:
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError("system dimension must be >= 1")


@dataclass(frozen=True, eq=False)
class QState:
    """Subnormalised density operator."""

    matrix: np.ndarray

    def __init__(self, matrix, check: bool = True, tol: float = OP_TOL):
        rho = _as_matrix(matrix)
        if rho.shape[0] != rho.shape[1]:
            raise DimensionError(f"state must be square, got {rho.shape}")
        if check:
            if not np.allclose(rho, rho.conj().T, atol=tol):
                raise ValueError("state is not Hermitian")
            if np.linalg.eigvalsh(rho).min() < -tol:
                raise ValueError("state is not positive semidefinite")
            if np.trace(rho).real > 1 + tol:
                raise ValueError(f"state trace {np.trace(rho).real:.3g} exceeds 1")
        object.__setattr__(self, "matrix", rho)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def is_deterministic(self, tol: float = OP_TOL) -> bool:
        return abs(self.trace - 1) <= tol


@dataclass(frozen=True, eq=False)
class QEffect:
    """POVM element ``0 <= E <= I``."""

    matrix: np.ndarray

    def __init__(self, matrix, check: bool = True, tol: float = OP_TOL):
        E = _as_matrix(matrix)
        if E.shape[0] != E.shape[1]:
            raise DimensionError(f"effect must be square, got {E.shape}")
        if check:
            if not np.allclose(E, E.conj().T, atol=tol):
                raise ValueError("effect is not Hermitian")
            ev = np.linalg.eigvalsh(E)
            if ev.min() < -tol or ev.max() > 1 + tol:
                raise ValueError("effect is not between 0 and I")
        object.__setattr__(self, "matrix", E)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class KrausMap:
    """CP trace-non-increasing map ``rho -> sum_k K_k rho K_k^dag``.

    ``ops`` has shape ``(k, out_dim, in_dim)``.
    """

    ops: np.ndarray

    def __init__(self, ops, check: bool = True, tol: float = OP_TOL):
        a = np.asarray(ops, dtype=complex)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3 or a.shape[0] == 0:
            raise DimensionError(f"expected a nonempty stack of matrices, got shape {a.shape}")
        object.__setattr__(self, "ops", a)
        if check:
            excess = np.linalg.eigvalsh(self.gram() - np.eye(self.in_dim)).max()
            if excess > tol:
                raise ValueError(f"map is trace-increasing (sum K^dag K exceeds I by {excess:.3g})")

    @property
    def in_dim(self) -> int:
        return self.ops.shape[2]

    @property
    def out_dim(self) -> int:
        return self.ops.shape[1]

    def gram(self) -> np.ndarray:
        """``sum_k K_k^dag K_k``."""
        return np.einsum("kai,kaj->ij", self.ops.conj(), self.ops)

    def superoperator(self) -> np.ndarray:
        """Tensor ``S[a, b, i, j]`` with ``M(rho)[a, b] = sum_ij S[a, b, i, j] rho[i, j]``."""
        return np.einsum("kai,kbj->abij", self.ops, self.ops.conj())

    @classmethod
    def identity(cls, dim: int) -> KrausMap:
        return cls(np.eye(dim)[None], check=False)

    @classmethod
    def from_state(cls, state: QState | np.ndarray, tol: float = OP_TOL) -> KrausMap:
        """A preparation as a map from the trivial system: columns ``sqrt(l)|v>``."""
        rho = state.matrix if isinstance(state, QState) else _as_matrix(state)
        w, v = np.linalg.eigh(rho)
        keep = w > tol * 1e-3
        if not keep.any():
            return cls(np.zeros((1, rho.shape[0], 1)), check=False)
        cols = v[:, keep] * np.sqrt(w[keep])
        return cls(cols.T[:, :, None], check=False)

    @classmethod
    def from_effect(cls, effect: QEffect | np.ndarray, tol: float = OP_TOL) -> KrausMap:
        """An observation as a map to the trivial system: rows ``sqrt(l)<v|``."""
        E = effect.matrix if isinstance(effect, QEffect) else _as_matrix(effect)
        w, v = np.linalg.eigh(E)
        keep = w > tol * 1e-3
        if not keep.any():
            return cls(np.zeros((1, 1, E.shape[0])), check=False)
        rows = (v[:, keep] * np.sqrt(w[keep])).conj().T
        return cls(rows[:, None, :], check=False)

    def as_state(self) -> QState:
        if self.in_dim != 1:
            raise DimensionError("map has a nontrivial input, not a state")
        return QState(apply_matrix(self, np.ones((1, 1))), check=False)

    def as_effect(self) -> QEffect:
        if self.out_dim != 1:
            raise DimensionError("map has a nontrivial output, not an effect")
        return QEffect(self.gram(), check=False)


def apply_matrix(m: KrausMap, rho: np.ndarray) -> np.ndarray:
    return np.einsum("kai,ij,kbj->ab", m.ops, rho, m.ops.conj())


def apply(m: KrausMap, state: QState) -> QState:
    if m.in_dim != state.dim:
        raise DimensionError(f"map expects dimension {m.in_dim}, state has {state.dim}")
    return QState(apply_matrix(m, state.matrix), check=False)


def probability(effect: QEffect, state: QState, tol: float = OP_TOL) -> float:
    """``Tr[E rho]``, clamped to [0, 1] only within ``tol`` of the bounds."""
    if effect.dim != state.dim:
        raise DimensionError(f"effect dimension {effect.dim} != state dimension {state.dim}")
    p = float(np.einsum("ij,ji->", effect.matrix, state.matrix).real)
    if p < -tol or p > 1 + tol:
        raise ValueError(f"probability {p:.6g} outside [0, 1]: invalid state or effect")
    return min(max(p, 0.0), 1.0)


def compose_seq(f: KrausMap, g: KrausMap) -> KrausMap:
    """``g`` after ``f``; Kraus set ``{G_j F_k}``."""
    if f.out_dim != g.in_dim:
        raise DimensionError(f"cannot feed dimension {f.out_dim} into {g.in_dim}")
    ops = np.einsum("jab,kbc->jkac", g.ops, f.ops).reshape(-1, g.out_dim, f.in_dim)
    return KrausMap(ops, check=False)


def compose_par(f: KrausMap, g: KrausMap, cap: int = MAX_DIM) -> KrausMap:
    """Tensor product; ``f`` acts on the first factor."""
    _check_cap(max(f.in_dim * g.in_dim, f.out_dim * g.out_dim), cap)
    ops = np.einsum("kab,jcd->kjacbd", f.ops, g.ops)
    return KrausMap(
        ops.reshape(-1, f.out_dim * g.out_dim, f.in_dim * g.in_dim), check=False
    )


def coarse_grain(maps: Sequence[KrausMap]) -> KrausMap:
    """Sum of CP maps: the concatenation of their Kraus sets."""
    if not maps:
        raise ValueError("nothing to coarse-grain")
    shape = (maps[0].out_dim, maps[0].in_dim)
    for m in maps:
        if (m.out_dim, m.in_dim) != shape:
            raise DimensionError("coarse-grained maps must share input and output dimensions")
    return KrausMap(np.concatenate([m.ops for m in maps]), check=False)


def is_deterministic(m: KrausMap, tol: float = OP_TOL) -> bool:
    """Trace preserving: ``||sum K^dag K - I||_op <= tol``."""
    return np.linalg.norm(m.gram() - np.eye(m.in_dim), 2) <= tol


def is_complete(test: Sequence[KrausMap], tol: float = OP_TOL) -> bool:
    return is_deterministic(coarse_grain(test), tol)


def deterministic_effect(system: QSystem | int) -> QEffect:
    d = system.dim if isinstance(system, QSystem) else int(system)
    return QEffect(np.eye(d), check=False)


def choi_matrix(m: KrausMap) -> np.ndarray:
    """``sum_ij |i><j| (x) M(|i><j|)`` with the input factor first."""
    S = m.superoperator()  # a b i j
    d_in, d_out = m.in_dim, m.out_dim
    return S.transpose(2, 0, 3, 1).reshape(d_in * d_out, d_in * d_out)


def is_completely_positive(choi: np.ndarray, tol: float = OP_TOL) -> bool:
    if not np.allclose(choi, choi.conj().T, atol=tol):
        return False
    return np.linalg.eigvalsh(choi).min() >= -tol


# ---------------------------------------------------------------------------
# standard tests

def basis_state(d: int, k: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[k] = 1
    return v


def projector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def fourier_basis(d: int) -> np.ndarray:
    """Columns form a basis mutually unbiased with the computational one."""
    j, k = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    return np.exp(2j * np.pi * j * k / d) / np.sqrt(d)


def measurement(basis: np.ndarray) -> list[KrausMap]:
    """Non-demolition projective measurement in the columns of ``basis``."""
    return [KrausMap(projector(basis[:, k]), check=False) for k in range(basis.shape[1])]


def povm(basis: np.ndarray) -> list[KrausMap]:
    """Demolition measurement: effects ``|b_k><b_k|``."""
    return [KrausMap.from_effect(projector(basis[:, k])) for k in range(basis.shape[1])]


def axis_basis(theta: float, phi: float = 0.0) -> np.ndarray:
    """Qubit eigenbasis of the spin along the axis with polar angle ``theta``."""
    up = np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])
    down = np.array([-np.exp(-1j * phi) * np.sin(theta / 2), np.cos(theta / 2)])
    return np.column_stack([up, down])


def random_isometry(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    g = rng.normal(size=(rows, cols)) + 1j * rng.normal(size=(rows, cols))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng: np.random.Generator, d: int, rank: int | None = None) -> QState:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return QState(rho / np.trace(rho).real, check=False)


def random_test(
    rng: np.random.Generator, d_in: int, d_out: int, outcomes: int, extra: int = 1
) -> list[KrausMap]:
    """Random complete test: a Stinespring isometry cut into Kraus blocks,
    with the blocks dealt out among the outcomes (each gets at least one)."""
    r = outcomes + int(rng.integers(0, extra + 1))
    r = max(r, -(-d_in // d_out))
    V = random_isometry(rng, d_out * r, d_in)
    ops = V.reshape(r, d_out, d_in)
    owner = np.concatenate([np.arange(outcomes), rng.integers(0, outcomes, r - outcomes)])
    return [KrausMap(ops[owner == x], check=False) for x in range(outcomes)]


def random_channel(rng: np.random.Generator, d_in: int, d_out: int, kraus: int = 2) -> KrausMap:
    return coarse_grain(random_test(rng, d_in, d_out, 1, extra=max(kraus - 1, 0)))
