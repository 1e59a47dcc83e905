"""Classical theory as the diagonal restriction of quantum theory.

Transformations are column-substochastic matrices: ``M[j, i]`` is the
probability of moving from input configuration ``i`` to output ``j``, and
states are column vectors, so sequential composition is a matrix product.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quantum import EQ_TOL, OP_TOL, DimensionError, KrausMap, QState

STOCH_TOL = 1e-12


@dataclass(frozen=True)
class CSystem:
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise DimensionError("system size must be >= 1")


@dataclass(frozen=True, eq=False)
class SubstochasticMatrix:
    matrix: np.ndarray

    def __init__(self, matrix, check: bool = True, tol: float = OP_TOL):
        M = np.asarray(matrix, dtype=float)
        if M.ndim != 2:
            raise DimensionError(f"expected a matrix, got shape {M.shape}")
        if check:
            if (M < -tol).any():
                raise ValueError("negative transition probability")
            if (M.sum(axis=0) > 1 + tol).any():
                raise ValueError("column sum exceeds 1")
        object.__setattr__(self, "matrix", M)

    @property
    def in_size(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_size(self) -> int:
        return self.matrix.shape[0]

    def column_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    @classmethod
    def identity(cls, n: int) -> SubstochasticMatrix:
        return cls(np.eye(n), check=False)

    @classmethod
    def from_state(cls, state: CState) -> SubstochasticMatrix:
        return cls(state.vector[:, None], check=False)

    @classmethod
    def from_effect(cls, effect) -> SubstochasticMatrix:
        e = np.asarray(effect, dtype=float)
        if (e < -OP_TOL).any() or (e > 1 + OP_TOL).any():
            raise ValueError("classical effect entries must lie in [0, 1]")
        return cls(e[None, :], check=False)


@dataclass(frozen=True, eq=False)
class CState:
    vector: np.ndarray

    def __init__(self, vector, check: bool = True, tol: float = OP_TOL):
        p = np.asarray(vector, dtype=float).reshape(-1)
        if check:
            if (p < -tol).any():
                raise ValueError("negative probability")
            if p.sum() > 1 + tol:
                raise ValueError(f"state mass {p.sum():.3g} exceeds 1")
        object.__setattr__(self, "vector", p)

    @property
    def size(self) -> int:
        return self.vector.shape[0]

    @property
    def mass(self) -> float:
        return float(self.vector.sum())

    def is_deterministic(self, tol: float = OP_TOL) -> bool:
        return abs(self.mass - 1) <= tol


def c_apply(m: SubstochasticMatrix, s: CState) -> CState:
    if m.in_size != s.size:
        raise DimensionError(f"matrix expects size {m.in_size}, state has {s.size}")
    return CState(m.matrix @ s.vector, check=False)


def c_compose_seq(f: SubstochasticMatrix, g: SubstochasticMatrix) -> SubstochasticMatrix:
    """``g`` after ``f``."""
    if f.out_size != g.in_size:
        raise DimensionError(f"cannot feed size {f.out_size} into {g.in_size}")
    return SubstochasticMatrix(g.matrix @ f.matrix, check=False)


def c_compose_par(f: SubstochasticMatrix, g: SubstochasticMatrix) -> SubstochasticMatrix:
    return SubstochasticMatrix(np.kron(f.matrix, g.matrix), check=False)


def c_coarse_grain(maps: Sequence[SubstochasticMatrix]) -> SubstochasticMatrix:
    shapes = {m.matrix.shape for m in maps}
    if len(shapes) != 1:
        raise DimensionError("coarse-grained matrices must share shape")
    return SubstochasticMatrix(sum(m.matrix for m in maps), check=False)


def c_is_deterministic(m: SubstochasticMatrix, tol: float = STOCH_TOL) -> bool:
    return bool(np.abs(m.column_sums() - 1).max() <= tol)


def c_is_complete(test: Sequence[SubstochasticMatrix], tol: float = OP_TOL) -> bool:
    return c_is_deterministic(c_coarse_grain(test), tol)


def c_deterministic_effect(system: CSystem | int) -> np.ndarray:
    n = system.size if isinstance(system, CSystem) else int(system)
    return np.ones(n)


def embed_to_quantum(x):
    """Diagonal embedding: ``p -> diag(p)``, ``M -> {sqrt(M_ji)|j><i|}``."""
    if isinstance(x, CState):
        return QState(np.diag(x.vector).astype(complex), check=False)
    if isinstance(x, SubstochasticMatrix):
        M = x.matrix
        js, is_ = np.nonzero(M > 0)
        if len(js) == 0:
            return KrausMap(np.zeros((1, M.shape[0], M.shape[1])), check=False)
        ops = np.zeros((len(js), M.shape[0], M.shape[1]), dtype=complex)
        ops[np.arange(len(js)), js, is_] = np.sqrt(M[js, is_])
        return KrausMap(ops, check=False)
    raise TypeError(f"cannot embed {type(x).__name__}")


def random_stochastic_test(
    rng: np.random.Generator, n_in: int, n_out: int, outcomes: int, sparsity: float = 0.3
) -> list[SubstochasticMatrix]:
    """Random complete classical test; the outcome matrices sum to a
    column-stochastic matrix."""
    T = rng.random((outcomes, n_out, n_in))
    T *= rng.random(T.shape) >= sparsity
    for i in range(n_in):
        if T[:, :, i].sum() == 0:
            T[rng.integers(outcomes), rng.integers(n_out), i] = 1.0
    T /= T.sum(axis=(0, 1), keepdims=True)
    return [SubstochasticMatrix(t, check=False) for t in T]


__all__ = [
    "CSystem",
    "CState",
    "SubstochasticMatrix",
    "c_apply",
    "c_compose_seq",
    "c_compose_par",
    "c_coarse_grain",
    "c_is_deterministic",
    "c_is_complete",
    "c_deterministic_effect",
    "embed_to_quantum",
    "random_stochastic_test",
    "EQ_TOL",
]
