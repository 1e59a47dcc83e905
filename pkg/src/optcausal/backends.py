"""Backends resolve node payload keys to tests and know how to push a batch of
partial results through one node.

A payload is the list of events of a test, one per outcome. For the quantum
backend every event is a :class:`KrausMap` (states and effects included);
for the classical backend a :class:`SubstochasticMatrix`.

The contraction frontier is an array whose first axis enumerates outcome
prefixes; the remaining axes are one (classical) or two (quantum, ket and
bra) copies of the composite frontier space.
"""
from __future__ import annotations

import json
import math
import zlib
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import classical as C
from . import quantum as Q
from .circuit import Circuit, TestNode


class PayloadError(KeyError):
    def __str__(self):
        return self.args[0]


class PayloadBackend:
    """Shared machinery for the quantum and classical backends."""

    name = "abstract"
    copies = 1  # frontier copies of the composite space

    def __init__(self, payloads: Mapping[str, Sequence] | None = None):
        self.payloads: dict[str, tuple] = {}
        for key, test in (payloads or {}).items():
            self.payloads[key] = tuple(self._coerce(e) for e in _as_test(test))
        self._op_cache: dict[str, np.ndarray] = {}

    def with_tests(self, tests: Mapping[str, Sequence]) -> PayloadBackend:
        new = type(self)({})
        new.payloads = dict(self.payloads)
        new._op_cache = dict(self._op_cache)
        for key, test in tests.items():
            new.payloads[key] = tuple(self._coerce(e) for e in _as_test(test))
            new._op_cache.pop(key, None)
        return new

    def test(self, key: str) -> tuple:
        try:
            return self.payloads[key]
        except KeyError:
            raise PayloadError(f"unresolved payload {key!r}") from None

    def check_node(self, circuit: Circuit, node: TestNode):
        test = self.test(node.payload)
        d_in = _port_dim(circuit, node.inputs)
        d_out = _port_dim(circuit, node.outputs)
        if len(test) != node.outcomes:
            raise PayloadError(
                f"payload {node.payload!r} has {len(test)} outcomes, node {node.id} declares {node.outcomes}"
            )
        for e in test:
            if self.shape(e) != (d_out, d_in):
                raise PayloadError(
                    f"payload {node.payload!r} maps {self.shape(e)[1]}->{self.shape(e)[0]},"
                    f" node {node.id} needs {d_in}->{d_out}"
                )

    def alternative_tests(self, circuit: Circuit, node: TestNode, seed: int = 0, n_random: int = 2):
        """Named complete tests with the same port dimensions as ``node``."""
        d_in = _port_dim(circuit, node.inputs)
        d_out = _port_dim(circuit, node.outputs)
        rng = np.random.default_rng([seed, zlib.crc32(node.id.encode())])
        lib = self._library(d_in, d_out)
        for r in range(n_random):
            lib.append((f"random{r}", self._random_test(rng, d_in, d_out, 2 + r)))
        return [(f"@{node.id}/{name}", test) for name, test in lib]

    def spanning_states(self, dim: int) -> list[np.ndarray]:
        raise NotImplementedError

    def effect_basis(self, dim: int) -> list[np.ndarray]:
        raise NotImplementedError


def _as_test(test) -> list:
    if isinstance(test, (list, tuple)):
        return list(test)
    return [test]


def _port_dim(circuit: Circuit, systems: Iterable[str]) -> int:
    return math.prod(circuit.dim(s) for s in systems)


class QuantumBackend(PayloadBackend):
    name = "quantum"
    copies = 2

    def _coerce(self, e):
        if isinstance(e, Q.KrausMap):
            return e
        if isinstance(e, Q.QState):
            return Q.KrausMap.from_state(e)
        if isinstance(e, Q.QEffect):
            return Q.KrausMap.from_effect(e)
        if isinstance(e, (C.SubstochasticMatrix, C.CState)):
            return self._coerce(C.embed_to_quantum(e))
        raise TypeError(f"quantum backend cannot use {type(e).__name__}")

    @staticmethod
    def shape(e: Q.KrausMap):
        return (e.out_dim, e.in_dim)

    def is_complete(self, test: Sequence, tol: float = Q.OP_TOL) -> bool:
        return Q.is_complete([self._coerce(e) for e in test], tol)

    def node_operator(self, key: str) -> np.ndarray:
        """Stacked superoperators ``(outcomes, out, out, in, in)``."""
        op = self._op_cache.get(key)
        if op is None:
            op = np.stack([m.superoperator() for m in self.test(key)])
            self._op_cache[key] = op
        return op

    @staticmethod
    def contract(frontier: np.ndarray, op: np.ndarray, d_in: int, rest: int) -> np.ndarray:
        B = frontier.shape[0]
        X, d_out = op.shape[0], op.shape[1]
        rho = frontier.reshape(B, d_in, rest, d_in, rest).transpose(1, 3, 0, 2, 4)
        new = op.reshape(X * d_out * d_out, d_in * d_in) @ rho.reshape(d_in * d_in, -1)
        new = new.reshape(X, d_out, d_out, B, rest, rest).transpose(3, 0, 1, 4, 2, 5)
        return new.reshape(B * X, d_out * rest, d_out * rest)

    @staticmethod
    def initial() -> np.ndarray:
        return np.ones((1, 1, 1), dtype=complex)

    @staticmethod
    def close(frontier: np.ndarray) -> np.ndarray:
        return frontier[:, 0, 0].real

    def event_tensor(self, event: Q.KrausMap) -> np.ndarray:
        """``T[a, b, i, j]`` built column by column from the Kraus action."""
        d_in, d_out = event.in_dim, event.out_dim
        T = np.zeros((d_out, d_out, d_in, d_in), dtype=complex)
        for i in range(d_in):
            for j in range(d_in):
                unit = np.zeros((d_in, d_in), dtype=complex)
                unit[i, j] = 1
                T[:, :, i, j] = Q.apply_matrix(event, unit)
        return T

    def _library(self, d_in, d_out):
        lib = []
        if d_in == 1:
            for name, basis in (("basis", np.eye(d_out)), ("fourier", Q.fourier_basis(d_out))):
                lib.append((name, [Q.KrausMap.from_state(Q.projector(basis[:, k]) / d_out) for k in range(d_out)]))
            lib.append(("trivial", [Q.KrausMap.from_state(Q.projector(Q.basis_state(d_out, 0)))]))
            return lib
        for name, basis in (("basis", np.eye(d_in)), ("fourier", Q.fourier_basis(d_in))):
            if d_out == d_in:
                lib.append((name, Q.measurement(basis)))
            else:
                # measure, then reprepare |0> on the output
                reprep = Q.basis_state(d_out, 0)
                lib.append((name, [Q.KrausMap(np.outer(reprep, basis[:, k].conj()), check=False) for k in range(d_in)]))
        if d_in == d_out:
            lib.append(("trivial", [Q.KrausMap.identity(d_in)]))
        else:
            reprep = Q.basis_state(d_out, 0)
            lib.append(("trivial", [Q.KrausMap(np.stack([np.outer(reprep, Q.basis_state(d_in, k)) for k in range(d_in)]), check=False)]))
        return lib

    @staticmethod
    def _random_test(rng, d_in, d_out, outcomes):
        return Q.random_test(rng, d_in, d_out, outcomes)

    def spanning_states(self, dim: int) -> list[np.ndarray]:
        """``d^2`` pure states whose span is all Hermitian matrices."""
        states = [Q.projector(Q.basis_state(dim, k)) for k in range(dim)]
        for k in range(dim):
            for l in range(k + 1, dim):
                e_k, e_l = Q.basis_state(dim, k), Q.basis_state(dim, l)
                states.append(Q.projector((e_k + e_l) / np.sqrt(2)))
                states.append(Q.projector((e_k + 1j * e_l) / np.sqrt(2)))
        return states

    def effect_basis(self, dim: int) -> list[np.ndarray]:
        basis = []
        for k in range(dim):
            for l in range(k, dim):
                F = np.zeros((dim, dim), dtype=complex)
                if k == l:
                    F[k, k] = 1
                    basis.append(F)
                    continue
                F[k, l] = F[l, k] = 1
                basis.append(F)
                G = np.zeros((dim, dim), dtype=complex)
                G[k, l], G[l, k] = 1j, -1j
                basis.append(G)
        return basis

    @staticmethod
    def pairing(effect: np.ndarray, state: np.ndarray) -> float:
        return float(np.einsum("ij,ji->", effect, state).real)

    @staticmethod
    def deterministic_effect(dim: int) -> np.ndarray:
        return Q.deterministic_effect(dim).matrix


class ClassicalBackend(PayloadBackend):
    name = "classical"
    copies = 1

    def _coerce(self, e):
        if isinstance(e, C.SubstochasticMatrix):
            return e
        if isinstance(e, C.CState):
            return C.SubstochasticMatrix.from_state(e)
        raise TypeError(f"classical backend cannot use {type(e).__name__}")

    @staticmethod
    def shape(e: C.SubstochasticMatrix):
        return e.matrix.shape

    def is_complete(self, test: Sequence, tol: float = Q.OP_TOL) -> bool:
        return C.c_is_complete([self._coerce(e) for e in test], tol)

    def node_operator(self, key: str) -> np.ndarray:
        op = self._op_cache.get(key)
        if op is None:
            op = np.stack([m.matrix for m in self.test(key)])
            self._op_cache[key] = op
        return op

    @staticmethod
    def contract(frontier, op, d_in, rest):
        B = frontier.shape[0]
        X, d_out = op.shape[0], op.shape[1]
        p = frontier.reshape(B, d_in, rest).transpose(1, 0, 2)
        new = op.reshape(X * d_out, d_in) @ p.reshape(d_in, -1)
        return new.reshape(X, d_out, B, rest).transpose(2, 0, 1, 3).reshape(B * X, d_out * rest)

    @staticmethod
    def initial():
        return np.ones((1, 1))

    @staticmethod
    def close(frontier):
        return frontier[:, 0]

    def event_tensor(self, event: C.SubstochasticMatrix) -> np.ndarray:
        return event.matrix

    def _library(self, d_in, d_out):
        if d_in == 1:
            return [
                ("basis", [C.SubstochasticMatrix(np.eye(d_out)[:, [k]] / d_out) for k in range(d_out)]),
                ("trivial", [C.SubstochasticMatrix(np.eye(d_out)[:, [0]])]),
            ]
        lib = []
        if d_out == d_in:
            lib.append(("basis", [C.SubstochasticMatrix(np.diag(np.eye(d_in)[k])) for k in range(d_in)]))
            lib.append(("trivial", [C.SubstochasticMatrix.identity(d_in)]))
        else:
            reset = np.zeros((d_out, d_in))
            reset[0] = 1
            lib.append(("basis", [C.SubstochasticMatrix(reset * np.eye(d_in)[k]) for k in range(d_in)]))
            lib.append(("trivial", [C.SubstochasticMatrix(reset)]))
        return lib

    @staticmethod
    def _random_test(rng, d_in, d_out, outcomes):
        return C.random_stochastic_test(rng, d_in, d_out, outcomes)

    def spanning_states(self, dim: int) -> list[np.ndarray]:
        return list(np.eye(dim))

    def effect_basis(self, dim: int) -> list[np.ndarray]:
        return list(np.eye(dim))

    @staticmethod
    def pairing(effect, state) -> float:
        return float(effect @ state)

    @staticmethod
    def deterministic_effect(dim: int) -> np.ndarray:
        return C.c_deterministic_effect(dim)


def embed_backend(backend: ClassicalBackend) -> QuantumBackend:
    """Quantum backend resolving the same keys to the embedded maps."""
    return QuantumBackend(
        {k: [C.embed_to_quantum(e) for e in test] for k, test in backend.payloads.items()}
    )


class TableBackend:
    """Negative control: joint distributions given outright, indexed by the
    payload keys of the single preparation and single observation node.

    Nothing forces these tables to come from a causal theory, so they can
    plant a signal from the observation choice back to the preparation.
    """

    name = "table"

    def __init__(self, tables: Mapping[tuple[str, str], Sequence], tol: float = Q.OP_TOL):
        self.tables: dict[tuple[str, str], np.ndarray] = {}
        for key, t in tables.items():
            arr = np.asarray(t, dtype=float)
            if arr.ndim != 2:
                raise ValueError(f"table {key} must be 2-dimensional")
            if (arr < -tol).any() or abs(arr.sum() - 1) > tol:
                raise ValueError(f"table {key} is not a normalised distribution")
            self.tables[tuple(key)] = arr

    def endpoints(self, circuit: Circuit) -> tuple[TestNode, TestNode]:
        preps = [n for n in circuit.nodes if n.is_preparation]
        obs = [n for n in circuit.nodes if n.is_observation]
        if len(circuit.nodes) != 2 or len(preps) != 1 or len(obs) != 1 or preps[0] is obs[0]:
            raise ValueError("table backend needs exactly one preparation and one observation node")
        return preps[0], obs[0]

    def joint(self, circuit: Circuit, order: Sequence[str]) -> np.ndarray:
        prep, obs = self.endpoints(circuit)
        key = (prep.payload, obs.payload)
        if key not in self.tables:
            raise PayloadError(f"no table for preparation {key[0]!r} with observation {key[1]!r}")
        t = self.tables[key]
        if t.shape != (prep.outcomes, obs.outcomes):
            raise PayloadError(f"table {key} has shape {t.shape}, circuit needs {(prep.outcomes, obs.outcomes)}")
        return t if list(order) == [prep.id, obs.id] else t.T

    def alternative_tests(self, circuit: Circuit, node: TestNode, seed: int = 0, n_random: int = 0):
        prep, obs = self.endpoints(circuit)
        if node.id == prep.id:
            keys = sorted({a for a, b in self.tables if b == obs.payload})
        else:
            keys = sorted({b for a, b in self.tables if a == prep.payload})
        return [(k, None) for k in keys]

    def is_complete(self, test, tol: float = Q.OP_TOL) -> bool:
        return True

    def normalizing_functionals(self) -> dict[str, dict[tuple[str, int], float]]:
        """For each observation test, the coarse-grained effect as a
        functional on the preparation events it is paired with."""
        out: dict[str, dict] = {}
        for (a, b), t in sorted(self.tables.items()):
            row = t.sum(axis=1)
            for i, v in enumerate(row):
                out.setdefault(b, {})[(a, i)] = float(v)
        return out


# ---------------------------------------------------------------------------
# payload files

def _complex(x):
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ValueError(f"complex entries are [re, im] pairs, got {x!r}")
        return complex(float(x[0]), float(x[1]))
    return complex(float(x))


def _cmatrix(rows) -> np.ndarray:
    return np.array([[_complex(v) for v in row] for row in rows], dtype=complex)


def parse_event(obj: Mapping):
    if not isinstance(obj, Mapping) or len(obj) != 1:
        raise ValueError(f"event must be a one-key object, got {obj!r}")
    (kind, val), = obj.items()
    if kind == "kraus":
        mats = [_cmatrix(m) for m in val]
        return Q.KrausMap(np.stack(mats))
    if kind == "state":
        return Q.QState(_cmatrix(val))
    if kind == "effect":
        return Q.QEffect(_cmatrix(val))
    if kind == "stochastic":
        return C.SubstochasticMatrix(np.array(val, dtype=float))
    if kind == "pvec":
        return C.CState(np.array(val, dtype=float))
    if kind == "ceffect":
        return C.SubstochasticMatrix.from_effect(val)
    raise ValueError(f"unknown event kind {kind!r}")


def load_payloads(text: str) -> dict[str, list]:
    """Payload document: key -> event object or list of event objects."""
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("payload file must be a JSON object")
    doc.pop("tables", None)
    return {key: [parse_event(e) for e in _as_test(val)] for key, val in doc.items()}


def load_tables(text: str) -> dict[tuple[str, str], np.ndarray]:
    doc = json.loads(text)
    tables = {}
    for entry in doc.get("tables", []):
        tables[(entry["prep"], entry["obs"])] = np.array(entry["p"], dtype=float)
    return tables


def make_backend(kind: str, text: str):
    if kind == "quantum":
        return QuantumBackend(load_payloads(text))
    if kind == "classical":
        return ClassicalBackend(load_payloads(text))
    if kind == "table":
        return TableBackend(load_tables(text))
    raise ValueError(f"unknown backend {kind!r}")


def _encode_matrix(m: np.ndarray):
    m = np.asarray(m)
    if np.iscomplexobj(m) and np.abs(m.imag).max(initial=0) > 0:
        return [[[float(v.real), float(v.imag)] for v in row] for row in m]
    return [[float(v.real) for v in row] for row in m]


def dump_payloads(backend: PayloadBackend) -> str:
    """Inverse of :func:`load_payloads` (events written as ``kraus`` or
    ``stochastic``)."""
    doc = {}
    for key, test in sorted(backend.payloads.items()):
        if isinstance(backend, QuantumBackend):
            doc[key] = [{"kraus": [_encode_matrix(k) for k in e.ops]} for e in test]
        else:
            doc[key] = [{"stochastic": _encode_matrix(e.matrix)} for e in test]
    return json.dumps(doc, indent=1)
