"""Joint outcome distributions of closed circuits and the causality checks.

Contraction walks the nodes in topological order, carrying every outcome
prefix at once as a batch of (unnormalised) states on the open wires.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import quantum as Q
from .backends import PayloadBackend, QuantumBackend, TableBackend
from .circuit import (
    Circuit,
    CircuitError,
    Port,
    SystemType,
    TestNode,
    UnknownNodeError,
    Wire,
    past_cone,
    topological_order,
    validate,
)

INVARIANCE_TOL = 1e-9
FALSIFY_TOL = 1e-12


class IncompleteTestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class JointDistribution:
    axes: tuple[tuple[str, int], ...]
    table: np.ndarray

    def __post_init__(self):
        shape = tuple(k for _, k in self.axes)
        if self.table.shape != shape:
            raise ValueError(f"table shape {self.table.shape} does not match axes {shape}")

    @property
    def nodes(self) -> list[str]:
        return [n for n, _ in self.axes]

    @property
    def total(self) -> float:
        return float(self.table.sum())

    def __getitem__(self, outcome: tuple[int, ...]) -> float:
        return float(self.table[tuple(outcome)])

    def items(self):
        for idx in itertools.product(*(range(k) for _, k in self.axes)):
            yield idx, float(self.table[idx])

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return dict(self.items())


def marginal(dist: JointDistribution, keep: Iterable[str]) -> JointDistribution:
    keep = set(keep)
    names = dist.nodes
    unknown = keep - set(names)
    if unknown:
        raise UnknownNodeError(sorted(unknown)[0])
    drop = tuple(i for i, n in enumerate(names) if n not in keep)
    axes = tuple(a for a in dist.axes if a[0] in keep)
    return JointDistribution(axes, dist.table.sum(axis=drop) if drop else dist.table.copy())


def _require_valid(circuit: Circuit):
    problems = validate(circuit)
    if problems:
        raise CircuitError("invalid circuit: " + "; ".join(problems))
    if not circuit.closed:
        raise CircuitError("circuit is not closed")


def joint_distribution(circuit: Circuit, backend, cap: int = Q.MAX_DIM) -> JointDistribution:
    """Probability of every outcome tuple; axes follow topological order."""
    _require_valid(circuit)
    order = topological_order(circuit)
    axes = tuple((n, circuit.node(n).outcomes) for n in order)
    if isinstance(backend, TableBackend):
        return JointDistribution(axes, backend.joint(circuit, order))

    for n in order:
        backend.check_node(circuit, circuit.node(n))
    copies = backend.copies
    frontier = backend.initial()
    legs: list[str] = []
    for n in order:
        node = circuit.node(n)
        ins = list(circuit.input_wires[n])
        dims = [circuit.dim(circuit.wire_map[w].system) for w in legs]
        pos = [legs.index(w) for w in ins]
        rest = [i for i in range(len(legs)) if i not in pos]
        perm = pos + rest
        L = len(legs)
        B = frontier.shape[0]
        t = frontier.reshape((B,) + tuple(dims) * copies)
        t = t.transpose([0] + [1 + c * L + p for c in range(copies) for p in perm])
        d_in = math.prod(dims[p] for p in pos)
        r = math.prod(dims[p] for p in rest)
        frontier = backend.contract(t.reshape(B, -1), backend.node_operator(node.payload), d_in, r)
        legs = list(circuit.output_wires[n]) + [legs[p] for p in rest]
        d_new = math.prod(circuit.dim(circuit.wire_map[w].system) for w in legs)
        Q._check_cap(d_new, cap)
    if legs:
        raise CircuitError(f"wires left open after contraction: {legs}")
    probs = backend.close(frontier)
    return JointDistribution(axes, probs.reshape(tuple(k for _, k in axes)))


def brute_force_distribution(circuit: Circuit, backend: PayloadBackend) -> JointDistribution:
    """Independent check on :func:`joint_distribution`.

    Every outcome tuple is evaluated on its own as one tensor-network
    contraction of per-event process tensors (built by applying each event to
    matrix units), with no ordering of the nodes.
    """
    _require_valid(circuit)
    order = topological_order(circuit)
    axes = tuple((n, circuit.node(n).outcomes) for n in order)
    copies = backend.copies
    wire_ids = {w.id: i for i, w in enumerate(circuit.wires)}

    def idx(w, c):
        return copies * wire_ids[w] + c

    tensors = {}
    labels = {}
    for n in order:
        node = circuit.node(n)
        outs = [circuit.dim(s) for s in node.outputs]
        ins = [circuit.dim(s) for s in node.inputs]
        tensors[n] = [
            backend.event_tensor(e).reshape(tuple(outs) * copies + tuple(ins) * copies)
            for e in backend.test(node.payload)
        ]
        labels[n] = [idx(w, c) for c in range(copies) for w in circuit.output_wires[n]]
        labels[n] += [idx(w, c) for c in range(copies) for w in circuit.input_wires[n]]

    table = np.zeros(tuple(k for _, k in axes))
    for outcome in itertools.product(*(range(k) for _, k in axes)):
        operands = []
        for n, x in zip(order, outcome):
            operands += [tensors[n][x], labels[n]]
        val = np.einsum(*operands, [])
        table[outcome] = float(np.real(val))
    return JointDistribution(axes, table)


# ---------------------------------------------------------------------------
# reports

@dataclass
class CausalityReport:
    kind: str
    tolerance: float
    max_deviation: float
    witness: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tolerance": self.tolerance,
            "max_deviation": self.max_deviation,
            "witness": self.witness,
            "verdict": self.verdict,
            "details": _jsonable(self.details),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> CausalityReport:
        rep = cls(d["kind"], d["tolerance"], d["max_deviation"], d["witness"], dict(d.get("details", {})))
        if rep.verdict != d["verdict"]:
            raise ValueError("verdict inconsistent with deviation and tolerance")
        return rep


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# ---------------------------------------------------------------------------
# marginal invariance / no signalling from the future

def _register(backend, swap: TestNode, alternatives: Sequence) -> tuple[object, list[str]]:
    """Give unnamed alternative tests keys in a derived backend."""
    keys, extra = [], {}
    for i, alt in enumerate(alternatives):
        if isinstance(alt, str):
            keys.append(alt)
        elif isinstance(alt, tuple) and len(alt) == 2 and isinstance(alt[0], str):
            name, test = alt
            keys.append(name)
            if test is not None:
                extra[name] = test
        else:
            name = f"@{swap.id}/alt{i}"
            keys.append(name)
            extra[name] = alt
    if extra:
        backend = backend.with_tests(extra)
    return backend, keys


def _test_outcomes(backend, key: str) -> int | None:
    if isinstance(backend, TableBackend):
        return None
    return len(backend.test(key))


def _target_marginals(circuit, backend, target, swap, keys, tol):
    out = []
    for key in keys:
        if not isinstance(backend, TableBackend) and not backend.is_complete(backend.test(key), tol):
            raise IncompleteTestError(f"alternative {key!r} at node {swap.id} is not a complete test")
        variant = circuit.with_payload(swap.id, key, _test_outcomes(backend, key))
        dist = joint_distribution(variant, backend)
        out.append((key, marginal(dist, {target}).table))
    return out


def _worst(target, swap_id, marginals, best):
    dev, witness = best
    for (ka, pa), (kb, pb) in itertools.combinations(marginals, 2):
        diff = np.abs(pa - pb)
        i = int(np.argmax(diff))
        if diff[i] > dev:
            dev = float(diff[i])
            witness = f"marginal of {target} outcome {i} moves by {dev:.3g} when {swap_id} switches {ka} -> {kb}"
    return dev, witness


def check_marginal_invariance(
    circuit: Circuit,
    backend,
    target: str,
    swap_node: str,
    alternatives: Sequence,
    tol: float = INVARIANCE_TOL,
) -> CausalityReport:
    """Does the marginal of ``target`` change as ``swap_node`` runs different
    complete tests? ``alternatives`` are payload keys, ``(key, test)`` pairs,
    or bare tests."""
    _require_valid(circuit)
    swap = circuit.node(swap_node)
    circuit.node(target)
    if swap_node == target or swap_node in past_cone(circuit, target):
        raise ValueError(f"{swap_node} is in the past cone of {target} (or is {target})")
    backend, keys = _register(backend, swap, alternatives)
    marg = _target_marginals(circuit, backend, target, swap, keys, tol)
    dev, witness = _worst(target, swap_node, marg, (0.0, "no alternative pair differs"))
    return CausalityReport(
        "marginal-invariance",
        tol,
        dev,
        witness,
        {"target": target, "swap_node": swap_node, "alternatives": keys,
         "marginals": {k: m for k, m in marg}},
    )


def check_no_signaling_from_future(
    circuit: Circuit,
    backend,
    target: str,
    seed: int = 0,
    n_random: int = 2,
    tol: float = INVARIANCE_TOL,
    jobs: int = 1,
) -> CausalityReport:
    """Swap every test outside the past cone of ``target`` through a library
    of alternatives and report the largest shift of ``target``'s marginal."""
    _require_valid(circuit)
    circuit.node(target)
    past = past_cone(circuit, target)
    swaps = [n for n in topological_order(circuit) if n != target and n not in past]

    def one(swap_id):
        swap = circuit.node(swap_id)
        lib = backend.alternative_tests(circuit, swap, seed=seed, n_random=n_random)
        own = [swap.payload] if backend.is_complete(_own_test(backend, swap), tol) else []
        alts = own + [a for a in lib if a[0] != swap.payload]
        if len(alts) < 2:
            return swap_id, None
        b, keys = _register(backend, swap, alts)
        return swap_id, _target_marginals(circuit, b, target, swap, keys, tol)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, swaps))
    else:
        results = [one(s) for s in swaps]

    best = (0.0, "no alternative pair differs")
    skipped = []
    for swap_id, marg in results:  # deterministic reduction in topological order
        if marg is None:
            skipped.append(swap_id)
            continue
        best = _worst(target, swap_id, marg, best)
    return CausalityReport(
        "no-signaling",
        tol,
        best[0],
        best[1],
        {"target": target, "swapped": [s for s in swaps if s not in skipped], "skipped": skipped},
    )


def _own_test(backend, node):
    if isinstance(backend, TableBackend):
        return None
    return backend.test(node.payload)


# ---------------------------------------------------------------------------
# deterministic effect uniqueness

def check_deterministic_effect_uniqueness(
    backend, system=None, states: Sequence[np.ndarray] | None = None, tol: float = INVARIANCE_TOL
) -> CausalityReport:
    """Solve ``<e, s> = 1`` over deterministic states ``s`` for the effect ``e``.

    With a spanning family of states the solution is unique and must be the
    backend's deterministic effect. Each null direction of the linear system
    yields another candidate, one unit away in coefficient space.
    """
    if isinstance(backend, TableBackend):
        return _table_uniqueness(backend, tol)
    dim = getattr(system, "dim", getattr(system, "size", system))
    if dim is None:
        raise ValueError("a system (dimension) is required")
    dim = int(dim)
    states = backend.spanning_states(dim) if states is None else list(states)
    basis = backend.effect_basis(dim)
    A = np.array([[backend.pairing(F, s) for F in basis] for s in states])
    coef, *_ = np.linalg.lstsq(A, np.ones(len(states)), rcond=None)
    _, sv, vh = np.linalg.svd(A)
    rank = int((sv > 1e-10 * max(sv.max(), 1)).sum())
    null = vh[rank:]
    ref = backend.deterministic_effect(dim)

    def build(c):
        return sum(ci * F for ci, F in zip(c, basis))

    E = build(coef)
    residual = float(np.abs(A @ coef - 1).max())
    candidates = [E] + [build(coef + v) for v in null]
    devs = [float(np.abs(c - ref).max()) for c in candidates]
    worst = int(np.argmax(devs))
    dev = max(devs + [residual])
    if null.shape[0]:
        witness = f"{null.shape[0]} free direction(s): candidate {worst} differs from the reference by {devs[worst]:.3g}"
    else:
        witness = f"unique solution, max |E - E_det| = {devs[0]:.3g}"
    return CausalityReport(
        "uniqueness",
        tol,
        dev,
        witness,
        {"dim": dim, "rank": rank, "unknowns": len(basis), "residual": residual, "solution": E},
    )


def _table_uniqueness(backend: TableBackend, tol: float) -> CausalityReport:
    funcs = backend.normalizing_functionals()
    dev, witness = 0.0, "all observation tests coarse-grain to the same effect"
    for (b1, f1), (b2, f2) in itertools.combinations(sorted(funcs.items()), 2):
        for key in sorted(set(f1) & set(f2)):
            d = abs(f1[key] - f2[key])
            if d > dev:
                dev = d
                witness = f"observation tests {b1} and {b2} give preparation event {key[0]}:{key[1]} weights {f1[key]:.6g} vs {f2[key]:.6g}"
    return CausalityReport(
        "uniqueness", tol, dev, witness,
        {"functionals": {b: {f"{a}:{i}": v for (a, i), v in f.items()} for b, f in funcs.items()}},
    )


# ---------------------------------------------------------------------------
# cascade experiment

def _cascade(prep: Q.KrausMap, test_a, test_b) -> np.ndarray:
    """Joint ``p(i, j)`` of preparation -> test A -> test B (B demolished if it
    has an output, i.e. traced out)."""
    d0, d1 = prep.out_dim, test_a[0].out_dim
    d2 = test_b[0].out_dim
    systems = [SystemType("A", d0), SystemType("B", d1)]
    nodes = [TestNode("0prep", (), ("A",), 1, "prep"), TestNode("1a", ("A",), ("B",), len(test_a), "a")]
    wires = [Wire("w0", "A", Port("0prep", 0), Port("1a", 0)), Wire("w1", "B", Port("1a", 0), Port("2b", 0))]
    tests = {"prep": [prep], "a": list(test_a), "b": list(test_b)}
    if d2 > 1:
        systems.append(SystemType("C", d2))
        nodes.append(TestNode("2b", ("B",), ("C",), len(test_b), "b"))
        nodes.append(TestNode("3tr", ("C",), (), 1, "tr"))
        wires.append(Wire("w2", "C", Port("2b", 0), Port("3tr", 0)))
        tests["tr"] = [Q.KrausMap.from_effect(np.eye(d2))]
    else:
        nodes.append(TestNode("2b", ("B",), (), len(test_b), "b"))
    circ = Circuit(systems, nodes, wires)
    dist = joint_distribution(circ, QuantumBackend(tests))
    return marginal(dist, {"1a", "2b"}).table


def _to_test(test) -> list[Q.KrausMap]:
    return [QuantumBackend({})._coerce(e) for e in (test if isinstance(test, (list, tuple)) else [test])]


def falsification_experiment(
    prep,
    test_a,
    test_b,
    test_b_alt,
    test_a_alt=None,
    tol: float = FALSIFY_TOL,
) -> CausalityReport:
    """Cascade of two tests after a fixed preparation.

    ``test_a`` has two outcomes and outcome 0 is impossible on ``prep``.
    Causality says outcome 0 stays impossible whichever second test runs. The
    report also gives the forward direction: the statistics of the second
    test under ``test_a`` versus ``test_a_alt`` (default: do nothing).
    """
    prep = _to_test(prep)
    if len(prep) != 1:
        raise ValueError("the preparation must be a single state")
    prep = prep[0]
    test_a, test_b, test_b_alt = _to_test(test_a), _to_test(test_b), _to_test(test_b_alt)
    if test_a_alt is None:
        test_a_alt = [Q.KrausMap.identity(prep.out_dim)]
    test_a_alt = _to_test(test_a_alt)
    if len(test_a) != 2:
        raise ValueError("test A must have exactly two outcomes")
    for name, t in (("A", test_a), ("A'", test_a_alt), ("B", test_b), ("B'", test_b_alt)):
        if not Q.is_complete(t):
            raise IncompleteTestError(f"test {name} is not complete")
    p0 = Q.apply_matrix(test_a[0], Q.apply_matrix(prep, np.ones((1, 1)))).trace().real
    if abs(p0) > tol:
        raise ValueError(f"Tr[A_0(rho)] = {p0:.3g} is not zero")

    joint_b = _cascade(prep, test_a, test_b)
    joint_b_alt = _cascade(prep, test_a, test_b_alt)
    pa_b, pa_b_alt = joint_b.sum(axis=1), joint_b_alt.sum(axis=1)
    fwd = {}
    for label, tb in (("B", test_b), ("B'", test_b_alt)):
        under_a = _cascade(prep, test_a, tb).sum(axis=0)
        under_alt = _cascade(prep, test_a_alt, tb).sum(axis=0)
        fwd[label] = (under_a, under_alt)
    forward_dev = max(float(np.abs(a - b).max()) for a, b in fwd.values())
    dev = float(max(pa_b[0], pa_b_alt[0], 0.0))
    return CausalityReport(
        "falsification",
        tol,
        dev,
        f"p_A(0) = {pa_b[0]:.3g} with B, {pa_b_alt[0]:.3g} with B'",
        {
            "p_A_with_B": pa_b,
            "p_A_with_B_alt": pa_b_alt,
            "p_A_shift": float(np.abs(pa_b - pa_b_alt).max()),
            "p_B_after_A": fwd["B"][0],
            "p_B_after_A_alt": fwd["B"][1],
            "p_B_alt_after_A": fwd["B'"][0],
            "p_B_alt_after_A_alt": fwd["B'"][1],
            "forward_deviation": forward_dev,
        },
    )
