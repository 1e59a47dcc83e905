"""Seeded random closed circuits with random complete tests as payloads."""
from __future__ import annotations

import math

import numpy as np

from . import classical as C
from . import quantum as Q
from .backends import ClassicalBackend, QuantumBackend
from .circuit import Circuit, Port, SystemType, TestNode, Wire


def random_dag_circuit(
    rng: np.random.Generator,
    max_nodes: int = 6,
    dims: tuple[int, ...] = (2, 3),
    max_composite: int = 64,
    max_outcomes: int = 3,
    max_outputs: int = 2,
) -> Circuit:
    """Random closed circuit.

    Nodes are created in order; each takes a random subset of the wires still
    open, the last takes all of them. The product of all wire dimensions stays
    within ``max_composite``.
    """
    n = int(rng.integers(2, max_nodes + 1))
    systems = {d: SystemType(f"S{d}", d) for d in dims}
    open_wires: list[tuple[str, int, Port]] = []
    nodes, wires = [], []
    composite = 1
    for k in range(n):
        nid = f"n{k}"
        last = k == n - 1
        if last:
            take = list(open_wires)
        elif k == 0:
            take = []
        else:
            take = [w for w in open_wires if rng.random() < 0.5]
        open_wires = [w for w in open_wires if w not in take]
        outs = []
        if not last:
            n_out = int(rng.integers(0 if take else 1, max_outputs + 1))
            for _ in range(n_out):
                d = int(rng.choice(dims))
                if composite * d > max_composite:
                    d = min(dims)
                    if composite * d > max_composite:
                        break
                composite *= d
                outs.append(d)
        for i, (label, d, src) in enumerate(take):
            wires.append(Wire(label, systems[d].label, src, Port(nid, i)))
        for j, d in enumerate(outs):
            open_wires.append((f"w{len(wires) + len(open_wires)}_{nid}", d, Port(nid, j)))
        nodes.append(
            TestNode(
                nid,
                tuple(systems[d].label for _, d, _ in take),
                tuple(systems[d].label for d in outs),
                int(rng.integers(1, max_outcomes + 1)),
                nid,
            )
        )
    return Circuit(systems.values(), nodes, wires)


def random_payloads(rng: np.random.Generator, circuit: Circuit, kind: str = "quantum"):
    """A complete random test for every node, keyed by the node payload."""
    tests = {}
    for node in circuit.nodes:
        d_in = math.prod(circuit.dim(s) for s in node.inputs)
        d_out = math.prod(circuit.dim(s) for s in node.outputs)
        if kind == "quantum":
            tests[node.payload] = Q.random_test(rng, d_in, d_out, node.outcomes)
        else:
            tests[node.payload] = C.random_stochastic_test(rng, d_in, d_out, node.outcomes)
    return QuantumBackend(tests) if kind == "quantum" else ClassicalBackend(tests)


def random_circuit(seed: int, kind: str = "quantum", **kw):
    rng = np.random.default_rng(seed)
    circuit = random_dag_circuit(rng, **kw)
    return circuit, random_payloads(rng, circuit, kind)


def random_dag(rng: np.random.Generator, n_nodes: int, p_edge: float = 0.3) -> Circuit:
    """Random DAG of qubit wires with no constraint on dimension, for
    structural tests (cones, orderings, cuts). Node ids are shuffled so the
    id order is not a topological order."""
    names = [f"v{i}" for i in rng.permutation(n_nodes)]
    edges = [(a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes) if rng.random() < p_edge]
    ins = {i: 0 for i in range(n_nodes)}
    outs = {i: 0 for i in range(n_nodes)}
    wires = []
    for a, b in edges:
        wires.append(Wire(f"e{len(wires)}", "q", Port(names[a], outs[a]), Port(names[b], ins[b])))
        outs[a] += 1
        ins[b] += 1
    nodes = [TestNode(names[i], ("q",) * ins[i], ("q",) * outs[i]) for i in range(n_nodes)]
    return Circuit([SystemType("q", 2)], nodes, wires)
