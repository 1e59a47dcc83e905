"""Closed circuits as directed acyclic graphs of tests wired by typed systems.

A circuit is a set of :class:`TestNode` objects connected by :class:`Wire`
objects. Each wire carries one system from an output port of its source node
to an input port of its target node. In an open circuit a wire endpoint may be
the boundary, written as ``None``.

Everything here is immutable; editing helpers return new circuits.
"""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping

TRIVIAL = "I"


class CircuitError(ValueError):
    pass


class UnknownNodeError(CircuitError, KeyError):
    def __init__(self, node_id):
        super().__init__(f"unknown node {node_id!r}")
        self.node_id = node_id

    def __str__(self):
        return self.args[0]


class CycleError(CircuitError):
    pass


class InvalidCutError(CircuitError):
    pass


class CircuitParseError(CircuitError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class SystemType:
    """A wire type. ``dim`` is the backend descriptor (Hilbert-space dimension
    for the quantum backend, number of configurations for the classical one)."""

    label: str
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise CircuitError(f"system {self.label!r} has dimension {self.dim} < 1")
        if self.label == TRIVIAL and self.dim != 1:
            raise CircuitError("the trivial system must have dimension 1")

    @property
    def trivial(self) -> bool:
        return self.label == TRIVIAL


@dataclass(frozen=True, order=True)
class Port:
    node: str
    index: int

    def __str__(self):
        return f"{self.node}.{self.index}"


@dataclass(frozen=True)
class Wire:
    """A system-typed link. ``source`` / ``target`` of ``None`` mean boundary."""

    id: str
    system: str
    source: Port | None
    target: Port | None


@dataclass(frozen=True)
class TestNode:
    """A test: ``outcomes`` alternative events sharing the same ports.

    Ports carrying the trivial system are dropped, so a preparation is a node
    with no input ports and an observation a node with no output ports.
    """

    id: str
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    outcomes: int = 1
    payload: str = ""

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(s for s in self.inputs if s != TRIVIAL))
        object.__setattr__(self, "outputs", tuple(s for s in self.outputs if s != TRIVIAL))
        if not self.payload:
            object.__setattr__(self, "payload", self.id)

    @property
    def is_preparation(self) -> bool:
        return not self.inputs

    @property
    def is_observation(self) -> bool:
        return not self.outputs


def _system_registry(systems: Iterable[SystemType] | Mapping[str, SystemType]):
    if isinstance(systems, Mapping):
        systems = systems.values()
    reg = {}
    for s in systems:
        if s.label in reg and reg[s.label] != s:
            raise CircuitError(f"system {s.label!r} declared twice")
        reg[s.label] = s
    reg.setdefault(TRIVIAL, SystemType(TRIVIAL, 1))
    return reg


class Circuit:
    """Immutable circuit. Nodes and wires are kept sorted by id, so two
    circuits built from the same parts compare equal."""

    def __init__(self, systems, nodes, wires, closed=True):
        self.systems: dict[str, SystemType] = _system_registry(systems)
        self.nodes: tuple[TestNode, ...] = tuple(sorted(nodes, key=lambda n: n.id))
        self.wires: tuple[Wire, ...] = tuple(sorted(wires, key=lambda w: w.id))
        self.closed = bool(closed)
        self._cache: dict = {}

    def __repr__(self):
        return f"Circuit(nodes={[n.id for n in self.nodes]}, wires={len(self.wires)}, closed={self.closed})"

    def __eq__(self, other):
        if not isinstance(other, Circuit):
            return NotImplemented
        return (
            self.closed == other.closed
            and self.nodes == other.nodes
            and self.wires == other.wires
            and self.systems == other.systems
        )

    def __hash__(self):
        return hash((self.nodes, self.wires, self.closed))

    @cached_property
    def node_map(self) -> dict[str, TestNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def wire_map(self) -> dict[str, Wire]:
        return {w.id: w for w in self.wires}

    def node(self, node_id: str) -> TestNode:
        try:
            return self.node_map[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def dim(self, system: str) -> int:
        return self.systems[system].dim

    @cached_property
    def input_wires(self) -> dict[str, tuple[str | None, ...]]:
        """Wire id attached to each input port, in port order (``None`` if unwired)."""
        out = {n.id: [None] * len(n.inputs) for n in self.nodes}
        for w in self.wires:
            t = w.target
            if t is not None and t.node in out and 0 <= t.index < len(out[t.node]):
                out[t.node][t.index] = w.id
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def output_wires(self) -> dict[str, tuple[str | None, ...]]:
        out = {n.id: [None] * len(n.outputs) for n in self.nodes}
        for w in self.wires:
            s = w.source
            if s is not None and s.node in out and 0 <= s.index < len(out[s.node]):
                out[s.node][s.index] = w.id
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def successors(self) -> dict[str, tuple[str, ...]]:
        succ = {n.id: set() for n in self.nodes}
        for w in self.wires:
            if w.source and w.target and w.source.node in succ and w.target.node in succ:
                succ[w.source.node].add(w.target.node)
        return {k: tuple(sorted(v)) for k, v in succ.items()}

    @cached_property
    def predecessors(self) -> dict[str, tuple[str, ...]]:
        pred = {n.id: set() for n in self.nodes}
        for a, bs in self.successors.items():
            for b in bs:
                pred[b].add(a)
        return {k: tuple(sorted(v)) for k, v in pred.items()}

    def with_payload(self, node_id: str, payload: str, outcomes: int | None = None) -> Circuit:
        """Copy of the circuit with one node's test replaced."""
        n = self.node(node_id)
        new = replace(n, payload=payload, outcomes=n.outcomes if outcomes is None else outcomes)
        nodes = [new if m.id == node_id else m for m in self.nodes]
        return Circuit(self.systems, nodes, self.wires, self.closed)


def validate(circuit: Circuit) -> list[str]:
    """Return every structural violation of ``circuit``; empty means valid."""
    problems = []
    seen = set()
    for n in circuit.nodes:
        if n.id in seen:
            problems.append(f"duplicate node: {n.id}")
        seen.add(n.id)
        if n.outcomes < 1:
            problems.append(f"empty outcome space: node {n.id} has {n.outcomes} outcomes")
        for side, ports in (("input", n.inputs), ("output", n.outputs)):
            for i, s in enumerate(ports):
                if s not in circuit.systems:
                    problems.append(f"unknown system: {s!r} on {side} port {n.id}.{i}")

    attached: dict[tuple[str, Port], list[str]] = {}
    for w in circuit.wires:
        if w.system not in circuit.systems:
            problems.append(f"unknown system: {w.system!r} on wire {w.id}")
        for role, end in (("output", w.source), ("input", w.target)):
            if end is None:
                if circuit.closed:
                    problems.append(f"boundary wire in closed circuit: {w.id}")
                continue
            n = circuit.node_map.get(end.node)
            if n is None:
                problems.append(f"unknown node: wire {w.id} references {end.node!r}")
                continue
            ports = n.outputs if role == "output" else n.inputs
            if not 0 <= end.index < len(ports):
                problems.append(f"bad port: wire {w.id} uses {role} port {end} of {len(ports)}")
                continue
            if ports[end.index] != w.system:
                problems.append(
                    f"system mismatch: wire {w.id} carries {w.system} but {role} port {end} is {ports[end.index]}"
                )
            attached.setdefault((role, end), []).append(w.id)

    for (role, port), ids in sorted(attached.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if len(ids) > 1:
            problems.append(f"double-attached port: {role} port {port} has wires {', '.join(sorted(ids))}")
    for n in circuit.nodes:
        for role, ports in (("input", n.inputs), ("output", n.outputs)):
            for i in range(len(ports)):
                if (role, Port(n.id, i)) not in attached:
                    problems.append(f"dangling port: {role} port {n.id}.{i}")

    cycle = find_cycle(circuit)
    if cycle:
        problems.append("cycle: " + " -> ".join(cycle))
    return problems


def find_cycle(circuit: Circuit) -> list[str] | None:
    """A directed cycle as a closed node list, or ``None``."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in circuit.successors}
    stack_path: list[str] = []

    def visit(root):
        # iterative DFS so deep circuits don't hit the recursion limit
        stack = [(root, iter(circuit.successors[root]))]
        color[root] = GREY
        stack_path.append(root)
        while stack:
            node, it = stack[-1]
            for nxt in it:
                if color[nxt] == GREY:
                    return stack_path[stack_path.index(nxt):] + [nxt]
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    stack_path.append(nxt)
                    stack.append((nxt, iter(circuit.successors[nxt])))
                    break
            else:
                color[node] = BLACK
                stack_path.pop()
                stack.pop()
        return None

    for n in sorted(color):
        if color[n] == WHITE:
            cyc = visit(n)
            if cyc:
                return cyc
    return None


def _reach(adj: Mapping[str, tuple[str, ...]], start: str) -> set[str]:
    seen = set()
    todo = list(adj[start])
    while todo:
        x = todo.pop()
        if x not in seen:
            seen.add(x)
            todo.extend(adj[x])
    return seen


def future_cone(circuit: Circuit, a: str) -> frozenset[str]:
    """Nodes reachable along a directed path out of an output of ``a``."""
    circuit.node(a)
    key = ("future", a)
    if key not in circuit._cache:
        circuit._cache[key] = frozenset(_reach(circuit.successors, a))
    return circuit._cache[key]


def past_cone(circuit: Circuit, a: str) -> frozenset[str]:
    """Nodes from which a directed path reaches an input of ``a``."""
    circuit.node(a)
    key = ("past", a)
    if key not in circuit._cache:
        circuit._cache[key] = frozenset(_reach(circuit.predecessors, a))
    return circuit._cache[key]


def precedes(circuit: Circuit, a: str, b: str) -> bool:
    circuit.node(b)
    return b in future_cone(circuit, a)


def topological_order(circuit: Circuit) -> list[str]:
    """Kahn's algorithm with the smallest available id taken first."""
    indeg = {n: len(p) for n, p in circuit.predecessors.items()}
    ready = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for m in circuit.successors[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(ready, m)
    if len(order) != len(indeg):
        raise CycleError("circuit contains a cycle")
    return order


def split_prep_obs(circuit: Circuit, cut: Iterable[str]) -> tuple[Circuit, Circuit]:
    """Split a closed circuit along the wires in ``cut``.

    Sources of cut wires go to the preparation side, targets to the
    observation side, and each side is closed under connectivity through the
    remaining wires. Components not touched by the cut stay with the
    preparation. Raises :class:`InvalidCutError` if the assignment conflicts.
    """
    cut = set(cut)
    for wid in cut:
        if wid not in circuit.wire_map:
            raise InvalidCutError(f"unknown wire {wid!r} in cut")
        w = circuit.wire_map[wid]
        if w.source is None or w.target is None:
            raise InvalidCutError(f"cut wire {wid!r} is already a boundary wire")

    neighbours = {n.id: set() for n in circuit.nodes}
    for w in circuit.wires:
        if w.id in cut or w.source is None or w.target is None:
            continue
        neighbours[w.source.node].add(w.target.node)
        neighbours[w.target.node].add(w.source.node)

    side: dict[str, str] = {}

    def claim(start, label):
        todo = [start]
        while todo:
            x = todo.pop()
            if side.get(x) == label:
                continue
            if x in side:
                raise InvalidCutError(f"node {x!r} lies on both sides of the cut")
            side[x] = label
            todo.extend(neighbours[x])

    for wid in sorted(cut):
        w = circuit.wire_map[wid]
        claim(w.source.node, "L")
    for wid in sorted(cut):
        w = circuit.wire_map[wid]
        claim(w.target.node, "R")
    for n in circuit.nodes:
        if n.id not in side:
            claim(n.id, "L")

    left = {n for n, s in side.items() if s == "L"}
    prep_wires, obs_wires = [], []
    for w in circuit.wires:
        if w.id in cut:
            prep_wires.append(replace(w, target=None))
            obs_wires.append(replace(w, source=None))
        elif w.source is not None and w.source.node in left or w.target is not None and w.target.node in left:
            prep_wires.append(w)
        else:
            obs_wires.append(w)
    prep = Circuit(circuit.systems, [n for n in circuit.nodes if n.id in left], prep_wires, closed=False)
    obs = Circuit(circuit.systems, [n for n in circuit.nodes if n.id not in left], obs_wires, closed=False)
    return prep, obs


def recompose(prep: Circuit, obs: Circuit) -> Circuit:
    """Glue two open circuits along boundary wires with matching ids."""
    out_b = {w.id: w for w in prep.wires if w.target is None}
    in_b = {w.id: w for w in obs.wires if w.source is None}
    if set(out_b) != set(in_b):
        raise InvalidCutError(f"boundary mismatch: {sorted(set(out_b) ^ set(in_b))}")
    clash = {n.id for n in prep.nodes} & {n.id for n in obs.nodes}
    if clash:
        raise InvalidCutError(f"node ids on both sides: {sorted(clash)}")
    wires = [w for w in prep.wires if w.target is not None]
    wires += [w for w in obs.wires if w.source is not None]
    for wid, w in out_b.items():
        v = in_b[wid]
        if w.system != v.system:
            raise InvalidCutError(f"wire {wid} changes system across the cut")
        wires.append(replace(w, target=v.target))
    systems = {**prep.systems, **obs.systems}
    return Circuit(systems, list(prep.nodes) + list(obs.nodes), wires, closed=True)


def canonical_cut(circuit: Circuit) -> set[str]:
    """All wires leaving preparation nodes."""
    preps = {n.id for n in circuit.nodes if n.is_preparation}
    return {w.id for w in circuit.wires if w.source is not None and w.source.node in preps}


# ---------------------------------------------------------------------------
# text format

_SYSTEM_RE = re.compile(r"^system\s+(\S+)\s+(?:dim=)?(\d+)$")
_NODE_RE = re.compile(r"^node\s+(\S+)\s+(.*)$")
_WIRE_RE = re.compile(r"^wire\s+(\S+)\s+(\S+)\.(\d+)\s*->\s*(\S+)\.(\d+)$")
_KV_RE = re.compile(r"(\w+)=(\[[^\]]*\]|\S+)")


def _port_list(text: str, lineno: int) -> tuple[str, ...]:
    if not (text.startswith("[") and text.endswith("]")):
        raise CircuitParseError(lineno, f"expected [..] port list, got {text!r}")
    inner = text[1:-1].strip()
    return tuple(s.strip() for s in inner.split(",")) if inner else ()


def parse_circuit(text: str) -> Circuit:
    """Parse the line-oriented circuit format::

        system A 2
        node P inputs=[] outputs=[A] outcomes=2 payload=prep
        wire A P.0 -> O.0

    Wires get ids ``w0, w1, ...`` in file order.
    """
    systems, nodes, wires = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split(None, 1)[0]
        if head == "system":
            m = _SYSTEM_RE.match(line)
            if not m:
                raise CircuitParseError(lineno, f"malformed system line: {line!r}")
            try:
                systems.append(SystemType(m.group(1), int(m.group(2))))
            except CircuitError as e:
                raise CircuitParseError(lineno, str(e)) from None
        elif head == "node":
            m = _NODE_RE.match(line)
            if not m:
                raise CircuitParseError(lineno, f"malformed node line: {line!r}")
            kv = dict(_KV_RE.findall(m.group(2)))
            rest = _KV_RE.sub("", m.group(2)).strip()
            if rest:
                raise CircuitParseError(lineno, f"unexpected text {rest!r}")
            unknown = set(kv) - {"inputs", "outputs", "outcomes", "payload"}
            if unknown:
                raise CircuitParseError(lineno, f"unknown node field(s) {sorted(unknown)}")
            try:
                outcomes = int(kv.get("outcomes", "1"))
            except ValueError:
                raise CircuitParseError(lineno, f"bad outcomes {kv['outcomes']!r}") from None
            nodes.append(
                TestNode(
                    m.group(1),
                    _port_list(kv.get("inputs", "[]"), lineno),
                    _port_list(kv.get("outputs", "[]"), lineno),
                    outcomes,
                    kv.get("payload", m.group(1)),
                )
            )
        elif head == "wire":
            m = _WIRE_RE.match(line)
            if not m:
                raise CircuitParseError(lineno, f"malformed wire line: {line!r}")
            sys_, src, si, dst, di = m.groups()
            wires.append(Wire(f"w{len(wires)}", sys_, Port(src, int(si)), Port(dst, int(di))))
        else:
            raise CircuitParseError(lineno, f"unknown directive {head!r}")
    try:
        return Circuit(systems, nodes, wires, closed=True)
    except CircuitError as e:
        raise CircuitParseError(0, str(e)) from None


def format_circuit(circuit: Circuit) -> str:
    lines = [f"system {s.label} {s.dim}" for s in circuit.systems.values() if not s.trivial]
    for n in circuit.nodes:
        lines.append(
            f"node {n.id} inputs=[{','.join(n.inputs)}] outputs=[{','.join(n.outputs)}]"
            f" outcomes={n.outcomes} payload={n.payload}"
        )
    for w in circuit.wires:
        lines.append(f"wire {w.system} {w.source} -> {w.target}")
    return "\n".join(lines) + "\n"
