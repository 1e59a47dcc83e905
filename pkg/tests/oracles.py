"""Brute-force reference implementations used by the tests.

These deliberately share no code with the package's graph routines.
"""
import itertools


def all_directed_paths(circuit, a):
    """Every directed path starting at node ``a`` (as node lists), by
    exhaustive depth-first enumeration over wires."""
    out_edges = {}
    for w in circuit.wires:
        if w.source is not None and w.target is not None:
            out_edges.setdefault(w.source.node, []).append(w.target.node)
    paths = []

    def walk(path):
        for nxt in out_edges.get(path[-1], []):
            if nxt in path:
                continue
            paths.append(path + [nxt])
            walk(path + [nxt])

    walk([a])
    return paths


def precedes_oracle(circuit, a, b):
    return any(p[-1] == b for p in all_directed_paths(circuit, a))


def closure_oracle(circuit):
    """Warshall transitive closure over node ids."""
    ids = [n.id for n in circuit.nodes]
    reach = {(x, y): False for x in ids for y in ids}
    for w in circuit.wires:
        if w.source is not None and w.target is not None:
            reach[(w.source.node, w.target.node)] = True
    for k, i, j in itertools.product(ids, ids, ids):
        if reach[(i, k)] and reach[(k, j)]:
            reach[(i, j)] = True
    return reach
