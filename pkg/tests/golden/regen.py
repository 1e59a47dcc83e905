"""Regenerate the golden files. Expected values come from the brute-force
oracles, never from the code under test's fast paths.

    python3 tests/golden/regen.py
"""
import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))

from oracles import closure_oracle  # noqa: E402

from optcausal.backends import dump_payloads  # noqa: E402
from optcausal.circuit import format_circuit  # noqa: E402
from optcausal.engine import brute_force_distribution  # noqa: E402
from optcausal.generators import random_circuit, random_dag  # noqa: E402


def dag_golden():
    c = random_dag(np.random.default_rng(2024), 8, 0.3)
    reach = closure_oracle(c)
    ids = [n.id for n in c.nodes]
    cones = {
        a: {
            "past": sorted(x for x in ids if reach[(x, a)]),
            "future": sorted(x for x in ids if reach[(a, x)]),
        }
        for a in ids
    }
    (HERE / "dag.circuit").write_text(format_circuit(c))
    (HERE / "dag_cones.json").write_text(json.dumps(cones, indent=1, sort_keys=True) + "\n")


def quantum_golden():
    seed = 0
    while True:
        c, b = random_circuit(seed, max_nodes=4)
        if len(c.nodes) == 4 and len(c.wires) >= 3:
            break
        seed += 1
    (HERE / "q4.circuit").write_text(format_circuit(c))
    (HERE / "q4.json").write_text(dump_payloads(b) + "\n")
    d = brute_force_distribution(c, b)
    doc = {
        "seed": seed,
        "axes": [[n, k] for n, k in d.axes],
        "table": [{"outcome": list(i), "p": p} for i, p in d.items()],
    }
    (HERE / "q4_expected.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    dag_golden()
    quantum_golden()
