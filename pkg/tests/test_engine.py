import json

import numpy as np
import pytest

from optcausal import quantum as Q
from optcausal.backends import ClassicalBackend, PayloadError, QuantumBackend, TableBackend, embed_backend
from optcausal.circuit import Circuit, CircuitError, Port, SystemType, TestNode, Wire, past_cone
from optcausal.classical import CState, SubstochasticMatrix
from optcausal.engine import (
    CausalityReport,
    IncompleteTestError,
    JointDistribution,
    brute_force_distribution,
    check_deterministic_effect_uniqueness,
    check_marginal_invariance,
    check_no_signaling_from_future,
    falsification_experiment,
    joint_distribution,
    marginal,
)
from optcausal.generators import random_circuit

ket0 = np.array([1, 0], dtype=complex)
ket1 = np.array([0, 1], dtype=complex)
plus = (ket0 + ket1) / np.sqrt(2)
minus = (ket0 - ket1) / np.sqrt(2)
Z_BASIS = np.eye(2)
X_BASIS = np.column_stack([plus, minus])


def two_node(prep_outcomes=1, obs_outcomes=2, dim=2):
    nodes = [TestNode("P", (), ("A",), prep_outcomes, "prep"), TestNode("O", ("A",), (), obs_outcomes, "obs")]
    return Circuit([SystemType("A", dim)], nodes, [Wire("w0", "A", Port("P", 0), Port("O", 0))])


def chain3():
    nodes = [
        TestNode("P", (), ("A",), 2, "prep"),
        TestNode("T", ("A",), ("A",), 2, "mid"),
        TestNode("O", ("A",), (), 2, "obs"),
    ]
    wires = [Wire("w0", "A", Port("P", 0), Port("T", 0)), Wire("w1", "A", Port("T", 0), Port("O", 0))]
    return Circuit([SystemType("A", 2)], nodes, wires)


def z_effects():
    return [Q.QEffect(Q.projector(ket0)), Q.QEffect(Q.projector(ket1))]


def x_effects():
    return [Q.QEffect(Q.projector(plus)), Q.QEffect(Q.projector(minus))]


def test_eigenstate_measurement():
    b = QuantumBackend({"prep": Q.QState(Q.projector(ket0)), "obs": z_effects()})
    d = joint_distribution(two_node(), b)
    assert d.as_dict() == {(0, 0): 1.0, (0, 1): 0.0}


def test_maximally_mixed_measurement():
    b = QuantumBackend({"prep": Q.QState(np.eye(2) / 2), "obs": z_effects()})
    d = joint_distribution(two_node(), b)
    assert d[0, 0] == pytest.approx(0.5, abs=1e-15) and d[0, 1] == pytest.approx(0.5, abs=1e-15)


def test_chain_matches_trace_formula():
    rng = np.random.default_rng(11)
    preps = Q.random_test(rng, 1, 2, 2)
    mids = Q.random_test(rng, 2, 2, 2)
    effs = Q.random_test(rng, 2, 1, 2)
    b = QuantumBackend({"prep": preps, "mid": mids, "obs": effs})
    d = joint_distribution(chain3(), b)
    for i in range(2):
        for a in range(2):
            for j in range(2):
                rho = preps[i].as_state()
                expected = Q.probability(effs[j].as_effect(), Q.apply(mids[a], rho))
                assert d[i, a, j] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(30))
def test_contraction_matches_monolithic_oracle(seed):
    circuit, backend = random_circuit(1000 + seed, max_nodes=4)
    fast = joint_distribution(circuit, backend)
    slow = brute_force_distribution(circuit, backend)
    assert fast.axes == slow.axes
    assert np.abs(fast.table - slow.table).max() <= 1e-10
    assert fast.total == pytest.approx(1.0, abs=1e-9)


def test_multiwire_leg_ordering():
    """Port order matters: a CNOT-like map sees control then target."""
    cnot = np.eye(4)[[0, 1, 3, 2]]
    nodes = [
        TestNode("a", (), ("q",), 1, "one"),
        TestNode("b", (), ("q",), 1, "zero"),
        TestNode("g", ("q", "q"), ("q", "q"), 1, "cnot"),
        TestNode("m", ("q", "q"), (), 4, "meas"),
    ]
    wires = [
        Wire("w0", "q", Port("a", 0), Port("g", 0)),
        Wire("w1", "q", Port("b", 0), Port("g", 1)),
        Wire("w2", "q", Port("g", 0), Port("m", 1)),  # crossed into the measurement
        Wire("w3", "q", Port("g", 1), Port("m", 0)),
    ]
    circ = Circuit([SystemType("q", 2)], nodes, wires)
    meas = [Q.QEffect(Q.projector(np.eye(4)[k])) for k in range(4)]
    b = QuantumBackend({
        "one": Q.QState(Q.projector(ket1)),
        "zero": Q.QState(Q.projector(ket0)),
        "cnot": Q.KrausMap(cnot),
        "meas": meas,
    })
    d = joint_distribution(circ, b)
    # control |1>, target flips to |1>; measurement sees (target, control) = |11>
    assert d.table.reshape(-1)[3] == pytest.approx(1.0)
    assert np.abs(d.table - brute_force_distribution(circ, b).table).max() < 1e-12


def test_errors():
    b = QuantumBackend({"prep": Q.QState(Q.projector(ket0))})
    with pytest.raises(PayloadError):
        joint_distribution(two_node(), b)
    b = QuantumBackend({"prep": Q.QState(Q.projector(ket0)), "obs": z_effects()[:1]})
    with pytest.raises(PayloadError):
        joint_distribution(two_node(), b)  # outcome count mismatch
    b = QuantumBackend({"prep": Q.QState(np.eye(3) / 3), "obs": z_effects()})
    with pytest.raises(PayloadError):
        joint_distribution(two_node(), b)  # dimension mismatch
    open_c = Circuit([SystemType("A", 2)], [TestNode("P", (), ("A",), 1, "prep")],
                     [Wire("w0", "A", Port("P", 0), None)], closed=False)
    with pytest.raises(CircuitError):
        joint_distribution(open_c, b)


def test_dimension_cap():
    b = QuantumBackend({"prep": Q.QState(Q.projector(np.eye(4)[0])), "obs": [Q.QEffect(np.eye(4))]})
    with pytest.raises(Q.DimensionCapError):
        joint_distribution(two_node(1, 1, dim=4), b, cap=3)


def test_marginal_identities():
    rng = np.random.default_rng(3)
    t = rng.random((2, 3, 2, 4))
    d = JointDistribution((("a", 2), ("b", 3), ("c", 2), ("d", 4)), t / t.sum())
    assert marginal(d, set()).table == pytest.approx(1.0)
    assert np.array_equal(marginal(d, {"a", "b", "c", "d"}).table, d.table)
    twice = marginal(marginal(d, {"a", "b", "d"}), {"b", "d"})
    once = marginal(d, {"b", "d"})
    assert twice.axes == once.axes and np.allclose(twice.table, once.table, atol=1e-15)
    with pytest.raises(KeyError):
        marginal(d, {"zz"})


# ---------------------------------------------------------------------------
# marginal invariance


def half_half_prep():
    return [Q.QState(Q.projector(ket0) / 2), Q.QState(Q.projector(ket1) / 2)]


def test_marginal_invariance_z_vs_x():
    b = QuantumBackend({"prep": half_half_prep(), "obs": z_effects(), "zobs": z_effects(), "xobs": x_effects()})
    rep = check_marginal_invariance(two_node(prep_outcomes=2), b, "P", "O", ["zobs", "xobs"])
    assert rep.passed and rep.max_deviation <= 1e-12
    for m in rep.details["marginals"].values():
        assert np.allclose(m, [0.5, 0.5], atol=1e-12)


def test_marginal_invariance_accepts_bare_tests():
    b = QuantumBackend({"prep": half_half_prep(), "obs": z_effects()})
    rep = check_marginal_invariance(two_node(prep_outcomes=2), b, "P", "O", [z_effects(), Q.povm(X_BASIS)])
    assert rep.passed


def test_swap_in_future_cone_of_chain():
    rng = np.random.default_rng(5)
    b = QuantumBackend({
        "prep": Q.random_test(rng, 1, 2, 2), "mid": Q.random_test(rng, 2, 2, 2), "obs": Q.random_test(rng, 2, 1, 2),
        "alt1": Q.measurement(X_BASIS), "alt2": [Q.random_channel(rng, 2, 2)],
    })
    rep = check_marginal_invariance(chain3(), b, "P", "T", ["mid", "alt1", "alt2"])
    assert rep.passed and rep.max_deviation <= 1e-9


def test_marginal_invariance_preconditions():
    b = QuantumBackend({"prep": half_half_prep(), "obs": z_effects(), "half": [Q.QEffect(Q.projector(ket0))]})
    with pytest.raises(IncompleteTestError):
        check_marginal_invariance(two_node(prep_outcomes=2), b, "P", "O", ["obs", "half"])
    with pytest.raises(ValueError):
        check_marginal_invariance(two_node(prep_outcomes=2), b, "O", "P", ["prep"])
    with pytest.raises(ValueError):
        check_marginal_invariance(two_node(prep_outcomes=2), b, "P", "P", ["prep"])


SIGNAL = 0.2


def signaling_tables(signal=SIGNAL):
    return TableBackend({
        ("prep", "b0"): [[0.25, 0.25], [0.25, 0.25]],
        ("prep", "b1"): [[0.25 + signal / 2, 0.25 + signal / 2], [0.25 - signal / 2, 0.25 - signal / 2]],
    })


def table_circuit():
    nodes = [TestNode("P", (), ("A",), 2, "prep"), TestNode("O", ("A",), (), 2, "b0")]
    return Circuit([SystemType("A", 2)], nodes, [Wire("w0", "A", Port("P", 0), Port("O", 0))])


def test_table_backend_detects_planted_signal():
    rep = check_marginal_invariance(table_circuit(), signaling_tables(), "P", "O", ["b0", "b1"])
    assert not rep.passed
    assert rep.max_deviation == pytest.approx(SIGNAL, abs=1e-9)


def test_table_backend_validation():
    with pytest.raises(ValueError):
        TableBackend({("a", "b"): [[0.5, 0.6]]})
    b = signaling_tables()
    with pytest.raises(PayloadError):
        joint_distribution(table_circuit().with_payload("O", "b9"), b)
    with pytest.raises(ValueError):
        joint_distribution(chain3(), b)


# ---------------------------------------------------------------------------
# no signalling from the future


def test_no_signaling_two_node():
    rng = np.random.default_rng(8)
    b = QuantumBackend({"prep": Q.random_test(rng, 1, 2, 2), "obs": Q.random_test(rng, 2, 1, 3)})
    rep = check_no_signaling_from_future(two_node(2, 3), b, "P")
    assert rep.passed and rep.details["swapped"] == ["O"]


def branching_circuit():
    """Two sources feeding a middle test ``C`` with side branches, so that
    ``C`` has a nontrivial past, future, and a node in neither."""
    S = SystemType("q", 2)
    nodes = [
        TestNode("A1", (), ("q", "q"), 2, "A1"),
        TestNode("A2", (), ("q",), 2, "A2"),
        TestNode("B", ("q",), ("q",), 2, "B"),
        TestNode("C", ("q", "q"), ("q", "q"), 2, "C"),
        TestNode("D", ("q",), ("q",), 2, "D"),
        TestNode("E", ("q", "q"), (), 2, "E"),
        TestNode("F", ("q",), (), 3, "F"),
    ]
    wires = [
        Wire("a", "q", Port("A1", 0), Port("B", 0)),
        Wire("b", "q", Port("A1", 1), Port("F", 0)),  # side branch, unrelated to C
        Wire("c", "q", Port("B", 0), Port("C", 0)),
        Wire("d", "q", Port("A2", 0), Port("C", 1)),
        Wire("e", "q", Port("C", 0), Port("D", 0)),
        Wire("f", "q", Port("C", 1), Port("E", 1)),
        Wire("g", "q", Port("D", 0), Port("E", 0)),
    ]
    return Circuit([S], nodes, wires)


def random_backend_for(circuit, seed):
    rng = np.random.default_rng(seed)
    tests = {}
    for n in circuit.nodes:
        d_in = 2 ** len(n.inputs)
        d_out = 2 ** len(n.outputs)
        tests[n.payload] = Q.random_test(rng, d_in, d_out, n.outcomes)
    return QuantumBackend(tests)


@pytest.mark.parametrize("seed", range(5))
def test_no_signaling_branching_circuit(seed):
    c = branching_circuit()
    assert past_cone(c, "C") == {"A1", "A2", "B"}
    b = random_backend_for(c, seed)
    rep = check_no_signaling_from_future(c, b, "C", seed=seed)
    assert rep.passed and rep.max_deviation <= 1e-9
    assert rep.details["swapped"] == ["D", "E", "F"]


def test_future_node_does_shift_later_marginals():
    """Sanity check that the checker can see dependence: swapping a node in the
    past of the target does move its marginal (not a causality violation)."""
    c = branching_circuit()
    b = random_backend_for(c, 0)
    base = marginal(joint_distribution(c, b), {"E"}).table
    b2 = b.with_tests({"alt": Q.measurement(Z_BASIS)})
    moved = marginal(joint_distribution(c.with_payload("D", "alt"), b2), {"E"}).table
    assert np.abs(base - moved).max() > 1e-3


def test_no_signaling_table_negative_control():
    rep = check_no_signaling_from_future(table_circuit(), signaling_tables(), "P")
    assert not rep.passed and rep.max_deviation == pytest.approx(SIGNAL, abs=1e-9)
    ok = check_no_signaling_from_future(table_circuit(), signaling_tables(0.0), "P")
    assert ok.passed


def test_no_signaling_parallel_matches_serial():
    c = branching_circuit()
    b = random_backend_for(c, 1)
    r1 = check_no_signaling_from_future(c, b, "B", seed=4)
    r4 = check_no_signaling_from_future(c, b, "B", seed=4, jobs=4)
    assert r1.to_dict() == r4.to_dict()


def test_no_signaling_classical():
    circuit, backend = random_circuit(77, kind="classical")
    for n in circuit.nodes:
        assert check_no_signaling_from_future(circuit, backend, n.id).max_deviation <= 1e-12


# ---------------------------------------------------------------------------
# uniqueness of the deterministic effect


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_uniqueness_quantum(d):
    rep = check_deterministic_effect_uniqueness(QuantumBackend(), Q.QSystem(d))
    assert rep.passed and rep.details["rank"] == d * d
    assert np.allclose(rep.details["solution"], np.eye(d), atol=1e-9)


def test_uniqueness_qubit_linear_system():
    # four spanning pure states; Tr[E rho_k] = 1 pins all four real parameters
    rep = check_deterministic_effect_uniqueness(QuantumBackend(), 2)
    assert rep.details["unknowns"] == 4 and rep.details["residual"] <= 1e-12
    assert rep.max_deviation <= 1e-12


def test_uniqueness_fails_without_spanning_states():
    # diagonal states leave the off-diagonal part of E free
    states = [Q.projector(ket0), Q.projector(ket1)]
    rep = check_deterministic_effect_uniqueness(QuantumBackend(), 2, states=states)
    assert not rep.passed and rep.details["rank"] == 2
    assert rep.max_deviation >= 0.5


def test_uniqueness_classical():
    rep = check_deterministic_effect_uniqueness(ClassicalBackend(), 3)
    assert rep.passed
    assert np.allclose(rep.details["solution"], np.ones(3), atol=1e-12)


def test_uniqueness_table_counterexample():
    rep = check_deterministic_effect_uniqueness(signaling_tables())
    assert not rep.passed and rep.max_deviation == pytest.approx(SIGNAL, abs=1e-12)
    assert check_deterministic_effect_uniqueness(signaling_tables(0.0)).passed


# ---------------------------------------------------------------------------
# cascade experiment


def z_meas_bad_first():
    # outcome 0 projects on |1>, impossible on |0>
    return [Q.KrausMap(Q.projector(ket1)), Q.KrausMap(Q.projector(ket0))]


def test_falsification_zero_outcome_stays_zero():
    rho = Q.QState(Q.projector(ket0))
    rep = falsification_experiment(rho, z_meas_bad_first(), Q.povm(Z_BASIS), Q.povm(X_BASIS))
    assert rep.passed
    assert rep.details["p_A_with_B"][0] <= 1e-12 and rep.details["p_A_with_B_alt"][0] <= 1e-12
    assert rep.details["p_A_shift"] <= 1e-12


def test_falsification_forward_dependence():
    rho = Q.QState(Q.projector(ket0))
    rep = falsification_experiment(
        rho, z_meas_bad_first(), Q.povm(Z_BASIS), Q.povm(X_BASIS), test_a_alt=Q.measurement(X_BASIS)
    )
    # regression values: Z then Z reads (1, 0); X then Z reads (1/2, 1/2)
    assert np.allclose(rep.details["p_B_after_A"], [1.0, 0.0], atol=1e-12)
    assert np.allclose(rep.details["p_B_after_A_alt"], [0.5, 0.5], atol=1e-12)
    assert rep.details["forward_deviation"] >= 0.4


def test_falsification_default_alt_is_identity():
    rho = Q.QState(Q.projector(ket0))
    rep = falsification_experiment(rho, z_meas_bad_first(), Q.povm(Z_BASIS), Q.povm(X_BASIS))
    # |0> is untouched by a Z measurement, so doing nothing looks the same
    assert rep.details["forward_deviation"] <= 1e-12


def test_stern_gerlach_tilted_second_apparatus():
    theta = np.pi / 3
    rho = Q.QState(Q.projector(ket0))
    tilted = Q.povm(Q.axis_basis(theta))
    rep = falsification_experiment(rho, z_meas_bad_first(), Q.povm(Z_BASIS), tilted)
    assert rep.passed
    assert np.allclose(rep.details["p_A_with_B_alt"], [0.0, 1.0], atol=1e-12)
    expected = [np.cos(theta / 2) ** 2, np.sin(theta / 2) ** 2]
    assert np.allclose(rep.details["p_B_alt_after_A"], expected, atol=1e-12)
    assert expected == pytest.approx([0.75, 0.25])


def test_falsification_with_transforming_second_test():
    """Second tests that keep an output system are traced out at the end."""
    rho = Q.QState(Q.projector(ket0))
    rep = falsification_experiment(rho, z_meas_bad_first(), Q.measurement(Z_BASIS), Q.measurement(X_BASIS))
    assert rep.passed


def test_falsification_preconditions():
    rho = Q.QState(np.eye(2) / 2)
    with pytest.raises(ValueError, match="not zero"):
        falsification_experiment(rho, z_meas_bad_first(), Q.povm(Z_BASIS), Q.povm(X_BASIS))
    pure = Q.QState(Q.projector(ket0))
    with pytest.raises(IncompleteTestError):
        falsification_experiment(pure, z_meas_bad_first(), Q.povm(Z_BASIS)[:1], Q.povm(X_BASIS))
    with pytest.raises(ValueError):
        falsification_experiment(pure, Q.measurement(np.eye(3))[:2], Q.povm(Z_BASIS), Q.povm(X_BASIS))


# ---------------------------------------------------------------------------
# classical embedding and reports


@pytest.mark.parametrize("seed", range(10))
def test_classical_circuit_matches_embedding(seed):
    circuit, backend = random_circuit(500 + seed, kind="classical")
    native = joint_distribution(circuit, backend)
    embedded = joint_distribution(circuit, embed_backend(backend))
    assert np.abs(native.table - embedded.table).max() <= 1e-12
    assert np.abs(native.table - brute_force_distribution(circuit, backend).table).max() <= 1e-12


def test_classical_backend_accepts_states():
    b = ClassicalBackend({"prep": CState([0.3, 0.7]), "obs": [SubstochasticMatrix([[1, 0]]), SubstochasticMatrix([[0, 1]])]})
    d = joint_distribution(two_node(), b)
    assert np.allclose(d.table, [[0.3, 0.7]])


def test_report_json_round_trip():
    rep = check_marginal_invariance(table_circuit(), signaling_tables(), "P", "O", ["b0", "b1"])
    doc = json.loads(rep.to_json())
    assert list(doc) == ["kind", "tolerance", "max_deviation", "witness", "verdict", "details"]
    back = CausalityReport.from_dict(doc)
    assert back.verdict == rep.verdict == "fail"
    assert back.max_deviation == rep.max_deviation
    doc["verdict"] = "pass"
    with pytest.raises(ValueError):
        CausalityReport.from_dict(doc)
