"""Simulate operational probabilistic circuits and check causality."""
from .backends import ClassicalBackend, QuantumBackend, TableBackend, embed_backend
from .circuit import (
    Circuit,
    Port,
    SystemType,
    TestNode,
    Wire,
    future_cone,
    parse_circuit,
    past_cone,
    precedes,
    recompose,
    split_prep_obs,
    topological_order,
    validate,
)
from .engine import (
    CausalityReport,
    JointDistribution,
    check_deterministic_effect_uniqueness,
    check_marginal_invariance,
    check_no_signaling_from_future,
    falsification_experiment,
    joint_distribution,
    marginal,
)

__version__ = "0.1.0"
