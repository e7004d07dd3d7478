"""Cooperative diffusive molecular communication: analytic error model, particle simulator, threshold search."""

__version__ = "0.1.0"

from ._accel import backend_name
from .analytical import ErrorReport, Thresholds, average_error, q_fc_symbol
from .channel import DiffusionParams, ProtocolTiming, build_gains, p_ob_sphere, p_ob_uniform
from .optimizer import OptimizationResult, joint_optimize, optimize_scheme
from .schemes import SchemeSpec, majority_rule_error, single_link_error
from .simulator import SimConfig, estimate_error, run_sequence_trial
from .topology import Topology, build_asymmetric, build_single_link, build_symmetric_ring

__all__ = [
    "DiffusionParams",
    "ErrorReport",
    "OptimizationResult",
    "ProtocolTiming",
    "SchemeSpec",
    "SimConfig",
    "Thresholds",
    "Topology",
    "average_error",
    "backend_name",
    "build_asymmetric",
    "build_gains",
    "build_single_link",
    "build_symmetric_ring",
    "estimate_error",
    "joint_optimize",
    "majority_rule_error",
    "optimize_scheme",
    "p_ob_sphere",
    "p_ob_uniform",
    "q_fc_symbol",
    "run_sequence_trial",
    "single_link_error",
]
