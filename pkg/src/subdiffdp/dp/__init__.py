"""Discounted stochastic control engine and its sensitivity suite."""
from .bellman import (bellman_operator, control_objective, finite_horizon_oracle,
                      policy_at, policy_multifunction, polish, value_iteration)
from .model import (BoxMap, DPModel, FiniteMap, Multiplier, MultiplierSet, NlpMap,
                    PolicyTable, ValueTable, constraint_from_json)
from .nlp import lagrange_multiplier_set, mfcq_check, nlp_value_subdiff_check
from .sensitivity import (check_viability, envelope_check, euler_inclusion_residual,
                          grid_spacing,
                          limiting_euler_check, strict_value_derivative_check,
                          value_function_subdiff)

__all__ = [
    "BoxMap", "DPModel", "FiniteMap", "Multiplier", "MultiplierSet", "NlpMap",
    "PolicyTable", "ValueTable", "bellman_operator", "check_viability",
    "constraint_from_json", "control_objective", "envelope_check",
    "euler_inclusion_residual", "finite_horizon_oracle", "grid_spacing",
    "lagrange_multiplier_set",
    "limiting_euler_check", "mfcq_check", "nlp_value_subdiff_check", "policy_at",
    "policy_multifunction", "polish", "strict_value_derivative_check",
    "value_function_subdiff", "value_iteration",
]
