from .common import ControlProfile, cell_weights, trapezoid_weights
from .laplace import (
    LaplaceProblem,
    laplace_cost,
    laplace_exact_control,
    laplace_exact_state,
    laplace_forward,
    laplace_side_profile,
)
from .channel import (
    FlowState,
    NavierStokesProblem,
    ns_cost,
    ns_forward,
    ns_cost_from_control,
    target_outflow,
)

__all__ = [
    "ControlProfile", "cell_weights", "trapezoid_weights",
    "LaplaceProblem", "laplace_cost", "laplace_exact_control",
    "laplace_exact_state", "laplace_forward", "laplace_side_profile",
    "FlowState", "NavierStokesProblem", "ns_cost", "ns_forward",
    "ns_cost_from_control", "target_outflow",
]
