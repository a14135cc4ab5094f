"""Convex stochastic switching: envelope backward induction and pathwise bound diagnostics."""

from .disturbances import DisturbanceSampling, GarchLike, GeometricBrownian, LogAR1, simulate_paths
from .duality import BoundEstimate, control_variate, pathwise_bounds, pathwise_values
from .grids import equidistant_grid, stochastic_grid
from .model import Action, EconomicParams, Mode, ResourceModel
from .pwlc import ConvexHandle, DimensionError, Grid, PwlcFunction
from .solver import Solution, backward_induction, policy_action

__all__ = [
    "Action", "BoundEstimate", "ConvexHandle", "DimensionError", "DisturbanceSampling",
    "EconomicParams", "GarchLike", "GeometricBrownian", "Grid", "LogAR1", "Mode",
    "PwlcFunction", "ResourceModel", "Solution", "backward_induction", "control_variate",
    "equidistant_grid", "pathwise_bounds", "pathwise_values", "policy_action",
    "simulate_paths", "stochastic_grid",
]
