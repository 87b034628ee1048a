"""Twisted birefringent fiber: forward simulation and twist reconstruction."""
from .errors import (ConfigError, DegenerateDenominator, DimensionMismatch, EmptySupport,
                     FiberTwistError, GeometryError, HypothesisViolated, NoConvergence,
                     NonFiniteField)
from .expr import DomainError, ExprError, evaluate, parse
from .model import (BoundaryTrace, CoefficientProfile, Grid, ModelParams, WaveField,
                    transform_E_to_M)
from .forward import generate_data, picard_forward, solve_forward
from .sideways import SidewaysData, picard_sideways, solve_sideways
from .invert import error_metrics, reconstruct

__all__ = [
    "BoundaryTrace", "CoefficientProfile", "ConfigError", "DegenerateDenominator",
    "DimensionMismatch", "DomainError", "EmptySupport", "ExprError", "FiberTwistError",
    "GeometryError", "Grid", "HypothesisViolated", "ModelParams", "NoConvergence",
    "NonFiniteField", "SidewaysData", "WaveField", "error_metrics", "evaluate",
    "generate_data", "parse", "picard_forward", "picard_sideways", "reconstruct",
    "solve_forward", "solve_sideways", "transform_E_to_M",
]
