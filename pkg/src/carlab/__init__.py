"""Covariate-adaptive randomization: engine, policies, simulation lab, service."""

__version__ = "0.1.0"

from .core import (
    AllocationRatio,
    Assignment,
    ImbalanceState,
    RngStream,
    draw_assignment,
    imbalance_update,
)

__all__ = [
    "AllocationRatio",
    "Assignment",
    "ImbalanceState",
    "RngStream",
    "draw_assignment",
    "imbalance_update",
    "__version__",
]
