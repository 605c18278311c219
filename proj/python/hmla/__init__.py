"""Hybrid MLA decode engine."""

from ._hmla import (
    ArgumentError,
    CapacityError,
    HardwareProfile,
    MlaConfig,
    NotFoundError,
    ShapeError,
    coefficients,
    combine_lse,
    cost,
    crossover_batch,
    hardware_preset,
    hardware_preset_names,
    hbm_footprint,
    model_preset,
    model_preset_names,
    roofline_throughput,
    run_cli,
    run_equivalence,
    simulate,
)

__all__ = [
    "ArgumentError",
    "CapacityError",
    "HardwareProfile",
    "MlaConfig",
    "NotFoundError",
    "ShapeError",
    "coefficients",
    "combine_lse",
    "cost",
    "crossover_batch",
    "hardware_preset",
    "hardware_preset_names",
    "hbm_footprint",
    "model_preset",
    "model_preset_names",
    "roofline_throughput",
    "run_cli",
    "run_equivalence",
    "simulate",
]
