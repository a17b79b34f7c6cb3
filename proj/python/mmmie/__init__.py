"""Multimodal fusion trained with mutual-information bounds (C++ core)."""

from ._core import (
    NumericalError,
    RunConfig,
    TrainingAbort,
    ablate,
    accuracy,
    analytic_mi,
    component_combinations,
    config_keys,
    gradcheck,
    gradcheck_blocks,
    mi_bench,
    modality_subsets,
    train,
    weighted_f1,
)

__all__ = [
    "NumericalError",
    "RunConfig",
    "TrainingAbort",
    "ablate",
    "accuracy",
    "analytic_mi",
    "component_combinations",
    "config_keys",
    "gradcheck",
    "gradcheck_blocks",
    "mi_bench",
    "modality_subsets",
    "train",
    "weighted_f1",
]
