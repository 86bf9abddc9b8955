"""Conditional diffusion generator for censored survival outcomes.

A denoising diffusion model is trained on transformed (time, event) pairs
conditioned on subject features; generated outcome samples are turned into
per-subject survival curves with the Kaplan-Meier estimator and scored with
standard censored-data metrics.
"""

from survdpm.estimators import StepSurvivalCurve, TimeGrid, kaplan_meier
from survdpm.target_space import TargetTransform
from survdpm.schedule import DiffusionSchedule, cosine_schedule

__version__ = "0.1.0"

__all__ = [
    "StepSurvivalCurve",
    "TimeGrid",
    "kaplan_meier",
    "TargetTransform",
    "DiffusionSchedule",
    "cosine_schedule",
    "__version__",
]
