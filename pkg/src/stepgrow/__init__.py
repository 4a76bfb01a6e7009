"""Increasing step-size gradient descent and adaptive SGD for separable
logistic regression, plus the numerical checks that certify every run
against the guarantees the schedules are designed around.
"""

from stepgrow.loss_core import Dataset, MarginCertificate
from stepgrow.data_gen import GenSpec, generate_separable
from stepgrow.schedule import ScheduleState, GrowthConstants
from stepgrow.optimizers import RunTrace, HittingStats, BlockPlan

__all__ = [
    "Dataset",
    "MarginCertificate",
    "GenSpec",
    "generate_separable",
    "ScheduleState",
    "GrowthConstants",
    "RunTrace",
    "HittingStats",
    "BlockPlan",
]

__version__ = "0.1.0"
