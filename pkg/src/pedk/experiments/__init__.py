"""Training harness and the four reproduction studies."""

from pedk.experiments.training import (
    EvalReport,
    TrainConfig,
    TrainRun,
    evaluate,
    report_from_predictions,
    select_best_epoch,
    train_with_early_stopping,
)
from pedk.experiments.profiles import RunConfig, profile
from pedk.experiments.simulations import simulation1, simulation2, simulation3, simulation4

__all__ = [
    "EvalReport", "TrainConfig", "TrainRun", "evaluate", "report_from_predictions", "select_best_epoch",
    "train_with_early_stopping", "RunConfig", "profile", "simulation1", "simulation2", "simulation3", "simulation4",
]
