"""Training, evaluation, ablation and invariance orchestration plus the CLI."""

from .ablation import LADDER, ablation_csv, ablation_run
from .config import TrainConfig, load_config, parse_config
from .evaluate import evaluate, robust_predictor, teacher_predictor
from .invariance import InvarianceReport, invariance_report, silhouette
from .train import RunState, load_run, save_run, train_robust

__all__ = [
    "LADDER",
    "InvarianceReport",
    "RunState",
    "TrainConfig",
    "ablation_csv",
    "ablation_run",
    "evaluate",
    "invariance_report",
    "load_config",
    "load_run",
    "parse_config",
    "robust_predictor",
    "save_run",
    "silhouette",
    "teacher_predictor",
    "train_robust",
]
