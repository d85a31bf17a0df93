from .adam import AdamState, adam_step
from .loop import (EnsembleStats, EpochRecord, History, MemberResult, TrainConfig, ensemble_run,
                   hyperparameter_search, summarize, train, train_member)
from .objectives import (DefaultValues, energy_loss, energy_window_loss, evaluate_sim_error,
                         mae_loss, multi_objective_combine, sim_error_sample, update_defaults)

__all__ = [
    "AdamState", "adam_step", "EnsembleStats", "EpochRecord", "History", "MemberResult",
    "TrainConfig", "ensemble_run", "hyperparameter_search", "summarize", "train", "train_member",
    "DefaultValues", "energy_loss", "energy_window_loss", "evaluate_sim_error", "mae_loss",
    "multi_objective_combine", "sim_error_sample", "update_defaults",
]
