"""Training orchestration, evaluation and checkpointing."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluate import ADVERSARY_MODES, BoundReport, bound_penalty, bound_report, evaluate_cross, reward_bound
from .train import TrainConfig, TrainingDiverged, config_from_dict, replay_probability, train
