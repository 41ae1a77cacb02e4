from .checkpoint import (Checkpoint, CheckpointError, CheckpointVersionError, load_checkpoint,
                         save_checkpoint)
from .metrics import auc, centroid_spread
from .optim import AdamState, NonFiniteGradient, adam_step
from .train import (SPLITS, TrainingDiverged, evaluate, export_embeddings, finetune, pretrain,
                    read_embeddings, report_rows, train_scratch, write_metrics)

__all__ = [
    "AdamState", "Checkpoint", "CheckpointError", "CheckpointVersionError", "NonFiniteGradient",
    "SPLITS", "TrainingDiverged", "adam_step", "auc", "centroid_spread", "evaluate",
    "export_embeddings", "finetune", "load_checkpoint", "pretrain", "read_embeddings",
    "report_rows", "save_checkpoint", "train_scratch", "write_metrics",
]
