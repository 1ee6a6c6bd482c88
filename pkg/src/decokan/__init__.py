"""DecoKAN: wavelet-decomposed KAN-mixer forecasting with pruning and symbolic fits."""
from .interpret import emit_report, prune, symbolify
from .model import (DecoKan, ModelConfig, build_ablation, load_checkpoint, save_checkpoint,
                    total_loss)
from .training import TimeSeriesDataset, TrainOptions, evaluate, persistence_baseline, train

__all__ = [
    "DecoKan", "ModelConfig", "TimeSeriesDataset", "TrainOptions", "build_ablation",
    "emit_report", "evaluate", "load_checkpoint", "persistence_baseline", "prune",
    "save_checkpoint", "symbolify", "total_loss", "train",
]
__version__ = "0.1.0"
