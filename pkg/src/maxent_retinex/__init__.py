"""Self-supervised low-light enhancement with a maximum-entropy Retinex model."""

__version__ = "0.1.0"

from .core import (ContractError, Decomposition, ImageIOError, load_image, max_channel,  # noqa: E402
                   save_image, to_gray)
from .loss import LossBreakdown, LossWeights, total_loss  # noqa: E402
from .metrics import MetricsReport, evaluate_set, he_baseline  # noqa: E402
from .network import build_network, forward, load_checkpoint, save_checkpoint, table1_spec  # noqa: E402
from .ops import grad, hist_equalize, structure_weight, tv_l1  # noqa: E402
from .training import TrainConfig, enhance, ingest_dataset, train  # noqa: E402

__all__ = [
    "ContractError", "Decomposition", "ImageIOError", "LossBreakdown", "LossWeights",
    "MetricsReport", "TrainConfig", "build_network", "enhance", "evaluate_set", "forward",
    "grad", "he_baseline", "hist_equalize", "ingest_dataset", "load_checkpoint", "load_image",
    "max_channel", "save_checkpoint", "save_image", "structure_weight", "table1_spec",
    "to_gray", "total_loss", "train", "tv_l1",
]
