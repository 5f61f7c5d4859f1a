"""Desk-scale classifier with adapter slots, exact gradients and telemetry."""
from .config import MODES, TrainConfig
from .features import Featurizer
from .gradcheck import Probe, gradient_probes
from .loop import (
    DRIFT_LIMIT,
    Dataset,
    TrainTrace,
    accuracy,
    footprint_report,
    labels_of,
    make_dataset,
    traces_to_jsonl,
    train,
)
from .model import (
    Cache,
    Gradients,
    ToyModel,
    apply_gradients,
    backward,
    build_model,
    forward,
    pretrain_base,
    random_base,
)

__all__ = [
    "MODES", "TrainConfig", "Featurizer", "Probe", "gradient_probes", "DRIFT_LIMIT", "Dataset",
    "TrainTrace", "accuracy", "footprint_report", "labels_of", "make_dataset", "traces_to_jsonl",
    "train", "Cache", "Gradients", "ToyModel", "apply_gradients", "backward", "build_model",
    "forward", "pretrain_base", "random_base",
]
