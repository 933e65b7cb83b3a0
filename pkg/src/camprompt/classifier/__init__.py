from .backbones import (
    CamReadyBackbone,
    TimmSwinBackbone,
    TinyWindowAttentionBackbone,
    TorchvisionSwinBackbone,
    build_backbone,
)
from .config import ClassifierConfig, PredictionResult
from .model import LoadedModel, MultiLabelClassifier, load_artifact, preprocess, save_artifact
from .objective import PROB_EPS, bce_multilabel_loss, lr_at
from .predict import predict, read_image
from .train import TrainResult, train

__all__ = [
    "CamReadyBackbone",
    "ClassifierConfig",
    "LoadedModel",
    "MultiLabelClassifier",
    "PredictionResult",
    "PROB_EPS",
    "TimmSwinBackbone",
    "TinyWindowAttentionBackbone",
    "TorchvisionSwinBackbone",
    "TrainResult",
    "bce_multilabel_loss",
    "build_backbone",
    "load_artifact",
    "lr_at",
    "predict",
    "preprocess",
    "read_image",
    "save_artifact",
    "train",
]
