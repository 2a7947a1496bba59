from .augment import AUGMENTATIONS, AugmentConfig, augment
from .data import load_dataset, make_batch, read_annotations, write_dataset
from .loop import NonFiniteLossError, TrainConfig, TrainResult, total_loss, train
from .optim import NonFiniteGradientError, RMSProp, RMSPropConfig, rmsprop_step
from .synthetic import Sample, SyntheticSceneSpec, generate_dataset, generate_synthetic_sample

__all__ = [
    "AUGMENTATIONS", "AugmentConfig", "augment",
    "load_dataset", "make_batch", "read_annotations", "write_dataset",
    "NonFiniteLossError", "TrainConfig", "TrainResult", "total_loss", "train",
    "NonFiniteGradientError", "RMSProp", "RMSPropConfig", "rmsprop_step",
    "Sample", "SyntheticSceneSpec", "generate_dataset", "generate_synthetic_sample",
]
