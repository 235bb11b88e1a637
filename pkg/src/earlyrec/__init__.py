"""Early recognition of labeled sequences with future-state predicting LSTMs."""
from ._backend import BACKEND
from .data import Dataset, FrameSequence, GeneratorSpec, generate_dataset, load_dataset, save_dataset
from .encoder import EncoderModel
from .evaluator import EvalReport, evaluate
from .losses import LossSelection
from .recurrent import RecurrentModel
from .trainer import Delta, TrainConfig, train_fsp, train_teacher

__all__ = [
    "BACKEND",
    "Dataset",
    "Delta",
    "EncoderModel",
    "EvalReport",
    "FrameSequence",
    "GeneratorSpec",
    "LossSelection",
    "RecurrentModel",
    "TrainConfig",
    "evaluate",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
    "train_fsp",
    "train_teacher",
]

__version__ = "0.1.0"
