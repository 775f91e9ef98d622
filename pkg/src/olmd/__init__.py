"""OLMD: orientation-decoupled motion features for continuous sign recognition, in numpy."""

from .data import SynthConfig, generate_dataset, generate_sample, load_split
from .io import read_tensor, write_tensor
from .losses import LossConfig, ctc_loss, greedy_decode, kl_distill, total_loss
from .metrics import edit_alignment, wer
from .model import OLMD, ConfigError, ModelConfig
from .tensor import Tensor, no_grad, precision
from .train import RunConfig, evaluate, load_config, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "LossConfig", "ModelConfig", "OLMD", "RunConfig", "SynthConfig", "Tensor",
    "ctc_loss", "edit_alignment", "evaluate", "generate_dataset", "generate_sample",
    "greedy_decode", "kl_distill", "load_config", "load_split", "no_grad", "precision",
    "read_tensor", "total_loss", "train", "wer", "write_tensor",
]
