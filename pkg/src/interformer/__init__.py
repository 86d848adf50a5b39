"""Two-branch (convolution + relative self-attention) encoder with bidirectional
feature interaction and selective fusion, built on a small numpy autodiff engine."""

from .autodiff import Tensor, backward, no_grad, tensor_create
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    ConfigMismatch,
    DivergenceDetected,
    InterformerError,
    NonFiniteValue,
    ShapeMismatch,
)
from .gradcheck import CheckReport, finite_diff_check
from .model import BlockConfig, block_forward, count_parameters, encoder_forward, init_block, init_encoder
from .tasks import SyntheticTask, gen_task
from .training import Model, RunReport, TrainConfig, ablate, evaluate, train

__all__ = [
    "Tensor", "backward", "no_grad", "tensor_create",
    "load_checkpoint", "save_checkpoint",
    "ConfigError", "ConfigMismatch", "DivergenceDetected", "InterformerError", "NonFiniteValue", "ShapeMismatch",
    "CheckReport", "finite_diff_check",
    "BlockConfig", "block_forward", "count_parameters", "encoder_forward", "init_block", "init_encoder",
    "SyntheticTask", "gen_task",
    "Model", "RunReport", "TrainConfig", "ablate", "evaluate", "train",
]
__version__ = "0.1.0"
