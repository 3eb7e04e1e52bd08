"""Small numpy network engine: layers, losses, Adam and checkpoints."""
from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint, state_hash
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    LeakyReLU,
    Module,
    NonFiniteError,
    Parameter,
    ResBlock,
    Reshape,
    Sequential,
    ShapeError,
    Tanh,
    check_finite,
)
from .losses import mse, softmax, softmax_xent
from .optim import Adam, adam_step
from .quant import UniformQuantizerSTE, uniform_indices, uniform_levels, uniform_quantize, uniform_quantize_ste

__all__ = [
    "Adam", "BatchNorm", "CheckpointError", "Conv2d", "Dense", "Flatten", "LeakyReLU", "Module",
    "NonFiniteError", "Parameter", "ResBlock", "Reshape", "Sequential", "ShapeError", "Tanh",
    "UniformQuantizerSTE", "adam_step", "check_finite", "load_checkpoint", "mse", "read_header",
    "save_checkpoint", "softmax", "softmax_xent", "state_hash", "uniform_indices", "uniform_levels",
    "uniform_quantize", "uniform_quantize_ste",
]
