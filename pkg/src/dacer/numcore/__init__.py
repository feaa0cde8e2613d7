from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .nn import Mlp, forward_mlp, gelu, mish, sinusoidal_embed
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward, no_grad

__all__ = [
    "Adam", "AdamState", "Mlp", "Tensor", "adam_step", "backward", "forward_mlp", "gelu",
    "load_checkpoint", "mish", "no_grad", "restore_into", "save_checkpoint", "sinusoidal_embed",
]
