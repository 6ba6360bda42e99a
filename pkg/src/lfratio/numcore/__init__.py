from .losses import bce_with_logits, sigmoid, softplus
from .mlp import MlpNetwork, backward, elu, forward
from .optim import AdamState, adam_step
from .rng import derive_seed, make_rng, split

__all__ = [
    "AdamState",
    "MlpNetwork",
    "adam_step",
    "backward",
    "bce_with_logits",
    "derive_seed",
    "elu",
    "forward",
    "make_rng",
    "sigmoid",
    "softplus",
    "split",
]
