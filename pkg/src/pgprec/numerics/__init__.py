from . import tape as ops
from .adam import AdamState, adam_step
from .gradcheck import finite_diff_check, numeric_gradients, tape_gradients
from .init import as_rng, xavier_init
from .tape import Tape, Var, backward

__all__ = [
    "AdamState", "Tape", "Var", "adam_step", "as_rng", "backward", "finite_diff_check",
    "numeric_gradients", "ops", "tape_gradients", "xavier_init",
]
