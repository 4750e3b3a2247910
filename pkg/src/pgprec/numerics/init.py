import numpy as np

from ..errors import ShapeError


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def xavier_init(rows, cols, seed=None):
    """Uniform Glorot initialisation in ``[-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))]``."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"xavier_init needs positive dimensions, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    return as_rng(seed).uniform(-bound, bound, size=(rows, cols))
