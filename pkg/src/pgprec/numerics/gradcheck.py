import numpy as np

from ..errors import ConfigError, NumericError
from .tape import Tape, backward


def tape_gradients(f, params):
    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    loss = f(tape, *leaves)
    grads = backward(tape, loss, wrt=leaves)
    return float(loss.value[0, 0]), [grads[v] for v in leaves]


def _evaluate(f, params):
    tape = Tape()
    out = f(tape, *[tape.const(p) for p in params])
    value = float(out.value[0, 0])
    if not np.isfinite(value):
        raise NumericError("objective is not finite")
    return value


# central stencils: offsets (in units of epsilon) and weights, per accuracy order
STENCILS = {
    2: ((1, -1), (0.5, -0.5)),
    4: ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)),
}


def numeric_gradients(f, params, epsilon=1e-5, order=2):
    """Central-difference gradient of every entry.

    ``order=2`` is ``(f(p + eps) - f(p - eps)) / 2 eps``; ``order=4`` uses the
    five-point stencil, whose truncation error is O(eps^4).
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if order not in STENCILS:
        raise ConfigError(f"order must be one of {sorted(STENCILS)}")
    offsets, weights = STENCILS[order]
    params = [np.array(p, dtype=np.float64, ndmin=2) for p in params]
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            total = 0.0
            for off, w in zip(offsets, weights):
                p[idx] = orig + off * epsilon
                total += w * _evaluate(f, params)
            p[idx] = orig
            g[idx] = total / epsilon
        out.append(g)
    return out


def finite_diff_check(f, params, epsilon=1e-5, order=2):
    """Max entrywise relative error between tape and central-difference gradients.

    ``f(tape, *vars)`` must build a ``(1, 1)`` objective on ``tape``. The
    relative error uses ``max(|analytic|, |numeric|, 1e-12)`` as denominator.
    """
    _, analytic = tape_gradients(f, params)
    numeric = numeric_gradients(f, params, epsilon, order)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-12)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
