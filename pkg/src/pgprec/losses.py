"""Ranking, contrastive and regularisation objectives built on the gradient tape."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import Tape, ops


@dataclass
class LossBreakdown:
    rec: float
    cl_user: float
    cl_item: float
    l2: float
    total: float
    lambda_cl: float
    lambda_l2: float


# --- tape-level ------------------------------------------------------------------

def bpr(e_u, e_i, e_j):
    """Mean over rows of ``-log sigmoid(e_u . (e_i - e_j))``."""
    margin = ops.dot(e_u, e_i - e_j)
    return ops.scale(ops.sum(ops.log(ops.sigmoid(margin))), -1.0 / margin.shape[0])


def info_nce(view_a, view_b, tau):
    """Mean InfoNCE of each row of ``view_a`` against all rows of ``view_b``.

    Row ``q`` of ``view_b`` is the positive for row ``q`` of ``view_a``; the
    other rows are its negatives, and the denominator includes the positive.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    n = view_a.shape[0]
    if n < 2:
        raise ValueError("in-batch contrast needs at least two nodes")
    logits = ops.scale(ops.matmul(view_a, ops.transpose(view_b)), 1.0 / tau)
    log_p = ops.log_softmax(logits)
    diag = view_a.tape.const(np.eye(n))
    return ops.scale(ops.sum(ops.mul(log_p, diag)), -1.0 / n)


def contrastive(view_a, view_b, batch_users, batch_items, tau):
    """(user loss, item loss) between two encoded views, each ``(users, items)`` tape pairs."""
    ua, ia = view_a
    ub, ib = view_b
    cl_user = info_nce(ops.take(ua, batch_users), ops.take(ub, batch_users), tau)
    cl_item = info_nce(ops.take(ia, batch_items), ops.take(ib, batch_items), tau)
    return cl_user, cl_item


def l2_penalty(tensors):
    """Sum of squared entries of the given tape variables, or None when empty."""
    total = None
    for t in tensors:
        if t.value.size == 0:
            continue
        sq = ops.sum(ops.mul(t, t))
        total = sq if total is None else total + sq
    return total


def joint(rec, cl, l2_vars, lambda_cl, lambda_l2):
    """``rec + lambda_cl * (cl_user + cl_item) + lambda_l2 * ||theta||^2``.

    ``cl`` is a ``(cl_user, cl_item)`` pair or None; ``l2_vars`` are the
    trainable tensors. Returns the total (tape scalar) and a breakdown.
    """
    if lambda_cl < 0 or lambda_l2 < 0:
        raise ConfigError("loss weights must be non-negative")
    total = rec
    cl_u = cl_i = 0.0
    if cl is not None and lambda_cl:
        cl_user, cl_item = cl
        total = total + ops.scale(cl_user + cl_item, lambda_cl)
    if cl is not None:
        cl_u, cl_i = _f(cl[0]), _f(cl[1])
    l2 = l2_penalty(l2_vars)
    l2_value = 0.0 if l2 is None else _f(l2)
    if l2 is not None and lambda_l2:
        total = total + ops.scale(l2, lambda_l2)
    return total, LossBreakdown(_f(rec), cl_u, cl_i, l2_value, _f(total), lambda_cl, lambda_l2)


def _f(v):
    return float(v.value[0, 0])


# --- array-level -----------------------------------------------------------------

def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


def bpr_loss(e_u, e_i, e_j):
    e_u, e_i, e_j = _rows(e_u), _rows(e_i), _rows(e_j)
    if not e_u.shape == e_i.shape == e_j.shape:
        raise ShapeError("BPR inputs must have matching shapes")
    tape = Tape()
    return _f(bpr(tape.const(e_u), tape.const(e_i), tape.const(e_j)))


def infonce(anchor, positive, negatives, tau):
    """InfoNCE of one anchor against one positive and ``k`` negatives."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    anchor, positive, negatives = _rows(anchor), _rows(positive), _rows(negatives)
    if negatives.shape[0] < 1 or negatives.shape[1] != anchor.shape[1]:
        raise ShapeError("need at least one negative of the anchor's width")
    tape = Tape()
    a = tape.const(anchor)
    others = tape.const(np.vstack([positive, negatives]))
    log_p = ops.log_softmax(ops.scale(ops.matmul(a, ops.transpose(others)), 1.0 / tau))
    return -float(log_p.value[0, 0])


def contrastive_loss(view_a, view_b, batch_users, batch_items, tau):
    """Array-level (cl_user, cl_item); views are ``(users, items)`` array pairs."""
    tape = Tape()
    va = tuple(tape.const(x) for x in view_a)
    vb = tuple(tape.const(x) for x in view_b)
    cu, ci = contrastive(va, vb, batch_users, batch_items, tau)
    return _f(cu), _f(ci)
