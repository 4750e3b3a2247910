"""Attention-aggregating graph encoder with optional personalised prompt nodes.

Propagation for a node ``i`` at layer ``l`` (sigma = identity)::

    h_i' = W_U h_i + sum_{j in N(i)} w_ij W_V h_j,   w_ij = softmax_j((W_Q h_i) . (W_K h_j))

With prompts, user rows become::

    h_u' = W_U h_u + (1 - lam_u) sum_j w_uj W_V h_j + lam_u sum_r w_ur P h_r

where ``lam_u = |N_r| / (|N_j| + |N_r|)`` compares the summed degrees of the
user's prompt nodes against those of its real neighbours. Items always update
from their adjacent users without prompts. The final representation is the
mean over layers ``0..L``.

Matrices act on column vectors, so with node features stored as rows the code
computes ``H @ W.T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GraphError, ShapeError
from .numerics import Tape, ops, xavier_init
from .numerics.init import as_rng

LAYER_WEIGHTS = ("W_Q", "W_K", "W_V", "W_U")


class EmptyNeighborhood(GraphError):
    """Raised by :func:`attention_weights` for a node without neighbours."""


def layer_key(layer, weight):
    return f"layer{layer}.{weight}"


@dataclass
class EncoderParams:
    """Named tensors in checkpoint order plus a per-tensor trainable flag."""

    tensors: dict
    n_layers: int
    trainable: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.expected_names(self.n_layers)
        if list(self.tensors) != expected:
            raise ConfigError(f"encoder tensors must be {expected}, got {list(self.tensors)}")
        d = self.tensors["user_embeddings"].shape[1]
        for name, t in self.tensors.items():
            if t.ndim != 2 or t.shape[1] != d or (name.startswith("layer") and t.shape[0] != d):
                raise ShapeError(f"{name} has shape {t.shape}, inconsistent with dim {d}")
        for name in self.tensors:
            self.trainable.setdefault(name, True)

    @staticmethod
    def expected_names(n_layers):
        names = ["user_embeddings", "item_embeddings"]
        for layer in range(n_layers):
            names += [layer_key(layer, w) for w in LAYER_WEIGHTS]
        return names

    @classmethod
    def initialise(cls, n_users, n_items, dim, n_layers, seed=0):
        rng = as_rng(seed)
        tensors = {
            "user_embeddings": xavier_init(n_users, dim, rng),
            "item_embeddings": xavier_init(n_items, dim, rng),
        }
        for layer in range(n_layers):
            for w in LAYER_WEIGHTS:
                tensors[layer_key(layer, w)] = xavier_init(dim, dim, rng)
        return cls(tensors, n_layers)

    @property
    def dim(self):
        return self.tensors["user_embeddings"].shape[1]

    @property
    def n_users(self):
        return self.tensors["user_embeddings"].shape[0]

    @property
    def n_items(self):
        return self.tensors["item_embeddings"].shape[0]

    def layer(self, layer):
        return {w: self.tensors[layer_key(layer, w)] for w in LAYER_WEIGHTS}

    def copy(self):
        return EncoderParams({k: v.copy() for k, v in self.tensors.items()}, self.n_layers, dict(self.trainable))

    def freeze(self, names=None):
        for name in (self.tensors if names is None else names):
            self.trainable[name] = False
        return self


@dataclass
class NodeReps:
    """Per-layer user and item features (arrays or tape variables)."""

    users: list
    items: list

    @property
    def n_layers(self):
        return len(self.users) - 1

    def final(self):
        """Mean over all layers, as ``(users, items)``."""
        n = len(self.users)
        if isinstance(self.users[0], np.ndarray):
            return sum(self.users) / n, sum(self.items) / n
        u, i = self.users[0], self.items[0]
        for k in range(1, n):
            u, i = u + self.users[k], i + self.items[k]
        return ops.scale(u, 1.0 / n), ops.scale(i, 1.0 / n)

    def stacked(self, layer):
        return np.vstack([_value(self.users[layer]), _value(self.items[layer])])


def _value(x):
    return x.value if isinstance(x, ops.Var) else x


# --- single-node reference pieces -------------------------------------------------

def attention_weights(h_i, neighbor_feats, W_Q, W_K):
    """Softmax over neighbours of ``(W_Q h_i) . (W_K h_j)``."""
    neighbor_feats = np.atleast_2d(np.asarray(neighbor_feats, dtype=np.float64))
    if neighbor_feats.shape[0] == 0 or neighbor_feats.size == 0:
        raise EmptyNeighborhood("node has no neighbours")
    q = np.asarray(W_Q) @ np.asarray(h_i, dtype=np.float64)
    logits = neighbor_feats @ np.asarray(W_K).T @ q
    logits = logits - logits.max()
    w = np.exp(logits)
    return w / w.sum()


# --- tape-level propagation ------------------------------------------------------

def _bipartite_step(hu, hi, adj, wt):
    """Neighbour aggregation for users and the plain update for items."""
    agg_u = _aggregate(hu, hi, adj, wt)
    hi_next = ops.matmul(hi, wt["W_U"])
    if hu.shape[0]:
        hi_next = hi_next + _aggregate(hi, hu, adj.T, wt)
    return agg_u, hi_next


def _aggregate(h_self, h_other, mask, wt):
    q = ops.matmul(h_self, wt["W_Q"])
    k = ops.matmul(h_other, wt["W_K"])
    v = ops.matmul(h_other, wt["W_V"])
    weights = ops.softmax(ops.matmul(q, ops.transpose(k)), mask=mask)
    return ops.matmul(weights, v)


def _transposed(weights):
    return {name: ops.transpose(w) for name, w in weights.items()}


def layer_forward(g, hu, hi, weights, adj=None):
    """Plain propagation of tape variables ``hu`` (users) and ``hi`` (items)."""
    adj = g.adjacency() if adj is None else adj
    wt = _transposed(weights)
    hu_next = ops.matmul(hu, wt["W_U"])
    if hi.shape[0]:
        agg_u, hi_next = _bipartite_step(hu, hi, adj, wt)
        hu_next = hu_next + agg_u
    else:
        hi_next = ops.matmul(hi, wt["W_U"])
    return hu_next, hi_next


@dataclass
class PromptContext:
    """Tape-side view of a prompt set for one graph."""

    pool: object        # Var (n_pool, d): hard prompt rows then soft prompt rows
    p_value: object     # Var (d, d)
    mask: np.ndarray    # (n_users, n_pool) bool
    lam: np.ndarray     # (n_users, 1)


def prompt_mask(prompts, n_users):
    n_hard = len(prompts.hard_ids)
    n_soft = prompts.soft_embeddings.shape[0]
    mask = np.zeros((n_users, n_hard + n_soft), dtype=bool)
    col = {item: k for k, item in enumerate(prompts.hard_ids)}
    for u, items in enumerate(prompts.hard):
        for item in items:
            mask[u, col[item]] = True
    if n_soft:
        mask[:, n_hard:] = True
    return mask


def prompt_lambda(g, prompts, adj=None):
    """Per-user ``|N_r| / (|N_j| + |N_r|)`` on graph ``g``.

    ``|N_j|`` sums the degrees of the user's real neighbours, ``|N_r|`` sums
    ``max(degree, 1)`` over its hard prompts and counts 1 per soft prompt.
    """
    adj = g.adjacency() if adj is None else adj
    item_deg = adj.sum(axis=0)
    real = adj.astype(np.float64) @ item_deg.astype(np.float64)
    n_soft = prompts.soft_embeddings.shape[0]
    prompt = np.array([
        float(np.maximum(item_deg[list(items)], 1).sum()) if len(items) else 0.0
        for items in prompts.hard
    ]) + n_soft
    total = real + prompt
    lam = np.divide(prompt, total, out=np.zeros_like(total), where=total > 0)
    return lam.reshape(-1, 1)


def prompt_context(tape_vars, g, prompts, adj=None, geometry=None):
    """Build the :class:`PromptContext`; ``tape_vars`` holds ``prompt.hard``, ``prompt.soft``, ``prompt.P_V``.

    ``geometry`` is an optional precomputed ``(mask, lam)`` pair for ``g``.
    """
    parts = [tape_vars[k] for k in ("prompt.hard", "prompt.soft") if tape_vars[k].shape[0]]
    if not parts:
        return None
    pool = parts[0] if len(parts) == 1 else ops.concat(parts)
    mask, lam = geometry if geometry is not None else prompt_geometry(g, prompts, adj)
    return PromptContext(pool, tape_vars["prompt.P_V"], mask, lam)


def prompt_geometry(g, prompts, adj=None):
    """The (mask, lam) pair of ``prompts`` on graph ``g``."""
    adj = g.adjacency() if adj is None else adj
    return prompt_mask(prompts, g.n_users), prompt_lambda(g, prompts, adj)


def _frozen(*vars_):
    return not any(isinstance(v, ops.Var) and v.requires_grad for v in vars_)


def prompt_layer_forward(g, hu, hi, weights, ctx, adj=None, cache=None, key=None):
    """Propagation with prompt nodes attached to users; falls back to plain when ``ctx`` is None.

    When every input of the real-neighbour part is frozen, its value is stored
    in ``cache[key]`` and reused on later calls.
    """
    if ctx is None:
        return layer_forward(g, hu, hi, weights, adj)
    adj = g.adjacency() if adj is None else adj
    wt = _transposed(weights)
    hu_next = ops.matmul(hu, wt["W_U"])
    if hi.shape[0]:
        reuse = cache is not None and _frozen(hu, hi, *weights.values())
        if reuse and key in cache:
            agg_u, hi_next = (hu.tape.const(v) for v in cache[key])
        else:
            agg_u, hi_next = _bipartite_step(hu, hi, adj, wt)
            if reuse:
                cache[key] = (agg_u.value, hi_next.value)
        hu_next = hu_next + ops.scale(agg_u, 1.0 - ctx.lam)
    else:
        hi_next = ops.matmul(hi, wt["W_U"])
    q = ops.matmul(hu, wt["W_Q"])
    k = ops.matmul(ctx.pool, wt["W_K"])
    v = ops.matmul(ctx.pool, ops.transpose(ctx.p_value))
    w = ops.softmax(ops.matmul(q, ops.transpose(k)), mask=ctx.mask)
    hu_next = hu_next + ops.scale(ops.matmul(w, v), ctx.lam)
    return hu_next, hi_next


def encode_vars(g, tape_vars, n_layers, ctx=None, cache=None):
    """Stack ``n_layers`` propagations starting from the embedding tables on the tape.

    ``cache`` (a dict owned by the caller, tied to ``g`` and the frozen
    tensors) keeps frozen intermediate results across calls.
    """
    adj = g.adjacency()
    hu, hi = tape_vars["user_embeddings"], tape_vars["item_embeddings"]
    users, items = [hu], [hi]
    for layer in range(n_layers):
        weights = {w: tape_vars[layer_key(layer, w)] for w in LAYER_WEIGHTS}
        hu, hi = prompt_layer_forward(g, hu, hi, weights, ctx, adj, cache, layer)
        users.append(hu)
        items.append(hi)
    return NodeReps(users, items)


def bind(tape, tensors, trainable=None):
    """Put named arrays on ``tape``; tensors flagged trainable require gradients."""
    trainable = trainable or {}
    return {name: tape.leaf(t, requires_grad=bool(trainable.get(name, False)), name=name)
            for name, t in tensors.items()}


def prompt_tensors(prompts):
    return {
        "prompt.hard": prompts.hard_embeddings,
        "prompt.soft": prompts.soft_embeddings,
        "prompt.P_V": prompts.P_V_prime,
    }


# --- array-level API ---------------------------------------------------------------

def _split(H, n_users):
    H = np.asarray(H, dtype=np.float64)
    return H[:n_users], H[n_users:]


def propagate_layer(g, H, params, layer_idx):
    """Next-layer features for the stacked ``(n_users + n_items, d)`` matrix ``H``."""
    if H.shape[0] != g.n_users + g.n_items or H.shape[1] != params.dim:
        raise ShapeError(f"features {H.shape} do not match graph/params")
    tape = Tape()
    hu, hi = _split(H, g.n_users)
    weights = {w: tape.const(t) for w, t in params.layer(layer_idx).items()}
    nu, ni = layer_forward(g, tape.const(hu), tape.const(hi), weights)
    return np.vstack([nu.value, ni.value])


def propagate_with_prompts(g, H, prompts, params, layer_idx):
    if H.shape[0] != g.n_users + g.n_items or H.shape[1] != params.dim:
        raise ShapeError(f"features {H.shape} do not match graph/params")
    tape = Tape()
    hu, hi = _split(H, g.n_users)
    weights = {w: tape.const(t) for w, t in params.layer(layer_idx).items()}
    ctx = prompt_context(bind(tape, prompt_tensors(prompts)), g, prompts)
    nu, ni = prompt_layer_forward(g, tape.const(hu), tape.const(hi), weights, ctx)
    return np.vstack([nu.value, ni.value])


def encode(g, params, prompts=None):
    """Array-valued :class:`NodeReps` for graph ``g`` (a graph or an edge-dropout view)."""
    if params.n_users != g.n_users or params.n_items != g.n_items:
        raise ShapeError("parameter tables do not match the graph's node counts")
    tape = Tape()
    tv = bind(tape, params.tensors)
    ctx = None
    if prompts is not None:
        tv.update(bind(tape, prompt_tensors(prompts)))
        ctx = prompt_context(tv, g, prompts)
    reps = encode_vars(g, tv, params.n_layers, ctx)
    return NodeReps([u.value for u in reps.users], [i.value for i in reps.items])


# --- prefix-attention decomposition ------------------------------------------------

def _softmax_rows(x):
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def prefix_attention_check(Q, K, V, P_K, P_V):
    """Max abs gap between attention over ``[P_K; K] / [P_V; V]`` and its
    ``(1 - lam) Attn(Q, K, V) + lam Attn(Q, P_K, P_V)`` decomposition.

    ``lam`` is, per query row, the softmax mass that falls on the prefix rows.
    """
    Q, K, V, P_K, P_V = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (Q, K, V, P_K, P_V))
    d = Q.shape[1]
    if K.size == 0:
        K, V = np.zeros((0, d)), np.zeros((0, P_V.shape[1] if P_V.size else d))
    if P_K.size == 0:
        P_K, P_V = np.zeros((0, d)), np.zeros((0, V.shape[1]))
    if K.shape[1] != d or P_K.shape[1] != d:
        raise ShapeError("queries, keys and prefix keys must share a width")
    if K.shape[0] != V.shape[0] or P_K.shape[0] != P_V.shape[0] or V.shape[1] != P_V.shape[1]:
        raise ShapeError("keys/values and prefix keys/values must pair up")
    if K.shape[0] + P_K.shape[0] == 0:
        raise ShapeError("no keys at all")

    joint = _softmax_rows(Q @ np.vstack([P_K, K]).T) @ np.vstack([P_V, V])

    out = np.zeros_like(joint)
    logits_p, logits_k = Q @ P_K.T, Q @ K.T
    m = np.concatenate([logits_p, logits_k], axis=1).max(axis=1, keepdims=True)
    mass_p = np.exp(logits_p - m).sum(axis=1, keepdims=True)
    mass_k = np.exp(logits_k - m).sum(axis=1, keepdims=True)
    lam = mass_p / (mass_p + mass_k)
    if K.shape[0]:
        out += (1 - lam) * (_softmax_rows(logits_k) @ V)
    if P_K.shape[0]:
        out += lam * (_softmax_rows(logits_p) @ P_V)
    return float(np.abs(joint - out).max())
