"""Contrastive pre-training, prompt-tuning and the fine-tune-everything baseline."""
from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .checkpoint import Checkpoint
from .encoder import EncoderParams, bind, encode, encode_vars, prompt_context, prompt_mask
from .errors import CheckpointError, ConfigError, NumericError
from .evaluation import evaluate
from .graph import edge_dropout
from .losses import LossBreakdown, bpr, contrastive, joint
from .numerics import AdamState, Tape, adam_step, backward, ops, xavier_init
from .prompts import SCOPES, build_prompt_set, count_tuned_params, full_model_report

# Sub-seed offsets: every random consumer draws from seed + offset (plus loop indices).
SEED_OFFSETS = {
    "init": 1,
    "split": 2,
    "views": 3,
    "sampling": 4,
    "prompts": 5,
    "synth": 6,
    "random_ranker": 7,
    "target_items": 8,
    "valid_negatives": 9,
}


def derive_seed(seed, consumer, *indices):
    """Seed for ``consumer``: ``seed + offset``, spread over loop ``indices`` when given."""
    base = int(seed) + SEED_OFFSETS[consumer]
    if not indices:
        return base
    return int(np.random.SeedSequence([base, *map(int, indices)]).generate_state(1)[0])


LR_GRID = (1e-2, 1e-3, 1e-4)
MONITORS = ("recall", "loss")


@dataclass
class TrainConfig:
    lr: float = 1e-2
    lambda_cl: float = 0.1
    lambda_l2: float = 0.0
    tau: float = 0.2
    rho: float = 0.1
    dim: int = 64
    n_layers: int = 3
    batch_size: int = 1024
    patience: int = 50
    max_epochs: int = 100
    seed: int = 0
    m_hard: int = 5
    m_soft: int = 3
    tune_scope: str = "prompts_only"
    corr_agg: str = "max"
    monitor: str = "recall"
    k: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not any(math.isclose(self.lr, g) for g in LR_GRID):
            raise ConfigError(f"lr must be one of {LR_GRID}, got {self.lr}")
        for name in ("lambda_cl", "lambda_l2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 <= self.rho <= 0.9:
            raise ConfigError(f"rho must lie in [0, 0.9], got {self.rho}")
        for name, low in (("dim", 1), ("n_layers", 0), ("batch_size", 1), ("patience", 1),
                          ("max_epochs", 0), ("m_hard", 0), ("m_soft", 0), ("k", 1), ("seed", 0)):
            if getattr(self, name) < low:
                raise ConfigError(f"{name} must be >= {low}")
        if self.tune_scope not in SCOPES:
            raise ConfigError(f"tune_scope must be one of {SCOPES}")
        if self.corr_agg not in ("max", "sum"):
            raise ConfigError("corr_agg must be 'max' or 'sum'")
        if self.monitor not in MONITORS:
            raise ConfigError(f"monitor must be one of {MONITORS}")

    @classmethod
    def from_mapping(cls, values):
        """Build from string (or typed) values; unknown keys are rejected."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                kwargs[key] = {"float": float, "int": int, "str": str}[kind](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    def to_mapping(self):
        return asdict(self)


@dataclass
class EpochLog:
    epoch: int
    losses: LossBreakdown
    val_recall10: float
    seconds: float


EPOCH_COLUMNS = ("epoch", "rec", "cl_user", "cl_item", "l2", "total", "val_recall10", "seconds")


def epoch_logs_csv(logs, with_seconds=True):
    """CSV text of the epoch logs; ``with_seconds=False`` blanks the wall-clock column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_COLUMNS)
    for log in logs:
        b = log.losses
        secs = repr(log.seconds) if with_seconds else ""
        w.writerow([log.epoch, repr(b.rec), repr(b.cl_user), repr(b.cl_item), repr(b.l2), repr(b.total),
                    repr(log.val_recall10), secs])
    return buf.getvalue()


def read_epoch_logs(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            b = LossBreakdown(float(row["rec"]), float(row["cl_user"]), float(row["cl_item"]),
                              float(row["l2"]), float(row["total"]), float("nan"), float("nan"))
            secs = float(row["seconds"]) if row["seconds"] else float("nan")
            out.append(EpochLog(int(row["epoch"]), b, float(row["val_recall10"]), secs))
    return out


class BatchTriplets(NamedTuple):
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray


def sample_triplets(graph, batch_size, seed):
    """Uniform users with a uniform positive and a uniform non-interacted negative each.

    Users with no interactions, or who interacted with every item, are skipped
    (the latter with a warning).
    """
    rng = np.random.default_rng(seed)
    deg = graph.user_degrees
    full = np.flatnonzero(deg >= graph.n_items)
    if len(full) and graph.n_items:
        warnings.warn(f"skipping {len(full)} user(s) who interacted with every item", stacklevel=2)
    eligible = np.flatnonzero((deg > 0) & (deg < graph.n_items))
    if not len(eligible):
        empty = np.zeros(0, dtype=np.int64)
        return BatchTriplets(empty, empty, empty)
    users = eligible[rng.integers(0, len(eligible), batch_size)]
    ptr = np.concatenate([[0], np.cumsum(deg)])
    pos = graph.edges[ptr[users] + rng.integers(0, deg[users]), 1]
    adj = graph.adjacency()
    neg = rng.integers(0, graph.n_items, batch_size)
    bad = adj[users, neg]
    while bad.any():
        idx = np.flatnonzero(bad)
        neg[idx] = rng.integers(0, graph.n_items, len(idx))
        bad[idx] = adj[users[idx], neg[idx]]
    return BatchTriplets(users, pos, neg)


def early_stop(history, patience):
    """``(stop, best_epoch)`` for a higher-is-better history; epochs are 1-based.

    Stops once ``patience`` epochs pass without strict improvement; ties keep
    the earliest epoch.
    """
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    if not len(history):
        return False, 0
    best = int(np.argmax(np.asarray(history, dtype=np.float64)))
    return len(history) - 1 - best >= patience, best + 1


# --- training machinery ----------------------------------------------------------

def _view_geometry(view, prompts, rho, seed):
    """Prompt mask and mixing weight on an edge-dropout view; prompt links drop like edges."""
    mask = prompt_mask(prompts, view.n_users)
    if rho:
        mask &= np.random.default_rng(seed).random(mask.shape) >= rho
    return mask, _lambda(view, prompts, mask)


def _full_geometry(graph, prompts):
    mask = prompt_mask(prompts, graph.n_users)
    return mask, _lambda(graph, prompts, mask)


def _lambda(g, prompts, mask):
    adj = g.adjacency().astype(np.float64)
    item_deg = adj.sum(axis=0)
    real = adj @ item_deg
    weight = np.concatenate([np.maximum(item_deg[prompts.hard_ids], 1.0) if len(prompts.hard_ids)
                             else np.zeros(0), np.ones(prompts.m_soft)])
    prompt = mask.astype(np.float64) @ weight
    total = real + prompt
    lam = np.divide(prompt, total, out=np.zeros_like(total), where=total > 0)
    return lam.reshape(-1, 1)


class TrainingRun:
    """Mutable optimisation state: named tensors, trainable set, Adam moments.

    ``prompts`` (a :class:`PromptSet`) supplies the prompt structure; its
    tensors live in ``store`` under ``prompt.*`` names.
    """

    def __init__(self, graph, store, trainable, n_layers, config, prompts=None):
        self.graph = graph
        self.store = dict(store)
        self.trainable = [n for n in store if n in set(trainable)]
        self.n_layers = n_layers
        self.config = config
        self.prompts = prompts
        self.adam = AdamState()
        self._geometry = None if prompts is None else _full_geometry(graph, prompts)
        self._frozen_cache = {}

    def bind(self, tape):
        return bind(tape, self.store, {n: True for n in self.trainable})

    def _encode(self, tape_vars, g, geometry):
        ctx = None
        if self.prompts is not None:
            ctx = prompt_context(tape_vars, g, self.prompts, geometry=geometry)
        owner, cache = self._frozen_cache.get(id(g), (None, None))
        if owner is not g:
            cache = {}
            self._frozen_cache[id(g)] = (g, cache)
        return encode_vars(g, tape_vars, self.n_layers, ctx, cache).final()

    def make_views(self, epoch):
        """Two edge-dropout views of the training graph for ``epoch``."""
        # frozen results on earlier views are stale; the full graph's stay valid
        self._frozen_cache = {k: v for k, v in self._frozen_cache.items() if v[0] is self.graph}
        views = []
        for side in (0, 1):
            s = derive_seed(self.config.seed, "views", epoch, side)
            view = edge_dropout(self.graph, self.config.rho, s)
            geom = None
            if self.prompts is not None:
                geom = _view_geometry(view, self.prompts, self.config.rho, s + 1)
            views.append((view, geom))
        return views

    def loss(self, tape, batch, views, objective):
        """Joint objective on ``tape``; ``batch`` is triplets (``joint``) or edges (``cl``)."""
        cfg = self.config
        tv = self.bind(tape)
        if objective == "joint":
            users, items = self._encode(tv, self.graph, self._geometry)
            rec = bpr(ops.take(users, batch.users), ops.take(items, batch.pos), ops.take(items, batch.neg))
            batch_users, batch_items = np.unique(batch.users), np.unique(batch.pos)
            lambda_cl = cfg.lambda_cl
        else:
            rec = tape.const(np.zeros((1, 1)))
            batch_users, batch_items = np.unique(batch[:, 0]), np.unique(batch[:, 1])
            lambda_cl = 1.0
        cl = None
        if lambda_cl and len(batch_users) >= 2 and len(batch_items) >= 2:
            (va, ga), (vb, gb) = views
            cl = contrastive(self._encode(tv, va, ga), self._encode(tv, vb, gb),
                             batch_users, batch_items, cfg.tau)
        total, parts = joint(rec, cl, [tv[n] for n in self.trainable], lambda_cl, cfg.lambda_l2)
        return total, parts, tv

    def gradients(self, batch, views, objective="joint"):
        tape = Tape()
        total, parts, tv = self.loss(tape, batch, views, objective)
        grads = backward(tape, total, [tv[n] for n in self.trainable])
        return {n: grads[tv[n]] for n in self.trainable}, parts

    def step(self, batch, views, objective="joint"):
        grads, parts = self.gradients(batch, views, objective)
        adam_step(self.store, grads, self.adam, self.config.lr)
        return parts

    def encoder_params(self):
        names = EncoderParams.expected_names(self.n_layers)
        params = EncoderParams({n: self.store[n] for n in names}, self.n_layers)
        for n in names:
            params.trainable[n] = n in self.trainable
        return params

    def prompt_set(self):
        if self.prompts is None:
            return None
        return self.prompts.with_tensors(self.store)

    def final_reps(self):
        return encode(self.graph, self.encoder_params(), self.prompt_set()).final()

    def snapshot(self):
        return {n: self.store[n] for n in self.trainable}

    def restore(self, snap):
        self.store.update(snap)


def _mean_breakdown(parts):
    keys = ("rec", "cl_user", "cl_item", "l2", "total")
    means = {k: float(np.mean([getattr(p, k) for p in parts])) for k in keys}
    return LossBreakdown(**means, lambda_cl=parts[0].lambda_cl, lambda_l2=parts[0].lambda_l2)


def validation_recall(run, train, valid, k=10):
    users, items = run.final_reps()
    return evaluate(users @ items.T, valid, train, k=k).mean_recall


def _validation_bpr(run, triplets):
    users, items = run.final_reps()
    u, i, j = users[triplets.users], items[triplets.pos], items[triplets.neg]
    margin = np.einsum("nd,nd->n", u, i - j)
    return float(np.mean(np.logaddexp(0.0, -margin)))


def _fit(run, batches_for, objective, monitor_fn):
    """Epoch loop with early stopping; restores the best state and returns (logs, best_epoch, best)."""
    cfg = run.config
    logs, history = [], []
    best_snap, best_epoch, best_value = run.snapshot(), 0, float("nan")
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        try:
            views = run.make_views(epoch)
            parts = [run.step(b, views, objective) for b in batches_for(epoch)]
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        seconds = time.perf_counter() - start
        if not parts:
            raise ConfigError("no training batches; the graph has no usable interactions")
        breakdown = _mean_breakdown(parts)
        if not math.isfinite(breakdown.total):
            raise NumericError(f"training diverged at epoch {epoch}: loss {breakdown.total}")
        value, recall = monitor_fn(breakdown)
        history.append(value)
        logs.append(EpochLog(epoch, breakdown, recall, seconds))
        stop, best = early_stop(history, cfg.patience)
        if best == epoch:
            best_snap, best_epoch, best_value = run.snapshot(), epoch, value
        if stop:
            break
    run.restore(best_snap)
    return logs, best_epoch, best_value


def _n_batches(graph, batch_size):
    return max(1, math.ceil(graph.n_edges / batch_size))


def pretrain(graph, config, valid=None):
    """Contrastive pre-training on the source graph; returns ``(Checkpoint, logs)``.

    Early stopping follows validation Recall@k when ``valid`` pairs are given,
    otherwise the training contrastive loss.
    """
    if graph.n_edges == 0:
        raise ConfigError("source graph has no interactions")
    params = EncoderParams.initialise(graph.n_users, graph.n_items, config.dim, config.n_layers,
                                      derive_seed(config.seed, "init"))
    run = TrainingRun(graph, params.tensors, list(params.tensors), config.n_layers, config)
    edges = graph.edges
    n_batches = _n_batches(graph, config.batch_size)

    def batches(epoch):
        order = np.random.default_rng(derive_seed(config.seed, "sampling", epoch)).permutation(len(edges))
        return [edges[chunk] for chunk in np.array_split(order, n_batches) if len(chunk)]

    use_valid = valid is not None and len(valid) > 0 and config.monitor == "recall"

    def monitor(breakdown):
        if use_valid:
            r = validation_recall(run, edges, valid, config.k)
            return r, r
        return -breakdown.total, float("nan")

    logs, best_epoch, best = _fit(run, batches, "cl", monitor)
    ck = Checkpoint(run.encoder_params(), None, config.seed, best_epoch, best if use_valid else float("nan"))
    return ck, logs


def target_model(checkpoint, graph, config):
    """Checkpoint user embeddings and encoder weights with fresh target item embeddings."""
    p = checkpoint.params
    if p.dim != config.dim or p.n_layers != config.n_layers:
        raise CheckpointError(f"checkpoint has d={p.dim}, layers={p.n_layers}; "
                              f"config expects d={config.dim}, layers={config.n_layers}")
    if p.n_users != graph.n_users:
        raise CheckpointError(f"checkpoint has {p.n_users} users, target graph has {graph.n_users}")
    tensors = {}
    for name in EncoderParams.expected_names(p.n_layers):
        if name == "item_embeddings":
            tensors[name] = xavier_init(graph.n_items, p.dim, derive_seed(config.seed, "target_items"))
        else:
            tensors[name] = p.tensors[name]
    return EncoderParams(tensors, p.n_layers)


class TuneResult(NamedTuple):
    model: EncoderParams
    prompts: object
    logs: list
    report: object
    best_epoch: int
    best_metric: float


def _tune(run, valid):
    graph, config = run.graph, run.config
    n_batches = _n_batches(graph, config.batch_size)

    def batches(epoch):
        return [sample_triplets(graph, config.batch_size, derive_seed(config.seed, "sampling", epoch, b))
                for b in range(n_batches)]

    has_valid = valid is not None and len(valid) > 0
    val_triplets = None
    if has_valid and config.monitor == "loss":
        val_triplets = _valid_triplets(graph, valid, derive_seed(config.seed, "valid_negatives"))

    def monitor(breakdown):
        recall = validation_recall(run, graph.edges, valid, config.k) if has_valid else float("nan")
        if val_triplets is not None:
            return -_validation_bpr(run, val_triplets), recall
        if has_valid:
            return recall, recall
        return -breakdown.total, recall

    logs, best_epoch, best = _fit(run, batches, "joint", monitor)
    return logs, best_epoch, best


def _valid_triplets(graph, valid, seed):
    valid = np.asarray(valid, dtype=np.int64).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    seen = graph.adjacency().copy()
    seen[valid[:, 0], valid[:, 1]] = True
    neg = rng.integers(0, graph.n_items, len(valid))
    bad = seen[valid[:, 0], neg]
    while bad.any() and not seen[valid[bad, 0]].all():
        idx = np.flatnonzero(bad)
        neg[idx] = rng.integers(0, graph.n_items, len(idx))
        bad[idx] = seen[valid[idx, 0], neg[idx]]
    return BatchTriplets(valid[:, 0], valid[:, 1], neg)


def prompt_tune(graph, checkpoint, related, config, valid=None):
    """Train prompts (and target item embeddings when the scope extends) on a frozen model.

    ``related`` lists, per target item id, the ids of its related items.
    """
    run = prompt_tuning_run(graph, checkpoint, related, config)
    logs, best_epoch, best = _tune(run, valid)
    report = count_tuned_params(run.prompts, config.tune_scope, graph.n_users, graph.n_items,
                                config.dim, config.n_layers)
    return TuneResult(run.encoder_params(), run.prompt_set(), logs, report, best_epoch, best)


def prompt_tuning_run(graph, checkpoint, related, config):
    """The :class:`TrainingRun` prompt_tune optimises, before any step."""
    base = target_model(checkpoint, graph, config)
    prompts = build_prompt_set(base, graph, related, config.m_hard, config.m_soft,
                               derive_seed(config.seed, "prompts"), config.corr_agg)
    trainable = list(prompts.tensors())
    if config.tune_scope == "prompts_plus_target_items":
        trainable.append("item_embeddings")
    return TrainingRun(graph, {**base.tensors, **prompts.tensors()}, trainable, config.n_layers, config, prompts)


def fine_tune_baseline(graph, checkpoint, config, valid=None):
    """Same joint objective with every encoder tensor trainable and no prompts."""
    base = target_model(checkpoint, graph, config)
    run = TrainingRun(graph, base.tensors, list(base.tensors), config.n_layers, config)
    logs, best_epoch, best = _tune(run, valid)
    report = full_model_report(graph.n_users, graph.n_items, config.dim, config.n_layers)
    return TuneResult(run.encoder_params(), None, logs, report, best_epoch, best)


def model_scores(graph, params, prompts=None):
    """Full ``(n_users, n_items)`` score matrix of a model on ``graph``."""
    users, items = encode(graph, params, prompts).final()
    return users @ items.T
