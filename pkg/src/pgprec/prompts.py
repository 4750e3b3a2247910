"""Personalised graph prompts: hard neighbouring-item prompts and soft learned prompts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import encode
from .errors import ConfigError
from .numerics import xavier_init
from .numerics.init import as_rng

SCOPES = ("prompts_only", "prompts_plus_target_items")


@dataclass
class PromptSet:
    hard: list                 # per-user list of prompt item ids, best first
    hard_ids: np.ndarray       # sorted distinct ids; row k of hard_embeddings belongs to hard_ids[k]
    hard_embeddings: np.ndarray
    soft_embeddings: np.ndarray
    P_V_prime: np.ndarray

    @property
    def dim(self):
        return self.P_V_prime.shape[0]

    @property
    def m_soft(self):
        return self.soft_embeddings.shape[0]

    @property
    def n_distinct_hard(self):
        return len(self.hard_ids)

    def tensors(self):
        return {
            "prompt.hard": self.hard_embeddings,
            "prompt.soft": self.soft_embeddings,
            "prompt.P_V": self.P_V_prime,
        }

    def with_tensors(self, tensors):
        return PromptSet(self.hard, self.hard_ids, tensors["prompt.hard"],
                         tensors["prompt.soft"], tensors["prompt.P_V"])

    def copy(self):
        return PromptSet([list(h) for h in self.hard], self.hard_ids.copy(), self.hard_embeddings.copy(),
                         self.soft_embeddings.copy(), self.P_V_prime.copy())


@dataclass
class TunedParamReport:
    groups: dict = field(default_factory=dict)
    tuned: int = 0
    total: int = 0   # parameters tuned when fine-tuning everything

    @property
    def ratio(self):
        return self.tuned / self.total if self.total else 0.0

    def rows(self):
        yield from self.groups.items()
        yield "tuned", self.tuned
        yield "full_fine_tune", self.total

    def to_tsv(self):
        lines = ["group\tcount"] + [f"{k}\t{v}" for k, v in self.rows()]
        lines.append(f"ratio\t{self.ratio:.6f}")
        return "\n".join(lines) + "\n"


def empty_prompt_set(n_users, dim, seed=0):
    return PromptSet([[] for _ in range(n_users)], np.zeros(0, dtype=np.int64), np.zeros((0, dim)),
                     np.zeros((0, dim)), xavier_init(dim, dim, seed))


def index_relations(relations, item_keys):
    """Per target item id, the set of related target item ids (all relation kinds)."""
    index = {k: i for i, k in enumerate(item_keys)}
    out = []
    for key in item_keys:
        out.append(frozenset(index[o] for o in relations.related(key) if o in index))
    return out


def candidate_pool(user_items, related):
    """Items related to any of ``user_items``, excluding the user's own items."""
    user_items = set(user_items)
    pool = set()
    for j in user_items:
        if j < len(related):
            pool.update(related[j])
    return pool - user_items


def correlation_scores(item_reps, user_items, candidates, agg="max"):
    """Score each candidate ``r`` by the dot products ``e_j . e_r`` over the user's items ``j``.

    ``agg`` combines a candidate's dot products: ``"max"`` (default) or ``"sum"``.
    """
    user_items = list(user_items)
    if not user_items:
        raise ValueError("correlation needs at least one interacted item")
    candidates = list(candidates)
    if not candidates:
        return np.zeros(0)
    dots = item_reps[candidates] @ item_reps[user_items].T
    if agg == "max":
        return dots.max(axis=1)
    if agg == "sum":
        return dots.sum(axis=1)
    raise ConfigError(f"unknown correlation aggregation {agg!r}")


def select_hard_prompts(scores, m_hard):
    """Top ``m_hard`` ids by descending score, ties to the smaller id.

    ``scores`` maps item id to score.
    """
    if m_hard < 0:
        raise ConfigError("m_hard must be >= 0")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [int(k) for k, _ in ranked[:m_hard]]


def init_soft_prompts(m_soft, dim, seed=0):
    if m_soft < 0:
        raise ConfigError("m_soft must be >= 0")
    if m_soft == 0:
        return np.zeros((0, dim))
    return xavier_init(m_soft, dim, seed)


def build_prompt_set(params, graph, related, m_hard, m_soft, seed=0, agg="max"):
    """Select hard prompts per user from the current model and create the soft pool.

    Hard prompt embeddings start as copies of the base item embeddings; the soft
    pool and the prompt value matrix are Xavier-initialised.
    """
    if m_hard < 0 or m_soft < 0:
        raise ConfigError("prompt counts must be >= 0")
    rng = as_rng(seed)
    user_sets = graph.user_item_sets()
    hard = [[] for _ in range(graph.n_users)]
    if m_hard:
        _, item_reps = encode(graph, params).final()
        for u, items in enumerate(user_sets):
            if not items:
                continue
            pool = sorted(candidate_pool(items, related))
            if not pool:
                continue
            scores = correlation_scores(item_reps, sorted(items), pool, agg)
            hard[u] = select_hard_prompts(dict(zip(pool, scores)), m_hard)
    hard_ids = np.array(sorted({i for h in hard for i in h}), dtype=np.int64)
    dim = params.dim
    item_emb = params.tensors["item_embeddings"]
    hard_emb = item_emb[hard_ids].copy() if len(hard_ids) else np.zeros((0, dim))
    soft = init_soft_prompts(m_soft, dim, rng)
    p_value = xavier_init(dim, dim, rng)
    return PromptSet(hard, hard_ids, hard_emb, soft, p_value)


def count_tuned_params(prompts, scope, n_users, n_items, dim, n_layers):
    """Tuned-parameter inventory for prompt-tuning vs. fine-tuning every parameter."""
    if scope not in SCOPES:
        raise ConfigError(f"unknown tune scope {scope!r}; expected one of {SCOPES}")
    n_hard = 0 if prompts is None else prompts.n_distinct_hard
    m_soft = 0 if prompts is None else prompts.m_soft
    groups = {
        "hard_embeddings": n_hard * dim,
        "soft_embeddings": m_soft * dim,
        "P_V_prime": dim * dim,
    }
    if scope == "prompts_plus_target_items":
        groups["target_item_embeddings"] = n_items * dim
    full = (n_users + n_items) * dim + 4 * n_layers * dim * dim
    return TunedParamReport(groups, sum(groups.values()), full)


def full_model_report(n_users, n_items, dim, n_layers):
    """Report for the fine-tune-everything baseline (ratio 1)."""
    groups = {
        "user_embeddings": n_users * dim,
        "item_embeddings": n_items * dim,
        "encoder_weights": 4 * n_layers * dim * dim,
    }
    total = sum(groups.values())
    return TunedParamReport(groups, total, total)
