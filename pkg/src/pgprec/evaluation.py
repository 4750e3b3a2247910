"""Full-ranking top-k evaluation, cold-start breakdown and timing comparison."""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class RankedList:
    user: int
    items: np.ndarray
    scores: np.ndarray


def rank_items(scores, k, exclude=(), user=-1):
    """Top ``k`` items of one user's score vector, skipping ``exclude``.

    Equal scores rank by ascending item id. Fewer than ``k`` candidates
    returns them all.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    candidates = np.ones(scores.size, dtype=bool)
    excl = np.fromiter(exclude, dtype=np.int64) if not isinstance(exclude, np.ndarray) else exclude
    candidates[excl] = False
    ids = np.flatnonzero(candidates)
    order = np.argsort(-scores[ids], kind="stable")[:k]
    top = ids[order]
    return RankedList(user, top, scores[top])


def recall_at_k(ranked, relevant):
    relevant = set(relevant)
    if not relevant:
        raise ValueError("recall is undefined without relevant items")
    hits = sum(1 for i in _items(ranked) if int(i) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked, relevant, k=None):
    """Binary-relevance NDCG; the ideal DCG places ``min(|relevant|, k)`` hits on top."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("NDCG is undefined without relevant items")
    items = _items(ranked)
    k = len(items) if k is None else k
    dcg = sum(1.0 / math.log2(x + 2) for x, i in enumerate(items) if int(i) in relevant)
    ideal = sum(1.0 / math.log2(x + 2) for x in range(min(len(relevant), k)))
    return dcg / ideal if ideal else 0.0


def _items(ranked):
    return ranked.items if isinstance(ranked, RankedList) else ranked


def score_matrix(user_reps, item_reps):
    return np.asarray(user_reps) @ np.asarray(item_reps).T


def top_k_matrix(scores, exclude_mask, k, workers=None):
    """Row-wise top-k item ids (``-1`` padded) with excluded entries removed."""
    n_users, n_items = scores.shape
    k_eff = min(k, n_items)
    out = np.full((n_users, k_eff), -1, dtype=np.int64)
    workers = workers or _threads()

    def run(lo, hi):
        block = np.where(exclude_mask[lo:hi], -np.inf, scores[lo:hi])
        order = np.argsort(-block, axis=1, kind="stable")[:, :k_eff]
        valid = np.take_along_axis(~exclude_mask[lo:hi], order, axis=1)
        out[lo:hi] = np.where(valid, order, -1)

    bounds = np.linspace(0, n_users, max(1, workers) + 1).astype(int)
    if workers <= 1:
        run(0, n_users)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(lambda b: run(*b), zip(bounds[:-1], bounds[1:])))
    return out


def _threads():
    try:
        return max(1, int(os.environ.get("PGPREC_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EvalReport:
    k: int
    users: np.ndarray
    recall: np.ndarray
    ndcg: np.ndarray
    cold: np.ndarray | None = None
    params: object = None
    timing: object = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_recall(self):
        return float(self.recall.mean())

    @property
    def mean_ndcg(self):
        return float(self.ndcg.mean())

    def groups(self):
        if self.cold is None:
            return ["all"] * len(self.users)
        return ["cold" if c else "regular" for c in self.cold]

    def group_means(self):
        """``{group: (n_users, mean recall, mean ndcg)}`` for cold and regular users."""
        out = {}
        if self.cold is None:
            return out
        for name, sel in (("cold", self.cold), ("regular", ~self.cold)):
            n = int(sel.sum())
            out[name] = (n, float(self.recall[sel].mean()) if n else float("nan"),
                         float(self.ndcg[sel].mean()) if n else float("nan"))
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["user", "group", f"recall{self.k}", f"ndcg{self.k}"])
        for u, g, r, n in zip(self.users, self.groups(), self.recall, self.ndcg):
            w.writerow([int(u), g, repr(float(r)), repr(float(n))])
        return buf.getvalue()

    def summary(self):
        lines = [
            f"users\t{len(self.users)}",
            f"recall@{self.k}\t{self.mean_recall:.6f}",
            f"ndcg@{self.k}\t{self.mean_ndcg:.6f}",
        ]
        for name, (n, r, nd) in self.group_means().items():
            lines.append(f"{name}\tusers={n}\trecall@{self.k}={r:.6f}\tndcg@{self.k}={nd:.6f}")
        if self.params is not None:
            lines.append(f"tuned_params\t{self.params.tuned}\tratio={self.params.ratio:.4f}")
        return "\n".join(lines) + "\n"


def read_report_csv(path):
    users, groups, rec, nd = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = int(header[2].removeprefix("recall"))
        for row in reader:
            users.append(int(row[0]))
            groups.append(row[1])
            rec.append(float(row[2]))
            nd.append(float(row[3]))
    cold = None if all(g == "all" for g in groups) else np.array([g == "cold" for g in groups])
    return EvalReport(k, np.array(users, dtype=np.int64), np.array(rec), np.array(nd), cold)


def evaluate(scores, test, train, labels=None, k=10, workers=None):
    """Per-user Recall@k / NDCG@k over users with at least one test item.

    ``scores`` is the full ``(n_users, n_items)`` score matrix; each user's
    ``train`` items are excluded from its ranking.
    """
    test = np.asarray(test, dtype=np.int64).reshape(-1, 2)
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    if not len(test):
        raise DataError("empty test split")
    scores = np.asarray(scores, dtype=np.float64)
    exclude = np.zeros(scores.shape, dtype=bool)
    exclude[train[:, 0], train[:, 1]] = True
    relevant = {}
    for u, i in test:
        relevant.setdefault(int(u), set()).add(int(i))
    users = np.array(sorted(relevant), dtype=np.int64)
    top = top_k_matrix(scores[users], exclude[users], k, workers)
    rec = np.empty(len(users))
    nd = np.empty(len(users))
    for row, u in enumerate(users):
        ranked = top[row][top[row] >= 0]
        rec[row] = recall_at_k(ranked, relevant[u])
        nd[row] = ndcg_at_k(ranked, relevant[u], k)
    cold = None if labels is None else np.asarray(labels.cold)[users]
    return EvalReport(k, users, rec, nd, cold)


def random_scores(n_users, n_items, seed):
    """Scores of a uniform-random ranker."""
    return np.random.default_rng(seed).random((n_users, n_items))


@dataclass
class TimingRow:
    name: str
    seconds_per_epoch: float
    epochs: int
    total_seconds: float


@dataclass
class TimingTable:
    rows: list
    ratio: TimingRow

    def to_tsv(self):
        lines = ["run\tseconds_per_epoch\tepochs\ttotal_seconds"]
        for r in [*self.rows, self.ratio]:
            lines.append(f"{r.name}\t{r.seconds_per_epoch!r}\t{r.epochs!r}\t{r.total_seconds!r}")
        return "\n".join(lines) + "\n"


def timing_report(logs_a, logs_b, names=("a", "b")):
    """Mean seconds/epoch, epoch count and total time for two runs, plus an a/b ratio row."""
    rows = []
    for name, logs in zip(names, (logs_a, logs_b)):
        if not logs:
            raise DataError(f"no epoch logs for {name}")
        secs = [log.seconds for log in logs]
        rows.append(TimingRow(name, float(np.mean(secs)), len(secs), float(np.sum(secs))))
    a, b = rows

    def div(x, y):
        return x / y if y else float("nan")

    ratio = TimingRow("ratio", div(a.seconds_per_epoch, b.seconds_per_epoch), div(a.epochs, b.epochs),
                      div(a.total_seconds, b.total_seconds))
    return TimingTable(rows, ratio)


def parse_timing_table(text):
    lines = [ln for ln in text.splitlines() if ln]
    rows = []
    for ln in lines[1:]:
        name, spe, ep, tot = ln.split("\t")
        ep = float(ep)
        rows.append(TimingRow(name, float(spe), int(ep) if name != "ratio" else ep, float(tot)))
    return TimingTable(rows[:-1], rows[-1])
