"""Interaction/relation ingest, cross-domain alignment, splits and synthetic data.

Files are UTF-8 TSV:

* interactions: ``user<TAB>item<TAB>rating[<TAB>timestamp]``
* relations: ``item<TAB>relation<TAB>item``
* split manifest: ``#seed=<n>`` header line, then ``user_id<TAB>item_id<TAB>split``
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import AlignmentError, ConfigError, DataError, ParseError, SplitError

RELATION_KINDS = ("also_bought", "also_viewed", "bought_together")


class Record(NamedTuple):
    user: str
    item: str
    rating: float
    timestamp: int | None = None


@dataclass
class InteractionTable:
    records: list[Record] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def users(self):
        return {r.user for r in self.records}

    def items(self):
        return {r.item for r in self.records}


@dataclass
class RelationTable:
    # item_key -> relation kind -> set of related item keys
    entries: dict[str, dict[str, set[str]]] = field(default_factory=dict)

    def add(self, item, kind, other):
        if kind not in RELATION_KINDS:
            raise ConfigError(f"unknown relation {kind!r}")
        if item == other:
            return
        self.entries.setdefault(item, {k: set() for k in RELATION_KINDS})[kind].add(other)

    def related(self, item):
        """Union of all relation kinds for ``item``."""
        rel = self.entries.get(item)
        if rel is None:
            return set()
        return set().union(*rel.values())

    def __len__(self):
        return sum(len(s) for rel in self.entries.values() for s in rel.values())


@dataclass
class DomainPair:
    users: list[str]
    source_items: list[str]
    target_items: list[str]
    source: np.ndarray  # (n, 2) int64 user_id, item_id
    target: np.ndarray

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_source_items(self):
        return len(self.source_items)

    @property
    def n_target_items(self):
        return len(self.target_items)

    def target_item_index(self):
        return {key: i for i, key in enumerate(self.target_items)}


@dataclass
class SplitSet:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    seed: int


@dataclass
class ColdStartLabels:
    cold: np.ndarray  # bool per user
    threshold: int

    def group(self, user):
        return "cold" if self.cold[user] else "regular"


def load_interactions(path) -> InteractionTable:
    path = Path(path)
    latest = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(f"expected 3 or 4 tab-separated fields, got {len(parts)}", lineno)
            user, item, rating = parts[0], parts[1], parts[2]
            if not user or not item:
                raise ParseError("empty user or item key", lineno)
            try:
                value = float(rating)
            except ValueError:
                raise ParseError(f"rating {rating!r} is not a number", lineno) from None
            if not math.isfinite(value):
                raise ParseError(f"rating {rating!r} is not finite", lineno)
            ts = None
            if len(parts) == 4:
                try:
                    ts = int(parts[3])
                except ValueError:
                    raise ParseError(f"timestamp {parts[3]!r} is not an integer", lineno) from None
            # later duplicates override earlier ones but keep first-seen order
            latest[(user, item)] = Record(user, item, value, ts)
    if not latest:
        raise DataError(f"{path}: no interactions")
    return InteractionTable(list(latest.values()))


def write_interactions(table: InteractionTable, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in table.records:
            fields = [r.user, r.item, _fmt_rating(r.rating)]
            if r.timestamp is not None:
                fields.append(str(r.timestamp))
            fh.write("\t".join(fields) + "\n")


def _fmt_rating(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def load_relations(path) -> RelationTable:
    table = RelationTable()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", lineno)
            item, kind, other = parts
            if kind not in RELATION_KINDS:
                raise ParseError(f"unknown relation {kind!r}", lineno)
            table.add(item, kind, other)
    return table


def write_relations(table: RelationTable, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for item in sorted(table.entries):
            for kind in RELATION_KINDS:
                for other in sorted(table.entries[item][kind]):
                    fh.write(f"{item}\t{kind}\t{other}\n")


def binarize(table: InteractionTable) -> InteractionTable:
    return InteractionTable([r._replace(rating=1.0) for r in table.records])


def align_domains(source: InteractionTable, target: InteractionTable) -> DomainPair:
    """Keep only users present in both domains and assign dense ids.

    Ids follow sorted key order so the mapping is reproducible from the files alone.
    """
    if not len(source) or not len(target):
        raise AlignmentError("both domains need at least one interaction")
    shared = source.users() & target.users()
    if not shared:
        raise AlignmentError("source and target domains share no users")
    users = sorted(shared)
    uid = {u: i for i, u in enumerate(users)}

    def index(table):
        kept = [r for r in table.records if r.user in uid]
        items = sorted({r.item for r in kept})
        iid = {it: i for i, it in enumerate(items)}
        pairs = np.array([(uid[r.user], iid[r.item]) for r in kept], dtype=np.int64).reshape(-1, 2)
        return items, pairs

    source_items, source_pairs = index(source)
    target_items, target_pairs = index(target)
    return DomainPair(users, source_items, target_items, source_pairs, target_pairs)


def split_holdout(pairs, ratio=(8, 1, 1), seed=0) -> SplitSet:
    """Seeded random partition into train/valid/test.

    Sizes: train = floor(n*r0/R), valid = floor(n*r1/R), test takes the remainder
    (valid takes it instead when the test share is zero).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ConfigError(f"bad split ratio {ratio!r}")
    n = len(pairs)
    if n < 10:
        raise SplitError(f"need at least 10 interactions to split, got {n}")
    total = sum(ratio)
    n_train = (n * ratio[0]) // total
    n_valid = (n * ratio[1]) // total if ratio[2] else n - n_train
    order = np.random.default_rng(seed).permutation(n)
    shuffled = pairs[order]
    return SplitSet(
        train=shuffled[:n_train],
        valid=shuffled[n_train:n_train + n_valid],
        test=shuffled[n_train + n_valid:],
        seed=seed,
    )


def write_split_manifest(split: SplitSet, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#seed={split.seed}\n")
        fh.write("user_id\titem_id\tsplit\n")
        for name in ("train", "valid", "test"):
            for u, i in getattr(split, name):
                fh.write(f"{u}\t{i}\t{name}\n")


def read_split_manifest(path) -> SplitSet:
    parts = {"train": [], "valid": [], "test": []}
    seed = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if line.startswith("#seed="):
                try:
                    seed = int(line[len("#seed="):])
                except ValueError:
                    raise ParseError("bad seed header", lineno) from None
                continue
            if line.startswith("user_id\t"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or fields[2] not in parts:
                raise ParseError("expected user_id, item_id, split", lineno)
            try:
                parts[fields[2]].append((int(fields[0]), int(fields[1])))
            except ValueError:
                raise ParseError("ids must be integers", lineno) from None
    if seed is None:
        raise ParseError("missing #seed= header")
    arrays = {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in parts.items()}
    return SplitSet(seed=seed, **arrays)


def label_cold_start(train, n_users, threshold=5) -> ColdStartLabels:
    """A user is cold iff it has fewer than ``threshold`` training interactions."""
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    counts = np.bincount(train[:, 0], minlength=n_users)
    return ColdStartLabels(cold=counts < threshold, threshold=threshold)


def _calibrate_offset(logits, density, slope):
    def gap(a):
        return expit(a + slope * logits).mean() - density

    lo, hi = -50.0, 50.0
    return brentq(gap, lo, hi, xtol=1e-12)


def generate_synthetic_pair(
    n_users=200,
    n_source_items=500,
    n_target_items=500,
    latent_dim=8,
    density=0.02,
    seed=0,
    slope=3.0,
    n_related=10,
):
    """Sample a source/target domain pair with shared users and target item relations.

    Users and items get Gaussian latent factors; user u interacts with item i with
    probability ``sigmoid(a + slope * <x_u, y_i> / sqrt(latent_dim))`` where ``a``
    is solved so the mean probability equals ``density``. Each target item is
    related to its ``n_related`` most cosine-similar target items.

    Returns (source table, target table, relation table).
    """
    if not 0 < density <= 1:
        raise ConfigError(f"density must be in (0, 1], got {density}")
    if latent_dim < 1:
        raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
    if min(n_users, n_source_items, n_target_items) < 1:
        raise ConfigError("n_users and item counts must be >= 1")
    if n_related < 0:
        raise ConfigError("n_related must be >= 0")

    rng = np.random.default_rng(seed)
    user_f = rng.standard_normal((n_users, latent_dim))
    src_f = rng.standard_normal((n_source_items, latent_dim))
    tgt_f = rng.standard_normal((n_target_items, latent_dim))
    users = [f"u{i:05d}" for i in range(n_users)]

    def sample(item_f, prefix):
        logits = user_f @ item_f.T / math.sqrt(latent_dim)
        if density == 1:
            hits = np.ones(logits.shape, dtype=bool)
        else:
            a = _calibrate_offset(logits, density, slope)
            hits = rng.random(logits.shape) < expit(a + slope * logits)
        ratings = np.clip(np.rint(3 + 2 * logits), 1, 5)
        us, its = np.nonzero(hits)
        return InteractionTable([
            Record(users[u], f"{prefix}{i:05d}", float(ratings[u, i])) for u, i in zip(us, its)
        ])

    source = sample(src_f, "s")
    target = sample(tgt_f, "t")

    relations = RelationTable()
    k = min(n_related, n_target_items - 1)
    if k > 0:
        unit = tgt_f / np.linalg.norm(tgt_f, axis=1, keepdims=True)
        cos = unit @ unit.T
        np.fill_diagonal(cos, -np.inf)
        # stable sort so equal similarities resolve by item id
        nearest = np.argsort(-cos, axis=1, kind="stable")[:, :k]
        n_bt = k // 3
        n_ab = (k - n_bt) // 2
        for i, row in enumerate(nearest):
            key = f"t{i:05d}"
            for rank, j in enumerate(row):
                kind = "bought_together" if rank < n_bt else "also_bought" if rank < n_bt + n_ab else "also_viewed"
                relations.add(key, kind, f"t{int(j):05d}")
    return source, target, relations

