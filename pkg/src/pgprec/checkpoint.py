"""Binary checkpoint format (little-endian).

Layout::

    b"PGPR"  u32 version  u32 d  u32 n_layers  u32 n_users  u32 n_items
    f64[n_users*d] user_embeddings, f64[n_items*d] item_embeddings,
    then for each layer: W_Q, W_K, W_V, W_U as f64[d*d], all row-major
    u64 seed  u32 epoch  f64 best_metric
    u8 has_prompts
    if has_prompts:
        u32 n_users, then per user: u32 count, u32[count] item ids
        u32 n_distinct_hard, u32[n_distinct_hard] ids, f64[n_distinct_hard*d]
        u32 m_soft, f64[m_soft*d]
        f64[d*d] P_V'
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderParams
from .errors import CheckpointError
from .prompts import PromptSet

MAGIC = b"PGPR"
VERSION = 1


@dataclass
class Checkpoint:
    params: EncoderParams
    prompts: PromptSet | None = None
    seed: int = 0
    epoch: int = 0
    best_metric: float = float("nan")
    version: int = VERSION


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def u32(self):
        return self.unpack("<I")[0]

    def array(self, rows, cols):
        raw = self.take(8 * rows * cols)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)

    def ids(self, n):
        return np.frombuffer(self.take(4 * n), dtype="<u4").astype(np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(ck: Checkpoint) -> bytes:
    p = ck.params
    out = [MAGIC, struct.pack("<5I", ck.version, p.dim, p.n_layers, p.n_users, p.n_items)]
    out += [_f64(t) for t in p.tensors.values()]
    out.append(struct.pack("<QId", ck.seed, ck.epoch, ck.best_metric))
    if ck.prompts is None:
        out.append(struct.pack("<B", 0))
        return b"".join(out)
    ps = ck.prompts
    out.append(struct.pack("<BI", 1, len(ps.hard)))
    for items in ps.hard:
        out.append(struct.pack("<I", len(items)))
        out.append(np.asarray(items, dtype="<u4").tobytes())
    out.append(struct.pack("<I", ps.n_distinct_hard))
    out.append(np.asarray(ps.hard_ids, dtype="<u4").tobytes())
    out.append(_f64(ps.hard_embeddings))
    out.append(struct.pack("<I", ps.m_soft))
    out.append(_f64(ps.soft_embeddings))
    out.append(_f64(ps.P_V_prime))
    return b"".join(out)


def loads(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, d, n_layers, n_users, n_items = r.unpack("<5I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for name in EncoderParams.expected_names(n_layers):
        rows = n_users if name == "user_embeddings" else n_items if name == "item_embeddings" else d
        tensors[name] = r.array(rows, d)
    params = EncoderParams(tensors, n_layers)
    seed, epoch, best = r.unpack("<QId")
    (flag,) = r.unpack("<B")
    prompts = None
    if flag:
        n = r.u32()
        hard = [r.ids(r.u32()).tolist() for _ in range(n)]
        n_hard = r.u32()
        hard_ids = r.ids(n_hard)
        hard_emb = r.array(n_hard, d)
        m_soft = r.u32()
        soft = r.array(m_soft, d)
        p_value = r.array(d, d)
        prompts = PromptSet(hard, hard_ids, hard_emb, soft, p_value)
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after checkpoint")
    return Checkpoint(params, prompts, seed, epoch, best, version)


def save_checkpoint(ck: Checkpoint, path):
    with open(path, "wb") as fh:
        fh.write(dumps(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return loads(fh.read())


def tensor_digest(array) -> str:
    """SHA-256 of a tensor's little-endian float64 bytes and shape."""
    h = hashlib.sha256(repr(array.shape).encode())
    h.update(_f64(array))
    return h.hexdigest()
