"""Exact single-query attention kernels.

Dense softmax attention, a paged variant that walks KV blocks with an online
(running max / running sum) softmax, and micro-attention partials that can be
computed on disjoint token subsets and merged afterwards with a log-sum-exp
reduction. All three agree with each other up to summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericDomainError


@dataclass(frozen=True)
class AttentionInput:
    q: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    @property
    def d_k(self) -> int:
        return int(self.q.shape[0])


@dataclass(frozen=True)
class MicroAttentionPartial:
    """Softmax statistics for one token subset.

    m: largest scaled score in the subset
    s: sum of exp(score - m)
    o: sum of exp(score - m) * v, left unnormalized
    """

    m: float
    s: float
    o: np.ndarray

    def normalized(self) -> np.ndarray:
        return self.o / self.s


def _as_query(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] < 1:
        raise NumericDomainError(f"query must be a non-empty vector, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise NumericDomainError("query contains non-finite values")
    return q


def _as_kv(keys, values, d_k: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] != d_k:
        raise NumericDomainError(f"keys must be n x {d_k} with n >= 1, got shape {k.shape}")
    if v.ndim != 2 or v.shape[0] != k.shape[0]:
        raise NumericDomainError(f"values must have {k.shape[0]} rows, got shape {v.shape}")
    if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
        raise NumericDomainError("keys/values contain non-finite values")
    return k, v


def _scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    s = (k @ q) / math.sqrt(q.shape[0])
    if not np.all(np.isfinite(s)):
        raise NumericDomainError("attention scores overflowed")
    return s


def softmax_weights(q, keys) -> np.ndarray:
    q = _as_query(q)
    k, _ = _as_kv(keys, np.zeros((np.asarray(keys).shape[0], 1)), q.shape[0])
    z = _scores(q, k)
    e = np.exp(z - z.max())
    return e / e.sum()


def dense_attention(q, keys, values) -> np.ndarray:
    """softmax(q . K^T / sqrt(d_k)) V for a single query, with max subtraction."""
    q = _as_query(q)
    k, v = _as_kv(keys, values, q.shape[0])
    z = _scores(q, k)
    e = np.exp(z - z.max())
    return (e @ v) / e.sum()


def paged_attention(q, blocks: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Attention over KV stored as an ordered list of ``(keys, values)`` blocks.

    Blocks may live anywhere in memory; only their order matters. The running
    max, normalizer and accumulator are rescaled whenever a block raises the max.
    """
    q = _as_query(q)
    if len(blocks) == 0:
        raise NumericDomainError("paged_attention needs at least one block")
    m = -math.inf
    s = 0.0
    acc = None
    for keys, values in blocks:
        k, v = _as_kv(keys, values, q.shape[0])
        z = _scores(q, k)
        m_new = max(m, float(z.max()))
        scale = math.exp(m - m_new) if m != -math.inf else 0.0
        e = np.exp(z - m_new)
        if acc is None:
            acc = e @ v
        else:
            acc = acc * scale + e @ v
        s = s * scale + float(e.sum())
        m = m_new
    return acc / s


def micro_attention_partial(q, keys, values) -> MicroAttentionPartial:
    q = _as_query(q)
    k, v = _as_kv(keys, values, q.shape[0])
    z = _scores(q, k)
    m = float(z.max())
    e = np.exp(z - m)
    return MicroAttentionPartial(m=m, s=float(e.sum()), o=e @ v)


def aggregate_micro(partials: Iterable[MicroAttentionPartial]) -> np.ndarray:
    """Merge partials: rescale each to the global max, then divide sums."""
    parts = list(partials)
    if not parts:
        raise NumericDomainError("aggregate_micro needs at least one partial")
    g = max(p.m for p in parts)
    num = sum(p.o * math.exp(p.m - g) for p in parts)
    den = sum(p.s * math.exp(p.m - g) for p in parts)
    return num / den


def merge_partials(a: MicroAttentionPartial, b: MicroAttentionPartial) -> MicroAttentionPartial:
    """Combine two partials into one covering the union of their tokens."""
    g = max(a.m, b.m)
    wa, wb = math.exp(a.m - g), math.exp(b.m - g)
    return MicroAttentionPartial(m=g, s=a.s * wa + b.s * wb, o=a.o * wa + b.o * wb)


def split_blocks(keys, values, block_size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if block_size < 1:
        raise NumericDomainError("block_size must be >= 1")
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    return [(k[i : i + block_size], v[i : i + block_size]) for i in range(0, k.shape[0], block_size)]


def partitioned_attention(q, keys, values, cuts: Sequence[int]) -> np.ndarray:
    """Micro-attention over the contiguous parts delimited by sorted ``cuts``."""
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    edges = [0, *cuts, k.shape[0]]
    parts = [micro_attention_partial(q, k[a:b], v[a:b]) for a, b in zip(edges, edges[1:])]
    return aggregate_micro(parts)


def equivalence_sweep(
    rng: np.random.Generator,
    instances: int = 1000,
    max_tokens: int = 64,
    max_dim: int = 16,
    block_sizes: Sequence[int] = (1, 2, 4, 8, 16),
) -> dict:
    """Random dense-vs-paged and dense-vs-micro comparison.

    Returns the worst absolute errors seen for each route and the instance count.
    """
    worst_paged = 0.0
    worst_micro = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, max_tokens + 1))
        d_k = int(rng.integers(1, max_dim + 1))
        d_v = int(rng.integers(1, max_dim + 1))
        q = rng.normal(size=d_k)
        keys = rng.normal(size=(n, d_k))
        values = rng.normal(size=(n, d_v))
        ref = dense_attention(q, keys, values)
        bs = int(rng.choice(block_sizes))
        paged = paged_attention(q, split_blocks(keys, values, bs))
        worst_paged = max(worst_paged, float(np.max(np.abs(paged - ref))))
        parts = int(rng.integers(1, n + 1))
        cuts = sorted(rng.choice(np.arange(1, n), size=parts - 1, replace=False).tolist()) if parts > 1 else []
        micro = partitioned_attention(q, keys, values, cuts)
        worst_micro = max(worst_micro, float(np.max(np.abs(micro - ref))))
    return {"instances": instances, "max_err_paged": worst_paged, "max_err_micro": worst_micro}
