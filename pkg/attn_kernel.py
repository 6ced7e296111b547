"""
Scaled dot-product attention with confidence-based range weighting.

Pipeline, all on float64 arrays shaped (batch, heads, q_len, k_len):

    A = Q·Kᵀ                                  raw_scores
    W = softmax(A / √d_k)                     softmax_scaled
    W[..., r.start:r.end] adjusted per range  apply_range_weights
    out = W·V                                 attention

`apply_range_weights` shifts attention toward prompt spans that belong to
high-confidence agents. Each span is rescaled by a per-entry importance term
and the span's weight, then all spans together are renormalized so the mass
they held before the adjustment is kept. It only acts on decode steps
(q_len == 1) with at least two spans; anything else is returned untouched.

Every function here is pure: inputs are never mutated.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from errors import (
    DegenerateAdjustmentError,
    DimensionError,
    NumericDomainError,
    RangeValidationError,
)

log = logging.getLogger("attn-kernel")


class Placement(str, Enum):
    POST_SOFTMAX = "post_softmax"
    PRE_SOFTMAX = "pre_softmax"


@dataclass(frozen=True)
class RangeWeight:
    """Half-open token span [start, end) carrying one agent's confidence."""
    start: int
    end: int
    weight: float

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise RangeValidationError(f"invalid span [{self.start}, {self.end})")
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise RangeValidationError(f"range weight must be positive and finite, got {self.weight!r}")


@dataclass(frozen=True)
class RangeScalingConfig:
    lam: float = 1.0
    epsilon: float = 1e-5
    placement: Placement = Placement.POST_SOFTMAX
    clamp_nonnegative: bool = False

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam!r}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        object.__setattr__(self, "placement", Placement(self.placement))


@dataclass(frozen=True)
class QKV:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q, k, v = (np.asarray(x, dtype=np.float64) for x in (self.q, self.k, self.v))
        for name, x in (("q", q), ("k", k), ("v", v)):
            _require_4d(name, x)
        if q.shape[:2] != k.shape[:2] or k.shape[:2] != v.shape[:2]:
            raise DimensionError(f"batch/heads differ: q{q.shape} k{k.shape} v{v.shape}")
        if q.shape[-1] != k.shape[-1]:
            raise DimensionError(f"d_k differs: q{q.shape} k{k.shape}")
        if k.shape[2] != v.shape[2]:
            raise DimensionError(f"k_len differs: k{k.shape} v{v.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)


def _require_4d(name: str, x: np.ndarray):
    if x.ndim != 4 or min(x.shape) < 1:
        raise DimensionError(f"{name} must have 4 non-empty axes, got shape {x.shape}")


def validate_ranges(ranges: Sequence[RangeWeight], k_len: int):
    """Ranges must be sorted, pairwise disjoint and inside [0, k_len)."""
    prev_end = 0
    for i, rw in enumerate(ranges):
        if rw.end > k_len:
            raise RangeValidationError(f"range {i} [{rw.start}, {rw.end}) exceeds k_len={k_len}")
        if rw.start < prev_end:
            raise RangeValidationError(
                f"range {i} [{rw.start}, {rw.end}) overlaps or is out of order (previous end {prev_end})"
            )
        prev_end = rw.end


# ── Kernel ────────────────────────────────────────────────────────────────────

def raw_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """A = Q·Kᵀ."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 4 or k.ndim != 4 or q.shape[:2] != k.shape[:2] or q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"cannot score q{q.shape} against k{k.shape}")
    _require_4d("q", q)
    _require_4d("k", k)
    return np.matmul(q, np.swapaxes(k, -1, -2))


def softmax_scaled(a: np.ndarray, d_k: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise softmax of a/√d_k. `mask` is boolean, True where attention is allowed."""
    a = np.asarray(a, dtype=np.float64)
    _require_4d("a", a)
    if d_k < 1:
        raise NumericDomainError(f"d_k must be a positive integer, got {d_k}")
    if not np.all(np.isfinite(a)):
        raise NumericDomainError("attention scores contain non-finite values")

    s = a / math.sqrt(d_k)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
        if not np.all(mask.any(axis=-1)):
            raise NumericDomainError("mask leaves a row with nothing to attend to")
        s = np.where(mask, s, -np.inf)

    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _in_range_mass(a: np.ndarray, ranges: Sequence[RangeWeight]) -> np.ndarray:
    total = np.zeros(a.shape[:-1] + (1,), dtype=np.float64)
    for rw in ranges:
        total = total + a[..., rw.start:rw.end].sum(axis=-1, keepdims=True)
    return total


def apply_range_weights(
    a: np.ndarray,
    ranges: Sequence[RangeWeight],
    cfg: RangeScalingConfig = RangeScalingConfig(),
) -> np.ndarray:
    """Confidence-weighted adjustment of attention over agent spans."""
    a = np.asarray(a, dtype=np.float64)
    _require_4d("a", a)

    # Only decode steps with at least two spans are adjusted.
    if len(ranges) <= 1 or a.shape[2] != 1:
        return a

    validate_ranges(ranges, a.shape[-1])

    out = a.copy()
    original_sum = _in_range_mass(a, ranges)

    for rw in ranges:
        data = a[..., rw.start:rw.end]
        mu = data.mean(axis=-1, keepdims=True)
        sigma = data.std(axis=-1, keepdims=True)
        weighted_mean = mu * rw.weight
        importance = 1.0 + (data - weighted_mean) / (sigma + cfg.epsilon)
        adjusted = data * importance * rw.weight * cfg.lam
        if cfg.clamp_nonnegative:
            adjusted = np.maximum(adjusted, 0.0)
        out[..., rw.start:rw.end] = adjusted

    new_sum = _in_range_mass(out, ranges)
    if np.any(new_sum == 0) or np.any(np.sign(new_sum) != np.sign(original_sum)):
        bad = np.flatnonzero((new_sum == 0) | (np.sign(new_sum) != np.sign(original_sum)))[0]
        raise DegenerateAdjustmentError(float(original_sum.flat[bad]), float(new_sum.flat[bad]))

    norm_factor = original_sum / new_sum
    for rw in ranges:
        out[..., rw.start:rw.end] *= norm_factor

    log.debug(f"adjusted {len(ranges)} ranges over k_len={a.shape[-1]}")
    return out


def attention(
    qkv: QKV,
    ranges: Sequence[RangeWeight] = (),
    cfg: RangeScalingConfig = RangeScalingConfig(),
    mask: np.ndarray | None = None,
    range_scaling: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Full attention; returns (output, final weights)."""
    d_k = qkv.q.shape[-1]
    a = raw_scores(qkv.q, qkv.k)

    if not range_scaling:
        weights = softmax_scaled(a, d_k, mask)
    elif cfg.placement is Placement.PRE_SOFTMAX:
        weights = softmax_scaled(apply_range_weights(a, ranges, cfg), d_k, mask)
    else:
        weights = apply_range_weights(softmax_scaled(a, d_k, mask), ranges, cfg)

    return np.matmul(weights, qkv.v), weights


def range_mass(weights: np.ndarray, ranges: Sequence[RangeWeight]) -> np.ndarray:
    """Attention mass per range, shape (..., len(ranges))."""
    weights = np.asarray(weights, dtype=np.float64)
    return np.stack([weights[..., rw.start:rw.end].sum(axis=-1) for rw in ranges], axis=-1)
