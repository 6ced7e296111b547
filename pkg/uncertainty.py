"""
Uncertainty estimators over generated-token probabilities, and the
uncertainty -> confidence conversion used to weight agents.

    confidence = 1 / uncertainty

Estimators:
- MeanEntropy: mean Shannon entropy (nats) of the per-step distributions.
- TokenSAR:    relevance-weighted mean negative log-likelihood of the chosen tokens.
- Oracle:      high weight when the answer matches ground truth, low otherwise.
- Fixed:       a manual weight, used for third-party agents without token probabilities.

Every score is floored at UNCERTAINTY_FLOOR so a fully deterministic
generation still yields a finite confidence.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from errors import EmptyInputError, UncertaintyDomainError

UNCERTAINTY_FLOOR = 1e-6
PROB_SUM_TOLERANCE = 1e-6

# Oracle defaults follow the 10.0 weight given to the third-party agent.
ORACLE_HI = 10.0
ORACLE_LO = 1.0


class Estimator(str, Enum):
    MEAN_ENTROPY = "mean_entropy"
    TOKEN_SAR = "token_sar"
    ORACLE = "oracle"
    FIXED = "fixed"


@dataclass(frozen=True)
class UncertaintyScore:
    value: float
    estimator: Estimator

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise UncertaintyDomainError(f"uncertainty must be positive and finite, got {self.value!r}")
        object.__setattr__(self, "estimator", Estimator(self.estimator))


@dataclass(frozen=True)
class ConfidenceWeight:
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise UncertaintyDomainError(f"confidence must be positive and finite, got {self.value!r}")


def _floored(value: float, estimator: Estimator) -> UncertaintyScore:
    return UncertaintyScore(max(float(value), UNCERTAINTY_FLOOR), estimator)


def mean_token_entropy(steps: Sequence[Sequence[float]], aggregate: str = "mean") -> UncertaintyScore:
    """Mean (or summed) per-step Shannon entropy in nats; 0·log 0 counts as 0."""
    if len(steps) == 0:
        raise EmptyInputError("entropy needs at least one step distribution")
    if aggregate not in ("mean", "sum"):
        raise ValueError(f"aggregate must be 'mean' or 'sum', got {aggregate!r}")

    entropies = []
    for i, step in enumerate(steps):
        p = np.asarray(step, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise EmptyInputError(f"step {i} is not a non-empty probability vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_SUM_TOLERANCE:
            raise UncertaintyDomainError(f"step {i} is not a probability distribution (sum={p.sum()!r})")
        nz = p[p > 0]
        entropies.append(float(-(nz * np.log(nz)).sum()))

    total = math.fsum(entropies)
    value = total / len(entropies) if aggregate == "mean" else total
    return _floored(value, Estimator.MEAN_ENTROPY)


def token_sar(chosen_logprobs: Sequence[float], relevances: Sequence[float] | None = None) -> UncertaintyScore:
    """Σ (−lpᵢ)·rᵢ/Σr; uniform relevances reduce this to mean NLL."""
    if len(chosen_logprobs) == 0:
        raise EmptyInputError("token_sar needs at least one token")
    lp = np.asarray(chosen_logprobs, dtype=np.float64)
    if np.any(lp > 0) or not np.all(np.isfinite(lp)):
        raise UncertaintyDomainError("log-probabilities must be finite and <= 0")

    if relevances is None:
        return _floored(math.fsum(-lp) / lp.size, Estimator.TOKEN_SAR)

    r = np.asarray(relevances, dtype=np.float64)
    if r.shape != lp.shape:
        raise ValueError(f"length mismatch: {lp.size} logprobs vs {r.size} relevances")
    if np.any(r < 0):
        raise UncertaintyDomainError("relevances must be non-negative")
    r_sum = math.fsum(r)
    if r_sum == 0:
        raise UncertaintyDomainError("relevances are all zero")
    return _floored(math.fsum(-lp * (r / r_sum)), Estimator.TOKEN_SAR)


def oracle_confidence(answer: str, truth: str, w_hi: float = ORACLE_HI, w_lo: float = ORACLE_LO) -> ConfidenceWeight:
    if not w_hi > w_lo > 0:
        raise UncertaintyDomainError(f"oracle weights need w_hi > w_lo > 0, got {w_hi!r}, {w_lo!r}")
    return ConfidenceWeight(w_hi if answer == truth else w_lo)


def confidence_from_uncertainty(u: UncertaintyScore) -> ConfidenceWeight:
    if not u.value > 0:
        raise UncertaintyDomainError(f"uncertainty must be positive, got {u.value!r}")
    return ConfidenceWeight(1.0 / u.value)


def uncertainty_from_confidence(c: ConfidenceWeight, estimator: Estimator = Estimator.FIXED) -> UncertaintyScore:
    return UncertaintyScore(1.0 / c.value, estimator)


def fixed_confidence(w: float) -> ConfidenceWeight:
    if not (math.isfinite(w) and w > 0):
        raise UncertaintyDomainError(f"fixed confidence must be positive, got {w!r}")
    return ConfidenceWeight(float(w))
