"""
Single-layer transformer decoder with seeded, untrained weights.

This stands in for a real LLM agent at desk scale. The weights are random,
so the text it writes is nonsense. What matters is that every decode step
runs through `attn_kernel.attention` with the caller's range weights, so
attention steering can be checked end to end.

Layout (pre-norm):
    x = tok_emb[ids] + pos_emb[:L]
    x = x + W_o · attention(LN1(x))
    x = x + W_2 · gelu(W_1 · LN2(x) + b_1) + b_2
    logits = x · W_out

Generation:
- prefill runs the whole prompt with a causal mask (q_len = L, so the range
  guard leaves weights untouched) and yields the first new token;
- every later token comes from a decode step with q_len = 1, where range
  weighting is active. Keys/values are recomputed from embeddings each step
  (single layer, so this equals a KV cache).
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from attn_kernel import QKV, RangeScalingConfig, RangeWeight, attention
from errors import CapacityError, ConfigurationError

log = logging.getLogger("toy-decoder")

# Words the vocabulary always carries, ahead of numerals. Covers the prompt
# template and the usual answer phrasing.
BASE_WORDS = [
    "what", "is", "the", "result", "of", "state", "final", "answer", "at",
    "end", "your", "response", "agent", "confidence:", "so", "i", "think",
    "after", "checking", "other", "agents", "my", "updated", "and", "=",
]


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int = 64
    d_model: int = 32
    heads: int = 4
    max_seq: int = 512
    seed: int = 0
    attn_gain: float = 1.6

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigurationError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_model < 1 or self.heads < 1 or self.max_seq < 1:
            raise ConfigurationError("d_model, heads and max_seq must be positive")
        if self.d_model % self.heads:
            raise ConfigurationError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class GenerationStep:
    token_id: int
    logits: np.ndarray
    logprob_chosen: float
    attn_weights: np.ndarray = field(repr=False, compare=False, default=None)


class WordVocab:
    """Whitespace word vocabulary: `<unk>` (id 0), base words, then numerals."""

    UNK = "<unk>"

    def __init__(self, size: int):
        words = [self.UNK]
        for w in BASE_WORDS:
            if len(words) < size:
                words.append(w)
        n = 0
        while len(words) < size:
            words.append(str(n))
            n += 1
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.words)

    def encode(self, text: str) -> list[int]:
        return [self.index.get(w.lower(), 0) for w in text.split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.words[i] for i in ids)


# ── Parameters ────────────────────────────────────────────────────────────────

PARAM_ORDER = (
    "tok_emb", "pos_emb",
    "ln1_g", "ln1_b", "w_q", "w_k", "w_v", "w_o",
    "ln2_g", "ln2_b", "w_1", "b_1", "w_2", "b_2",
    "w_out",
)


@dataclass(frozen=True, eq=False)
class Decoder:
    cfg: DecoderConfig
    params: dict = field(repr=False)
    vocab: WordVocab = field(repr=False, compare=False)


def parameter_count(cfg: DecoderConfig) -> int:
    d, v, s = cfg.d_model, cfg.vocab_size, cfg.max_seq
    return 2 * v * d + s * d + 12 * d * d + 9 * d


def init_decoder(cfg: DecoderConfig) -> Decoder:
    rng = np.random.default_rng(cfg.seed)
    d, v, s = cfg.d_model, cfg.vocab_size, cfg.max_seq
    std = 1.0 / math.sqrt(d)

    params = {
        "tok_emb": rng.normal(0.0, 1.0, (v, d)),
        "pos_emb": rng.normal(0.0, 0.1, (s, d)),
        "ln1_g": np.ones(d),
        "ln1_b": np.zeros(d),
        "w_q": rng.normal(0.0, cfg.attn_gain * std, (d, d)),
        "w_k": rng.normal(0.0, cfg.attn_gain * std, (d, d)),
        "w_v": rng.normal(0.0, std, (d, d)),
        "w_o": rng.normal(0.0, std, (d, d)),
        "ln2_g": np.ones(d),
        "ln2_b": np.zeros(d),
        "w_1": rng.normal(0.0, std, (d, 4 * d)),
        "b_1": np.zeros(4 * d),
        "w_2": rng.normal(0.0, 0.5 * std, (4 * d, d)),
        "b_2": np.zeros(d),
        "w_out": rng.normal(0.0, 2.0 * std, (d, v)),
    }
    for p in params.values():
        p.setflags(write=False)

    log.debug(f"initialized decoder seed={cfg.seed} params={parameter_count(cfg)}")
    return Decoder(cfg=cfg, params=params, vocab=WordVocab(v))


def parameter_checksum(dec: Decoder) -> str:
    h = hashlib.sha256()
    for name in PARAM_ORDER:
        h.update(name.encode())
        h.update(np.ascontiguousarray(dec.params[name]).tobytes())
    return h.hexdigest()


# ── Forward pass ──────────────────────────────────────────────────────────────

def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def _split_heads(x, heads):
    # (L, d) -> (1, heads, L, d_head)
    L, d = x.shape
    return x.reshape(L, heads, d // heads).transpose(1, 0, 2)[np.newaxis]


def _forward(dec: Decoder, ids: Sequence[int], n_queries: int,
             ranges: Sequence[RangeWeight], scaling: RangeScalingConfig,
             range_scaling: bool) -> tuple[np.ndarray, np.ndarray]:
    """Logits for the last `n_queries` positions of `ids`, plus attention weights."""
    p, heads = dec.params, dec.cfg.heads
    L = len(ids)
    x = p["tok_emb"][np.asarray(ids)] + p["pos_emb"][:L]

    h = _layer_norm(x, p["ln1_g"], p["ln1_b"])
    q = _split_heads(h[L - n_queries:] @ p["w_q"], heads)
    k = _split_heads(h @ p["w_k"], heads)
    v = _split_heads(h @ p["w_v"], heads)

    mask = None
    if n_queries > 1:
        rows = np.arange(L - n_queries, L)[:, np.newaxis]
        mask = np.arange(L)[np.newaxis, :] <= rows

    out, weights = attention(QKV(q, k, v), ranges, scaling, mask=mask, range_scaling=range_scaling)
    merged = out[0].transpose(1, 0, 2).reshape(n_queries, -1)

    x = x[L - n_queries:] + merged @ p["w_o"]
    ff = _gelu(_layer_norm(x, p["ln2_g"], p["ln2_b"]) @ p["w_1"] + p["b_1"]) @ p["w_2"] + p["b_2"]
    x = x + ff
    return x @ p["w_out"], weights


def prefill(dec: Decoder, prompt_tokens: Sequence[int], ranges: Sequence[RangeWeight] = (),
            scaling: RangeScalingConfig = RangeScalingConfig(),
            range_scaling: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Causal pass over the whole prompt: (logits per position, attention weights)."""
    if not prompt_tokens:
        raise CapacityError("prompt must contain at least one token")
    if len(prompt_tokens) > dec.cfg.max_seq:
        raise CapacityError(f"prompt length {len(prompt_tokens)} exceeds max_seq={dec.cfg.max_seq}")
    return _forward(dec, prompt_tokens, len(prompt_tokens), ranges, scaling, range_scaling)


def _log_softmax(logits):
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def generate(
    dec: Decoder,
    prompt_tokens: Sequence[int],
    ranges: Sequence[RangeWeight],
    max_new: int,
    sampling_seed: int = 0,
    scaling: RangeScalingConfig = RangeScalingConfig(),
    temperature: float = 0.0,
    range_scaling: bool = True,
) -> list[GenerationStep]:
    """Greedy (or seeded temperature) decode of up to `max_new` tokens."""
    if max_new < 0:
        raise ValueError(f"max_new must be non-negative, got {max_new}")
    if max_new == 0:
        return []
    if len(prompt_tokens) + max_new > dec.cfg.max_seq:
        raise CapacityError(
            f"prompt ({len(prompt_tokens)}) + max_new ({max_new}) exceeds max_seq={dec.cfg.max_seq}"
        )
    if any(t < 0 or t >= dec.cfg.vocab_size for t in prompt_tokens):
        raise ValueError("prompt token id outside the vocabulary")
    if any(rw.end > len(prompt_tokens) for rw in ranges):
        raise ValueError("ranges must reference prompt positions only")

    rng = np.random.default_rng(sampling_seed) if temperature > 0 else None
    ids = list(prompt_tokens)
    steps: list[GenerationStep] = []

    logits_all, weights = prefill(dec, ids, ranges, scaling, range_scaling)
    logits, step_weights = logits_all[-1], weights[:, :, -1:, :]

    while True:
        logp = _log_softmax(logits)
        if rng is None:
            token = int(np.argmax(logits))
        else:
            probs = np.exp(_log_softmax(logits / temperature))
            token = int(rng.choice(len(probs), p=probs))
        steps.append(GenerationStep(
            token_id=token,
            logits=logits,
            logprob_chosen=float(logp[token]),
            attn_weights=step_weights,
        ))
        ids.append(token)
        if len(steps) == max_new:
            break
        logits_1, step_weights = _forward(dec, ids, 1, ranges, scaling, range_scaling)
        logits = logits_1[0]

    return steps
