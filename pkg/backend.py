"""
Agent backends: anything that turns a prompt into text plus token probabilities.

    ToyDecoderBackend    seeded untrained decoder; honors attention ranges
    MockBackend          replays scripted responses (tests, dry runs)
    ScriptedNoisyBackend simulated agent with a set accuracy and calibrated
                         (or miscalibrated) token distributions
    HttpBackend          OpenAI-compatible chat completions; no attention ranges

Every backend exposes `capabilities`, `tokenize(text)` (character spans of
its tokens, used to place attention ranges) and
`generate(prompt, ranges, max_new, seed, scaling=...)`.
"""

import json
import logging
import math
import os
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

import prompt_templates as templates
import toy_decoder
from attn_kernel import RangeScalingConfig, RangeWeight
from chat_client import send_chat_completion
from dataset import solve_question
from debate import UNPARSEABLE, PromptWithSpans, extract_answer
from debate_common import token_char_spans
from errors import ConfigurationError, TransportError, UnsupportedFeatureError

log = logging.getLogger("backend")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_spans: tuple[tuple[int, int, int], ...] = ()  # (char start, char end, token id or index)
    chosen_logprobs: tuple[float, ...] | None = None
    step_distributions: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class BackendCapabilities:
    supports_attention_ranges: bool
    supports_logprobs: bool


def _spans_for(text: str) -> tuple[tuple[int, int, int], ...]:
    return tuple((s, e, i) for i, (s, e) in enumerate(token_char_spans(text)))


class Backend:
    capabilities = BackendCapabilities(supports_attention_ranges=False, supports_logprobs=False)

    def tokenize(self, text: str) -> list[tuple[int, int]]:
        return token_char_spans(text)

    def generate(self, prompt: PromptWithSpans, ranges: Sequence[RangeWeight], max_new: int,
                 seed: int, scaling: RangeScalingConfig = RangeScalingConfig()) -> GenerationResult:
        raise NotImplementedError

    def _reject_ranges(self, ranges):
        if ranges and not self.capabilities.supports_attention_ranges:
            raise UnsupportedFeatureError(f"{type(self).__name__} cannot take attention ranges")


# ── Toy decoder ───────────────────────────────────────────────────────────────

class ToyDecoderBackend(Backend):
    capabilities = BackendCapabilities(supports_attention_ranges=True, supports_logprobs=True)

    def __init__(self, cfg: toy_decoder.DecoderConfig = toy_decoder.DecoderConfig(),
                 temperature: float = 0.0, range_scaling: bool = True,
                 scaling_overrides: dict | None = None):
        self.decoder = toy_decoder.init_decoder(cfg)
        self.temperature = temperature
        self.range_scaling = range_scaling
        # per-agent scaling fields laid over the debate's config, e.g. clamp_nonnegative
        self.scaling_overrides = dict(scaling_overrides or {})
        if self.scaling_overrides:
            try:
                replace(RangeScalingConfig(), **self.scaling_overrides)
            except (TypeError, ValueError) as e:
                raise ConfigurationError(f"bad scaling override: {e}") from e

    def tokenize(self, text: str) -> list[tuple[int, int]]:
        # WordVocab.encode splits on whitespace, one id per span
        return token_char_spans(text)

    def generate(self, prompt, ranges, max_new, seed, scaling=RangeScalingConfig()):
        if self.scaling_overrides:
            scaling = replace(scaling, **self.scaling_overrides)
        ids = self.decoder.vocab.encode(prompt.text)
        steps = toy_decoder.generate(
            self.decoder, ids, ranges, max_new,
            sampling_seed=seed, scaling=scaling,
            temperature=self.temperature, range_scaling=self.range_scaling,
        )
        token_ids = [s.token_id for s in steps]
        text = self.decoder.vocab.decode(token_ids)
        spans = tuple((s, e, t) for (s, e), t in zip(token_char_spans(text), token_ids))

        distributions = []
        for s in steps:
            z = s.logits - s.logits.max()
            p = np.exp(z)
            distributions.append(tuple(float(x) for x in p / p.sum()))

        return GenerationResult(
            text=text,
            token_spans=spans,
            chosen_logprobs=tuple(s.logprob_chosen for s in steps),
            step_distributions=tuple(distributions),
        )


# ── Mock ──────────────────────────────────────────────────────────────────────

MOCK_TOP_PROB = 0.9


class MockBackend(Backend):
    """Returns scripted responses in order; records every call it receives."""

    def __init__(self, responses: Sequence[str], cycle: bool = False,
                 capabilities: BackendCapabilities | None = None):
        if not responses:
            raise ConfigurationError("MockBackend needs at least one scripted response")
        self.responses = list(responses)
        self.cycle = cycle
        if capabilities is not None:
            self.capabilities = capabilities
        else:
            self.capabilities = BackendCapabilities(supports_attention_ranges=False, supports_logprobs=True)
        self.calls: list[tuple[PromptWithSpans, tuple[RangeWeight, ...]]] = []
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path, **kwargs) -> "MockBackend":
        """JSON list of texts, or an object mapping call index to text."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(data, dict):
            data = [text for _, text in sorted(data.items(), key=lambda kv: int(kv[0]))]
        return cls(data, **kwargs)

    def generate(self, prompt, ranges, max_new, seed, scaling=RangeScalingConfig()):
        self._reject_ranges(ranges)
        with self._lock:
            if self._cursor >= len(self.responses):
                if not self.cycle:
                    raise IndexError(f"mock script exhausted after {len(self.responses)} responses")
                self._cursor = 0
            text = self.responses[self._cursor]
            self._cursor += 1
            self.calls.append((prompt, tuple(ranges)))

        spans = _spans_for(text)
        n = len(spans)
        return GenerationResult(
            text=text,
            token_spans=spans,
            chosen_logprobs=(math.log(MOCK_TOP_PROB),) * n,
            step_distributions=((MOCK_TOP_PROB, 1.0 - MOCK_TOP_PROB),) * n,
        )


# ── Scripted noisy agent ──────────────────────────────────────────────────────

class Calibration(str, Enum):
    CALIBRATED = "calibrated"
    INVERTED = "inverted"
    FLAT = "flat"


WRONG_DELTAS = (-2, -1, 1, 2)
SHARP = (0.95,) + (0.05 / 7,) * 7
DIFFUSE = (0.4,) + (0.6 / 7,) * 7
FLAT = (0.7,) + (0.3 / 7,) * 7
DIST_STEPS = 4


class ScriptedNoisyBackend(Backend):
    """
    Simulated arithmetic agent.

    Round 1 (no quoted blocks): right with probability `accuracy`, otherwise
    off by a nonzero delta. Later rounds: weighted plurality over the quoted
    answers. A block's vote is its range weight when the caller passed one,
    else its header confidence raised to `prompt_sensitivity`, else 1.
    Ties are broken with the seeded generator.

    Token distributions track correctness according to `calibration`.
    """

    capabilities = BackendCapabilities(supports_attention_ranges=True, supports_logprobs=True)

    def __init__(self, accuracy: float, calibration: Calibration, seed: int,
                 prompt_sensitivity: float = 0.5):
        if not 0.0 <= accuracy <= 1.0:
            raise ConfigurationError(f"accuracy must lie in [0, 1], got {accuracy!r}")
        if prompt_sensitivity < 0:
            raise ConfigurationError(f"prompt_sensitivity must be >= 0, got {prompt_sensitivity!r}")
        self.accuracy = accuracy
        self.calibration = Calibration(calibration)
        self.seed = seed
        self.prompt_sensitivity = prompt_sensitivity

    def _distribution(self, correct: bool) -> tuple[float, ...]:
        if self.calibration is Calibration.FLAT:
            return FLAT
        if self.calibration is Calibration.CALIBRATED:
            return SHARP if correct else DIFFUSE
        return DIFFUSE if correct else SHARP

    def _first_answer(self, truth: int, rng) -> int:
        if rng.random() < self.accuracy:
            return truth
        return truth + int(rng.choice(WRONG_DELTAS))

    def _block_votes(self, prompt: PromptWithSpans, ranges) -> dict[str, float]:
        range_weight = {(rw.start, rw.end): rw.weight for rw in ranges}
        header_conf = {
            int(m.group(1)): float(m.group(2))
            for m in re.finditer(templates.CONFIDENCE_HEADER_PATTERN, prompt.text)
        }
        votes: dict[str, float] = {}
        for b in prompt.blocks:
            answer = extract_answer(prompt.text[b.char_start:b.char_end])
            if answer == UNPARSEABLE:
                continue
            if (b.token_start, b.token_end) in range_weight:
                w = range_weight[(b.token_start, b.token_end)]
            elif b.agent_id in header_conf:
                w = header_conf[b.agent_id] ** self.prompt_sensitivity
            else:
                w = 1.0
            votes[answer] = votes.get(answer, 0.0) + w
        return votes

    def generate(self, prompt, ranges, max_new, seed, scaling=RangeScalingConfig()):
        truth = solve_question(prompt.text)
        if truth is None:
            raise ValueError("prompt does not contain an arithmetic question")
        rng = np.random.default_rng([self.seed, seed])

        votes = self._block_votes(prompt, ranges) if prompt.blocks else {}
        if votes:
            best = max(votes.values())
            tied = sorted((a for a, v in votes.items() if math.isclose(v, best)), key=int)
            answer = int(tied[int(rng.integers(len(tied)))])
            text = f"After weighing the other agents, my updated answer is {answer}. The final answer is {answer}."
        else:
            answer = self._first_answer(truth, rng)
            text = f"Working through the expression step by step. The final answer is {answer}."

        dist = self._distribution(answer == truth)
        return GenerationResult(
            text=text,
            token_spans=_spans_for(text),
            chosen_logprobs=(math.log(dist[0]),) * DIST_STEPS,
            step_distributions=(dist,) * DIST_STEPS,
        )


def scripted_noisy_agent(accuracy: float, confidence_calibration: Calibration | str, seed: int,
                         prompt_sensitivity: float = 0.5) -> ScriptedNoisyBackend:
    return ScriptedNoisyBackend(accuracy, Calibration(confidence_calibration), seed, prompt_sensitivity)


# ── HTTP chat completions ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class HttpBackendConfig:
    base_url: str
    model_name: str
    api_key_env: str = "DEBATE_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    logprobs_requested: bool = True
    top_logprobs: int = 5
    temperature: float = 0.0
    extra: dict = field(default_factory=dict)


class HttpBackend(Backend):
    def __init__(self, cfg: HttpBackendConfig):
        self.cfg = cfg
        self.api_key = os.getenv(cfg.api_key_env)
        if not self.api_key:
            raise ConfigurationError(f"{cfg.api_key_env} is not set")
        self.capabilities = BackendCapabilities(
            supports_attention_ranges=False, supports_logprobs=cfg.logprobs_requested
        )

    def _payload(self, text: str, max_new: int, seed: int) -> dict:
        payload = {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": text}],
            "max_tokens": max_new,
            "temperature": self.cfg.temperature,
            # providers take a signed 64-bit seed
            "seed": seed % (2**63),
            **self.cfg.extra,
        }
        if self.cfg.logprobs_requested:
            payload["logprobs"] = True
            payload["top_logprobs"] = self.cfg.top_logprobs
        return payload

    def generate(self, prompt, ranges, max_new, seed, scaling=RangeScalingConfig()):
        self._reject_ranges(ranges)
        body = send_chat_completion(
            self.cfg.base_url,
            self._payload(prompt.text, max_new, seed),
            self.api_key,
            timeout=self.cfg.timeout,
            max_retries=self.cfg.max_retries,
        )
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise TransportError(f"malformed chat completion body: {e}") from e

        content = ((choice.get("logprobs") or {}).get("content")) or []
        if not content:
            if self.cfg.logprobs_requested:
                log.warning(f"⚠ {self.cfg.model_name} returned no logprobs")
            return GenerationResult(text=text, token_spans=_spans_for(text))

        return GenerationResult(
            text=text,
            token_spans=provider_token_spans(text, [c["token"] for c in content]),
            chosen_logprobs=tuple(min(float(c["logprob"]), 0.0) for c in content),
            step_distributions=tuple(logprobs_to_distribution(c) for c in content),
        )


def logprobs_to_distribution(entry: dict) -> tuple[float, ...]:
    """Top-k probabilities plus one residual bucket for the unseen tail."""
    tops = entry.get("top_logprobs") or [{"token": entry["token"], "logprob": entry["logprob"]}]
    probs = [math.exp(min(float(t["logprob"]), 0.0)) for t in tops]
    total = math.fsum(probs)
    if total > 1.0:
        return tuple(p / total for p in probs)
    residual = 1.0 - total
    return tuple(probs) + ((residual,) if residual > 0 else ())


def provider_token_spans(text: str, tokens: Sequence[str]) -> tuple[tuple[int, int, int], ...]:
    """One span per provider token, so spans line up with the per-token logprobs."""
    if "".join(tokens) == text:
        spans, pos = [], 0
        for i, tok in enumerate(tokens):
            spans.append((pos, pos + len(tok), i))
            pos += len(tok)
        return tuple(spans)

    # Provider text and tokens disagree (normalized whitespace, byte tokens):
    # find each token in order; ones that cannot be found get an empty span.
    spans, pos = [], 0
    for i, tok in enumerate(tokens):
        needle = tok.strip()
        at = text.find(needle, pos) if needle else -1
        if at < 0:
            spans.append((pos, pos, i))
            continue
        spans.append((at, at + len(needle), i))
        pos = at + len(needle)
    return tuple(spans)
