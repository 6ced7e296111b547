"""
Multi-agent, multi-round debate with confidence-weighted attention.

Round 1: every agent answers the question alone.
Round r >= 2: every agent sees the round r-1 responses of all agents
(never older rounds, never the current round), each quoted as a block.
Depending on the method the blocks also carry confidence:

    Standard     plain quotes
    Prompt       quotes + "confidence: x.xx" in the block header
    Attn-Others  attention over every other agent's block is weighted by its confidence
    Attn-All     same, including the agent's own previous block

After the last round the extracted answers are put to a plurality vote.
Ties go to the larger confidence sum, then to the lowest proposing agent id.
"""

import bisect
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import prompt_templates as templates
from attn_kernel import RangeScalingConfig, RangeWeight
from debate_common import canonical_json, derive_seed, token_char_spans
from errors import (
    AgentError,
    ConfigurationError,
    ConsistencyError,
    NoConsensusError,
    UnsupportedFeatureError,
)
from uncertainty import (
    ORACLE_HI,
    ORACLE_LO,
    UNCERTAINTY_FLOOR,
    ConfidenceWeight,
    Estimator,
    UncertaintyScore,
    confidence_from_uncertainty,
    fixed_confidence,
    mean_token_entropy,
    oracle_confidence,
    token_sar,
    uncertainty_from_confidence,
)

log = logging.getLogger("debate")

SCHEMA_VERSION = 1
UNPARSEABLE = "<unparseable>"
CONSISTENCY_TOLERANCE = 1e-9
# An empty generation carries no token probabilities; it is scored as maximally uncertain.
EMPTY_GENERATION_UNCERTAINTY = 1.0 / UNCERTAINTY_FLOOR

_MARKER_RE = re.compile(r"final answer", re.IGNORECASE)
_INT_RE = re.compile(r"[-+]?\d{1,3}(?:,\d{3})+(?!\d)|[-+]?\d+")


class Method(str, Enum):
    STANDARD = "standard"
    PROMPT = "prompt"
    ATTN_OTHERS = "attn_others"
    ATTN_ALL = "attn_all"

    @property
    def uses_ranges(self) -> bool:
        return self in (Method.ATTN_OTHERS, Method.ATTN_ALL)


DEBATE_ESTIMATORS = (Estimator.MEAN_ENTROPY, Estimator.TOKEN_SAR, Estimator.ORACLE)


# ── Types ─────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PromptBlock:
    """One quoted response inside a prompt, located by characters and tokens."""
    agent_id: int
    source_round: int
    char_start: int
    char_end: int
    token_start: int
    token_end: int
    confidence: float


@dataclass(frozen=True)
class PromptWithSpans:
    text: str
    blocks: tuple[PromptBlock, ...] = ()
    ranges: tuple[RangeWeight, ...] = ()


@dataclass(frozen=True)
class SpanRef:
    """Provenance of a quoted block; `weight` is set when a range was passed for it."""
    agent_id: int
    source_round: int
    start: int
    end: int
    weight: float | None = None


@dataclass(frozen=True)
class AgentSpec:
    backend: object
    fixed_confidence: float | None = None
    name: str = ""


@dataclass(frozen=True)
class DebateConfig:
    agents: tuple[AgentSpec, ...]
    method: Method = Method.ATTN_ALL
    estimator: Estimator = Estimator.MEAN_ENTROPY
    num_rounds: int = 3
    scaling: RangeScalingConfig = RangeScalingConfig()
    seed: int = 0
    max_new_tokens: int = 24
    weighted_vote: bool = False
    oracle_hi: float = ORACLE_HI
    oracle_lo: float = ORACLE_LO
    entropy_aggregate: str = "mean"
    sar_relevance: Callable | None = None
    agent_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        if len(self.agents) < 2:
            raise ConfigurationError(f"a debate needs at least 2 agents, got {len(self.agents)}")
        if self.num_rounds < 1:
            raise ConfigurationError(f"num_rounds must be >= 1, got {self.num_rounds}")
        if self.estimator not in DEBATE_ESTIMATORS:
            raise ConfigurationError(f"estimator {self.estimator.value} cannot drive a debate")
        if self.max_new_tokens < 1 or self.agent_workers < 1:
            raise ConfigurationError("max_new_tokens and agent_workers must be >= 1")
        if not self.oracle_hi > self.oracle_lo > 0:
            raise ConfigurationError("oracle weights need oracle_hi > oracle_lo > 0")
        for i, spec in enumerate(self.agents):
            if spec.fixed_confidence is not None:
                fixed_confidence(spec.fixed_confidence)
            elif self.estimator is not Estimator.ORACLE and not spec.backend.capabilities.supports_logprobs:
                raise ConfigurationError(
                    f"agent {i} reports no token probabilities and has no fixed confidence"
                )

    @property
    def num_agents(self) -> int:
        return len(self.agents)


@dataclass(frozen=True)
class AgentResponse:
    agent_id: int
    round_index: int
    text: str
    extracted_answer: str
    uncertainty: UncertaintyScore
    confidence: ConfidenceWeight
    prompt_spans: tuple[SpanRef, ...] = ()
    prompt: str = ""
    method: Method = Method.STANDARD

    @property
    def parseable(self) -> bool:
        return self.extracted_answer != UNPARSEABLE

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "round_index": self.round_index,
            "text": self.text,
            "extracted_answer": self.extracted_answer,
            "uncertainty": {"value": self.uncertainty.value, "estimator": self.uncertainty.estimator.value},
            "confidence": self.confidence.value,
            "prompt_spans": [
                {"agent_id": s.agent_id, "source_round": s.source_round,
                 "start": s.start, "end": s.end, "weight": s.weight}
                for s in self.prompt_spans
            ],
            "prompt": self.prompt,
            "method": self.method.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentResponse":
        return cls(
            agent_id=d["agent_id"],
            round_index=d["round_index"],
            text=d["text"],
            extracted_answer=d["extracted_answer"],
            uncertainty=UncertaintyScore(d["uncertainty"]["value"], d["uncertainty"]["estimator"]),
            confidence=ConfidenceWeight(d["confidence"]),
            prompt_spans=tuple(SpanRef(**s) for s in d["prompt_spans"]),
            prompt=d["prompt"],
            method=Method(d["method"]),
        )


@dataclass(frozen=True)
class DebateTranscript:
    question: str
    ground_truth: str | None
    rounds: tuple[tuple[AgentResponse, ...], ...]
    final_answer: str
    vote_detail: dict
    method: Method
    estimator: Estimator
    seed: int
    num_rounds: int
    schema_version: int = SCHEMA_VERSION
    template_version: str = templates.TEMPLATE_VERSION

    @property
    def correct(self) -> bool:
        return self.ground_truth is not None and self.final_answer == self.ground_truth

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "template_version": self.template_version,
            "question": self.question,
            "ground_truth": self.ground_truth,
            "method": self.method.value,
            "estimator": self.estimator.value,
            "seed": self.seed,
            "num_rounds": self.num_rounds,
            "rounds": [[r.to_dict() for r in rnd] for rnd in self.rounds],
            "final_answer": self.final_answer,
            "vote_detail": self.vote_detail,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DebateTranscript":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported transcript schema {d.get('schema_version')!r}")
        return cls(
            question=d["question"],
            ground_truth=d["ground_truth"],
            rounds=tuple(tuple(AgentResponse.from_dict(r) for r in rnd) for rnd in d["rounds"]),
            final_answer=d["final_answer"],
            vote_detail=d["vote_detail"],
            method=Method(d["method"]),
            estimator=Estimator(d["estimator"]),
            seed=d["seed"],
            num_rounds=d["num_rounds"],
            schema_version=d["schema_version"],
            template_version=d["template_version"],
        )


@dataclass
class DebateState:
    question: str
    ground_truth: str | None
    cfg: DebateConfig
    rounds: list[tuple[AgentResponse, ...]] = field(default_factory=list)


# ── Answers ───────────────────────────────────────────────────────────────────

def canonical_answer(value) -> str:
    return str(int(str(value).replace(",", "")))


def extract_answer(text: str) -> str:
    """First integer after the last "final answer" marker, else the last integer anywhere."""
    markers = list(_MARKER_RE.finditer(text))
    if markers:
        m = _INT_RE.search(text, markers[-1].end())
        if m:
            return canonical_answer(m.group())
    found = _INT_RE.findall(text)
    if found:
        return canonical_answer(found[-1])
    return UNPARSEABLE


# ── Prompt construction ───────────────────────────────────────────────────────

def _token_range(spans: list[tuple[int, int]], starts: list[int], char_start: int, char_end: int,
                 agent_id: int) -> tuple[int, int]:
    t0 = bisect.bisect_left(starts, char_start)
    t1 = bisect.bisect_left(starts, char_end)
    if (t1 <= t0 or spans[t0][0] != char_start or spans[t1 - 1][1] != char_end
            or (t0 > 0 and spans[t0 - 1][1] > char_start)):
        raise ConsistencyError(
            f"tokenizer spans do not cover agent {agent_id}'s block [{char_start}, {char_end})"
        )
    return t0, t1


def build_prompt(
    question: str,
    prior: Sequence[AgentResponse],
    self_id: int,
    method: Method,
    tokenize: Callable[[str], list[tuple[int, int]]] = token_char_spans,
) -> PromptWithSpans:
    """Prompt for one agent, quoting the previous round's responses in agent-id order."""
    method = Method(method)
    if not prior:
        return PromptWithSpans(text=templates.FIRST_ROUND.format(question=question))

    source_rounds = {r.round_index for r in prior}
    if len(source_rounds) != 1:
        raise ConsistencyError(f"prior responses span several rounds: {sorted(source_rounds)}")

    text = templates.DEBATE_INTRO.format(question=question)
    located = []
    for resp in sorted(prior, key=lambda r: r.agent_id):
        if method is Method.PROMPT:
            text += templates.BLOCK_HEADER_WITH_CONFIDENCE.format(
                agent_id=resp.agent_id, confidence=resp.confidence.value
            )
        else:
            text += templates.BLOCK_HEADER.format(agent_id=resp.agent_id)
        body = resp.text.strip() or templates.EMPTY_BODY
        located.append((resp, len(text), len(text) + len(body)))
        text += body + templates.BLOCK_FOOTER
    text += templates.DEBATE_OUTRO.format(self_id=self_id)

    spans = tokenize(text)
    starts = [s for s, _ in spans]
    blocks = []
    for resp, cs, ce in located:
        t0, t1 = _token_range(spans, starts, cs, ce, resp.agent_id)
        blocks.append(PromptBlock(resp.agent_id, resp.round_index, cs, ce, t0, t1, resp.confidence.value))

    ranges: tuple[RangeWeight, ...] = ()
    if method is Method.ATTN_ALL:
        ranges = tuple(RangeWeight(b.token_start, b.token_end, b.confidence) for b in blocks)
    elif method is Method.ATTN_OTHERS:
        ranges = tuple(
            RangeWeight(b.token_start, b.token_end, b.confidence) for b in blocks if b.agent_id != self_id
        )

    return PromptWithSpans(text=text, blocks=tuple(blocks), ranges=ranges)


# ── Rounds ────────────────────────────────────────────────────────────────────

def _score(state: DebateState, spec: AgentSpec, answer: str, result) -> tuple[UncertaintyScore, ConfidenceWeight]:
    cfg = state.cfg
    if spec.fixed_confidence is not None:
        conf = fixed_confidence(spec.fixed_confidence)
        return uncertainty_from_confidence(conf, Estimator.FIXED), conf

    if cfg.estimator is Estimator.ORACLE:
        if state.ground_truth is None:
            raise ConfigurationError("the oracle estimator needs a ground truth")
        conf = oracle_confidence(answer, state.ground_truth, cfg.oracle_hi, cfg.oracle_lo)
        return uncertainty_from_confidence(conf, Estimator.ORACLE), conf

    if not result.token_spans and not result.step_distributions and not result.chosen_logprobs:
        unc = UncertaintyScore(EMPTY_GENERATION_UNCERTAINTY, cfg.estimator)
        return unc, confidence_from_uncertainty(unc)

    if cfg.estimator is Estimator.MEAN_ENTROPY:
        if not result.step_distributions:
            raise UnsupportedFeatureError("backend returned no step distributions")
        unc = mean_token_entropy(result.step_distributions, cfg.entropy_aggregate)
    else:
        if not result.chosen_logprobs:
            raise UnsupportedFeatureError("backend returned no token log-probabilities")
        relevances = cfg.sar_relevance(result) if cfg.sar_relevance else None
        unc = token_sar(result.chosen_logprobs, relevances)
    return unc, confidence_from_uncertainty(unc)


def _run_agent(state: DebateState, agent_id: int, round_index: int,
               prior: tuple[AgentResponse, ...]) -> AgentResponse:
    cfg = state.cfg
    spec = cfg.agents[agent_id]
    backend = spec.backend

    method = cfg.method
    if method.uses_ranges and not backend.capabilities.supports_attention_ranges:
        method = Method.PROMPT
        log.debug(f"agent {agent_id}: backend takes no ranges, using prompt wording")

    try:
        prompt = build_prompt(state.question, prior, agent_id, method, tokenize=backend.tokenize)
        if prompt.ranges and not backend.capabilities.supports_attention_ranges:
            raise UnsupportedFeatureError("ranges handed to a backend that cannot take them")
        seed = derive_seed(cfg.seed, round_index, agent_id)
        result = backend.generate(prompt, prompt.ranges, cfg.max_new_tokens, seed, scaling=cfg.scaling)
        answer = extract_answer(result.text)
        uncertainty, confidence = _score(state, spec, answer, result)
    except Exception as e:
        log.error(f"✗ agent {agent_id} round {round_index}: {e}")
        raise AgentError(agent_id, round_index, e) from e

    weights = {(rw.start, rw.end): rw.weight for rw in prompt.ranges}
    spans = tuple(
        SpanRef(b.agent_id, b.source_round, b.token_start, b.token_end,
                weights.get((b.token_start, b.token_end)))
        for b in prompt.blocks
    )
    log.debug(f"agent {agent_id} round {round_index}: answer={answer} confidence={confidence.value:.4f}")
    return AgentResponse(
        agent_id=agent_id,
        round_index=round_index,
        text=result.text,
        extracted_answer=answer,
        uncertainty=uncertainty,
        confidence=confidence,
        prompt_spans=spans,
        prompt=prompt.text,
        method=method,
    )


def run_round(state: DebateState, round_index: int) -> tuple[AgentResponse, ...]:
    """Every agent answers once, seeing only the previous round."""
    cfg = state.cfg
    if not 1 <= round_index <= cfg.num_rounds:
        raise ValueError(f"round {round_index} outside 1..{cfg.num_rounds}")
    if len(state.rounds) != round_index - 1:
        raise ConsistencyError(f"round {round_index} requested after {len(state.rounds)} completed rounds")

    prior = state.rounds[round_index - 2] if round_index > 1 else ()

    def one(agent_id):
        return _run_agent(state, agent_id, round_index, prior)

    workers = min(cfg.agent_workers, cfg.num_agents)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            responses = tuple(pool.map(one, range(cfg.num_agents)))
    else:
        responses = tuple(one(i) for i in range(cfg.num_agents))
    return responses


def majority_vote(responses: Sequence[AgentResponse], weighted: bool = False) -> tuple[str, dict]:
    """Plurality of parseable answers; ties -> confidence sum -> lowest agent id."""
    candidates: dict[str, dict] = {}
    unparseable = []
    for r in sorted(responses, key=lambda r: r.agent_id):
        if not r.parseable:
            unparseable.append(r.agent_id)
            continue
        c = candidates.setdefault(r.extracted_answer, {"count": 0, "confidence": 0.0, "agents": []})
        c["count"] += 1
        c["confidence"] += r.confidence.value
        c["agents"].append(r.agent_id)

    if not candidates:
        raise NoConsensusError(f"no parseable answers among {len(responses)} responses")

    def rank(answer):
        c = candidates[answer]
        primary = c["confidence"] if weighted else c["count"]
        return primary, c["confidence"], -min(c["agents"])

    final = max(candidates, key=rank)
    return final, {"candidates": candidates, "unparseable": unparseable, "weighted": weighted}


def run_debate(question: str, ground_truth, cfg: DebateConfig) -> DebateTranscript:
    truth = canonical_answer(ground_truth) if ground_truth is not None else None
    state = DebateState(question=question, ground_truth=truth, cfg=cfg)

    for r in range(1, cfg.num_rounds + 1):
        responses = run_round(state, r)
        state.rounds.append(responses)
        log.debug(f"round {r}: " + ", ".join(f"{x.agent_id}:{x.extracted_answer}" for x in responses))

    final, detail = majority_vote(state.rounds[-1], cfg.weighted_vote)
    return DebateTranscript(
        question=question,
        ground_truth=truth,
        rounds=tuple(state.rounds),
        final_answer=final,
        vote_detail=detail,
        method=cfg.method,
        estimator=cfg.estimator,
        seed=cfg.seed,
        num_rounds=cfg.num_rounds,
    )


# ── Invariant checks ──────────────────────────────────────────────────────────

def check_transcript(t: DebateTranscript) -> list[str]:
    """Protocol invariant violations found in a transcript; empty when sound."""
    problems = []
    if len(t.rounds) != t.num_rounds:
        problems.append(f"expected {t.num_rounds} rounds, found {len(t.rounds)}")

    for r_idx, rnd in enumerate(t.rounds, 1):
        for resp in rnd:
            where = f"round {r_idx} agent {resp.agent_id}"
            if resp.round_index != r_idx:
                problems.append(f"{where}: tagged with round {resp.round_index}")
            if r_idx == 1 and resp.prompt_spans:
                problems.append(f"{where}: first-round prompt quotes other responses")
            product = resp.confidence.value * resp.uncertainty.value
            if not math.isclose(product, 1.0, rel_tol=0.0, abs_tol=CONSISTENCY_TOLERANCE):
                problems.append(f"{where}: confidence x uncertainty = {product!r}")
            for span in resp.prompt_spans:
                if span.source_round != r_idx - 1:
                    problems.append(f"{where}: quotes round {span.source_round}")
                    continue
                if span.weight is None:
                    continue
                source = next((x for x in t.rounds[r_idx - 2] if x.agent_id == span.agent_id), None)
                if source is None or source.confidence.value != span.weight:
                    problems.append(f"{where}: range weight for agent {span.agent_id} is not its confidence")

    if t.rounds:
        try:
            expected, _ = majority_vote(t.rounds[-1], t.vote_detail.get("weighted", False))
        except NoConsensusError:
            expected = None
        if expected != t.final_answer:
            problems.append(f"final answer {t.final_answer!r} is not the vote winner {expected!r}")
    return problems
