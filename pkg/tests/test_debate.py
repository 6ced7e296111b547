from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from backend import (
    BackendCapabilities,
    MockBackend,
    ScriptedNoisyBackend,
    ToyDecoderBackend,
    scripted_noisy_agent,
)
from dataset import generate_problems, render_question
from debate import (
    UNPARSEABLE,
    AgentSpec,
    DebateConfig,
    DebateState,
    DebateTranscript,
    Method,
    build_prompt,
    check_transcript,
    extract_answer,
    majority_vote,
    run_debate,
    run_round,
)
from debate_common import derive_seed, token_char_spans
from prompt_templates import EMPTY_BODY
from errors import AgentError, ConfigurationError, ConsistencyError, NoConsensusError
from toy_decoder import DecoderConfig
from uncertainty import Estimator

QUESTION = render_question(3, 27, 3, 7)
RANGE_CAPS = BackendCapabilities(supports_attention_ranges=True, supports_logprobs=True)


def noisy_agents(calibration, seed=0):
    return tuple(
        AgentSpec(scripted_noisy_agent(acc, calibration, seed=derive_seed(seed, i)))
        for i, acc in enumerate((0.9, 0.5, 0.5, 0.5))
    )


def scripted_mocks(n_agents, n_rounds, caps=None):
    return tuple(
        AgentSpec(MockBackend(
            [f"round {r} agent {i} says the final answer is {90 + i}." for r in range(1, n_rounds + 1)],
            capabilities=caps,
        ))
        for i in range(n_agents)
    )


# ── extract_answer ───────────────────────────────────────────────────────────

@pytest.mark.parametrize("text,expected", [
    ("The final answer is 91.", "91"),
    ("Final Answer: -1,234", "-1234"),
    ("final answer 3, then on reflection the Final answer is 4", "4"),
    ("I get 7 and then 8", "8"),
    ("The final answer is 007", "7"),
    ("final answer: +12", "12"),
    ("no digits here", UNPARSEABLE),
    ("", UNPARSEABLE),
])
def test_extract_answer(text, expected):
    assert extract_answer(text) == expected


@given(st.integers(-10**9, 10**9), st.text(alphabet="abc .,:!?", max_size=30))
def test_extract_answer_round_trip(n, prefix):
    assert extract_answer(f"{prefix} The final answer is {n}.") == str(n)


# ── build_prompt ─────────────────────────────────────────────────────────────

def test_first_round_prompt_is_the_question():
    p = build_prompt(QUESTION, (), 0, Method.ATTN_ALL)
    assert p.text == QUESTION
    assert p.blocks == () and p.ranges == ()


def test_standard_prompt_golden(fixtures_dir, make_response):
    prior = [make_response(1, 1, "I get 90. The final answer is 90."), make_response(0, 1, "The final answer is 91.")]
    p = build_prompt(QUESTION, prior, 0, Method.STANDARD)
    assert p.text == (fixtures_dir / "round2_standard_agent0.txt").read_text(encoding="utf-8")
    assert p.ranges == ()


def test_prompt_method_golden(fixtures_dir, make_response):
    prior = [make_response(0, 1, "The final answer is 91.", 10.0), make_response(1, 1, "I get 90. The final answer is 90.", 1.0)]
    p = build_prompt(QUESTION, prior, 1, Method.PROMPT)
    assert p.text == (fixtures_dir / "round2_prompt_agent1.txt").read_text(encoding="utf-8")


def test_attention_ranges_cover_quoted_blocks(make_response):
    prior = [make_response(i, 1, f"Agent text {i}. The final answer is {90 + i}.", 0.5 + i) for i in range(3)]
    p = build_prompt(QUESTION, prior, 1, Method.ATTN_ALL)
    words = [p.text[s:e] for s, e in token_char_spans(p.text)]

    assert [rw.weight for rw in p.ranges] == [0.5, 1.5, 2.5]
    for block, rw, resp in zip(p.blocks, p.ranges, prior):
        assert (rw.start, rw.end) == (block.token_start, block.token_end)
        assert " ".join(words[rw.start:rw.end]) == resp.text
        assert p.text[block.char_start:block.char_end] == resp.text


def test_attn_others_skips_own_block(make_response):
    prior = [make_response(i, 1, f"The final answer is {i}.", 1.0 + i) for i in range(3)]
    p = build_prompt(QUESTION, prior, 1, Method.ATTN_OTHERS)
    assert len(p.blocks) == 3
    assert [rw.weight for rw in p.ranges] == [1.0, 3.0]


def test_prompt_rejects_mixed_rounds(make_response):
    prior = [make_response(0, 1, "final answer 1"), make_response(1, 2, "final answer 2")]
    with pytest.raises(ConsistencyError):
        build_prompt(QUESTION, prior, 0, Method.STANDARD)


def test_empty_response_is_quoted_as_placeholder(make_response):
    prior = [make_response(0, 1, "final answer 1"), make_response(1, 1, "   ")]
    p = build_prompt(QUESTION, prior, 0, Method.ATTN_ALL)
    empty = p.blocks[1]
    assert p.text[empty.char_start:empty.char_end] == EMPTY_BODY
    assert empty.token_end > empty.token_start
    assert len(p.ranges) == 2


def test_prompt_rejects_misaligned_tokenizer(make_response):
    prior = [make_response(0, 1, "final answer 1"), make_response(1, 1, "final answer 2")]

    def char_tokens(text):
        return [(i, i + 3) for i in range(0, len(text) - 2, 3)]

    with pytest.raises(ConsistencyError):
        build_prompt(QUESTION, prior, 0, Method.ATTN_ALL, tokenize=char_tokens)


# ── majority_vote ────────────────────────────────────────────────────────────

def test_vote_plurality(make_response):
    rs = [make_response(0, 3, "final answer 5"), make_response(1, 3, "final answer 5"), make_response(2, 3, "final answer 6", 9.0)]
    assert majority_vote(rs)[0] == "5"


def test_vote_tie_goes_to_confidence_then_lowest_agent(make_response):
    rs = [make_response(0, 3, "final answer 5", 1.0), make_response(1, 3, "final answer 6", 2.0)]
    assert majority_vote(rs)[0] == "6"
    rs = [make_response(0, 3, "final answer 5", 1.0), make_response(1, 3, "final answer 6", 1.0)]
    assert majority_vote(rs)[0] == "5"
    rs = [make_response(0, 3, "final answer 6", 1.0), make_response(1, 3, "final answer 5", 1.0)]
    assert majority_vote(rs)[0] == "6"


def test_weighted_vote(make_response):
    rs = [make_response(i, 3, "final answer 5", 1.0) for i in range(3)] + [make_response(3, 3, "final answer 6", 5.0)]
    assert majority_vote(rs, weighted=False)[0] == "5"
    assert majority_vote(rs, weighted=True)[0] == "6"


def test_vote_ignores_unparseable(make_response):
    rs = [make_response(0, 3, "no idea"), make_response(1, 3, "final answer 8")]
    final, detail = majority_vote(rs)
    assert final == "8"
    assert detail["unparseable"] == [0]


def test_vote_without_answers(make_response):
    with pytest.raises(NoConsensusError):
        majority_vote([make_response(0, 3, "no idea"), make_response(1, 3, "none")])


# ── DebateConfig ─────────────────────────────────────────────────────────────

def test_config_validation():
    agents = scripted_mocks(2, 1)
    with pytest.raises(ConfigurationError):
        DebateConfig(agents=agents[:1])
    with pytest.raises(ConfigurationError):
        DebateConfig(agents=agents, num_rounds=0)
    with pytest.raises(ConfigurationError):
        DebateConfig(agents=agents, estimator=Estimator.FIXED)


def test_agent_without_logprobs_needs_fixed_confidence():
    blind = MockBackend(["final answer 1"], capabilities=BackendCapabilities(False, False))
    seeing = MockBackend(["final answer 1"])
    with pytest.raises(ConfigurationError):
        DebateConfig(agents=(AgentSpec(blind), AgentSpec(seeing)), estimator=Estimator.MEAN_ENTROPY)
    DebateConfig(agents=(AgentSpec(blind, fixed_confidence=10.0), AgentSpec(seeing)), estimator=Estimator.MEAN_ENTROPY)
    DebateConfig(agents=(AgentSpec(blind), AgentSpec(seeing)), estimator=Estimator.ORACLE)


# ── Rounds ───────────────────────────────────────────────────────────────────

def test_rounds_only_see_the_previous_round():
    agents = scripted_mocks(3, 3)
    cfg = DebateConfig(agents=agents, method=Method.STANDARD, estimator=Estimator.ORACLE)
    t = run_debate(QUESTION, 91, cfg)

    for spec in agents:
        prompts = [call[0].text for call in spec.backend.calls]
        assert prompts[0] == QUESTION
        assert "round 1 agent" in prompts[1] and "round 2 agent" not in prompts[1]
        assert "round 2 agent" in prompts[2] and "round 1 agent" not in prompts[2]
    assert check_transcript(t) == []


def test_backends_without_ranges_get_confidence_text():
    agents = scripted_mocks(2, 2)
    cfg = DebateConfig(agents=agents, method=Method.ATTN_ALL, estimator=Estimator.ORACLE, num_rounds=2)
    t = run_debate(QUESTION, 91, cfg)
    assert {r.method for r in t.rounds[1]} == {Method.PROMPT}
    assert "(confidence: " in agents[0].backend.calls[1][0].text
    assert agents[0].backend.calls[1][1] == ()


def test_empty_response_is_recorded_not_fatal():
    silent = MockBackend(["", "still thinking", "The final answer is 91."])
    agents = (AgentSpec(silent),) + scripted_mocks(2, 3)[1:]
    cfg = DebateConfig(agents=agents, method=Method.STANDARD, estimator=Estimator.MEAN_ENTROPY)
    t = run_debate(QUESTION, 91, cfg)

    first = t.rounds[0][0]
    assert not first.parseable
    assert first.confidence.value == pytest.approx(1e-6)
    assert EMPTY_BODY in agents[1].backend.calls[1][0].text
    assert t.final_answer == "91"
    assert check_transcript(t) == []


def test_range_weights_equal_source_confidence():
    agents = scripted_mocks(3, 2, caps=RANGE_CAPS)
    cfg = DebateConfig(agents=agents, method=Method.ATTN_ALL, estimator=Estimator.ORACLE, num_rounds=2)
    t = run_debate(QUESTION, 91, cfg)

    conf = {r.agent_id: r.confidence.value for r in t.rounds[0]}
    for resp in t.rounds[1]:
        assert [s.weight for s in resp.prompt_spans] == [conf[0], conf[1], conf[2]]
    # agent 1 answered 91 in round 1
    assert conf == {0: 1.0, 1: 10.0, 2: 1.0}
    assert check_transcript(t) == []


def test_fixed_confidence_bypasses_estimator():
    agents = scripted_mocks(2, 1)
    agents = (replace(agents[0], fixed_confidence=10.0), agents[1])
    cfg = DebateConfig(agents=agents, estimator=Estimator.MEAN_ENTROPY, num_rounds=1)
    t = run_debate(QUESTION, 91, cfg)
    assert t.rounds[0][0].confidence.value == 10.0
    assert t.rounds[0][0].uncertainty.estimator is Estimator.FIXED
    assert t.rounds[0][1].uncertainty.estimator is Estimator.MEAN_ENTROPY


def test_backend_failure_names_agent_and_round():
    agents = scripted_mocks(2, 1)
    cfg = DebateConfig(agents=agents, method=Method.STANDARD, estimator=Estimator.ORACLE, num_rounds=2)
    with pytest.raises(AgentError) as info:
        run_debate(QUESTION, 91, cfg)
    assert info.value.agent_id == 0
    assert info.value.round_index == 2
    assert isinstance(info.value.__cause__, IndexError)


def test_rounds_must_run_in_order():
    cfg = DebateConfig(agents=scripted_mocks(2, 3), estimator=Estimator.ORACLE)
    state = DebateState(QUESTION, "91", cfg)
    with pytest.raises(ConsistencyError):
        run_round(state, 2)


def test_threaded_agents_match_sequential():
    problem = generate_problems(1, seed=2)[0]
    sequential = DebateConfig(agents=noisy_agents("calibrated"), method=Method.ATTN_ALL, seed=5)
    threaded = replace(sequential, agent_workers=4)
    assert (run_debate(problem.question, problem.answer, sequential).to_json()
            == run_debate(problem.question, problem.answer, threaded).to_json())


def test_toy_decoder_agents_receive_ranges():
    agents = tuple(AgentSpec(ToyDecoderBackend(DecoderConfig(seed=s))) for s in (1, 2))
    cfg = DebateConfig(agents=agents, method=Method.ATTN_ALL, estimator=Estimator.MEAN_ENTROPY,
                       num_rounds=2, max_new_tokens=8)
    state = DebateState(QUESTION, "91", cfg)
    state.rounds.append(run_round(state, 1))
    second = run_round(state, 2)

    conf = [r.confidence.value for r in state.rounds[0]]
    for resp in second:
        assert resp.method is Method.ATTN_ALL
        assert [s.weight for s in resp.prompt_spans] == conf


# ── Transcripts ──────────────────────────────────────────────────────────────

def test_protocol_invariants_and_replay():
    for index, problem in enumerate(generate_problems(100, seed=3)):
        cfg = DebateConfig(
            agents=noisy_agents("calibrated"),
            method=list(Method)[index % 4],
            estimator=Estimator.MEAN_ENTROPY,
            seed=derive_seed(0, index),
        )
        first = run_debate(problem.question, problem.answer, cfg)
        assert check_transcript(first) == []
        assert run_debate(problem.question, problem.answer, cfg).to_json() == first.to_json()


def test_transcript_json_round_trip():
    problem = generate_problems(1, seed=8)[0]
    cfg = DebateConfig(agents=noisy_agents("calibrated"), method=Method.ATTN_OTHERS, estimator=Estimator.ORACLE)
    t = run_debate(problem.question, problem.answer, cfg)
    assert DebateTranscript.from_dict(t.to_dict()).to_json() == t.to_json()


def test_check_transcript_flags_tampering():
    problem = generate_problems(1, seed=8)[0]
    cfg = DebateConfig(agents=noisy_agents("calibrated"), method=Method.ATTN_ALL, estimator=Estimator.ORACLE)
    t = run_debate(problem.question, problem.answer, cfg)
    wrong = str(int(t.final_answer) + 1000)
    assert any("vote winner" in p for p in check_transcript(replace(t, final_answer=wrong)))


# ── Consensus ────────────────────────────────────────────────────────────────

def accuracy(method, estimator, calibration, n=200):
    correct = 0
    for index, problem in enumerate(generate_problems(n, seed=0)):
        cfg = DebateConfig(
            agents=noisy_agents(calibration),
            method=method,
            estimator=estimator,
            seed=derive_seed(0, index),
        )
        correct += run_debate(problem.question, problem.answer, cfg).correct
    return correct / n


def test_confidence_weighting_beats_plain_debate():
    standard = accuracy(Method.STANDARD, Estimator.ORACLE, "calibrated")
    assert accuracy(Method.ATTN_ALL, Estimator.ORACLE, "calibrated") >= standard + 0.05
    assert accuracy(Method.PROMPT, Estimator.ORACLE, "calibrated") >= standard + 0.05


def test_miscalibrated_confidence_loses_the_advantage():
    standard = accuracy(Method.STANDARD, Estimator.MEAN_ENTROPY, "inverted")
    assert accuracy(Method.ATTN_ALL, Estimator.MEAN_ENTROPY, "inverted") < standard + 0.05


def test_scripted_agent_type():
    assert isinstance(noisy_agents("flat")[0].backend, ScriptedNoisyBackend)
