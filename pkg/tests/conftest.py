import os
from pathlib import Path

import pytest

from debate import AgentResponse, Method, extract_answer
from uncertainty import ConfidenceWeight, Estimator, UncertaintyScore

FIXTURES = Path(__file__).parent / "fixtures"

# DEBATE_UPDATE_GOLDENS=1 rewrites recorded regression files instead of comparing.
UPDATE_GOLDENS = os.getenv("DEBATE_UPDATE_GOLDENS") == "1"

TABLE_QUESTIONS = [
    ((3, 27, 3, 7), 91),
    ((9, 19, 21, 18), 426),
    ((19, 17, 9, 29), 201),
]


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def check_golden(name: str, actual: str):
    """Compare against tests/fixtures/<name>; the first run records it."""
    path = FIXTURES / name
    if UPDATE_GOLDENS or not path.exists():
        path.write_text(actual, encoding="utf-8")
        pytest.skip(f"recorded {name}; rerun to compare")
    assert actual == path.read_text(encoding="utf-8")


@pytest.fixture
def golden():
    return check_golden


def response(agent_id: int, round_index: int, text: str, confidence: float = 1.0) -> AgentResponse:
    return AgentResponse(
        agent_id=agent_id,
        round_index=round_index,
        text=text,
        extracted_answer=extract_answer(text),
        uncertainty=UncertaintyScore(1.0 / confidence, Estimator.FIXED),
        confidence=ConfidenceWeight(confidence),
        method=Method.STANDARD,
    )


@pytest.fixture
def make_response():
    return response
