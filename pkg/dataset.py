"""
Arithmetic problems of the form a + b*c + d with 0 <= a, b, c, d < 30.

Problems are drawn uniformly (with replacement) from a seeded PCG64
generator and stored as JSON lines with fields a, b, c, d, question, answer.
"""

import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from debate_common import read_jsonl, write_jsonl

log = logging.getLogger("dataset")

OPERAND_LIMIT = 30
QUESTION_TEMPLATE = (
    "What is the result of {a}+{b}*{c}+{d}? State the final answer at the end of your response."
)
_QUESTION_RE = re.compile(r"(\d+)\+(\d+)\*(\d+)\+(\d+)")


@dataclass(frozen=True)
class ArithmeticProblem:
    a: int
    b: int
    c: int
    d: int
    question: str
    answer: int

    def __post_init__(self):
        if self.answer != eval_expr(self.a, self.b, self.c, self.d):
            raise ValueError(f"answer {self.answer} does not match operands {self.operands}")
        if self.question != QUESTION_TEMPLATE.format(a=self.a, b=self.b, c=self.c, d=self.d):
            raise ValueError(f"question text does not match operands {self.operands}")

    @property
    def operands(self) -> tuple[int, int, int, int]:
        return self.a, self.b, self.c, self.d

    @classmethod
    def from_operands(cls, a: int, b: int, c: int, d: int) -> "ArithmeticProblem":
        return cls(a, b, c, d, render_question(a, b, c, d), eval_expr(a, b, c, d))


def eval_expr(a: int, b: int, c: int, d: int) -> int:
    for name, x in zip("abcd", (a, b, c, d)):
        if not 0 <= x < OPERAND_LIMIT:
            raise ValueError(f"operand {name}={x} outside [0, {OPERAND_LIMIT})")
    return a + b * c + d


def render_question(a: int, b: int, c: int, d: int) -> str:
    return QUESTION_TEMPLATE.format(a=a, b=b, c=c, d=d)


def parse_question(text: str) -> tuple[int, int, int, int] | None:
    m = _QUESTION_RE.search(text)
    if not m:
        return None
    return tuple(int(g) for g in m.groups())


def solve_question(text: str) -> int | None:
    ops = parse_question(text)
    if ops is None:
        return None
    try:
        return eval_expr(*ops)
    except ValueError:
        return None


def generate_problems(n: int, seed: int) -> list[ArithmeticProblem]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    operands = rng.integers(0, OPERAND_LIMIT, size=(n, 4))
    return [ArithmeticProblem.from_operands(*(int(x) for x in row)) for row in operands]


def save_problems(path: Path, problems: list[ArithmeticProblem]) -> int:
    written = write_jsonl(Path(path), [asdict(p) for p in problems])
    log.info(f"Saved {written} problems to {path}")
    return written


def load_problems(path: Path) -> list[ArithmeticProblem]:
    problems = []
    for i, row in enumerate(read_jsonl(Path(path)), 1):
        try:
            problems.append(ArithmeticProblem(**row))
        except (TypeError, ValueError) as e:
            raise ValueError(f"{path}: problem {i} is invalid: {e}") from e
    log.info(f"Loaded {len(problems)} problems from {path}")
    return problems
