#!/usr/bin/env python3
"""
Experiment runner for confidence-weighted debates on arithmetic problems.

Runs every (estimator, method) cell of the configured grid over one problem
set, writes one JSONL transcript file per cell, and reports exact-match
accuracy per cell in the Estimator / Method / Arithmetic table layout.

Usage:
  python harness.py gen-dataset --n 100 --seed 0 --out data/arith.jsonl
  python harness.py run --config example_config.toml --agents noisy --out runs/noisy
  python harness.py report --out runs/noisy --format markdown
  python harness.py audit --out runs/noisy

Output directory layout:
  transcripts/{estimator}__{method}.jsonl   one line per problem, ordered by index
  errors.jsonl                              problems that failed, with the reason
  report.txt / report.json / report.md      accuracy table (no timings)
  timings.json                              wall time per cell

Env vars (see .env.example):
  DEBATE_LOG_LEVEL                       – default log level (INFO)
  DEBATE_BASE_URL, DEBATE_MODEL          – chat-completions endpoint for http agents
  DEBATE_API_KEY                         – API key read by http agents
"""

import argparse
import json
import logging
import os
import sys
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

from agent_presets import build_agents, resolve_agents
from attn_kernel import RangeScalingConfig
from dataset import generate_problems, load_problems, save_problems
from debate import DebateConfig, DebateTranscript, Method, check_transcript, run_debate
from debate_common import canonical_json, derive_seed, read_jsonl, write_jsonl
from errors import ConfigurationError, DebateError
from uncertainty import Estimator

log = logging.getLogger("harness")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

ESTIMATOR_NAMES = {
    Estimator.MEAN_ENTROPY: "Entropy",
    Estimator.TOKEN_SAR: "TokenSAR",
    Estimator.ORACLE: "Oracle",
}
METHOD_NAMES = {
    Method.STANDARD: "Standard",
    Method.PROMPT: "Prompt",
    Method.ATTN_OTHERS: "Attn-Others",
    Method.ATTN_ALL: "Attn-All",
}
REPORT_FORMATS = ("text", "json", "markdown")
REPORT_FILES = {"text": "report.txt", "json": "report.json", "markdown": "report.md"}


# ── Config ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ExperimentConfig:
    agents: object = "noisy"                     # preset name(s) or inline recipe list
    dataset: Path | None = None
    n: int = 100
    seed: int = 0
    methods: tuple[Method, ...] = tuple(Method)
    estimators: tuple[Estimator, ...] = (Estimator.MEAN_ENTROPY, Estimator.ORACLE)
    num_rounds: int = 3
    max_new_tokens: int = 24
    weighted_vote: bool = False
    oracle_hi: float = 10.0
    oracle_lo: float = 1.0
    agent_workers: int = 1
    scaling: RangeScalingConfig = RangeScalingConfig()
    out_dir: Path = Path("runs/default")
    parallelism: int = 1
    report_format: str = "text"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        object.__setattr__(self, "estimators", tuple(Estimator(e) for e in self.estimators))
        if self.parallelism < 1:
            raise ConfigurationError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.report_format not in REPORT_FORMATS:
            raise ConfigurationError(f"format must be one of {REPORT_FORMATS}, got {self.report_format!r}")
        if not self.methods or not self.estimators:
            raise ConfigurationError("at least one method and one estimator are required")
        if self.dataset is None and self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")


def _split(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from e


def build_experiment_config(file_cfg: dict, args: argparse.Namespace) -> ExperimentConfig:
    """File values first, then CLI flags on top; dataclass defaults fill the rest."""
    exp = dict(file_cfg.get("experiment", {}))
    deb = dict(file_cfg.get("debate", {}))
    try:
        scaling = RangeScalingConfig(**file_cfg.get("scaling", {}))
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"[scaling]: {e}") from e

    values = {
        "agents": file_cfg.get("agents", exp.get("agents")),
        "dataset": exp.get("dataset"),
        "n": exp.get("n"),
        "seed": exp.get("seed"),
        "out_dir": exp.get("out"),
        "parallelism": exp.get("parallelism"),
        "report_format": exp.get("format"),
        "methods": deb.get("methods"),
        "estimators": deb.get("estimators"),
        "num_rounds": deb.get("rounds"),
        "max_new_tokens": deb.get("max_new_tokens"),
        "weighted_vote": deb.get("weighted_vote"),
        "oracle_hi": deb.get("oracle_hi"),
        "oracle_lo": deb.get("oracle_lo"),
        "agent_workers": deb.get("agent_workers"),
    }
    flags = {
        "agents": getattr(args, "agents", None),
        "dataset": getattr(args, "dataset", None),
        "n": getattr(args, "n", None),
        "seed": getattr(args, "seed", None),
        "out_dir": getattr(args, "out", None),
        "parallelism": getattr(args, "parallelism", None),
        "report_format": getattr(args, "format", None),
        "methods": getattr(args, "method", None),
        "estimators": getattr(args, "estimator", None),
        "num_rounds": getattr(args, "rounds", None),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    values = {k: v for k, v in values.items() if v is not None}

    for key in ("methods", "estimators"):
        if key in values:
            values[key] = tuple(_split(values[key]))
    for key in ("dataset", "out_dir"):
        if key in values:
            values[key] = Path(values[key])

    try:
        return ExperimentConfig(scaling=scaling, **values)
    except ValueError as e:
        raise ConfigurationError(str(e)) from e


# ── Report ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ReportCell:
    estimator: Estimator
    method: Method
    n: int
    correct: int
    errored: int
    accuracy: float
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        object.__setattr__(self, "method", Method(self.method))
        expected = self.correct / self.n if self.n else 0.0
        if self.accuracy != expected:
            raise ValueError(f"accuracy {self.accuracy!r} != {self.correct}/{self.n}")


@dataclass(frozen=True)
class AccuracyReport:
    cells: tuple[ReportCell, ...] = ()
    dataset_size: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "dataset_size": self.dataset_size,
            "seed": self.seed,
            "cells": [
                {
                    "estimator": c.estimator.value,
                    "method": c.method.value,
                    "n": c.n,
                    "correct": c.correct,
                    "errored": c.errored,
                    "accuracy": c.accuracy,
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AccuracyReport":
        return cls(
            cells=tuple(ReportCell(**c) for c in d["cells"]),
            dataset_size=d["dataset_size"],
            seed=d["seed"],
        )


def report_from_json(path: Path) -> AccuracyReport:
    return AccuracyReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def report_render(report: AccuracyReport, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"

    rows = [(ESTIMATOR_NAMES[c.estimator], METHOD_NAMES[c.method], f"{c.accuracy:.3f}") for c in report.cells]
    errored = sum(c.errored for c in report.cells)

    if fmt == "markdown":
        lines = ["| Estimator | Method | Arithmetic |", "|---|---|---:|"]
        lines += [f"| {e} | {m} | {a} |" for e, m, a in rows]
        if report.cells:
            lines += ["", f"Problems: {report.dataset_size} · errored: {errored}"]
        return "\n".join(lines) + "\n"

    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [f"{'Estimator':<10} {'Method':<12} {'Arithmetic':>10}", "-" * 34]
    lines += [f"{e:<10} {m:<12} {a:>10}" for e, m, a in rows]
    if report.cells:
        lines += ["-" * 34, f"problems: {report.dataset_size}  errored: {errored}"]
    return "\n".join(lines) + "\n"


def aggregate(outcomes: list[dict], dataset_size: int, seed: int,
              timings: dict | None = None) -> AccuracyReport:
    """Fold per-problem outcomes (estimator, method, correct, errored) into report cells."""
    cells = []
    if outcomes:
        df = pd.DataFrame(outcomes)
        grouped = df.groupby(["estimator", "method"], sort=False).agg(
            total=("errored", "size"),
            errored=("errored", "sum"),
            correct=("correct", "sum"),
        )
        for (estimator, method), row in grouped.iterrows():
            n = int(row["total"] - row["errored"])
            correct = int(row["correct"])
            cells.append(ReportCell(
                estimator=estimator,
                method=method,
                n=n,
                correct=correct,
                errored=int(row["errored"]),
                accuracy=correct / n if n else 0.0,
                wall_time=(timings or {}).get(f"{estimator}__{method}", 0.0),
            ))
    return AccuracyReport(cells=tuple(cells), dataset_size=dataset_size, seed=seed)


# ── Runs ──────────────────────────────────────────────────────────────────────

def _load_or_generate(exp: ExperimentConfig):
    if exp.dataset is not None:
        return load_problems(exp.dataset)
    return generate_problems(exp.n, exp.seed)


def _cell_name(estimator: Estimator, method: Method) -> str:
    return f"{estimator.value}__{method.value}"


def run_cell(problems, estimator: Estimator, method: Method, exp: ExperimentConfig):
    """All problems for one (estimator, method); returns (transcript rows, error rows)."""
    recipes = resolve_agents(exp.agents)
    # Validates the line-up once; each problem then gets its own agents so
    # stateful backends (mock scripts) replay the same way at any parallelism.
    template = DebateConfig(
        agents=build_agents(recipes, exp.seed),
        method=method,
        estimator=estimator,
        num_rounds=exp.num_rounds,
        scaling=exp.scaling,
        seed=exp.seed,
        max_new_tokens=exp.max_new_tokens,
        weighted_vote=exp.weighted_vote,
        oracle_hi=exp.oracle_hi,
        oracle_lo=exp.oracle_lo,
        agent_workers=exp.agent_workers,
    )

    def one(index):
        problem = problems[index]
        try:
            cfg = replace(template, agents=build_agents(recipes, exp.seed), seed=derive_seed(exp.seed, index))
            return index, run_debate(problem.question, problem.answer, cfg), None
        except Exception as e:
            log.error(f"  ✗ problem {index}: {type(e).__name__}: {e}")
            return index, None, e

    with ThreadPoolExecutor(max_workers=exp.parallelism) as pool:
        results = list(pool.map(one, range(len(problems))))

    transcripts, errors = [], []
    for index, transcript, err in sorted(results, key=lambda r: r[0]):
        if transcript is not None:
            transcripts.append({"problem_index": index, **transcript.to_dict()})
        else:
            errors.append({
                "problem_index": index,
                "estimator": estimator.value,
                "method": method.value,
                "error": type(err).__name__,
                "message": str(err),
            })
    return transcripts, errors


def run_experiment(exp: ExperimentConfig) -> AccuracyReport:
    problems = _load_or_generate(exp)
    out = exp.out_dir
    out.mkdir(parents=True, exist_ok=True)

    log.info("=" * 70)
    log.info("DEBATE EXPERIMENT STARTING")
    log.info(f"Problems: {len(problems)}")
    log.info(f"Agents: {exp.agents if isinstance(exp.agents, str) else f'{len(exp.agents)} inline'}")
    log.info(f"Methods: {', '.join(m.value for m in exp.methods)}")
    log.info(f"Estimators: {', '.join(e.value for e in exp.estimators)}")
    log.info(f"Rounds: {exp.num_rounds}  Seed: {exp.seed}  Parallelism: {exp.parallelism}")
    log.info(f"Output: {out}")
    log.info("=" * 70)

    outcomes, all_errors, timings = [], [], {}
    for estimator in exp.estimators:
        for method in exp.methods:
            name = _cell_name(estimator, method)
            started = time.perf_counter()
            transcripts, errors = run_cell(problems, estimator, method, exp)
            timings[name] = round(time.perf_counter() - started, 3)

            write_jsonl(out / "transcripts" / f"{name}.jsonl", transcripts, key="problem_index")
            all_errors.extend(errors)
            outcomes += [
                {"estimator": estimator.value, "method": method.value,
                 "correct": t["final_answer"] == t["ground_truth"], "errored": False}
                for t in transcripts
            ]
            outcomes += [
                {"estimator": estimator.value, "method": method.value, "correct": False, "errored": True}
                for _ in errors
            ]
            correct = sum(t["final_answer"] == t["ground_truth"] for t in transcripts)
            done = len(transcripts)
            status = "✓" if not errors else "⚠"
            log.info(
                f"  {status} {ESTIMATOR_NAMES[estimator]:<9s} {METHOD_NAMES[method]:<12s}"
                f" - {correct}/{done} correct, {len(errors)} errored ({timings[name]:.1f}s)"
            )

    write_jsonl(out / "errors.jsonl", all_errors)
    report = aggregate(outcomes, len(problems), exp.seed, timings)
    for fmt, filename in REPORT_FILES.items():
        (out / filename).write_text(report_render(report, fmt), encoding="utf-8")
    (out / "timings.json").write_text(json.dumps(timings, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    log.info("\n" + "=" * 70)
    log.info("✅ EXPERIMENT COMPLETE")
    log.info("=" * 70)
    for line in report_render(report, "text").splitlines():
        log.info(line)
    log.info("=" * 70)
    return report


def audit(out_dir: Path) -> list[str]:
    """Recompute accuracy from transcripts; returns mismatches against report.json."""
    out_dir = Path(out_dir)
    saved = report_from_json(out_dir / "report.json")
    errors = read_jsonl(out_dir / "errors.jsonl") if (out_dir / "errors.jsonl").exists() else []

    outcomes, problems = [], []
    for cell in saved.cells:
        path = out_dir / "transcripts" / f"{_cell_name(cell.estimator, cell.method)}.jsonl"
        rows = read_jsonl(path) if path.exists() else []
        for row in rows:
            t = DebateTranscript.from_dict({k: v for k, v in row.items() if k != "problem_index"})
            for issue in check_transcript(t):
                problems.append(f"{path.name} problem {row['problem_index']}: {issue}")
            outcomes.append({"estimator": cell.estimator.value, "method": cell.method.value,
                             "correct": t.correct, "errored": False})
        outcomes += [
            {"estimator": e["estimator"], "method": e["method"], "correct": False, "errored": True}
            for e in errors
            if e["estimator"] == cell.estimator.value and e["method"] == cell.method.value
        ]

    recomputed = aggregate(outcomes, saved.dataset_size, saved.seed)
    if recomputed != saved:
        problems.append(
            f"report.json disagrees with transcripts: saved {canonical_json(saved.to_dict())} "
            f"vs recomputed {canonical_json(recomputed.to_dict())}"
        )
    for cell in saved.cells:
        if cell.n + cell.errored != saved.dataset_size:
            problems.append(
                f"{_cell_name(cell.estimator, cell.method)}: {cell.n} transcripts + {cell.errored} errored"
                f" != {saved.dataset_size} problems"
            )
    return problems


# ── CLI ───────────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Confidence-weighted multi-agent debate experiments")
    parser.add_argument("--log-level", default=os.getenv("DEBATE_LOG_LEVEL", "INFO"),
                        help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-dataset", help="Write a JSONL file of arithmetic problems")
    gen.add_argument("--n", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="Output JSONL path")

    run = sub.add_parser("run", help="Run the (estimator x method) grid")
    run.add_argument("--config", type=Path, help="TOML experiment file")
    run.add_argument("--dataset", help="JSONL problem file (otherwise generated from --n/--seed)")
    run.add_argument("--n", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--method", help="Comma list: standard,prompt,attn_others,attn_all")
    run.add_argument("--estimator", help="Comma list: mean_entropy,token_sar,oracle")
    run.add_argument("--rounds", type=int)
    run.add_argument("--agents", help="Preset name or comma list of preset names")
    run.add_argument("--out", help="Output directory")
    run.add_argument("--parallelism", type=int, help="Debates in flight at once")
    run.add_argument("--format", choices=REPORT_FORMATS, help="Format printed to stdout")

    rep = sub.add_parser("report", help="Re-render a saved report.json")
    rep.add_argument("--out", required=True, help="Run directory")
    rep.add_argument("--format", choices=REPORT_FORMATS, default="text")

    aud = sub.add_parser("audit", help="Recompute accuracy from transcripts and compare")
    aud.add_argument("--out", required=True, help="Run directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)

    try:
        if args.command == "gen-dataset":
            save_problems(Path(args.out), generate_problems(args.n, args.seed))
            return 0

        if args.command == "run":
            exp = build_experiment_config(load_config_file(args.config), args)
            report = run_experiment(exp)
            print(report_render(report, exp.report_format), end="")
            return 0

        if args.command == "report":
            print(report_render(report_from_json(Path(args.out) / "report.json"), args.format), end="")
            return 0

        if args.command == "audit":
            problems = audit(Path(args.out))
            for p in problems:
                log.error(f"✗ {p}")
            if problems:
                log.error(f"❌ audit failed with {len(problems)} issue(s)")
                return 1
            log.info("✅ audit passed: report matches transcripts")
            return 0
    except (ConfigurationError, FileNotFoundError) as e:
        log.error(f"❌ {e}")
        return 1
    except DebateError as e:
        log.error(f"❌ {type(e).__name__}: {e}")
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
