"""
agent_presets.py
----------------
Named agent line-ups for debates.

Each preset is a list of per-agent recipes plus a "notes" string. A recipe
is a plain dict with a "kind" and the kind's options:

  toy        seeded untrained decoder     seed (combined with the run seed), temperature
                                          scaling (fields laid over the run's [scaling] table)
  scripted   simulated arithmetic agent   accuracy, calibration, prompt_sensitivity
  mock       replayed responses           path (JSON file)
  http       chat-completions service     base_url / model (fall back to DEBATE_BASE_URL /
                                          DEBATE_MODEL), api_key_env

Any recipe may set "fixed_confidence" to bypass the uncertainty estimator,
as done for third-party agents that expose no token probabilities.

HOW TO ADD ONE:
  - Add an entry below, or pass an inline list under `agents` in the TOML config.
  - Keep scripted accuracies in [0, 1]; keep fixed confidences > 0.
"""

import logging
import os

from backend import (
    HttpBackend,
    HttpBackendConfig,
    MockBackend,
    ToyDecoderBackend,
    scripted_noisy_agent,
)
from debate import AgentSpec
from debate_common import derive_seed
from errors import ConfigurationError
from toy_decoder import DecoderConfig

log = logging.getLogger("agent-presets")

THIRD_PARTY_CONFIDENCE = 10.0

# Untrained decoders spread attention thinly; with confidences above 1 the
# unclamped adjustment can flip a span's mass negative by round 3.
TOY_SCALING = {"clamp_nonnegative": True}

AGENT_PRESETS: dict[str, dict] = {
    "mixed": {
        "agents": [
            {"kind": "toy", "seed": 1, "scaling": TOY_SCALING},
            {"kind": "toy", "seed": 2, "scaling": TOY_SCALING},
            {"kind": "toy", "seed": 3, "scaling": TOY_SCALING},
            {"kind": "http", "fixed_confidence": THIRD_PARTY_CONFIDENCE},
        ],
        "notes": "Three open-weight agents plus one hosted model trusted at a fixed 10.0. Needs DEBATE_BASE_URL, DEBATE_MODEL, DEBATE_API_KEY.",
    },
    "mixed-offline": {
        "agents": [
            {"kind": "toy", "seed": 1, "scaling": TOY_SCALING},
            {"kind": "toy", "seed": 2, "scaling": TOY_SCALING},
            {"kind": "toy", "seed": 3, "scaling": TOY_SCALING},
            {"kind": "scripted", "accuracy": 0.9, "calibration": "calibrated",
             "fixed_confidence": THIRD_PARTY_CONFIDENCE},
        ],
        "notes": "Same shape as 'mixed' with the hosted model replaced by a strong simulated agent.",
    },
    "noisy": {
        "agents": [
            {"kind": "scripted", "accuracy": 0.9, "calibration": "calibrated"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "calibrated"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "calibrated"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "calibrated"},
        ],
        "notes": "One strong and three coin-flip agents; confident when right.",
    },
    "noisy-inverted": {
        "agents": [
            {"kind": "scripted", "accuracy": 0.9, "calibration": "inverted"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "inverted"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "inverted"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "inverted"},
        ],
        "notes": "As 'noisy' but confident when wrong. Confidence weighting should stop helping.",
    },
    "noisy-flat": {
        "agents": [
            {"kind": "scripted", "accuracy": 0.9, "calibration": "flat"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "flat"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "flat"},
            {"kind": "scripted", "accuracy": 0.5, "calibration": "flat"},
        ],
        "notes": "As 'noisy' with constant confidence; weighting carries no signal.",
    },
    "perfect": {
        "agents": [
            {"kind": "scripted", "accuracy": 1.0, "calibration": "calibrated"},
            {"kind": "scripted", "accuracy": 1.0, "calibration": "calibrated"},
        ],
        "notes": "Sanity check: every method should score 1.0.",
    },
    "hopeless": {
        "agents": [
            {"kind": "scripted", "accuracy": 0.0, "calibration": "calibrated"},
            {"kind": "scripted", "accuracy": 0.0, "calibration": "calibrated"},
        ],
        "notes": "Sanity check: every method should score 0.0.",
    },
}


def resolve_agents(agents) -> list[dict]:
    """Preset name, comma list of preset names, or an inline list of recipes -> recipes."""
    if isinstance(agents, list):
        return [dict(r) for r in agents]
    recipes = []
    for name in str(agents).split(","):
        name = name.strip()
        if name not in AGENT_PRESETS:
            raise ConfigurationError(
                f"unknown agent preset '{name}'. Choose from: {', '.join(AGENT_PRESETS)}"
            )
        recipes.extend(dict(r) for r in AGENT_PRESETS[name]["agents"])
    return recipes


def build_backend(recipe: dict, run_seed: int, agent_index: int):
    kind = recipe.get("kind")
    if kind == "toy":
        cfg = DecoderConfig(seed=derive_seed(run_seed, recipe.get("seed", agent_index)))
        return ToyDecoderBackend(cfg, temperature=recipe.get("temperature", 0.0),
                                 scaling_overrides=recipe.get("scaling"))
    if kind == "scripted":
        return scripted_noisy_agent(
            recipe["accuracy"],
            recipe.get("calibration", "calibrated"),
            derive_seed(run_seed, agent_index),
            recipe.get("prompt_sensitivity", 0.5),
        )
    if kind == "mock":
        return MockBackend.from_file(recipe["path"], cycle=recipe.get("cycle", False))
    if kind == "http":
        base_url = recipe.get("base_url") or os.getenv("DEBATE_BASE_URL")
        model = recipe.get("model") or os.getenv("DEBATE_MODEL")
        if not base_url or not model:
            raise ConfigurationError("http agents need base_url and model (or DEBATE_BASE_URL / DEBATE_MODEL)")
        return HttpBackend(HttpBackendConfig(
            base_url=base_url,
            model_name=model,
            api_key_env=recipe.get("api_key_env", "DEBATE_API_KEY"),
            timeout=recipe.get("timeout", 30.0),
            max_retries=recipe.get("max_retries", 3),
            logprobs_requested=recipe.get("logprobs", "fixed_confidence" not in recipe),
        ))
    raise ConfigurationError(f"agent {agent_index}: unknown kind {kind!r}")


def build_agents(recipes: list[dict], run_seed: int) -> tuple[AgentSpec, ...]:
    specs = []
    for i, recipe in enumerate(recipes):
        backend = build_backend(recipe, run_seed, i)
        specs.append(AgentSpec(
            backend=backend,
            fixed_confidence=recipe.get("fixed_confidence"),
            name=recipe.get("name", f"{recipe.get('kind')}-{i}"),
        ))
        log.debug(f"agent {i}: {specs[-1].name} ({type(backend).__name__})")
    return tuple(specs)
