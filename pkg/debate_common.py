"""
Shared helpers for the debate modules.

What this file contains:
- `token_char_spans(...)`: the whitespace tokenizer every backend shares, as
  (start_char, end_char) pairs.
- `derive_seed(...)`: turns a base seed plus coordinates (problem, round,
  agent) into an independent 64-bit seed.
- `write_jsonl(...)` / `read_jsonl(...)`: newline-delimited JSON with
  de-duplication on a key column, later rows winning.
- `canonical_json(...)`: the byte-stable JSON encoding used for transcripts
  and reports.
"""

import json
import logging
import re
from pathlib import Path

import numpy as np

log = logging.getLogger("debate-common")

_TOKEN_RE = re.compile(r"\S+")


def token_char_spans(text: str) -> list[tuple[int, int]]:
    """Whitespace-delimited token spans of `text`, in order."""
    return [(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def derive_seed(base: int, *coords: int) -> int:
    """Independent 64-bit seed for (base, *coords); stable across runs and platforms."""
    seq = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *[int(c) for c in coords]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: Path, rows: list[dict], key: str | None = None) -> int:
    """Write rows as JSONL. With `key`, duplicate keys collapse to the last row seen."""
    if key is not None:
        seen = {}
        for row in rows:
            seen[row[key]] = row
        deduped = list(seen.values())
        dropped = len(rows) - len(deduped)
        if dropped:
            log.info(f"  🔄 Removed {dropped} duplicate rows before writing {path.name}")
        rows = deduped

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row))
            fh.write("\n")
    return len(rows)


def read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {e}") from e
    return rows
