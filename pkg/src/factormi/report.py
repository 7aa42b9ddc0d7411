"""Comparison tables in the "mean (std)" accuracy style."""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ConfigError, DataError

RUN_FILE = "run.json"


def find_runs(root) -> list[dict]:
    runs = []
    for path in sorted(Path(root).rglob(RUN_FILE)):
        with open(path) as fh:
            run = json.load(fh)
        run["_path"] = str(path)
        runs.append(run)
    return runs


def render_table(rows: list[tuple[str, float, float]]) -> str:
    """Aligned table of (name, mean %, std %) with the best mean starred."""
    if not rows:
        raise DataError("no completed runs to report")
    best = max(range(len(rows)), key=lambda i: rows[i][1])
    width = max(len("Model"), *(len(r[0]) for r in rows))
    lines = [f"{'Model':<{width}}  Accuracy (std)", "-" * (width + 16)]
    for i, (name, mean, std) in enumerate(rows):
        mark = " *" if i == best else ""
        lines.append(f"{name:<{width}}  {mean:.2f} ({std:.2f}){mark}")
    return "\n".join(lines)


def compare_runs(runs: list[dict]) -> tuple[str, dict]:
    """Table text plus a JSON-ready dict. Runs must share a data provenance hash."""
    if not runs:
        raise DataError("no completed runs to report")
    hashes = {r["provenance_hash"] for r in runs}
    if len(hashes) > 1:
        raise ConfigError(f"runs use different dataset provenance hashes {sorted(hashes)}; refusing to compare")
    rows = [(r["summary"]["name"], 100 * r["summary"]["mean"], 100 * r["summary"]["std"]) for r in runs]
    best = max(range(len(rows)), key=lambda i: rows[i][1])
    payload = {"provenance_hash": hashes.pop(),
               "rows": [{"name": n, "mean": m, "std": s, "best": i == best, "run": runs[i]["_path"]}
                        for i, (n, m, s) in enumerate(rows)]}
    return render_table(rows), payload
