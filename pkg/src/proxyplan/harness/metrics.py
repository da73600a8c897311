"""Aggregation of per-seed evaluation records into plot-ready files."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("agent", "interactions", "difficulty", "mean", "ci_half_width", "n_seeds")
CI_METHOD = "normal approximation over seeds: 1.96 * sample std (ddof=1) / sqrt(n); 0 for one seed"


def ci_half_width(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(len(values)))


def summarize(records: list[dict]) -> list[dict]:
    """One row per (agent, interactions, difficulty) with the mean and CI over seeds."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for r in records:
        groups[(r["agent"], int(r["interactions"]), str(r["difficulty"]))].append(float(r["success"]))
    return [
        {"agent": a, "interactions": t, "difficulty": d, "mean": float(np.mean(v)),
         "ci_half_width": ci_half_width(v), "n_seeds": len(v)}
        for (a, t, d), v in sorted(groups.items())
    ]


def _write(path: Path, write) -> None:
    try:
        with open(path, "w", newline="") as fh:
            write(fh)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def export_metrics(records: list[dict], out_dir, metadata: dict | None = None,
                   stem: str = "metrics") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (summary rows) and ``<stem>.json`` (all records plus metadata)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {out}: {e.strerror or e}") from e
    rows = summarize(records)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"

    def write_csv(fh):
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows)

    doc = {"metadata": {"ci_method": CI_METHOD, **(metadata or {})}, "records": records}
    _write(csv_path, write_csv)
    _write(json_path, lambda fh: json.dump(doc, fh, indent=1, sort_keys=True))
    return csv_path, json_path


def load_records(path) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)["records"]


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["interactions"], r["n_seeds"] = int(r["interactions"]), int(r["n_seeds"])
        r["mean"], r["ci_half_width"] = float(r["mean"]), float(r["ci_half_width"])
    return rows
