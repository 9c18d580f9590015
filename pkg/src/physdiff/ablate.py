"""One-axis sweeps over a base config, repeated over a shared seed set."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, format_config, parse_config
from .tasks import build_setup

log = logging.getLogger(__name__)

ABLATE_COLUMNS = ("axis", "value", "seed", "status", "violation_rate", "mean_abs_residual",
                  "energy_distance", "data_term_mean", "physics_term_mean", "error")
ABLATE_SCHEMA = "ablate/1"


def run_cell(cfg_text: str, axis: str, value: str, seed: int, setup=None) -> dict:
    """Train and evaluate one (value, seed) cell; failures become a marked row."""
    from .train import train

    row = dict.fromkeys(ABLATE_COLUMNS, "")
    row.update(axis=axis, value=value, seed=seed)
    try:
        cfg = parse_config(cfg_text)
        cfg.set(axis, value)
        cfg.set("run.seed", seed)
        cfg.set("run.evaluate", "true")
        cfg.validate()
        res = train(cfg, setup)
        m = res.metrics
        row.update(status="ok", violation_rate=m.violation_rate,
                   mean_abs_residual=m.mean_abs_residual, energy_distance=m.energy_distance,
                   data_term_mean=float(res.history[:, 2].mean()) if len(res.history) else 0.0,
                   physics_term_mean=float(res.history[:, 3].mean()) if len(res.history) else 0.0)
    except Exception as exc:  # a failed cell must not abort the sweep
        log.warning("cell %s=%s seed %s failed: %s", axis, value, seed, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
    return row


def ablate(base: RunConfig, axis: str, values, seeds=(0, 1, 2), out=None,
           jobs: int = 1) -> list[dict]:
    """Sweep ``axis`` over ``values`` for every seed and write the comparison CSV to ``out``."""
    values = [str(v) for v in values]
    if not values:
        raise ValueError("ablate needs at least one value")
    if not seeds:
        raise ValueError("ablate needs at least one seed")
    base.get(axis)  # unknown axis -> ConfigError before any training
    for v in values:
        base.with_overrides({axis: v})
    text = format_config(base)
    cells = [(v, int(s)) for v in values for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, *zip(*[(text, axis, v, s) for v, s in cells])))
    else:
        shared = None
        if not axis.startswith("data."):
            shared = build_setup(base)
        rows = [run_cell(text, axis, v, s, shared) for v, s in cells]
    if out is not None:
        write_rows(out, rows)
    return rows


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_rows(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in ABLATE_COLUMNS])


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def seed_means(rows: list[dict], metric: str) -> dict[str, float]:
    """Mean of ``metric`` per swept value over successful cells."""
    out: dict[str, list[float]] = {}
    for row in rows:
        if row["status"] == "ok":
            out.setdefault(str(row["value"]), []).append(float(row[metric]))
    return {k: float(np.mean(v)) for k, v in out.items()}
