"""Log-log slope fits of mean regret against the horizon or against K log(N/K)."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

AXES = ("T", "K-logNK")


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    residuals: list
    points: int
    excluded: int = 0
    axis: str = "T"
    label: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def axis_value(row: dict, axis: str) -> float:
    if axis == "T":
        return float(row["T"])
    if axis == "K-logNK":
        return row["K"] * math.log(row["N"] / row["K"])
    raise ValueError(f"axis must be one of {AXES}")


def fit_scaling(x: Sequence[float], y: Sequence[float], axis: str = "T", level: float = 0.95, label: str = "") -> ScalingFit:
    """OLS of ``log y`` on ``log x``; non-positive ``y`` are dropped with a warning."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (y > 0) & (x > 0)
    excluded = int((~keep).sum())
    if excluded:
        log.warning("dropping %d non-positive points from the fit", excluded)
    x, y = x[keep], y[keep]
    if len(x) < 4:
        raise ValueError(f"need at least 4 positive points, have {len(x)}")
    lx, ly = np.log(x), np.log(y)
    res = stats.linregress(lx, ly)
    slope = float(res.slope)
    stderr = float(res.stderr)
    half = stats.t.ppf(0.5 + level / 2, len(x) - 2) * stderr
    residuals = (ly - (res.intercept + slope * lx)).tolist()
    return ScalingFit(slope, float(res.intercept), stderr, slope - half, slope + half, residuals, len(x), excluded, axis, label)


def fit_summary(rows: Sequence[dict], axis: str = "T") -> list[ScalingFit]:
    """One fit per (strategy, learner) series, plus the dimensions not on the axis."""
    groups = defaultdict(list)
    for row in rows:
        key = (row["strategy"], row["learner"]) + ((row["K"], row["N"]) if axis == "T" else (row["T"],))
        groups[key].append(row)
    fits = []
    for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
        members.sort(key=lambda r: axis_value(r, axis))
        label = "|".join(str(k) for k in key)
        fits.append(fit_scaling(
            [axis_value(r, axis) for r in members],
            [r["mean_regret"] for r in members],
            axis=axis,
            label=label,
        ))
    return fits


def plot_series(rows: Sequence[dict]) -> dict:
    """Summary rows regrouped as ``{series: [{T, mean_regret, stderr, epsilon}, ...]}``."""
    series = defaultdict(list)
    for row in rows:
        name = f"{row['learner']}|{row['strategy']}|K={row['K']}|N={row['N']}"
        series[name].append({
            "T": row["T"],
            "epsilon": row["epsilon"],
            "mean_regret": row["mean_regret"],
            "stderr": row["stderr"],
        })
    return {name: sorted(points, key=lambda p: p["T"]) for name, points in sorted(series.items())}
