"""Grid sweeps: cells x trials, split into fixed work units so results do not depend on the worker count."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..adversary import Environment
from ..core import ConfigError, GameConfig, StrategyId, StreamFactory, derive_reduced_dims
from ..learners import learner_label, make_learner
from .regret import ESTIMATORS, comparator_expected_loss, stable_mean, stable_stderr

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["K", "N", "T", "epsilon", "strategy", "learner", "trials", "mean_regret", "stderr", "comparator"]
TRIAL_COLUMNS = ["cell", "trial", "seed", "realized_loss", "comparator_loss", "regret"]


def theorem1_epsilon(K: int, N: int, T: int) -> float:
    """``sqrt(k ln(n/10) / (100 T))``; needs ``n > 10``."""
    k, n, _ = derive_reduced_dims(K, N)
    if n <= 10:
        raise ConfigError(f"auto epsilon needs n > 10, got n={n} for K={K}, N={N}")
    return math.sqrt(k * math.log(n / 10) / (100 * T))


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


@dataclass
class Cell:
    index: int
    K: int
    N: int
    T: int
    epsilon: float
    strategy: StrategyId
    learner: dict

    def config(self, seed: int) -> GameConfig:
        return GameConfig(self.K, self.N, self.T, self.epsilon, seed)


@dataclass
class ExperimentSpec:
    K: list
    N: list
    T: list
    epsilon: list  # floats and/or "theorem1"
    strategies: list
    learners: list
    trials: int = 10
    seed: int = 0
    output_dir: str = "results"
    parallelism: Optional[int] = None
    chunk: int = 50
    estimator: str = "realized"
    trial_log: bool = True
    traces: bool = False

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        grid = obj.get("grid", obj)
        try:
            spec = cls(
                K=_as_list(grid.get("K", [])),
                N=_as_list(grid.get("N", [])),
                T=_as_list(grid.get("T", [])),
                epsilon=_as_list(grid.get("epsilon", [])),
                strategies=[StrategyId.from_json(s) for s in _as_list(grid.get("strategies", ["S0"]))],
                learners=[s if isinstance(s, dict) else {"learner": s} for s in _as_list(grid.get("learners", ["exp4"]))],
                trials=int(obj.get("trials", 10)),
                seed=int(obj.get("seed", 0)),
                output_dir=str(obj.get("output_dir", "results")),
                parallelism=obj.get("parallelism"),
                chunk=int(obj.get("chunk", 50)),
                estimator=obj.get("estimator", "realized"),
                trial_log=bool(obj.get("trial_log", True)),
                traces=bool(obj.get("traces", False)),
            )
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad experiment spec: {exc}") from exc
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentSpec":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"spec file not found: {path}")
        try:
            return cls.from_json(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def validate(self) -> None:
        errors = []
        if self.trials < 1:
            errors.append("trials must be >= 1")
        if self.chunk < 1:
            errors.append("chunk must be >= 1")
        if self.estimator not in ESTIMATORS:
            errors.append(f"estimator must be one of {ESTIMATORS}")
        for e in self.epsilon:
            if e != "theorem1" and not (isinstance(e, (int, float)) and 0 <= e <= 0.1):
                errors.append(f"epsilon {e!r} must be a number in [0, 0.1] or 'theorem1'")
        for learner in self.learners:
            try:
                make_learner(learner, StrategyId())
            except ValueError as exc:
                errors.append(str(exc))
        if errors:
            raise ConfigError(errors)
        self.cells()  # dimension / auto-epsilon / strategy checks

    def cells(self) -> list[Cell]:
        cells = []
        combos = itertools.product(self.K, self.N, self.T, self.epsilon, self.strategies, self.learners)
        for K, N, T, eps, strategy, learner in combos:
            K, N, T = int(K), int(N), int(T)
            eps = theorem1_epsilon(K, N, T) if eps == "theorem1" else float(eps)
            cfg = GameConfig(K, N, T, eps, self.seed)
            cfg.check_strategy(strategy)
            cells.append(Cell(len(cells), K, N, T, eps, strategy, learner))
        return cells

    def units(self) -> list[tuple[Cell, int, int]]:
        """(cell, chunk index, trials in chunk)."""
        out = []
        for cell in self.cells():
            for chunk, start in enumerate(range(0, self.trials, self.chunk)):
                out.append((cell, chunk, min(self.chunk, self.trials - start)))
        return out


def run_unit(cell: Cell, chunk: int, trials: int, seed: int, record: bool = False):
    """Simulate one work unit; returns per-trial realised and conditional-mean losses (and traces)."""
    cfg = cell.config(seed)
    key = (cell.index, chunk)
    env = Environment(cfg, cell.strategy, trials, key, record=record)
    learner = make_learner(cell.learner, cell.strategy)
    learner.reset(cfg, trials, StreamFactory(seed, key))
    env.run(learner)
    return env.cum_loss.astype(float), env.cum_mean_loss.copy(), env.traces


def _run_unit_safe(args):
    cell, chunk, trials, seed, record = args
    try:
        return run_unit(cell, chunk, trials, seed, record), None
    except Exception as exc:  # reported per cell, sweep continues
        return None, f"{type(exc).__name__}: {exc}"


def worker_count(spec: ExperimentSpec) -> int:
    if spec.parallelism is not None:
        return max(1, int(spec.parallelism))
    env = os.environ.get("BANDITLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


@dataclass
class SweepResult:
    summary: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)


def run_sweep(spec: ExperimentSpec, output_dir: Optional[Union[str, Path]] = None) -> SweepResult:
    out = Path(output_dir or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    units = spec.units()
    jobs = [(cell, chunk, trials, spec.seed, spec.traces) for cell, chunk, trials in units]
    workers = worker_count(spec)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_unit_safe, jobs))
    else:
        outcomes = [_run_unit_safe(job) for job in jobs]

    by_cell: dict = {}
    failed: dict = {}
    for (cell, chunk, trials), (payload, error) in zip(units, outcomes):
        if error is not None:
            failed.setdefault(cell.index, error)
            log.warning("cell %d chunk %d failed: %s", cell.index, chunk, error)
            continue
        by_cell.setdefault(cell.index, (cell, []))[1].append((chunk, payload))

    result = SweepResult()
    for index in sorted(by_cell):
        if index in failed:
            continue
        cell, parts = by_cell[index]
        parts.sort(key=lambda item: item[0])
        realized = np.concatenate([p[0] for _, p in parts])
        conditional = np.concatenate([p[1] for _, p in parts])
        cfg = cell.config(spec.seed)
        expert, comparator = comparator_expected_loss(cell.strategy, cfg)
        used = realized if spec.estimator == "realized" else conditional
        regrets = used - comparator
        result.summary.append({
            "K": cell.K,
            "N": cell.N,
            "T": cell.T,
            "epsilon": cell.epsilon,
            "strategy": str(cell.strategy),
            "learner": learner_label(cell.learner),
            "trials": len(regrets),
            "mean_regret": stable_mean(regrets),
            "stderr": stable_stderr(regrets),
            "comparator": str(expert),
        })
        for i, (loss, regret) in enumerate(zip(realized, regrets)):
            result.trials.append({
                "cell": cell.index,
                "trial": i,
                "seed": spec.seed,
                "realized_loss": loss,
                "comparator_loss": comparator,
                "regret": regret,
            })
        if spec.traces:
            trace_dir = out / "traces"
            trace_dir.mkdir(exist_ok=True)
            i = 0
            for _, payload in parts:
                for trace in payload[2]:
                    trace.to_csv(trace_dir / f"cell{cell.index}_trial{i}.csv")
                    i += 1
    result.errors = [{"cell": i, "error": e} for i, e in sorted(failed.items())]

    result.paths["summary"] = _write_csv(out / "summary.csv", SUMMARY_COLUMNS, result.summary)
    if spec.trial_log:
        result.paths["trials"] = _write_csv(out / "trials.csv", TRIAL_COLUMNS, result.trials)
    if result.errors:
        result.paths["errors"] = _write_csv(out / "errors.csv", ["cell", "error"], result.errors)
    return result


def _write_csv(path: Path, columns, rows) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def read_summary(path: Union[str, Path]) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"summary file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("K", "N", "T", "trials"):
            row[key] = int(row[key])
        for key in ("epsilon", "mean_regret", "stderr"):
            row[key] = float(row[key])
    return rows
