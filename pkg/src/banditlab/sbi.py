"""Special batch identification: stop-anytime runs, the argmax reduction and the one-batch embedding."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .adversary import Environment, ProtocolViolation, Strategies, strategy_arrays
from .core import GameConfig, StrategyId, StreamFactory, init_streams_for_batches

DEFAULT_ROUND_CAP = 10**8


@dataclass
class SbiResult:
    output: np.ndarray  # (m,) predicted special batch
    stopping_round: np.ndarray  # (m,)
    pulls: np.ndarray  # (m, k+1), column 0 is arm Zero
    truth: np.ndarray  # (m,) actual special batch
    truncated: np.ndarray  # (m,) bool
    strategies: list = field(default_factory=list)
    loss: Optional[np.ndarray] = None  # realised cumulative loss (reductions only)
    mean_loss: Optional[np.ndarray] = None  # cumulative conditional mean loss (reductions only)
    inner_output: Optional[np.ndarray] = None  # embedding: big-instance answer
    inner_steps: Optional[np.ndarray] = None  # embedding: big-instance rounds

    @property
    def correct(self) -> np.ndarray:
        return self.output == self.truth

    @property
    def accuracy(self) -> float:
        return float(self.correct.mean())

    @property
    def trials(self) -> int:
        return len(self.output)

    def to_rows(self):
        for i in range(self.trials):
            yield {
                "strategy": str(self.strategies[i]),
                "trial": i,
                "output": int(self.output[i]),
                "stopping_round": int(self.stopping_round[i]),
                "T_u": " ".join(str(int(x)) for x in self.pulls[i]),
                "correct": int(self.correct[i]),
            }


SBI_COLUMNS = ["strategy", "trial", "output", "stopping_round", "T_u", "correct"]


def write_sbi_csv(results: Sequence[SbiResult], path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SBI_COLUMNS)
        writer.writeheader()
        for result in results:
            writer.writerows(result.to_rows())
    return path


def _strategy_list(strategy: Strategies, trials: int) -> list:
    return [strategy] * trials if isinstance(strategy, StrategyId) else list(strategy)


def run_sbi(
    identifier,
    strategy: Strategies,
    cfg: GameConfig,
    trials: int = 1,
    trial=0,
    cap: int = DEFAULT_ROUND_CAP,
    observation: str = "bit",
) -> SbiResult:
    """Play the identification game until every trial's identifier stops.

    With ``observation="bit"`` the identifier receives the correct side of
    the batch it pulled.  With ``"raw"`` the runner pulls arm ``(u, side)``
    for a random side and hands over that arm's loss together with the side.
    Trials still running after ``cap`` rounds are truncated with output 0.
    """
    if observation not in ("bit", "raw"):
        raise ValueError(f"unknown observation mode {observation!r}")
    env = Environment(cfg, strategy, trials, trial)
    streams = StreamFactory(cfg.seed, trial)
    identifier.reset(cfg, trials, streams)
    side_rng = streams("sbi-side")
    truncated = np.zeros(trials, dtype=bool)
    rows = np.arange(trials)
    steps = 0
    while True:
        batches = np.asarray(identifier.select(env.advice.bits))
        running = ~identifier.done
        if not running.any():
            break
        if steps >= cap:
            truncated = running.copy()
            break
        bad = running & ((batches < 1) | (batches > cfg.k))
        if bad.any():
            raise ProtocolViolation(f"identifier pulled batch {batches[np.flatnonzero(bad)[0]]}; only 1..{cfg.k} allowed")
        batches = np.where(running, batches, 0)
        sides = side_rng.bits(trials) if observation == "raw" else np.zeros(trials, dtype=np.uint8)
        pulled = np.where(running, 2 * batches - 1 + sides, 0)
        draw, revealed = env.step(pulled, running)
        if observation == "raw":
            identifier.observe(batches, revealed.astype(np.uint8), sides)
        else:
            obs = draw.correct[rows, np.maximum(batches, 1) - 1]
            identifier.observe(batches, obs)
        steps += 1
    su, _ = strategy_arrays(strategy, trials)
    output = np.where(truncated, 0, identifier.output)
    return SbiResult(
        output=output,
        stopping_round=env.rounds.copy(),
        pulls=env.batch_pulls(),
        truth=su,
        truncated=truncated,
        strategies=_strategy_list(strategy, trials),
    )


def argmax_batch(pulls: np.ndarray) -> np.ndarray:
    """Most pulled batch per row, ties to the lowest index."""
    return np.argmax(pulls, axis=-1)


def sbi_reduce(learner, T_star: int, strategy: Strategies, cfg: GameConfig, trials: int = 1, trial=0) -> SbiResult:
    """Run a regret learner for ``T_star`` rounds and answer with its most pulled batch."""
    if T_star < 1:
        raise ValueError("T_star must be >= 1")
    env = Environment(cfg, strategy, trials, trial)
    learner.reset(cfg, trials, StreamFactory(cfg.seed, trial))
    env.run(learner, T_star)
    pulls = env.batch_pulls()
    su, _ = strategy_arrays(strategy, trials)
    return SbiResult(
        output=argmax_batch(pulls),
        stopping_round=env.rounds.copy(),
        pulls=pulls,
        truth=su,
        truncated=np.zeros(trials, dtype=bool),
        strategies=_strategy_list(strategy, trials),
        loss=env.cum_loss.astype(float),
        mean_loss=env.cum_mean_loss.copy(),
    )


@dataclass
class GoodnessReport:
    accuracy: dict  # str(strategy) -> accuracy
    trials: dict
    radius: dict  # 3-sigma binomial radius per strategy

    @property
    def min_accuracy(self) -> float:
        return min(self.accuracy.values())

    @property
    def good(self) -> bool:
        return self.min_accuracy >= 0.95

    @property
    def meets_099(self) -> bool:
        return self.min_accuracy >= 0.99


def goodness(results: Sequence[SbiResult]) -> GoodnessReport:
    """Accuracy per strategy pooled over the given results."""
    hits, counts = {}, {}
    for result in results:
        for s, ok in zip(result.strategies, result.correct):
            key = str(s)
            hits[key] = hits.get(key, 0) + int(ok)
            counts[key] = counts.get(key, 0) + 1
    accuracy = {key: hits[key] / counts[key] for key in counts}
    radius = {key: 3 * math.sqrt(a * (1 - a) / counts[key]) for key, a in accuracy.items()}
    return GoodnessReport(accuracy, counts, radius)


@dataclass
class BoundCheckReport:
    displacement: float  # mean of T_star - T_{u*}
    displacement_lhs: float  # epsilon/2 * displacement
    regret: float  # realised pseudo-regret estimate
    regret_stderr: float
    holds: bool


def pull_fraction_bound_check(
    learner,
    strategy: StrategyId,
    cfg: GameConfig,
    T_star: int,
    trials: int = 100,
    trial=0,
) -> BoundCheckReport:
    """Check ``epsilon/2 * E[T_star - T_{u*}] <= pseudo-regret`` on one set of runs."""
    from .harness.regret import comparator_expected_loss

    result = sbi_reduce(learner, T_star, strategy, cfg, trials, trial)
    displacement = T_star - result.pulls[np.arange(trials), result.truth]
    _, comparator = comparator_expected_loss(strategy, cfg.replace(T=T_star))
    regret = result.loss - comparator
    mean_disp = math.fsum(sorted(displacement)) / trials
    mean_regret = math.fsum(sorted(regret)) / trials
    stderr = float(np.std(regret, ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    lhs = cfg.epsilon / 2 * mean_disp
    return BoundCheckReport(mean_disp, lhs, mean_regret, stderr, lhs <= mean_regret + 3 * stderr)


def embed_one_batch(
    identifier,
    big_cfg: GameConfig,
    u: int,
    small_cfg: GameConfig,
    strategy_small: StrategyId,
    trials: int = 1,
    trial=0,
    cap: int = DEFAULT_ROUND_CAP,
) -> SbiResult:
    """Run a big-instance identifier on a one-batch instance through batch ``u``.

    The small instance's batch 1 plays the role of the big instance's batch
    ``u``; every other batch is simulated here (fresh advice on pull, correct
    side a fair coin).  Small rounds advance only when the identifier queries
    ``u``.  An answer of ``u`` maps to 1, anything else to 0.
    """
    if small_cfg.k != 1 or small_cfg.n != big_cfg.n:
        raise ValueError("small instance must have k=1 and the same n as the big one")
    if not 1 <= u <= big_cfg.k:
        raise ValueError(f"batch {u} outside 1..{big_cfg.k}")
    small_cfg.check_strategy(strategy_small)
    env = Environment(small_cfg, strategy_small, trials, trial)
    streams = StreamFactory(big_cfg.seed, trial)
    advice_streams = init_streams_for_batches(streams, "embed-advice", big_cfg.k)
    correct_streams = init_streams_for_batches(streams, "embed-correct", big_cfg.k)
    own = np.zeros((trials, big_cfg.k, big_cfg.n), dtype=np.uint8)
    for w in range(1, big_cfg.k + 1):
        if w != u:
            own[:, w - 1, :] = advice_streams[w].bits((trials, big_cfg.n))
    identifier.reset(big_cfg, trials, streams)
    truncated = np.zeros(trials, dtype=bool)
    big_steps = np.zeros(trials, dtype=np.int64)
    steps = 0
    while True:
        shown = own.copy()
        shown[:, u - 1, :] = env.advice.bits[:, 0, :]
        batches = np.asarray(identifier.select(shown))
        running = ~identifier.done
        if not running.any():
            break
        if steps >= cap:
            truncated = running.copy()
            break
        bad = running & ((batches < 1) | (batches > big_cfg.k))
        if bad.any():
            raise ProtocolViolation("identifier pulled outside 1..k")
        batches = np.where(running, batches, 0)
        correct = np.zeros(trials, dtype=np.uint8)
        to_small = batches == u
        if to_small.any():
            draw, _ = env.step(np.where(to_small, 1, 0), to_small)
            correct[to_small] = draw.correct[to_small, 0]
        for w in range(1, big_cfg.k + 1):
            if w == u:
                continue
            rows = np.flatnonzero(batches == w)
            if rows.size:
                correct[rows] = correct_streams[w].bits(rows.size)
                own[rows, w - 1, :] = advice_streams[w].bits((rows.size, big_cfg.n))
        identifier.observe(batches, correct)
        big_steps += running
        steps += 1
    inner = np.where(truncated, 0, identifier.output)
    return SbiResult(
        output=np.where(inner == u, 1, 0),
        stopping_round=env.rounds.copy(),
        pulls=env.batch_pulls(),
        truth=np.full(trials, strategy_small.u, dtype=np.int64),
        truncated=truncated,
        strategies=[strategy_small] * trials,
        inner_output=inner,
        inner_steps=big_steps,
    )
