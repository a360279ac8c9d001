"""Pseudo-regret against the analytically best expert."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..adversary import Trace, expected_arm_loss, AdviceState
from ..core import ArmId, ExpertId, GameConfig, StrategyId

ESTIMATORS = ("realized", "conditional")


def comparator_expected_loss(strategy: StrategyId, cfg: GameConfig) -> tuple[ExpertId, float]:
    """Best expert and its expected cumulative loss over ``cfg.T`` rounds.

    Under S0 that is expert Zero at ``1/2 - eps/2`` per round; under
    S_(u,v) the special expert at ``1/2 - eps``.
    """
    if strategy.is_null:
        return ExpertId.zero(), (0.5 - cfg.epsilon / 2) * cfg.T
    return strategy.special_expert, (0.5 - cfg.epsilon) * cfg.T


def round_regret(arm: ArmId, strategy: StrategyId, epsilon: float, follows_special: bool = False) -> float:
    """Expected one-round pseudo-regret of pulling ``arm`` against the comparator.

    ``follows_special`` says whether ``arm`` is the side the special expert
    advises this round (only matters for arms of the special batch).
    """
    if strategy.is_null:
        return 0.0 if arm.is_zero else epsilon / 2
    if arm.is_zero:
        return epsilon / 2
    if arm.u != strategy.u:
        return epsilon
    return 0.0 if follows_special else 2 * epsilon


def stable_mean(values) -> float:
    values = sorted(float(x) for x in values)
    return math.fsum(values) / len(values)


def stable_stderr(values) -> float:
    values = sorted(float(x) for x in values)
    m = len(values)
    if m < 2:
        return math.nan
    mean = math.fsum(values) / m
    var = math.fsum(sorted((x - mean) ** 2 for x in values)) / (m - 1)
    return math.sqrt(var / m)


@dataclass
class RegretReport:
    mean: float
    stderr: float
    comparator: ExpertId
    comparator_loss: float
    trials: int
    estimator: str = "realized"

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - target) <= sigmas * self.stderr


def trace_losses(trace: Trace, estimator: str = "realized") -> float:
    if estimator == "realized":
        return float(trace.revealed().sum())
    total = []
    for record in trace.records:
        state = AdviceState(record.advice[None])
        total.append(expected_arm_loss(np.array([record.pulled]), trace.strategy, state, trace.cfg.epsilon)[0])
    return math.fsum(total)


def estimate_pseudo_regret(
    data: Union[Sequence[Trace], np.ndarray],
    strategy: StrategyId,
    cfg: GameConfig,
    estimator: str = "realized",
) -> RegretReport:
    """Mean learner loss minus the comparator's exact expected loss.

    ``data`` is either traces or per-trial cumulative losses.  With
    ``estimator="realized"`` those are the losses actually suffered; with
    ``"conditional"`` each round contributes the pulled arm's mean loss given
    that round's advice, which has the same expectation and far less noise.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")
    if len(data) and isinstance(data[0], Trace):
        totals = [trace_losses(t, estimator) for t in data]
        T = len(data[0])
    else:
        totals = [float(x) for x in np.asarray(data)]
        T = cfg.T
    if len(totals) < 2:
        raise ValueError("need at least 2 trials")
    expert, comparator = comparator_expected_loss(strategy, cfg.replace(T=T))
    regrets = [x - comparator for x in totals]
    return RegretReport(stable_mean(regrets), stable_stderr(regrets), expert, comparator, len(totals), estimator)
