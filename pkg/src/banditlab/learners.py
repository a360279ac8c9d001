"""Learners for the game and the batch-scan identifier for the identification game.

A learner sees the advice as a ``(m, N)`` array of advised arm indices and
answers with one arm per trial::

    learner.reset(cfg, trials, streams)
    arms = learner.choose(advice)
    learner.observe(arms, revealed_losses)

Identifiers (used by :mod:`banditlab.sbi`) instead pick batches and may stop;
see :class:`BatchScan`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .adversary import Strategies, strategy_arrays
from .core import ArmId, GameConfig, RngStream, StrategyId, StreamFactory


class NumericalFault(ArithmeticError):
    pass


class Learner:
    name = "learner"

    def reset(self, cfg: GameConfig, trials: int, streams: StreamFactory) -> None:
        self.cfg = cfg
        self.trials = trials

    def choose(self, advice: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, pulled: np.ndarray, loss: np.ndarray) -> None:
        pass


# -- EXP4 -----------------------------------------------------------------

def default_eta(T: int, K: int, N: int) -> float:
    return math.sqrt(2 * math.log(N) / (T * K))


def default_gamma(T: int, K: int, N: int) -> float:
    return min(1.0, math.sqrt(K * math.log(N) / T))


@dataclass
class Exp4State:
    log_weights: np.ndarray  # (m, N), normalised so that exp(log_weights) sums to N per row
    eta: float
    gamma: float
    K: int

    @classmethod
    def uniform(cls, trials: int, N: int, K: int, eta: float, gamma: float) -> "Exp4State":
        return cls(np.zeros((trials, N)), eta, gamma, K)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def exp4_probs(state: Exp4State, advice: np.ndarray) -> np.ndarray:
    """Arm distribution ``(1-gamma) * advice-weighted mass + gamma/K``, shape ``(m, K)``."""
    logw = state.log_weights
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    m, K = logw.shape[0], state.K
    flat = (advice + K * np.arange(m)[:, None]).ravel()
    mass = np.bincount(flat, weights=w.ravel(), minlength=m * K).reshape(m, K)
    return (1.0 - state.gamma) * mass + state.gamma / K


def exp4_choose(state: Exp4State, advice: np.ndarray, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    probs = exp4_probs(state, advice)
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    arms = np.minimum((cum <= u[:, None]).sum(axis=1), state.K - 1)
    return arms, probs


def exp4_update(
    state: Exp4State,
    advice: np.ndarray,
    pulled: np.ndarray,
    loss: np.ndarray,
    probs: Optional[np.ndarray] = None,
) -> Exp4State:
    """Importance-weighted exponential update.

    The pulled arm's loss estimate is ``loss / p(pulled)`` (zero for every
    other arm) and each expert is charged the estimate of the arm it advised.
    """
    if probs is None:
        probs = exp4_probs(state, advice)
    rows = np.arange(probs.shape[0])
    p_pulled = probs[rows, pulled]
    if (p_pulled < 1e-12).any():
        raise NumericalFault(f"pulled arm probability {p_pulled.min():.3g} below 1e-12")
    estimate = np.asarray(loss, dtype=float) / p_pulled
    charged = np.where(advice == pulled[:, None], estimate[:, None], 0.0)
    logw = state.log_weights - state.eta * charged
    top = logw.max(axis=1, keepdims=True)
    lse = top + np.log(np.exp(logw - top).sum(axis=1, keepdims=True))
    logw = logw - lse + math.log(logw.shape[1])
    return replace(state, log_weights=logw)


class Exp4(Learner):
    name = "exp4"

    def __init__(self, eta: Union[float, str] = "auto", gamma: Union[float, str] = "auto"):
        self.eta = eta
        self.gamma = gamma

    def reset(self, cfg, trials, streams):
        super().reset(cfg, trials, streams)
        eta = default_eta(cfg.T, cfg.K, cfg.N) if self.eta == "auto" else float(self.eta)
        gamma = default_gamma(cfg.T, cfg.K, cfg.N) if self.gamma == "auto" else float(self.gamma)
        self.state = Exp4State.uniform(trials, cfg.N, cfg.K, eta, gamma)
        self.rng = streams("learner")

    def choose(self, advice):
        self._advice = advice
        arms, self._probs = exp4_choose(self.state, advice, self.rng)
        return arms

    def observe(self, pulled, loss):
        self.state = exp4_update(self.state, self._advice, pulled, loss, self._probs)


# -- baselines --------------------------------------------------------------

class UniformLearner(Learner):
    name = "uniform"

    def reset(self, cfg, trials, streams):
        super().reset(cfg, trials, streams)
        self.rng = streams("learner")

    def choose(self, advice):
        return self.rng.integers(0, self.cfg.K, size=self.trials)


class FixedArmLearner(Learner):
    name = "fixed"

    def __init__(self, arm: Union[int, ArmId] = 0):
        self.arm = arm

    def reset(self, cfg, trials, streams):
        super().reset(cfg, trials, streams)
        index = cfg.arm_index(self.arm) if isinstance(self.arm, ArmId) else int(self.arm)
        self._arms = np.full(trials, index, dtype=np.int64)

    def choose(self, advice):
        return self._arms


def oracle_choose(strategy: Strategies, advice: np.ndarray, n: int) -> np.ndarray:
    """Arm advised by the special expert, or arm Zero under S0."""
    su, sv = strategy_arrays(strategy, advice.shape[0])
    special = su > 0
    expert = np.where(special, 1 + (su - 1) * n + (sv - 1), 0)
    return np.where(special, advice[np.arange(advice.shape[0]), expert], 0)


class OracleLearner(Learner):
    """Knows the strategy and copies the comparator's advice."""

    name = "oracle"

    def __init__(self, strategy: Strategies):
        self.strategy = strategy

    def reset(self, cfg, trials, streams):
        super().reset(cfg, trials, streams)
        self._strategy = strategy_arrays(self.strategy, trials)

    def choose(self, advice):
        return oracle_choose(self._strategy, advice, self.cfg.n)


class ProperWrapper(Learner):
    """Feeds the wrapped learner the previous round's advice.

    On the first round every expert appears to advise arm Zero.
    """

    def __init__(self, inner: Learner):
        self.inner = inner
        self.name = f"proper-{inner.name}"

    def reset(self, cfg, trials, streams):
        super().reset(cfg, trials, streams)
        self.inner.reset(cfg, trials, streams)
        self._previous = np.zeros((trials, cfg.N), dtype=np.int64)

    def choose(self, advice):
        stale, self._previous = self._previous, advice.copy()
        return self.inner.choose(stale)

    def observe(self, pulled, loss):
        self.inner.observe(pulled, loss)


def make_learner(spec: Union[str, dict], strategy: Optional[Strategies] = None) -> Learner:
    """Build a learner from ``{"learner": name, ...}`` (or just the name)."""
    if isinstance(spec, str):
        spec = {"learner": spec}
    kind = spec.get("learner")
    if kind == "exp4":
        learner = Exp4(spec.get("eta", "auto"), spec.get("gamma", "auto"))
    elif kind == "uniform":
        learner = UniformLearner()
    elif kind == "zero":
        learner = FixedArmLearner(0)
    elif kind == "fixed":
        learner = FixedArmLearner(int(spec.get("arm", 0)))
    elif kind == "oracle":
        if strategy is None:
            raise ValueError("oracle learner needs the strategy")
        learner = OracleLearner(strategy)
    else:
        raise ValueError(f"unknown learner {kind!r}")
    if spec.get("proper"):
        learner = ProperWrapper(learner)
    return learner


def learner_label(spec: Union[str, dict]) -> str:
    if isinstance(spec, str):
        return spec
    label = spec["learner"]
    if label == "fixed":
        label += f"{spec.get('arm', 0)}"
    if spec.get("proper"):
        label = "proper-" + label
    return label


# -- identification ---------------------------------------------------------

def batch_scan_budget(n: int, epsilon: float, delta: float = 0.01) -> int:
    """Per-batch round budget ``ceil(8 ln(n/delta) / epsilon^2)``."""
    return math.ceil(8 * math.log(n / delta) / epsilon**2)


class BatchScan:
    """Scan batches one at a time, counting how often each expert calls the correct arm.

    Batch ``u`` is pulled ``budget`` times in a row.  If some expert of the
    batch matched the correct side at least ``threshold`` times, ``u`` is
    declared special; otherwise the scan moves on, and after the last batch
    the answer is batch 0.

    Identifier protocol: ``select(advice_bits)`` returns the batch to pull
    per trial (0 once a trial has stopped); ``observe(batches, correct)``
    takes the correct side of the pulled batch.  ``done`` and ``output``
    hold the stopping state.
    """

    def __init__(self, budget: int, threshold: Optional[float] = None, epsilon: Optional[float] = None):
        if budget < 0:
            raise ValueError("budget must be >= 0")
        self.budget = int(budget)
        self.threshold = threshold
        self.epsilon = epsilon

    def reset(self, cfg: GameConfig, trials: int, streams: Optional[StreamFactory] = None):
        self.k, self.n = cfg.k, cfg.n
        eps = cfg.epsilon if self.epsilon is None else self.epsilon
        self.theta = self.budget / 2 + eps / 2 * self.budget if self.threshold is None else self.threshold
        self.pointer = np.ones(trials, dtype=np.int64)
        self.spent = np.zeros(trials, dtype=np.int64)
        self.counts = np.zeros((trials, cfg.n), dtype=np.int64)
        self.done = np.zeros(trials, dtype=bool)
        self.output = np.zeros(trials, dtype=np.int64)
        if self.budget == 0:
            self.done[:] = True

    def select(self, advice_bits: np.ndarray) -> np.ndarray:
        self._advice = advice_bits
        return np.where(self.done, 0, self.pointer)

    def observe(self, batches: np.ndarray, correct: np.ndarray, sides: Optional[np.ndarray] = None) -> None:
        """``sides`` given means ``correct`` holds raw losses of arm ``(u, side)``."""
        rows = np.flatnonzero(batches > 0)
        if not rows.size:
            return
        c = correct[rows] if sides is None else correct[rows] ^ sides[rows]
        advice = self._advice[rows, batches[rows] - 1, :]
        self.counts[rows] += advice == c[:, None]
        self.spent[rows] += 1
        finished = rows[self.spent[rows] >= self.budget]
        if not finished.size:
            return
        declare = self.counts[finished].max(axis=1) >= self.theta
        hit = finished[declare]
        self.done[hit] = True
        self.output[hit] = self.pointer[hit]
        miss = finished[~declare]
        self.pointer[miss] += 1
        self.spent[miss] = 0
        self.counts[miss] = 0
        exhausted = miss[self.pointer[miss] > self.k]
        self.done[exhausted] = True
        self.output[exhausted] = 0
