"""The adaptive adversary: advice with refresh-on-pull and per-strategy binary losses.

Everything here runs ``m`` independent trials in lockstep: advice is a
``(m, k, n)`` bit array, losses a ``(m, K)`` array, pulled arms a ``(m,)``
index vector.  A single trial is just ``m == 1``.

Correct arms are stored as one side bit per batch: ``correct[:, u-1] == c``
means arm ``(u, c)`` has loss 0, so ``loss(u, 0) == c`` and
``loss(u, 1) == 1 - c``.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import GameConfig, RngStream, StrategyId, StreamFactory

Strategies = Union[StrategyId, Sequence[StrategyId], "StrategyArrays"]


class ProtocolViolation(RuntimeError):
    """A learner returned something that is not an arm of the game."""


@dataclass
class AdviceState:
    bits: np.ndarray  # (m, k, n) uint8; bits[:, u-1, v-1] is the side advised by expert (u, v)

    @property
    def trials(self) -> int:
        return self.bits.shape[0]

    @property
    def k(self) -> int:
        return self.bits.shape[1]

    @property
    def n(self) -> int:
        return self.bits.shape[2]

    def arms(self, N: Optional[int] = None) -> np.ndarray:
        """Advised arm index per expert, shape ``(m, N)``.

        Expert Zero and padded experts advise arm 0.
        """
        m, k, n = self.bits.shape
        N = k * n + 1 if N is None else N
        out = np.zeros((m, N), dtype=np.int64)
        base = (1 + 2 * np.arange(k, dtype=np.int64))[None, :, None]
        out[:, 1 : k * n + 1] = (base + self.bits).reshape(m, k * n)
        return out

    def copy(self) -> "AdviceState":
        return AdviceState(self.bits.copy())

    def digest(self, row: int = 0) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.bits[row]).tobytes()).hexdigest()[:16]


class StrategyArrays(NamedTuple):
    """Per-trial special batch ``su`` and special expert ``sv`` (both 0 under S0)."""

    su: np.ndarray
    sv: np.ndarray


def strategy_arrays(strategy: Strategies, trials: int) -> StrategyArrays:
    if isinstance(strategy, StrategyArrays):
        return strategy
    if isinstance(strategy, StrategyId):
        return StrategyArrays(np.full(trials, strategy.u, dtype=np.int64), np.full(trials, strategy.v, dtype=np.int64))
    strategy = list(strategy)
    if len(strategy) != trials:
        raise ValueError(f"got {len(strategy)} strategies for {trials} trials")
    return StrategyArrays(
        np.array([s.u for s in strategy], dtype=np.int64),
        np.array([s.v for s in strategy], dtype=np.int64),
    )


def batch_of_arm(pulled: np.ndarray, k: int) -> np.ndarray:
    """Batch owning each arm index; 0 for arm Zero and padded arms."""
    pulled = np.asarray(pulled)
    inside = (pulled >= 1) & (pulled <= 2 * k)
    return np.where(inside, (pulled - 1) // 2 + 1, 0)


def init_advice(cfg: GameConfig, streams: Sequence[RngStream], trials: int = 1) -> AdviceState:
    """Fresh advice; ``streams[u]`` supplies the bits of batch ``u`` (``streams[0]`` unused)."""
    bits = np.empty((trials, cfg.k, cfg.n), dtype=np.uint8)
    for u in range(1, cfg.k + 1):
        bits[:, u - 1, :] = streams[u].bits((trials, cfg.n))
    return AdviceState(bits)


def refresh_advice(
    state: AdviceState,
    pulled: np.ndarray,
    streams: Sequence[RngStream],
    active: Optional[np.ndarray] = None,
    inplace: bool = False,
) -> AdviceState:
    """Redraw the advice of every batch that was pulled; leave the rest untouched."""
    pulled_batch = batch_of_arm(pulled, state.k)
    if active is not None:
        pulled_batch = np.where(active, pulled_batch, 0)
    new = state if inplace else state.copy()
    for u in range(1, state.k + 1):
        rows = np.flatnonzero(pulled_batch == u)
        if rows.size:
            new.bits[rows, u - 1, :] = streams[u].bits((rows.size, state.n))
    return new


@dataclass
class LossDraw:
    losses: np.ndarray  # (m, K) int8
    correct: np.ndarray  # (m, k) uint8 correct side per batch


def draw_correct(
    strategy: Strategies,
    state: AdviceState,
    epsilon: float,
    streams: Sequence[RngStream],
) -> tuple[np.ndarray, np.ndarray]:
    """Loss of arm Zero and the correct side of every batch, one round."""
    m, k, _ = state.bits.shape
    su, sv = strategy_arrays(strategy, m)
    zero_loss = (streams[0].random(m) < 0.5 - epsilon / 2).astype(np.int8)
    correct = np.empty((m, k), dtype=np.uint8)
    for u in range(1, k + 1):
        draw = streams[u].random(m)
        c = (draw < 0.5).astype(np.uint8)
        rows = np.flatnonzero(su == u)
        if rows.size:
            advised = state.bits[rows, u - 1, sv[rows] - 1]
            c[rows] = np.where(draw[rows] < 0.5 + epsilon, advised, 1 - advised)
        correct[:, u - 1] = c
    return zero_loss, correct


def assemble_losses(zero_loss: np.ndarray, correct: np.ndarray, K: int) -> np.ndarray:
    m, k = correct.shape
    losses = np.ones((m, K), dtype=np.int8)
    losses[:, 0] = zero_loss
    losses[:, 1 : 2 * k + 1 : 2] = correct
    losses[:, 2 : 2 * k + 2 : 2] = 1 - correct
    return losses


def draw_losses(
    strategy: Strategies,
    state: AdviceState,
    epsilon: float,
    streams: Sequence[RngStream],
    K: Optional[int] = None,
) -> LossDraw:
    """One round of losses for every arm.

    ``streams[0]`` drives arm Zero and ``streams[u]`` batch ``u``, one
    uniform per batch whatever the strategy.  Arm Zero and the non-special
    batches therefore get the same draws under every strategy.
    """
    K = 2 * state.k + 1 if K is None else K
    zero_loss, correct = draw_correct(strategy, state, epsilon, streams)
    return LossDraw(assemble_losses(zero_loss, correct, K), correct)


def expected_arm_loss(
    pulled: np.ndarray,
    strategy: Strategies,
    state: AdviceState,
    epsilon: float,
) -> np.ndarray:
    """Mean loss of the pulled arm given the round's advice (before losses are drawn)."""
    pulled = np.asarray(pulled)
    m, k, _ = state.bits.shape
    su, sv = strategy_arrays(strategy, m)
    out = np.full(m, 0.5)
    out[pulled == 0] = 0.5 - epsilon / 2
    out[pulled > 2 * k] = 1.0
    batch = batch_of_arm(pulled, k)
    rows = np.flatnonzero((batch > 0) & (batch == su))
    if rows.size:
        advised = state.bits[rows, su[rows] - 1, sv[rows] - 1]
        side = (pulled[rows] - 1) % 2
        out[rows] = np.where(side == advised, 0.5 - epsilon, 0.5 + epsilon)
    return out


@dataclass
class RoundRecord:
    t: int
    advice: np.ndarray  # (k, n)
    pulled: int
    losses: np.ndarray  # (K,)
    revealed: int

    @property
    def correct_bits(self) -> str:
        k = self.advice.shape[0]
        return "".join(str(int(x)) for x in self.losses[1 : 2 * k + 1 : 2])


@dataclass
class Trace:
    cfg: GameConfig
    strategy: StrategyId
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def pulled(self) -> np.ndarray:
        return np.array([r.pulled for r in self.records], dtype=np.int64)

    def revealed(self) -> np.ndarray:
        return np.array([r.revealed for r in self.records], dtype=np.int64)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "I_t", "loss_pulled", "correct_bits", "advice_hash"])
            for r in self.records:
                arm = self.cfg.arm_of(r.pulled)
                writer.writerow([
                    r.t,
                    str(arm) if arm is not None else f"pad{r.pulled}",
                    r.revealed,
                    r.correct_bits,
                    hashlib.sha1(np.ascontiguousarray(r.advice).tobytes()).hexdigest()[:16],
                ])
        return path

    def to_jsonl(self, path: Union[str, Path], max_rounds: int = 100_000) -> Path:
        if len(self.records) > max_rounds:
            raise ValueError(f"trace has {len(self.records)} rounds; advice export capped at {max_rounds}")
        path = Path(path)
        with path.open("w") as fh:
            for r in self.records:
                fh.write(json.dumps({"t": r.t, "advice": r.advice.tolist()}) + "\n")
        return path


class Environment:
    """``trials`` lockstep copies of the game against one (or per-trial) strategy.

    Streams are labelled ``("advice", u, trial)`` and ``("loss", u, trial)``
    so that each batch owns its randomness.  A round is
    :meth:`resolve` (draw and book losses for the chosen arms) followed by
    :meth:`refresh` (new advice for pulled batches); :meth:`step` does both.
    """

    def __init__(
        self,
        cfg: GameConfig,
        strategy: Strategies = StrategyId(),
        trials: int = 1,
        trial=0,
        record: bool = False,
    ):
        self.cfg = cfg
        self.trials = trials
        self.trial_key = trial
        self.strategy = strategy_arrays(strategy, trials)
        if self.strategy.su.max(initial=0) > cfg.k or self.strategy.sv.max(initial=0) > cfg.n:
            raise ValueError("strategy outside the batch structure")
        streams = StreamFactory(cfg.seed, trial)
        self.advice_streams = [None] + [streams("advice", u) for u in range(1, cfg.k + 1)]
        self.loss_streams = [streams("loss", u) for u in range(0, cfg.k + 1)]
        self.advice = init_advice(cfg, self.advice_streams, trials)
        self._arms = self.advice.arms(cfg.N)
        self.t = 0
        self.rounds = np.zeros(trials, dtype=np.int64)
        self.cum_loss = np.zeros(trials, dtype=np.int64)
        self.cum_mean_loss = np.zeros(trials)
        self.pulls = np.zeros((trials, cfg.K), dtype=np.int64)
        self.traces = None
        if record:
            per_trial = [strategy] * trials if isinstance(strategy, StrategyId) else [
                StrategyId(int(u), int(v)) for u, v in zip(*self.strategy)
            ]
            self.traces = [Trace(cfg, s) for s in per_trial]
        self._rows = np.arange(trials)

    def advice_arms(self) -> np.ndarray:
        """Advised arm per expert, ``(m, N)``; updated in place by :meth:`refresh`."""
        return self._arms

    def _check(self, pulled, active) -> np.ndarray:
        pulled = np.asarray(pulled)
        if pulled.shape != (self.trials,) or not np.issubdtype(pulled.dtype, np.integer):
            raise ProtocolViolation(f"expected {self.trials} integer arms, got {pulled!r}")
        out_of_range = (pulled < 0) | (pulled >= self.cfg.K)
        bad = out_of_range if active is None else out_of_range & active
        if bad.any():
            raise ProtocolViolation(f"invalid arm {pulled[np.flatnonzero(bad)[0]]} (K={self.cfg.K})")
        return np.where(out_of_range, 0, pulled)

    def resolve(self, pulled, active: Optional[np.ndarray] = None) -> tuple[LossDraw, np.ndarray]:
        """Draw this round's losses and book the pulled ones.

        Returns the full draw and the revealed loss per trial.  Rows with
        ``active == False`` are not booked (their draws are discarded).
        """
        pulled = self._check(pulled, active)
        self.t += 1
        advice = self.advice
        draw = draw_losses(self.strategy, advice, self.cfg.epsilon, self.loss_streams, self.cfg.K)
        revealed = draw.losses[self._rows, pulled]
        mean = expected_arm_loss(pulled, self.strategy, advice, self.cfg.epsilon)
        if active is None:
            self.rounds += 1
            self.cum_loss += revealed
            self.cum_mean_loss += mean
            self.pulls[self._rows, pulled] += 1
        else:
            rows = np.flatnonzero(active)
            self.rounds[rows] += 1
            self.cum_loss[rows] += revealed[rows]
            self.cum_mean_loss[rows] += mean[rows]
            self.pulls[rows, pulled[rows]] += 1
        if self.traces is not None:
            rows = range(self.trials) if active is None else np.flatnonzero(active)
            for i in rows:
                self.traces[i].records.append(
                    RoundRecord(
                        t=int(self.rounds[i]),
                        advice=advice.bits[i].copy(),
                        pulled=int(pulled[i]),
                        losses=draw.losses[i].copy(),
                        revealed=int(revealed[i]),
                    )
                )
        return draw, revealed

    def refresh(self, pulled, active: Optional[np.ndarray] = None) -> None:
        """New advice for the pulled batches.

        The advice state object is replaced, never mutated, so snapshots
        taken earlier stay valid; the arm map is updated in place.
        """
        pulled = self._check(pulled, active)
        batch = batch_of_arm(pulled, self.cfg.k)
        if active is not None:
            batch = np.where(active, batch, 0)
        bits = self.advice.bits.copy()
        n = self.cfg.n
        for u in range(1, self.cfg.k + 1):
            rows = np.flatnonzero(batch == u)
            if rows.size:
                fresh = self.advice_streams[u].bits((rows.size, n))
                bits[rows, u - 1, :] = fresh
                self._arms[rows, 1 + (u - 1) * n : 1 + u * n] = 2 * u - 1 + fresh
        self.advice = AdviceState(bits)

    def step(self, pulled, active: Optional[np.ndarray] = None) -> tuple[LossDraw, np.ndarray]:
        out = self.resolve(pulled, active)
        self.refresh(pulled, active)
        return out

    def run_round(self, learner) -> tuple[np.ndarray, np.ndarray]:
        """Show advice, take the learner's arms, reveal only their losses, refresh advice."""
        pulled = np.asarray(learner.choose(self._arms))
        _, revealed = self.resolve(pulled)
        learner.observe(pulled, revealed)
        self.refresh(pulled)
        return pulled, revealed

    def run(self, learner, T: Optional[int] = None) -> "Environment":
        T = self.cfg.T if T is None else T
        for _ in range(T):
            self.run_round(learner)
        return self

    def batch_pulls(self) -> np.ndarray:
        """Pull counts ``(m, k+1)``: column 0 is arm Zero, column u batch u."""
        k = self.cfg.k
        out = np.empty((self.trials, k + 1), dtype=np.int64)
        out[:, 0] = self.pulls[:, 0]
        out[:, 1:] = self.pulls[:, 1 : 2 * k + 1 : 2] + self.pulls[:, 2 : 2 * k + 2 : 2]
        return out
