"""Identifiers, game configuration and the seeding policy shared by every module.

Arms and experts are addressed by dense integer indices inside the simulator:

* arm ``0`` is the Zero arm, arm ``1 + 2*(u-1) + b`` is ``(u, b)`` and any
  index ``>= 2k+1`` is a padded arm (constant loss 1);
* expert ``0`` is the Zero expert, expert ``1 + (u-1)*n + (v-1)`` is ``(u, v)``
  and any index ``>= kn+1`` is a padded expert (always advises arm Zero).

:class:`ArmId` and :class:`ExpertId` are the readable forms of those indices.
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration violates a hard constraint."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ArmId:
    """Arm Zero (``u == 0``) or arm ``(u, b)`` of batch ``u``."""

    u: int = 0
    b: int = 0

    def __post_init__(self):
        if self.u < 0 or self.b not in (0, 1) or (self.u == 0 and self.b != 0):
            raise ValueError(f"invalid arm ({self.u}, {self.b})")

    @classmethod
    def zero(cls) -> "ArmId":
        return cls(0, 0)

    @property
    def is_zero(self) -> bool:
        return self.u == 0

    def __str__(self):
        return "0" if self.is_zero else f"({self.u},{self.b})"


@dataclass(frozen=True)
class ExpertId:
    """Expert Zero (``u == 0``) or expert ``(u, v)``, the v-th member of batch u."""

    u: int = 0
    v: int = 0

    def __post_init__(self):
        if self.u < 0 or self.v < 0 or (self.u == 0) != (self.v == 0):
            raise ValueError(f"invalid expert ({self.u}, {self.v})")

    @classmethod
    def zero(cls) -> "ExpertId":
        return cls(0, 0)

    @property
    def is_zero(self) -> bool:
        return self.u == 0

    def __str__(self):
        return "0" if self.is_zero else f"({self.u},{self.v})"


@dataclass(frozen=True)
class StrategyId:
    """Loss strategy of the adversary: ``S0`` when ``u == 0``, else ``S_(u,v)``."""

    u: int = 0
    v: int = 0

    def __post_init__(self):
        if self.u < 0 or self.v < 0 or (self.u == 0) != (self.v == 0):
            raise ValueError(f"invalid strategy ({self.u}, {self.v})")

    @classmethod
    def null(cls) -> "StrategyId":
        return cls(0, 0)

    @classmethod
    def special(cls, u: int, v: int) -> "StrategyId":
        if u < 1 or v < 1:
            raise ValueError("special strategy needs u >= 1 and v >= 1")
        return cls(u, v)

    @property
    def is_null(self) -> bool:
        return self.u == 0

    @property
    def special_batch(self) -> int:
        return self.u

    @property
    def special_expert(self) -> ExpertId:
        return ExpertId(self.u, self.v)

    def to_json(self):
        return "S0" if self.is_null else {"u": self.u, "v": self.v}

    @classmethod
    def from_json(cls, obj) -> "StrategyId":
        if obj in (None, "S0", "null", "Null", 0):
            return cls.null()
        if isinstance(obj, str):
            # accepts "S(1,2)" / "1,2"
            digits = obj.strip("S()").split(",")
            return cls.special(int(digits[0]), int(digits[1]))
        if isinstance(obj, dict):
            return cls.special(int(obj["u"]), int(obj["v"]))
        if isinstance(obj, (list, tuple)) and len(obj) == 2:
            return cls.special(int(obj[0]), int(obj[1]))
        raise ValueError(f"cannot parse strategy {obj!r}")

    def __str__(self):
        return "S0" if self.is_null else f"S({self.u},{self.v})"


@dataclass(frozen=True)
class PaddingPlan:
    arms: tuple = ()
    experts: tuple = ()

    @property
    def empty(self) -> bool:
        return not self.arms and not self.experts


def derive_reduced_dims(K: int, N: int) -> tuple[int, int, PaddingPlan]:
    """Largest batch structure ``(k, n)`` with ``2k+1 <= K`` and ``kn+1 <= N``.

    Arms and experts left over are listed in the returned padding plan.
    """
    if K < 3:
        raise ConfigError(f"K={K}: need at least 3 arms")
    if N < K:
        raise ConfigError(f"N={N} < K={K}: need at least as many experts as arms")
    k = (K - 1) // 2
    n = (N - 1) // k
    K_eff, N_eff = 2 * k + 1, k * n + 1
    plan = PaddingPlan(arms=tuple(range(K_eff, K)), experts=tuple(range(N_eff, N)))
    return k, n, plan


@dataclass(frozen=True)
class GameConfig:
    K: int
    N: int
    T: int
    epsilon: float
    seed: int = 0
    k: int = field(init=False)
    n: int = field(init=False)
    padding_plan: PaddingPlan = field(init=False)

    def __post_init__(self):
        k, n, plan = derive_reduced_dims(int(self.K), int(self.N))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "padding_plan", plan)
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def K_eff(self) -> int:
        return 2 * self.k + 1

    @property
    def N_eff(self) -> int:
        return self.k * self.n + 1

    def replace(self, **changes) -> "GameConfig":
        fields = dict(K=self.K, N=self.N, T=self.T, epsilon=self.epsilon, seed=self.seed)
        fields.update(changes)
        return GameConfig(**fields)

    # index helpers
    def arm_index(self, arm: ArmId) -> int:
        if arm.is_zero:
            return 0
        if arm.u > self.k:
            raise ValueError(f"arm {arm} outside k={self.k}")
        return 1 + 2 * (arm.u - 1) + arm.b

    def arm_of(self, index: int) -> Optional[ArmId]:
        """ArmId for an index; ``None`` for padded arms."""
        if not 0 <= index < self.K:
            raise ValueError(f"arm index {index} outside [0, {self.K})")
        if index == 0:
            return ArmId.zero()
        if index >= self.K_eff:
            return None
        return ArmId(1 + (index - 1) // 2, (index - 1) % 2)

    def expert_index(self, expert: ExpertId) -> int:
        if expert.is_zero:
            return 0
        if expert.u > self.k or expert.v > self.n:
            raise ValueError(f"expert {expert} outside (k={self.k}, n={self.n})")
        return 1 + (expert.u - 1) * self.n + (expert.v - 1)

    def expert_of(self, index: int) -> Optional[ExpertId]:
        if not 0 <= index < self.N:
            raise ValueError(f"expert index {index} outside [0, {self.N})")
        if index == 0:
            return ExpertId.zero()
        if index >= self.N_eff:
            return None
        return ExpertId(1 + (index - 1) // self.n, 1 + (index - 1) % self.n)

    def strategies(self) -> list[StrategyId]:
        """The whole pool: S0 followed by every S_(u,v)."""
        pool = [StrategyId.null()]
        pool += [StrategyId(u, v) for u in range(1, self.k + 1) for v in range(1, self.n + 1)]
        return pool

    def check_strategy(self, strategy: StrategyId) -> None:
        if strategy.u > self.k or strategy.v > self.n:
            raise ConfigError(f"strategy {strategy} outside (k={self.k}, n={self.n})")


@dataclass
class ConfigReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self):
        if self.errors:
            raise ConfigError(self.errors)


def validate_config(cfg: GameConfig) -> ConfigReport:
    report = ConfigReport()
    if not (0 < cfg.epsilon <= 0.1):
        report.errors.append(f"epsilon out of range: {cfg.epsilon} not in (0, 0.1]")
    if cfg.T < 1:
        report.errors.append(f"T={cfg.T}: horizon must be at least 1")
    if cfg.k < 1 or cfg.n < 1:
        report.errors.append(f"degenerate batch structure k={cfg.k}, n={cfg.n}")
    if cfg.n <= 10:
        report.warnings.append(f"n={cfg.n} not > 10")
    if cfg.N < 2 * cfg.K:
        report.warnings.append(f"N={cfg.N} < 2K={2 * cfg.K}")
    if cfg.T < cfg.K * math.log(cfg.N / cfg.K):
        report.warnings.append(f"T={cfg.T} < K ln(N/K)={cfg.K * math.log(cfg.N / cfg.K):.3f}")
    return report


# -- JSON -----------------------------------------------------------------

def config_to_json(cfg: GameConfig, strategy: StrategyId = StrategyId()) -> dict:
    return {
        "K": cfg.K,
        "N": cfg.N,
        "T": cfg.T,
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "strategy": strategy.to_json(),
    }


def config_from_json(obj: dict) -> tuple[GameConfig, StrategyId]:
    missing = [key for key in ("K", "N", "T", "epsilon") if key not in obj]
    if missing:
        raise ConfigError(f"missing fields: {', '.join(missing)}")
    try:
        cfg = GameConfig(
            K=int(obj["K"]),
            N=int(obj["N"]),
            T=int(obj["T"]),
            epsilon=float(obj["epsilon"]),
            seed=int(obj.get("seed", 0)),
        )
        strategy = StrategyId.from_json(obj.get("strategy", "S0"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    cfg.check_strategy(strategy)
    return cfg, strategy


def load_config(path: Union[str, Path]) -> tuple[GameConfig, StrategyId]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_json(obj)


# -- seeding --------------------------------------------------------------

def _component_key(component: str) -> int:
    return zlib.crc32(component.encode("utf-8"))


class RngStream:
    """Child random stream labelled ``(component, batch, trial)`` under one root seed.

    The label, not the order of creation, determines the stream: equal
    ``(seed, label)`` pairs give identical draws and different labels give
    independent streams.  ``trial`` may be an int or a tuple of ints (e.g. a
    ``(cell, chunk)`` work-unit key).
    """

    def __init__(self, seed: int, component: str, batch: int = 0, trial: Union[int, Sequence[int]] = 0):
        trial_key = (int(trial),) if np.isscalar(trial) else tuple(int(x) for x in trial)
        self.label = (component, int(batch), trial_key)
        self.seed = int(seed)
        seq = np.random.SeedSequence(self.seed, spawn_key=(_component_key(component), int(batch)) + trial_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def bits(self, size) -> np.ndarray:
        """Fair coin flips as uint8, unpacked from raw random bytes."""
        count = int(np.prod(size))
        raw = np.frombuffer(self._gen.bytes((count + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw, count=count).reshape(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label})"


class StreamFactory:
    """Builds :class:`RngStream` objects that share a root seed and a trial key."""

    def __init__(self, seed: int, trial: Union[int, Sequence[int]] = 0):
        self.seed = int(seed)
        self.trial = trial

    def __call__(self, component: str, batch: int = 0) -> RngStream:
        return RngStream(self.seed, component, batch, self.trial)


def init_streams_for_batches(streams: StreamFactory, component: str, k: int) -> list:
    """``[None, stream_1, ..., stream_k]`` so that batch ``u`` indexes its own stream."""
    return [None] + [streams(component, u) for u in range(1, k + 1)]
