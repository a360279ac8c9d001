"""Exact observation laws of the one-batch game and the divergences between them.

One round of the one-batch game shows an advice vector ``a`` in {0,1}^n and
the correct side ``c``.  Under S0 the pair is uniform.  Under S_(1,v) the
advice is uniform and ``P(c == a_v) = 1/2 + epsilon``.  Arm Zero's loss is
strategy independent and left out: it cancels in every divergence.

Outcomes are dense indices ``2*a + c`` where bit ``v-1`` of the integer ``a``
is ``a_v``; T-round sequences are mixed-radix indices with round 1 most
significant.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import comb

MAX_SUPPORT = 2**24
MAX_ROUND_SUPPORT = 2**21


class SupportTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class RoundPmf:
    n: int
    epsilon: float
    special: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if 2 ** (self.n + 1) > MAX_ROUND_SUPPORT:
            raise SupportTooLarge(f"n={self.n}: support 2^{self.n + 1} too large for dense evaluation")
        if self.special is not None and not 1 <= self.special <= self.n:
            raise ValueError(f"special expert {self.special} outside 1..{self.n}")

    @property
    def support(self) -> int:
        return 2 ** (self.n + 1)

    def matches(self, v: int) -> np.ndarray:
        """Indicator ``c == a_v`` over the support."""
        idx = np.arange(self.support)
        a, c = idx >> 1, idx & 1
        return ((a >> (v - 1)) & 1) == c

    @property
    def probs(self) -> np.ndarray:
        if self.special is None or self.epsilon == 0:
            return np.full(self.support, 1.0 / self.support)
        tilt = np.where(self.matches(self.special), 0.5 + self.epsilon, 0.5 - self.epsilon)
        return tilt / 2**self.n


def round_pmf(n: int, epsilon: float, special: Optional[int] = None) -> RoundPmf:
    return RoundPmf(n, epsilon, special)


def likelihood_ratio(n: int, epsilon: float, v: int) -> np.ndarray:
    """Per-round ratio of the S_(1,v) mass to the S0 mass over the support."""
    return round_pmf(n, epsilon, v).probs / round_pmf(n, epsilon).probs


def _guard(support: int, T: int) -> None:
    if support**T > MAX_SUPPORT:
        raise SupportTooLarge(f"{support}^{T} outcome sequences exceed {MAX_SUPPORT}")


def product_probs(pmf: RoundPmf, T: int) -> np.ndarray:
    _guard(pmf.support, T)
    out = np.ones(1)
    for _ in range(T):
        out = np.kron(out, pmf.probs)
    return out


@dataclass(frozen=True)
class SequenceDist:
    """T-round law: iid product of one round law, or the uniform mixture of products."""

    components: tuple  # RoundPmf per mixture component
    T: int

    @classmethod
    def product(cls, pmf: RoundPmf, T: int) -> "SequenceDist":
        return cls((pmf,), T)

    @classmethod
    def null(cls, n: int, epsilon: float, T: int) -> "SequenceDist":
        return cls.product(RoundPmf(n, epsilon), T)

    @classmethod
    def mixture(cls, n: int, epsilon: float, T: int) -> "SequenceDist":
        return cls(tuple(RoundPmf(n, epsilon, v) for v in range(1, n + 1)), T)

    @property
    def kind(self) -> str:
        return "product" if len(self.components) == 1 else "mixture"

    def probs(self) -> np.ndarray:
        total = None
        for pmf in self.components:
            p = product_probs(pmf, self.T)
            total = p if total is None else total + p
        return total / len(self.components)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats with ``0 ln(0/q) = 0``; compensated summation."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((q == 0) & (p > 0)):
        return math.inf
    mask = p > 0
    terms = p[mask] * np.log(p[mask] / q[mask])
    return max(0.0, math.fsum(terms.tolist()))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * math.fsum(np.abs(np.asarray(p) - np.asarray(q)).tolist())


def exact_kl_mixture_vs_null(n: int, epsilon: float, T: int) -> float:
    """KL between the T-round mixture over special experts and the T-round null law, by full enumeration."""
    if epsilon == 0:
        return 0.0
    mix = SequenceDist.mixture(n, epsilon, T).probs()
    null = SequenceDist.null(n, epsilon, T).probs()
    return kl_divergence(mix, null)


def kl_sufficient_stat(n: int, epsilon: float, T: int) -> float:
    """Same KL through the per-expert match counts.

    Under the null each count is Binomial(T, 1/2) independently, and the
    mixture/null likelihood ratio of a count vector ``M`` is
    ``mean_v (1+2eps)^M_v (1-2eps)^(T-M_v)``, so
    ``KL = E_null[L ln L]`` over ``(T+1)^n`` count vectors.
    """
    if epsilon == 0:
        return 0.0
    if (T + 1) ** n > MAX_SUPPORT:
        raise SupportTooLarge(f"(T+1)^n = {(T + 1) ** n} count vectors exceed {MAX_SUPPORT}")
    m = np.arange(T + 1)
    log_rho = m * math.log1p(2 * epsilon) + (T - m) * math.log1p(-2 * epsilon)
    binom = comb(T, m, exact=False) / 2.0**T
    grid = np.indices((T + 1,) * n).reshape(n, -1)
    weight = np.prod(binom[grid], axis=0)
    ratio = np.exp(log_rho[grid]).mean(axis=0)
    terms = weight * ratio * np.log(ratio)
    return max(0.0, math.fsum(terms.tolist()))


def kl_single_expert(epsilon: float, T: int) -> float:
    """``T * KL(Ber(1/2+eps) || Ber(1/2))``, the n=1 value."""
    a, b = 0.5 + epsilon, 0.5 - epsilon
    return T * (a * math.log1p(2 * epsilon) + (b * math.log1p(-2 * epsilon) if b > 0 else 0.0))


def lemma2_bound(n: int, epsilon: float, T: int) -> float:
    """``((1 + 4 eps^2)^T - 1) / n``."""
    if not 0 <= epsilon <= 0.1:
        raise ValueError(f"epsilon {epsilon} outside [0, 0.1]")
    return math.expm1(T * math.log1p(4 * epsilon**2)) / n


@dataclass
class PinskerReport:
    tv: float
    kl: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.tv <= self.rhs

    @property
    def strict(self) -> bool:
        return self.tv < self.rhs


def pinsker_check(P: Union[SequenceDist, np.ndarray], Q: Union[SequenceDist, np.ndarray]) -> PinskerReport:
    p = P.probs() if isinstance(P, SequenceDist) else np.asarray(P)
    q = Q.probs() if isinstance(Q, SequenceDist) else np.asarray(Q)
    kl = kl_divergence(p, q)
    return PinskerReport(total_variation(p, q), kl, math.sqrt(kl / 2))


def event_gap(p: np.ndarray, q: np.ndarray, event: np.ndarray) -> float:
    """``|P(E) - Q(E)|`` for a boolean event mask."""
    return abs(math.fsum(p[event].tolist()) - math.fsum(q[event].tolist()))


@dataclass(frozen=True)
class StoppingThreshold:
    t_star: float  # ln(n/10) / (4 eps^2)
    half: float  # one-batch lower bound on expected stopping time
    scaled: Optional[float] = None  # k ln(n/10) / (20 eps^2)


def t_star_threshold(n: int, epsilon: float, k: Optional[int] = None) -> StoppingThreshold:
    if n <= 10:
        raise ValueError(f"n={n}: need n > 10 (ln(n/10) must be positive)")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    t_star = math.log(n / 10) / (4 * epsilon**2)
    scaled = None if k is None else k * math.log(n / 10) / (20 * epsilon**2)
    return StoppingThreshold(t_star, t_star / 2, scaled)


KLCHECK_COLUMNS = ["n", "T", "epsilon", "exact_kl", "bound", "tv", "pinsker_rhs", "pass"]


def klcheck_grid(
    ns: Sequence[int] = (1, 2, 3),
    Ts: Sequence[int] = (1, 2, 3),
    epsilons: Sequence[float] = (0.02, 0.05, 0.1),
) -> list[dict]:
    rows = []
    for n, T, eps in itertools.product(ns, Ts, epsilons):
        mix = SequenceDist.mixture(n, eps, T).probs()
        null = SequenceDist.null(n, eps, T).probs()
        report = pinsker_check(mix, null)
        bound = lemma2_bound(n, eps, T)
        rows.append({
            "n": n,
            "T": T,
            "epsilon": eps,
            "exact_kl": report.kl,
            "bound": bound,
            "tv": report.tv,
            "pinsker_rhs": report.rhs,
            "pass": int(report.kl <= bound and report.holds),
        })
    return rows


def write_klcheck_csv(rows: Sequence[dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=KLCHECK_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in row.items()})
    return path
