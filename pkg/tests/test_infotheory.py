import csv
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from banditlab.adversary import draw_losses, init_advice
from banditlab.core import GameConfig, StrategyId, StreamFactory
from banditlab.infotheory import (
    KLCHECK_COLUMNS,
    SequenceDist,
    SupportTooLarge,
    event_gap,
    exact_kl_mixture_vs_null,
    kl_divergence,
    kl_single_expert,
    kl_sufficient_stat,
    klcheck_grid,
    lemma2_bound,
    likelihood_ratio,
    pinsker_check,
    round_pmf,
    t_star_threshold,
    write_klcheck_csv,
)

GRID = list(itertools.product((1, 2, 3), (1, 2, 3), (0.02, 0.05, 0.1)))


def bernoulli_kl(eps):
    a = 0.5 + eps
    return a * math.log(a / 0.5) + (1 - a) * math.log((1 - a) / 0.5)


def kl_by_fractions(n, eps, T):
    """Mixture-vs-null KL with exact rational masses; rounds enumerated last-first."""
    eps = Fraction(eps).limit_denominator(10**6)
    half = Fraction(1, 2)
    outcomes = [(a, c) for c in (1, 0) for a in itertools.product((1, 0), repeat=n)]
    p0 = Fraction(1, 2 ** ((n + 1) * T))
    terms = []
    for seq in itertools.product(outcomes, repeat=T):
        pm = Fraction(0)
        for v in range(n):
            p = Fraction(1)
            for a, c in reversed(seq):
                p *= (half + eps if a[v] == c else half - eps) / 2**n
            pm += p
        pm /= n
        terms.append(float(pm) * math.log(pm / p0))
    return math.fsum(terms)


def test_round_pmf_without_gap_is_uniform():
    for special in (None, 1, 3):
        p = round_pmf(3, 0.0, special).probs
        assert np.all(p == 1 / 16)


def test_round_pmf_single_expert_values():
    p = round_pmf(1, 0.1, 1).probs
    # index 2a + c
    assert np.allclose(p, [0.3, 0.2, 0.2, 0.3], rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.floats(0, 0.1), st.data())
def test_round_pmf_normalised(n, eps, data):
    special = data.draw(st.one_of(st.none(), st.integers(1, n)))
    p = round_pmf(n, eps, special).probs
    assert np.all(p >= 0)
    assert abs(math.fsum(p.tolist()) - 1) <= 1e-12


def test_round_pmf_guards():
    with pytest.raises(SupportTooLarge):
        round_pmf(21, 0.1)
    with pytest.raises(ValueError):
        round_pmf(3, 0.1, 4)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_likelihood_ratio_formula(n):
    eps = 0.07
    pmf = round_pmf(n, eps)
    for v in range(1, n + 1):
        expected = 1 + np.where(pmf.matches(v), 1, -1) * 2 * eps
        assert np.allclose(likelihood_ratio(n, eps, v), expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("eps", [0.02, 0.05, 0.1])
def test_likelihood_ratio_means(n, eps):
    for v_star in range(1, n + 1):
        p_star = round_pmf(n, eps, v_star).probs
        for v in range(1, n + 1):
            mean = math.fsum((p_star * likelihood_ratio(n, eps, v)).tolist())
            target = 1 + 4 * eps**2 if v == v_star else 1.0
            assert abs(mean - target) <= 1e-12


def test_sequence_dist_kinds():
    mix = SequenceDist.mixture(2, 0.1, 2)
    assert mix.kind == "mixture"
    assert SequenceDist.null(2, 0.1, 2).kind == "product"
    parts = [SequenceDist.product(round_pmf(2, 0.1, v), 2).probs() for v in (1, 2)]
    assert np.allclose(mix.probs(), (parts[0] + parts[1]) / 2, rtol=0, atol=1e-18)
    single = round_pmf(2, 0.1, 1).probs
    assert np.allclose(parts[0], np.outer(single, single).ravel(), rtol=0, atol=1e-18)


def test_exact_kl_examples():
    assert exact_kl_mixture_vs_null(2, 0.0, 2) == 0.0
    assert abs(exact_kl_mixture_vs_null(1, 0.1, 1) - bernoulli_kl(0.1)) <= 1e-12
    assert abs(exact_kl_mixture_vs_null(1, 0.1, 1) - 0.020135513550688864) <= 1e-15


def test_exact_kl_two_experts_two_rounds():
    value = exact_kl_mixture_vs_null(2, 0.1, 2)
    assert abs(value - kl_by_fractions(2, 0.1, 2)) <= 1e-13
    # 40-digit evaluation of the same 64-outcome sum
    assert abs(value - 0.020335566918184826) <= 1e-15


@pytest.mark.parametrize("n, T, eps", [(3, 2, 0.05), (2, 3, 0.1), (1, 3, 0.02)])
def test_exact_kl_matches_rational_oracle(n, T, eps):
    assert abs(exact_kl_mixture_vs_null(n, eps, T) - kl_by_fractions(n, eps, T)) <= 1e-13


def test_exact_kl_guard():
    with pytest.raises(SupportTooLarge):
        exact_kl_mixture_vs_null(3, 0.1, 7)


@pytest.mark.parametrize("n, T, eps", GRID)
def test_sufficient_statistic_agrees(n, T, eps):
    assert abs(kl_sufficient_stat(n, eps, T) - exact_kl_mixture_vs_null(n, eps, T)) <= 1e-10


@pytest.mark.parametrize("T", [1, 2, 5, 12])
def test_sufficient_statistic_single_expert(T):
    assert kl_sufficient_stat(1, 0.0, T) == 0.0
    assert abs(kl_sufficient_stat(1, 0.1, T) - T * bernoulli_kl(0.1)) <= 1e-12
    assert abs(kl_single_expert(0.1, T) - T * bernoulli_kl(0.1)) <= 1e-12


def test_sufficient_statistic_reaches_larger_instances():
    value = kl_sufficient_stat(4, 0.1, 12)
    assert 0 < value <= lemma2_bound(4, 0.1, 12)


@pytest.mark.parametrize("n, T, eps", GRID)
def test_kl_below_bound(n, T, eps):
    assert exact_kl_mixture_vs_null(n, eps, T) <= lemma2_bound(n, eps, T)


def test_lemma2_bound_examples():
    assert abs(lemma2_bound(1, 0.1, 1) - 0.04) <= 1e-15
    assert lemma2_bound(5, 0.0, 10) == 0.0
    assert abs(lemma2_bound(10, 0.05, 100) - 0.17048138294215261) <= 1e-15
    for bad in (-0.01, 0.2):
        with pytest.raises(ValueError):
            lemma2_bound(1, bad, 1)


def test_pinsker_identical():
    p = SequenceDist.null(2, 0.1, 2)
    report = pinsker_check(p, p)
    assert report.tv == 0 and report.kl == 0 and report.holds


def test_pinsker_strict_two_experts():
    report = pinsker_check(SequenceDist.mixture(2, 0.1, 2), SequenceDist.null(2, 0.1, 2))
    assert report.strict
    assert report.tv > 0


def test_event_gaps_below_tv():
    p = SequenceDist.mixture(2, 0.1, 2).probs()
    q = SequenceDist.null(2, 0.1, 2).probs()
    report = pinsker_check(p, q)
    rng = np.random.default_rng(0)
    for _ in range(100):
        event = rng.random(p.size) < rng.random()
        assert event_gap(p, q, event) <= report.tv + 1e-15 <= report.rhs + 1e-15
    best = p > q
    assert abs(event_gap(p, q, best) - report.tv) <= 1e-15


def test_kl_divergence_conventions():
    assert kl_divergence([0.0, 1.0], [0.5, 0.5]) == math.log(2)
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf


def test_t_star_examples():
    th = t_star_threshold(20, 0.1)
    assert abs(th.half - 8.664339756999316) <= 1e-12
    assert th.t_star == 2 * th.half
    assert abs(t_star_threshold(20, 0.05).half / th.half - 4) <= 1e-12
    assert abs(t_star_threshold(20, 0.1, k=2).scaled - 2 * math.log(2) / 0.2) <= 1e-12
    with pytest.raises(ValueError):
        t_star_threshold(10, 0.1)


def test_adversary_frequencies_match_round_pmf():
    # cross-module: a one-batch game's (advice, correct side) law is the round pmf
    n, m, eps = 2, 1_000_000, 0.1
    cfg = GameConfig(3, 1 + n, 1, eps, seed=31)
    f = StreamFactory(cfg.seed)
    state = init_advice(cfg, [None, f("advice", 1)], trials=m)
    draw = draw_losses(StrategyId(1, 2), state, eps, [f("loss", 0), f("loss", 1)])
    a = state.bits[:, 0, 0].astype(np.int64) + 2 * state.bits[:, 0, 1]
    index = 2 * a + draw.correct[:, 0]
    freq = np.bincount(index, minlength=2 ** (n + 1)) / m
    p = round_pmf(n, eps, 2).probs
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / m))


def test_klcheck_grid_and_csv(tmp_path):
    rows = klcheck_grid()
    assert len(rows) == 27
    assert all(r["pass"] == 1 for r in rows)
    path = write_klcheck_csv(rows, tmp_path / "k.csv")
    with path.open() as fh:
        reader = csv.reader(fh)
        assert next(reader) == KLCHECK_COLUMNS
        assert len(list(reader)) == 27
