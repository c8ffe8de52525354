"""Acceptance gate: one test per release criterion.

Run with `pytest -v tests/test_acceptance.py` to get one pass/fail line per
criterion. Criterion 4 asserts a pointwise factorization identity that the
implemented mechanism does not satisfy (a path-dependent product is the
identity that actually holds, see tests/test_oracle.py); it is expected to
fail and is kept as an honest record rather than weakened.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from dptopk.accountant import (
    BudgetRejected,
    advanced_composition,
    eps_prime,
    optimal_composition_delta,
    session_create,
    session_privacy_report,
    session_query,
)
from dptopk.cli import accuracy_report, compose_row, powerlaw_histogram
from dptopk.core import (
    BOTTOM,
    Histogram,
    PrivacyParams,
    SensitivitySetting,
    TopKRequest,
    limited_domain,
    sorted_view,
)
from dptopk.mechanisms import bottom_threshold, run_batch
from dptopk.noise import SeededRng
from dptopk.oracle import (
    MechanismConfig,
    bad_event_probability,
    enumerate_neighbors,
    exact_mechanism_distribution,
    exact_peeling_distribution,
    factorization_gap,
    flip_pair,
    hockey_stick_divergence,
    laplace_tail_difference,
    monte_carlo_distribution,
    total_variation,
    verify_mechanism_dp,
    verify_suite,
)

# Enumerated verification family shared by criteria 2, 3, 4, 10 and 11.
FAMILY_UNIVERSE = ("a", "b", "c")
FAMILY_MAX_COUNT = 3
FAMILY_EPS = 0.3
FAMILY_DELTA = 0.2


def _family_pairs():
    return enumerate_neighbors(FAMILY_UNIVERSE, FAMILY_MAX_COUNT)


def test_ac01_sampled_mechanism_matches_the_exact_law():
    h = Histogram({"a": 4, "b": 3, "c": 1, "d": 0})
    params = PrivacyParams(eps=1.0, delta=0.1)
    config = MechanismConfig("limited", 3, 4, params)
    exact = exact_mechanism_distribution(h, config)
    empirical = monte_carlo_distribution(config, h, 200000, SeededRng(20240817))
    tv = total_variation(exact, empirical)
    assert tv < 0.02, f"TV {tv:.5f} at 2e5 samples"


def test_ac02_exact_dp_on_the_enumerated_family():
    params = PrivacyParams(eps=FAMILY_EPS, delta=FAMILY_DELTA, delta_prime=0.0)
    config = MechanismConfig("limited", 2, 2, params)
    failures = []
    for pair in _family_pairs():
        report = verify_mechanism_dp(pair, config, 2 * FAMILY_EPS, FAMILY_DELTA)
        if not report.passed:
            failures.append(report.to_json_dict())
    assert not failures, f"{len(failures)} pairs exceed delta: {failures[:3]}"


def test_ac03_bad_event_mass_stays_below_delta():
    params = PrivacyParams(eps=FAMILY_EPS, delta=FAMILY_DELTA)
    worst = -1.0
    for pair in _family_pairs():
        for oriented in (pair, flip_pair(pair)):
            mass = bad_event_probability(oriented, 2, 2, params)
            worst = max(worst, mass)
            assert mass <= FAMILY_DELTA, f"pair {oriented.describe()} mass {mass:.5f}"
    # Worked example: the oracle recomputes the mass, asserted only to 10%.
    worked = enumerate_neighbors(("a", "b", "c"), 3)
    target = None
    for pair in worked:
        if dict(pair.h.counts) == {"a": 3, "b": 1, "c": 1} and dict(
            pair.h_prime.counts
        ) == {"a": 3, "c": 1}:
            target = pair
    assert target is not None
    mass = bad_event_probability(target, 2, 2, PrivacyParams(eps=1.0, delta=0.1))
    assert mass == pytest.approx(0.018, rel=0.10)
    assert mass <= 0.1


def test_ac04_pointwise_factorization_identity():
    params = PrivacyParams(eps=FAMILY_EPS, delta=FAMILY_DELTA)
    worst = 0.0
    for pair in _family_pairs():
        gap = factorization_gap(pair, 2, 2, params)
        worst = max(worst, gap)
    assert worst <= 1e-10, (
        f"worst pointwise gap {worst:.6e}; the unconditional product form does "
        "not hold, see the path-dependent identity in tests/test_oracle.py"
    )


def _eps_prime_reference(k: int, eps: float, delta_prime: float) -> float:
    """Independent recomputation: tanh form for the mean drift term."""
    terms = [k * eps]
    if delta_prime > 0:
        log_term = math.log(1.0 / delta_prime)
        terms.append(k * eps * math.tanh(eps / 2.0) + eps * math.sqrt(2.0 * k * log_term))
        terms.append(0.5 * k * eps * eps + eps * math.sqrt(0.5 * k * log_term))
    return min(terms)


def _advanced_branch_reference(k: int, eps: float, delta_prime: float) -> float:
    drift = k * eps * (math.expm1(eps)) / (math.exp(eps) + 1.0)
    return drift + math.sqrt(2.0 * k * eps * eps * math.log(1.0 / delta_prime))


def _optimal_delta_reference(k: int, eps: float, i: int) -> float:
    """Independent recomputation: direct comb/exp evaluation, no log space."""
    numerator = sum(
        math.comb(k, ell) * (math.exp((k - ell) * eps) - math.exp((k - 2 * i + ell) * eps))
        for ell in range(i)
    )
    return numerator / (1.0 + math.exp(eps)) ** k


def test_ac05_composition_golden_values():
    assert eps_prime(25, 0.1, 1e-6) == pytest.approx(1.4391, abs=1e-3)
    assert eps_prime(25, 0.1, 1e-6) == pytest.approx(
        _eps_prime_reference(25, 0.1, 1e-6), abs=1e-12
    )

    bound = advanced_composition([0.1] * 25, [0.0] * 25, 1e-6)
    assert bound.branches["advanced"] == pytest.approx(2.7532, abs=1e-3)
    assert bound.branches["advanced"] == pytest.approx(
        _advanced_branch_reference(25, 0.1, 1e-6), abs=1e-12
    )

    delta_one = optimal_composition_delta(2, math.log(2.0), 1)
    assert delta_one == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert delta_one == pytest.approx(
        _optimal_delta_reference(2, math.log(2.0), 1), abs=1e-12
    )


def test_ac06_range_bounded_composition_beats_exact_composition():
    for k in range(5, 101, 5):
        for eps in (0.01, 0.05, 0.1, 0.5, 1.0):
            row = compose_row(k, eps, 1e-6)
            assert row["ratio"] >= 1.0 - 1e-12, f"k={k} eps={eps} ratio {row['ratio']}"


def test_ac07_laplace_variant_tail_and_privacy():
    # Closed form against numerical integration of the same tail event.
    for eps in (0.5, 1.0, 2.0):
        noise = stats.laplace(scale=1.0 / eps)
        for t in (0.0, 0.3, 1.0, 2.5):
            numeric, _ = integrate.quad(
                lambda x: noise.pdf(x) * noise.sf(t + x), -np.inf, np.inf
            )
            assert laplace_tail_difference(t, eps) == pytest.approx(numeric, abs=1e-6)

    # Monte-Carlo hockey-stick on a restricted neighbor pair.
    eps, delta, cap = 1.0, 0.2, 1
    params = PrivacyParams(
        eps=eps, delta=delta, sensitivity=SensitivitySetting.restricted(cap)
    )
    config = MechanismConfig("laplace", 2, 2, params)
    h = Histogram({"a": 3, "b": 1, "c": 1})
    h_prime = Histogram({"a": 2, "b": 1, "c": 1})
    n = 10**6
    p = monte_carlo_distribution(config, h, n, SeededRng(7))
    q = monte_carlo_distribution(config, h_prime, n, SeededRng(8))
    eps_target = cap * eps
    measured = max(
        hockey_stick_divergence(p, q, eps_target),
        hockey_stick_divergence(q, p, eps_target),
    )
    delta_bar = (delta / 4.0) * (3.0 + math.log(cap / delta))
    support = len(set(p.probs) | set(q.probs))
    standard_error = (1.0 + math.exp(eps_target)) * math.sqrt(support / (4.0 * n))
    bound = (math.exp(eps_target) + 1.0) * delta_bar + 3.0 * standard_error
    assert measured <= bound, f"measured {measured:.5f} vs bound {bound:.5f}"


def test_ac08_accuracy_on_a_separated_power_law():
    k, kbar, eps, delta, beta, trials = 3, 10, 1.0, 0.05, 0.1, 10**4
    h = powerlaw_histogram(1000.0, 1.0, 50)
    params = PrivacyParams(eps=eps, delta=delta)
    view = sorted_view(h)
    separation = view.rank_count(k) >= (
        view.rank_count(kbar + 1)
        + 1.0
        + math.log(kbar / delta) / eps
        + math.log(k / beta) / eps
    )
    assert separation, "instance must satisfy the separation precondition"
    report = accuracy_report(h, k, kbar, params, beta, trials, SeededRng(11))
    assert report["alpha"] == pytest.approx(math.log(k * kbar / beta) / eps, abs=1e-12)
    sigma = math.sqrt(beta * (1.0 - beta) / trials)
    assert report["short_output_rate"] <= beta + 3.0 * sigma
    assert report["violation_rate"] <= beta + 3.0 * sigma


def test_ac09_pay_as_released_bookkeeping():
    session = session_create(10, 5, eps=0.1, delta=1e-6, delta_prime=1e-6)

    # Stopped early: two strong labels inside a 3-wide domain.
    first = session_query(
        session,
        Histogram({"x": 500, "y": 400}),
        TopKRequest(k=3, kbar=3),
        SeededRng(0),
    )
    assert first.output.indices == ("x", "y")
    assert first.output.terminated
    assert session.kmax_remaining == 7
    assert session.ellmax_remaining == 4

    # Oversize: rejected without touching the budget.
    with pytest.raises(BudgetRejected):
        session_query(
            session,
            Histogram({"x": 500, "y": 400}),
            TopKRequest(k=8, kbar=8),
            SeededRng(1),
        )
    assert session.kmax_remaining == 7
    assert session.ellmax_remaining == 4

    # Full length: four far-above-threshold labels.
    second = session_query(
        session,
        Histogram({"p": 500, "q": 480, "r": 460, "s": 440}),
        TopKRequest(k=4, kbar=4),
        SeededRng(2),
    )
    assert len(second.output.indices) == 4
    assert not second.output.terminated
    assert session.kmax_remaining == 3
    assert session.ellmax_remaining == 3

    report = session_privacy_report(session)
    assert report.bound.eps_total == pytest.approx(0.8811, abs=5e-5)
    assert report.bound.delta_total == pytest.approx(1.1e-5, rel=1e-9)


def test_ac10_fixed_threshold_inclusion_and_privacy():
    # Inclusion marginals against the noise tail formula at one million runs.
    h = Histogram({"a": 10, "b": 6, "c": 0})
    params = PrivacyParams(eps=1.0, delta=0.05)
    req = TopKRequest(k=2, kbar=2, mechanism="fixed")
    batch = run_batch(h, req, params, SeededRng(13), 10**6)
    h_bot = bottom_threshold(h, 2, params, "fixed").value
    for label, position in (("a", 0), ("b", 1)):
        count = h.get(label)
        if count >= h_bot:
            expected = 1.0 - 0.5 * math.exp(-params.eps * (count - h_bot))
        else:
            expected = 0.5 * math.exp(-params.eps * (h_bot - count))
        observed = float((batch.idx == position).any(axis=1).mean())
        assert observed == pytest.approx(expected, abs=1e-3), label

    # Exact joint laws over the family: (k*eps, k*delta)-DP.
    family_params = PrivacyParams(eps=FAMILY_EPS, delta=FAMILY_DELTA)
    config = MechanismConfig("fixed", 2, 2, family_params)
    for pair in _family_pairs():
        report = verify_mechanism_dp(pair, config, 2 * FAMILY_EPS, 2 * FAMILY_DELTA)
        assert report.passed, report.to_json_dict()


def test_ac11_weakened_threshold_is_caught():
    dp = verify_suite("dp", threshold_scale=0.5)
    bad_event = verify_suite("bad-event", threshold_scale=0.5)
    dp_failures = sum(check["failures"] for check in dp["checks"])
    bad_event_failures = sum(check["failures"] for check in bad_event["checks"])
    assert dp_failures + bad_event_failures > 0, (
        "halving the threshold margin must break at least one enumerated pair"
    )
