"""Unit tests for the private selection mechanisms."""

import math

import numpy as np
import pytest
from scipy import stats

from dptopk.core import (
    BOTTOM,
    Histogram,
    PrivacyParams,
    SensitivitySetting,
    TopKRequest,
    limited_domain,
    strict_limited_domain,
)
from dptopk.mechanisms import (
    bottom_threshold,
    exponential_mechanism,
    fixed_threshold_topk,
    laplace_limited_topk,
    limited_domain_topk,
    oneshot_gumbel_topk,
    optimal_threshold_topk,
    peeling_em,
    run_batch,
    run_mechanism,
    threshold_scores,
)
from dptopk.noise import SeededRng
from dptopk.oracle import exact_peeling_distribution


class TestBottomThreshold:
    def test_restricted_margin_uses_the_smaller_of_delta_and_kbar(self):
        h = Histogram({f"l{i:02d}": 20 - i for i in range(10)} | {"l10": 7})
        params = PrivacyParams(
            eps=0.5, delta=0.1, sensitivity=SensitivitySetting.restricted(3)
        )
        result = bottom_threshold(h, 10, params, "limited")
        assert result.value == pytest.approx(14.8024, abs=5e-4)
        assert result.value == pytest.approx(7 + 1 + result.additive_term, abs=1e-12)

    def test_unrestricted_margin_uses_kbar(self):
        params = PrivacyParams(eps=1.0, delta=0.05)
        result = bottom_threshold(Histogram({"a": 5}), 1, params, "limited")
        assert result.value == pytest.approx(3.9957, abs=5e-5)

    def test_fixed_variant_margin(self):
        params = PrivacyParams(eps=1.0, delta=0.05)
        result = bottom_threshold(Histogram({"a": 10, "b": 6, "c": 0}), 2, params, "fixed")
        assert result.value == pytest.approx(3.3026, abs=5e-5)
        assert result.additive_term == pytest.approx(math.log(10.0), abs=1e-12)

    def test_strict_variant_ignores_restricted_sensitivity(self):
        params = PrivacyParams(
            eps=1.0, delta=0.1, sensitivity=SensitivitySetting.restricted(1)
        )
        result = bottom_threshold(Histogram({"a": 5, "b": 4}), 2, params, "strict")
        assert result.additive_term == pytest.approx(math.log(2.0 / 0.1), abs=1e-12)

    def test_laplace_variant_requires_restricted(self):
        with pytest.raises(ValueError):
            bottom_threshold(Histogram({"a": 5}), 2, PrivacyParams(eps=1.0, delta=0.1), "laplace")

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            bottom_threshold(Histogram({"a": 5}), 2, PrivacyParams(eps=1.0, delta=0.1), "bogus")


class TestExponentialMechanism:
    def test_two_to_one_softmax(self):
        h = Histogram({"a": 1, "b": 0})
        rng = SeededRng(17)
        n = 10**5
        wins = sum(exponential_mechanism(h, ("a", "b"), math.log(2.0), rng) == "a" for _ in range(n))
        observed = [wins, n - wins]
        _, p_value = stats.chisquare(observed, [n * 2 / 3, n * 1 / 3])
        assert p_value > 0.001

    def test_singleton_is_deterministic(self):
        assert exponential_mechanism(Histogram({"a": 5}), ("a",), 1.0, SeededRng(0)) == "a"

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            exponential_mechanism(Histogram({"a": 1}), (), 1.0, SeededRng(0))

    def test_symmetry_on_ties(self):
        h = Histogram({"a": 3, "b": 3})
        rng = SeededRng(23)
        n = 10**4
        wins = sum(exponential_mechanism(h, ("a", "b"), 1.0, rng) == "a" for _ in range(n))
        assert wins / n == pytest.approx(0.5, abs=0.02)


class TestOneshotGumbelTopk:
    def test_k_must_fit_the_candidate_list(self):
        with pytest.raises(ValueError):
            oneshot_gumbel_topk(Histogram({"a": 1}), ("a",), 2, 1.0, SeededRng(0))

    def test_overwhelming_gap(self):
        h = Histogram({"a": 100, "b": 0})
        picks = {oneshot_gumbel_topk(h, ("a", "b"), 1, 1.0, SeededRng(s))[0] for s in range(50)}
        assert picks == {"a"}

    def test_full_length_matches_the_sequential_product_law(self):
        # Weights (2, 1, 1): the noisy full ordering follows the same product
        # law as drawing winners one at a time without replacement.
        h = Histogram({"a": 1, "b": 0, "c": 0})
        eps = math.log(2.0)
        weights = {"a": 2.0, "b": 1.0, "c": 1.0}
        rng = SeededRng(31)
        n = 2 * 10**4
        observed = {}
        for _ in range(n):
            perm = oneshot_gumbel_topk(h, ("a", "b", "c"), 3, eps, rng)
            observed[perm] = observed.get(perm, 0) + 1
        expected = []
        counts = []
        for perm, count in observed.items():
            w = [weights[label] for label in perm]
            prob = (w[0] / sum(weights.values())) * (w[1] / (w[1] + w[2]))
            expected.append(n * prob)
            counts.append(count)
        _, p_value = stats.chisquare(counts, expected)
        assert p_value > 0.001

    def test_first_draw_matches_the_single_selection_softmax(self):
        h = Histogram({"a": 1, "b": 0})
        eps = math.log(2.0)
        rng = SeededRng(37)
        n = 10**5
        wins = sum(oneshot_gumbel_topk(h, ("a", "b"), 1, eps, rng)[0] == "a" for _ in range(n))
        _, p_value = stats.chisquare([wins, n - wins], [n * 2 / 3, n / 3])
        assert p_value > 0.001


class TestLimitedDomainTopk:
    def test_never_emits_outside_the_domain(self):
        h = Histogram({"a": 9, "b": 7, "c": 5, "d": 2, "e": 1})
        req = TopKRequest(k=2, kbar=3)
        params = PrivacyParams(eps=1.0, delta=0.2)
        domain = set(limited_domain(h, 3))
        batch = run_batch(h, req, params, SeededRng(3), 5000)
        released = {batch.labels[i] for i in batch.idx[batch.idx >= 0]}
        assert released <= domain

    def test_kbar_equal_k_stays_in_the_true_top_k(self):
        h = Histogram({"a": 9, "b": 7, "c": 5, "d": 2})
        batch = run_batch(h, TopKRequest(k=2, kbar=2), PrivacyParams(eps=1.0, delta=0.2), SeededRng(4), 3000)
        released = {batch.labels[i] for i in batch.idx[batch.idx >= 0]}
        assert released <= {"a", "b"}

    def test_terminated_iff_short(self):
        h = Histogram({"a": 9, "b": 1})
        batch = run_batch(h, TopKRequest(k=2, kbar=2), PrivacyParams(eps=0.5, delta=0.2), SeededRng(5), 4000)
        lengths = (batch.idx >= 0).sum(axis=1)
        assert np.array_equal(batch.terminated, lengths < 2)

    def test_flat_histogram_stops_immediately_with_high_probability(self):
        h = Histogram({label: 2 for label in "abcde"})
        params = PrivacyParams(eps=1.0, delta=0.1)
        h_bot = bottom_threshold(h, 3, params, "limited").value
        dist = exact_peeling_distribution(h, limited_domain(h, 3), 3, h_bot, 1.0)
        stop_first = dist.get((BOTTOM,))
        lower = 1.0 / (1.0 + 0.1 * math.exp(-1.0))
        assert stop_first >= lower - 1e-12


class TestPeelingEm:
    def test_empty_domain_stops(self):
        out = peeling_em(Histogram({}), (), 2, 2, PrivacyParams(eps=1.0, delta=0.1), SeededRng(0))
        assert out.indices == ()
        assert out.terminated

    def test_empirical_distribution_matches_the_exact_law(self):
        h = Histogram({"a": 4, "b": 3, "c": 1, "d": 0})
        params = PrivacyParams(eps=1.0, delta=0.1)
        domain = limited_domain(h, 4)
        h_bot = bottom_threshold(h, 4, params, "limited").value
        exact = exact_peeling_distribution(h, domain, 3, h_bot, 1.0)
        rng = SeededRng(41)
        n = 2 * 10**4
        observed = {}
        for _ in range(n):
            out = peeling_em(h, domain, 3, 4, params, rng)
            key = out.indices + ((BOTTOM,) if out.terminated else ())
            observed[key] = observed.get(key, 0) + 1
        tv = 0.5 * sum(
            abs(observed.get(o, 0) / n - exact.get(o))
            for o in set(observed) | set(exact.probs)
        )
        assert tv < 0.03

    def test_shift_invariance_of_the_exact_law(self):
        h = Histogram({"a": 4, "b": 2, "c": 1})
        shifted = Histogram({"a": 9, "b": 7, "c": 6})
        domain = ("a", "b", "c")
        base = exact_peeling_distribution(h, domain, 2, 3.3, 0.7)
        moved = exact_peeling_distribution(shifted, domain, 2, 8.3, 0.7)
        assert set(base.probs) == set(moved.probs)
        for outcome, p in base.probs.items():
            assert moved.get(outcome) == pytest.approx(p, abs=1e-12)

    def test_allows_k_zero(self):
        out = peeling_em(Histogram({"a": 3}), ("a",), 0, 1, PrivacyParams(eps=1.0, delta=0.1), SeededRng(1))
        assert out.indices == ()
        assert not out.terminated


class TestStrictLimitedTopk:
    def test_flat_histogram_always_stops(self):
        h = Histogram({"a": 2, "b": 2, "c": 2})
        req = TopKRequest(k=2, kbar=2, mechanism="strict")
        params = PrivacyParams(eps=1.0, delta=0.1)
        batch = run_batch(h, req, params, SeededRng(6), 500)
        assert batch.terminated.all()
        assert (batch.idx == -1).all()

    def test_never_emits_outside_the_strict_domain(self):
        h = Histogram({"a": 5, "b": 4, "c": 4, "d": 1})
        req = TopKRequest(k=2, kbar=2, mechanism="strict")
        params = PrivacyParams(eps=1.0, delta=0.2)
        allowed = set(strict_limited_domain(h, 2))
        batch = run_batch(h, req, params, SeededRng(7), 3000)
        released = {batch.labels[i] for i in batch.idx[batch.idx >= 0]}
        assert released <= allowed


class TestLaplaceLimitedTopk:
    def test_requires_restricted_sensitivity(self):
        with pytest.raises(ValueError):
            laplace_limited_topk(
                Histogram({"a": 5}),
                TopKRequest(k=1, kbar=1, mechanism="laplace"),
                PrivacyParams(eps=1.0, delta=0.1),
                SeededRng(0),
            )

    def test_strong_signal_is_released(self):
        params = PrivacyParams(
            eps=1.0, delta=0.05, sensitivity=SensitivitySetting.restricted(1)
        )
        h = Histogram({"a": 60, "b": 50, "c": 1})
        req = TopKRequest(k=2, kbar=2, mechanism="laplace")
        batch = run_batch(h, req, params, SeededRng(8), 2000)
        full = ~batch.terminated
        assert full.mean() > 0.99
        assert {batch.labels[i] for i in batch.idx[batch.idx >= 0]} == {"a", "b"}


class TestOptimalThresholdTopk:
    def test_scores_match_the_formula(self):
        h = Histogram({"a": 100, "b": 100, "c": 100})
        params = PrivacyParams(eps=1.0, delta=0.05)
        scores = threshold_scores(h, 2, 5, params)
        assert scores == pytest.approx([103.6889, 104.0943, 4.3820, 4.6052], abs=1e-3)

    def test_single_candidate_cut_is_deterministic(self):
        h = Histogram({"a": 5, "b": 3})
        params = PrivacyParams(eps=1.0, delta=0.1)
        kbar, _ = optimal_threshold_topk(h, 2, 2, params, SeededRng(9))
        assert kbar == 2

    def test_cut_range_is_validated(self):
        params = PrivacyParams(eps=1.0, delta=0.1)
        with pytest.raises(ValueError):
            optimal_threshold_topk(Histogram({"a": 5}), 3, 2, params, SeededRng(0))

    def test_requires_unrestricted_sensitivity(self):
        params = PrivacyParams(
            eps=1.0, delta=0.1, sensitivity=SensitivitySetting.restricted(2)
        )
        with pytest.raises(ValueError):
            optimal_threshold_topk(Histogram({"a": 5}), 1, 3, params, SeededRng(0))

    def test_k_equal_one_releases_only_the_cut(self):
        params = PrivacyParams(eps=1.0, delta=0.1)
        kbar, out = optimal_threshold_topk(Histogram({"a": 5, "b": 3}), 1, 3, params, SeededRng(10))
        assert 1 <= kbar <= 3
        assert out.indices == ()
        assert not out.terminated

    def test_sharp_drop_attracts_the_cut(self):
        h = Histogram({"a": 100, "b": 100, "c": 100})
        params = PrivacyParams(eps=1.0, delta=0.05)
        cuts = [run_mechanism(h, TopKRequest(k=2, kbar=5, mechanism="optimal"), params, SeededRng(s)).kbar_selected for s in range(60)]
        assert set(cuts) <= {4, 5}
        share_four = cuts.count(4) / len(cuts)
        assert share_four == pytest.approx(5.0 / 9.0, abs=0.2)


class TestFixedThresholdTopk:
    def test_flat_histogram_releases_nothing(self):
        h = Histogram({"a": 2, "b": 2, "c": 2})
        params = PrivacyParams(eps=1.0, delta=0.05)
        for seed in range(5):
            out = fixed_threshold_topk(h, 2, params, SeededRng(seed))
            assert out.indices == ()
            assert not out.terminated

    def test_inclusion_marginals_follow_the_noise_tail(self):
        h = Histogram({"a": 10, "b": 6, "c": 0})
        params = PrivacyParams(eps=1.0, delta=0.05)
        req = TopKRequest(k=2, kbar=2, mechanism="fixed")
        batch = run_batch(h, req, params, SeededRng(11), 20000)
        h_bot = 1.0 + math.log(10.0)
        p_a = 1.0 - 0.5 * math.exp(-(10.0 - h_bot))
        p_b = 1.0 - 0.5 * math.exp(-(6.0 - h_bot))
        got_a = (batch.idx == 0).any(axis=1).mean()
        got_b = (batch.idx == 1).any(axis=1).mean()
        assert got_a == pytest.approx(p_a, abs=0.01)
        assert got_b == pytest.approx(p_b, abs=0.01)

    def test_output_is_reported_in_rank_order(self):
        h = Histogram({"a": 30, "b": 29, "c": 0})
        params = PrivacyParams(eps=1.0, delta=0.05)
        out = fixed_threshold_topk(h, 2, params, SeededRng(12))
        assert out.indices == ("a", "b")


class TestDispatchAndBatch:
    def _params(self, mechanism):
        if mechanism == "laplace":
            return PrivacyParams(
                eps=0.8, delta=0.1, sensitivity=SensitivitySetting.restricted(2)
            )
        return PrivacyParams(eps=0.8, delta=0.1)

    @pytest.mark.parametrize(
        "mechanism,k,kbar",
        [
            ("limited", 2, 3),
            ("strict", 2, 2),
            ("laplace", 2, 3),
            ("optimal", 3, 5),
            ("optimal", 1, 3),
            ("fixed", 2, 2),
        ],
    )
    def test_batch_of_one_reproduces_the_single_run(self, mechanism, k, kbar):
        h = Histogram({"a": 8, "b": 6, "c": 5, "d": 2, "e": 1})
        req = TopKRequest(k=k, kbar=kbar, mechanism=mechanism)
        params = self._params(mechanism)
        single = run_mechanism(h, req, params, SeededRng(77))
        batch = run_batch(h, req, params, SeededRng(77), 1)
        decoded = tuple(batch.labels[int(i)] for i in batch.idx[0] if i >= 0)
        assert decoded == single.output.indices
        assert bool(batch.terminated[0]) == single.output.terminated
        if mechanism == "optimal":
            assert int(batch.kbar_selected[0]) == single.kbar_selected
        else:
            assert batch.kbar_selected is None
            assert single.kbar_selected is None

    def test_seeded_runs_are_reproducible(self):
        h = Histogram({"a": 8, "b": 6, "c": 5})
        req = TopKRequest(k=2, kbar=3)
        params = PrivacyParams(eps=1.0, delta=0.1)
        a = run_mechanism(h, req, params, SeededRng(123))
        b = run_mechanism(h, req, params, SeededRng(123))
        assert a == b

    def test_batch_size_must_be_positive(self):
        with pytest.raises(ValueError):
            run_batch(
                Histogram({"a": 1}),
                TopKRequest(k=1, kbar=1),
                PrivacyParams(eps=1.0, delta=0.1),
                SeededRng(0),
                0,
            )
