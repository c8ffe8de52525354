"""Exact output distributions and privacy verification at desk scale.

For the Gumbel-family mechanisms the full output law has a closed form: the
probability of a released sequence is a product of softmax steps over the
shrinking candidate set plus the stop symbol. This module computes those
laws exactly (in log space), enumerates neighboring histogram pairs, and
checks the differential-privacy inequality through the hockey-stick
divergence, which is the tight delta at a given eps over all outcome sets.

Verification helpers accept a threshold_scale knob that deliberately
miscalibrates the modeled stop threshold. It exists to demonstrate that the
verifier has power (a scaled-down margin must make the checks fail) and
plays no role in normal operation.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dptopk.core import (
    BOTTOM,
    Histogram,
    PrivacyParams,
    TopKRequest,
    limited_domain,
    sorted_view,
    strict_limited_domain,
)
from dptopk.mechanisms import (
    BottomThreshold,
    bottom_threshold,
    run_batch,
    threshold_scores,
)
from dptopk.noise import SeededRng

__all__ = [
    "ExactDistribution",
    "MechanismConfig",
    "NeighborPair",
    "ResourceLimitError",
    "VerificationReport",
    "bad_event_probability",
    "enumerate_neighbors",
    "exact_mechanism_distribution",
    "exact_peeling_distribution",
    "factorization_gap",
    "first_index_comparison",
    "flip_pair",
    "hockey_stick_divergence",
    "laplace_tail_difference",
    "monte_carlo_distribution",
    "total_variation",
    "verify_mechanism_dp",
    "verify_suite",
]

Outcome = Tuple[str, ...]

_DEFAULT_MAX_OUTCOMES = 10**6


class ResourceLimitError(RuntimeError):
    """An enumeration guard was exceeded."""


@dataclasses.dataclass(frozen=True)
class ExactDistribution:
    """Outcome-sequence -> probability map.

    Keys are label tuples; a trailing stop symbol marks early termination.
    Set-valued outcomes use label-sorted tuples. Outcomes of the cut-selecting
    composite are prefixed with a "__kbar_<value>__" marker element.
    """

    probs: Dict[Outcome, float]

    def __post_init__(self):
        total = 0.0
        for outcome, p in self.probs.items():
            if p < 0:
                raise ValueError(f"negative probability for {outcome!r}")
            total += p
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    def total(self) -> float:
        return sum(self.probs.values())

    def get(self, outcome: Outcome) -> float:
        return self.probs.get(outcome, 0.0)

    def support(self) -> Tuple[Outcome, ...]:
        return tuple(self.probs)


@dataclasses.dataclass(frozen=True)
class NeighborPair:
    """Histograms differing by one user's element set.

    direction says how h_prime was obtained from h: "removed" means the
    user's unit contribution on user_elements was taken away (each changed
    count is one higher in h), "added" means the reverse.
    """

    h: Histogram
    h_prime: Histogram
    user_elements: frozenset
    restricted_delta: Optional[int] = None
    direction: str = "removed"

    def __post_init__(self):
        if self.direction not in ("removed", "added"):
            raise ValueError("direction must be 'removed' or 'added'")
        labels = set(self.h.counts) | set(self.h_prime.counts)
        diff = {label: self.h.get(label) - self.h_prime.get(label) for label in labels}
        changed = {label for label, d in diff.items() if d != 0}
        if changed != set(self.user_elements):
            raise ValueError("user_elements must be exactly the changed labels")
        expected = 1 if self.direction == "removed" else -1
        if any(d != expected for label, d in diff.items() if label in changed):
            raise ValueError(
                "each changed count must differ by exactly "
                f"{expected:+d} between h and h_prime for direction {self.direction!r}"
            )
        if self.restricted_delta is not None and len(changed) > self.restricted_delta:
            raise ValueError("user changes more labels than the restricted sensitivity")

    def describe(self) -> dict:
        return {
            "h": dict(self.h.counts),
            "h_prime": dict(self.h_prime.counts),
            "user_elements": sorted(self.user_elements),
        }


@dataclasses.dataclass(frozen=True)
class MechanismConfig:
    """Which mechanism to verify, at what sizes, under which parameters.

    kbar is the candidate cut; for the "optimal" composite it is the top of
    the cut search range. threshold_scale multiplies the stop-threshold
    margin in the modeled law (1.0 means the real mechanism).
    """

    mechanism: str
    k: int
    kbar: int
    params: PrivacyParams
    threshold_scale: float = 1.0

    def __post_init__(self):
        # reuse the request validation rules
        TopKRequest(k=self.k, kbar=self.kbar, mechanism=self.mechanism)
        if not self.threshold_scale > 0:
            raise ValueError("threshold_scale must be positive")

    def request(self) -> TopKRequest:
        return TopKRequest(k=self.k, kbar=self.kbar, mechanism=self.mechanism)


@dataclasses.dataclass(frozen=True)
class VerificationReport:
    """Outcome of one neighbor-pair DP check."""

    pair: dict
    eps_target: float
    delta_target: float
    delta_measured: float
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "pair": self.pair,
            "eps_target": self.eps_target,
            "delta_target": self.delta_target,
            "delta_measured": self.delta_measured,
            "pass": self.passed,
        }


def _logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


def _scaled_value(threshold: BottomThreshold, scale: float) -> float:
    return threshold.value - (1.0 - scale) * threshold.additive_term


def _outcome_count(m: int, k: int) -> int:
    # number of distinct sequences: falling factorials for every stop depth
    total = 0
    falling = 1
    for j in range(k + 1):
        if j > 0:
            falling *= m - (j - 1)
            if falling <= 0:
                falling = 0
        total += falling
    return total


def exact_peeling_distribution(
    h: Histogram,
    domain: Sequence[str],
    k: int,
    h_bot: float,
    eps: float,
    max_outcomes: int = _DEFAULT_MAX_OUTCOMES,
) -> ExactDistribution:
    """Closed-form law of the k-round peeling selection over domain.

    A sequence (o_1, ..., o_j, stop) with j < k has probability
    prod_t w(o_t)/(W + R_t) times W/(W + R_j), where w(i) = exp(eps*count_i),
    W = exp(eps*h_bot), and R_t sums the remaining candidate weights before
    round t+1. Full length-k sequences drop the final stop factor. All
    products are accumulated in log space.

    Raises:
      ResourceLimitError: the outcome space exceeds max_outcomes.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    m = len(domain)
    if _outcome_count(m, k) > max_outcomes:
        raise ResourceLimitError(
            f"outcome space for |domain|={m}, k={k} exceeds {max_outcomes}"
        )
    log_w = {label: eps * h.get(label) for label in domain}
    log_bot = eps * h_bot
    probs: Dict[Outcome, float] = {}

    def recurse(prefix: Tuple[str, ...], remaining: Tuple[str, ...], acc: float):
        if len(prefix) == k:
            probs[prefix] = probs.get(prefix, 0.0) + math.exp(acc)
            return
        z = _logsumexp([log_bot] + [log_w[label] for label in remaining])
        stopped = prefix + (BOTTOM,)
        probs[stopped] = probs.get(stopped, 0.0) + math.exp(acc + log_bot - z)
        for i, label in enumerate(remaining):
            recurse(
                prefix + (label,),
                remaining[:i] + remaining[i + 1 :],
                acc + log_w[label] - z,
            )

    recurse((), tuple(domain), 0.0)
    return ExactDistribution(probs=probs)


def exact_mechanism_distribution(
    h: Histogram,
    config: MechanismConfig,
    max_outcomes: int = _DEFAULT_MAX_OUTCOMES,
) -> ExactDistribution:
    """Exact output law of a configured mechanism on h.

    Supports the Gumbel-family mechanisms ("limited", "strict", "optimal")
    and the fixed-threshold mechanism, whose law is a product of independent
    per-index inclusions. The Laplace variant has no tractable exact law;
    use monte_carlo_distribution for it.
    """
    params = config.params
    eps = params.eps
    if config.mechanism == "limited":
        domain = limited_domain(h, config.kbar)
        bt = bottom_threshold(h, config.kbar, params, "limited")
        return exact_peeling_distribution(
            h, domain, config.k, _scaled_value(bt, config.threshold_scale), eps, max_outcomes
        )
    if config.mechanism == "strict":
        candidates = strict_limited_domain(h, config.kbar)
        bt = bottom_threshold(h, config.kbar, params, "strict")
        return exact_peeling_distribution(
            h, candidates, config.k, _scaled_value(bt, config.threshold_scale), eps, max_outcomes
        )
    if config.mechanism == "fixed":
        candidates = strict_limited_domain(h, config.k)
        bt = bottom_threshold(h, config.k, params, "fixed")
        h_bot = _scaled_value(bt, config.threshold_scale)
        if 2 ** len(candidates) > max_outcomes:
            raise ResourceLimitError("fixed-threshold subset space exceeds the guard")
        inclusion = []
        for label in candidates:
            t = h_bot - h.get(label)
            if t >= 0:
                inclusion.append(0.5 * math.exp(-eps * t))
            else:
                inclusion.append(1.0 - 0.5 * math.exp(eps * t))
        probs: Dict[Outcome, float] = {}
        for mask in itertools.product((False, True), repeat=len(candidates)):
            p = 1.0
            chosen = []
            for label, inc, take in zip(candidates, inclusion, mask):
                p *= inc if take else 1.0 - inc
                if take:
                    chosen.append(label)
            key = tuple(sorted(chosen))
            probs[key] = probs.get(key, 0.0) + p
        return ExactDistribution(probs=probs)
    if config.mechanism == "optimal":
        if params.sensitivity.is_restricted:
            raise ValueError("optimal-threshold mechanism requires unrestricted sensitivity")
        dbar = config.kbar
        scores = threshold_scores(h, config.k, dbar, params)
        log_sel = [-eps * s for s in scores]
        z = _logsumexp(log_sel)
        probs = {}
        for offset, kbar in enumerate(range(config.k, dbar + 1)):
            p_sel = math.exp(log_sel[offset] - z)
            marker = f"__kbar_{kbar}__"
            if config.k == 1:
                inner = ExactDistribution(probs={(): 1.0})
            else:
                bt = bottom_threshold(h, kbar, params, "limited")
                inner = exact_peeling_distribution(
                    h,
                    limited_domain(h, kbar),
                    config.k - 1,
                    _scaled_value(bt, config.threshold_scale),
                    eps,
                    max_outcomes,
                )
            for outcome, p in inner.probs.items():
                key = (marker,) + outcome
                probs[key] = probs.get(key, 0.0) + p_sel * p
        return ExactDistribution(probs=probs)
    if config.mechanism == "laplace":
        raise ValueError("no exact law for the laplace variant; use monte_carlo_distribution")
    raise ValueError(f"unknown mechanism {config.mechanism!r}")


def hockey_stick_divergence(p: ExactDistribution, q: ExactDistribution, eps: float) -> float:
    """Returns sum_o max(0, p(o) - e^eps * q(o)), the tight delta at eps."""
    grow = math.exp(eps)
    outcomes = set(p.probs) | set(q.probs)
    return sum(max(0.0, p.get(o) - grow * q.get(o)) for o in outcomes)


def total_variation(p: ExactDistribution, q: ExactDistribution) -> float:
    """Total variation distance between two outcome distributions."""
    outcomes = set(p.probs) | set(q.probs)
    return 0.5 * sum(abs(p.get(o) - q.get(o)) for o in outcomes)


def enumerate_neighbors(
    label_universe: Sequence[str],
    max_count: int,
    restricted_delta: Optional[int] = None,
) -> List[NeighborPair]:
    """All neighbor pairs over a tiny universe, exhaustively.

    Every base histogram with counts in [0, max_count] is combined with
    every nonempty user element set (capped at restricted_delta when set);
    h adds the user to the base, h_prime is the base. Pairs whose h would
    exceed max_count are skipped so both sides stay within the cap.

    Raises:
      ResourceLimitError: universe larger than 6 or max_count above 5.
    """
    if len(label_universe) > 6 or max_count > 5:
        raise ResourceLimitError("neighbor enumeration guard: universe <= 6, counts <= 5")
    if max_count < 1:
        raise ValueError("max_count must be >= 1")
    universe = tuple(label_universe)
    user_sets = [
        subset
        for size in range(1, len(universe) + 1)
        for subset in itertools.combinations(universe, size)
        if restricted_delta is None or size <= restricted_delta
    ]
    pairs = []
    for base in itertools.product(range(max_count + 1), repeat=len(universe)):
        h_prime = Histogram({lab: c for lab, c in zip(universe, base) if c > 0})
        for subset in user_sets:
            bumped = dict(h_prime.counts)
            for label in subset:
                bumped[label] = bumped.get(label, 0) + 1
            if max(bumped.values()) > max_count:
                continue
            pairs.append(
                NeighborPair(
                    h=Histogram(bumped),
                    h_prime=h_prime,
                    user_elements=frozenset(subset),
                    restricted_delta=restricted_delta,
                )
            )
    return pairs


def flip_pair(pair: NeighborPair) -> NeighborPair:
    """The same neighbor pair viewed from the other histogram.

    h and h_prime swap and the direction flips, so checks that treat h as
    the reference can be run in both orientations.
    """
    return NeighborPair(
        h=pair.h_prime,
        h_prime=pair.h,
        user_elements=pair.user_elements,
        restricted_delta=pair.restricted_delta,
        direction="added" if pair.direction == "removed" else "removed",
    )


def verify_mechanism_dp(
    pair: NeighborPair,
    config: MechanismConfig,
    eps_target: float,
    delta_target: float,
    max_outcomes: int = _DEFAULT_MAX_OUTCOMES,
) -> VerificationReport:
    """Exact two-sided DP check of a mechanism on one neighbor pair.

    Builds the exact output law on both histograms and measures the
    hockey-stick divergence in both directions at eps_target; the pair
    passes when the larger direction is at most delta_target.
    """
    p = exact_mechanism_distribution(pair.h, config, max_outcomes)
    q = exact_mechanism_distribution(pair.h_prime, config, max_outcomes)
    measured = max(
        hockey_stick_divergence(p, q, eps_target),
        hockey_stick_divergence(q, p, eps_target),
    )
    return VerificationReport(
        pair=pair.describe(),
        eps_target=eps_target,
        delta_target=delta_target,
        delta_measured=measured,
        passed=measured <= delta_target,
    )


def bad_event_probability(
    pair: NeighborPair,
    k: int,
    kbar: int,
    params: PrivacyParams,
    threshold_scale: float = 1.0,
) -> float:
    """Exact mass the limited-domain mechanism on pair.h puts on outcomes
    naming a label outside pair.h_prime's candidate domain."""
    config = MechanismConfig("limited", k, kbar, params, threshold_scale)
    dist = exact_mechanism_distribution(pair.h, config)
    foreign = set(limited_domain(pair.h, kbar)) - set(limited_domain(pair.h_prime, kbar))
    if not foreign:
        return 0.0
    return sum(
        p for outcome, p in dist.probs.items() if any(label in foreign for label in outcome)
    )


def factorization_gap(
    pair: NeighborPair,
    k: int,
    kbar: int,
    params: PrivacyParams,
) -> float:
    """Largest pointwise error of the domain-restriction factorization.

    Compares Pr[peel over D(h) = o] against Pr[peel over D(h) intersect
    D(h') = o] times Pr[peel over D(h) avoids the foreign-label outcomes],
    over every outcome o free of foreign labels. Both factors use h's own
    counts and stop threshold; only the candidate set shrinks.
    """
    domain = limited_domain(pair.h, kbar)
    other = set(limited_domain(pair.h_prime, kbar))
    foreign = set(domain) - other
    h_bot = bottom_threshold(pair.h, kbar, params, "limited").value
    full = exact_peeling_distribution(pair.h, domain, k, h_bot, params.eps)
    shared = tuple(label for label in domain if label not in foreign)
    restricted = exact_peeling_distribution(pair.h, shared, k, h_bot, params.eps)
    avoid = 1.0 - sum(
        p for outcome, p in full.probs.items() if any(label in foreign for label in outcome)
    )
    gap = 0.0
    outcomes = set(full.probs) | set(restricted.probs)
    for outcome in outcomes:
        if any(label in foreign for label in outcome):
            continue
        gap = max(gap, abs(full.get(outcome) - restricted.get(outcome) * avoid))
    return gap


def laplace_tail_difference(t: float, eps: float) -> float:
    """Pr[Lap(1/eps) > t + Lap(1/eps)] for t >= 0: (2 + eps*t) * e^(-eps*t) / 4."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if not eps > 0:
        raise ValueError("eps must be positive")
    return 0.25 * (2.0 + eps * t) * math.exp(-eps * t)


def monte_carlo_distribution(
    config: MechanismConfig,
    h: Histogram,
    n_samples: int,
    rng: SeededRng,
) -> ExactDistribution:
    """Empirical outcome frequencies from n_samples mechanism runs.

    Samples the real mechanism (threshold_scale is not applied) and encodes
    outcomes exactly like exact_mechanism_distribution so the two tables are
    directly comparable.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    batch = run_batch(h, config.request(), config.params, rng, n_samples)
    columns = [batch.idx, batch.terminated.astype(np.int32)[:, None]]
    if batch.kbar_selected is not None:
        columns.append(batch.kbar_selected.astype(np.int32)[:, None])
    rows = np.concatenate([np.asarray(c, dtype=np.int32) for c in columns], axis=1)
    unique, counts = np.unique(rows, axis=0, return_counts=True)
    width = batch.idx.shape[1]
    probs: Dict[Outcome, float] = {}
    for row, count in zip(unique, counts):
        labels = [batch.labels[int(i)] for i in row[:width] if int(i) >= 0]
        if config.mechanism == "fixed":
            outcome: Outcome = tuple(sorted(labels))
        else:
            outcome = tuple(labels)
            if row[width]:
                outcome = outcome + (BOTTOM,)
        if batch.kbar_selected is not None:
            outcome = (f"__kbar_{int(row[-1])}__",) + outcome
        probs[outcome] = probs.get(outcome, 0.0) + int(count) / n_samples
    return ExactDistribution(probs=probs)


@dataclasses.dataclass(frozen=True)
class FirstIndexComparison:
    """First-draw probabilities of the true top label, both candidate rules."""

    p_limited: float
    p_full: float
    condition_holds: bool


def first_index_comparison(
    h: Histogram,
    kbar: int,
    params: PrivacyParams,
) -> FirstIndexComparison:
    """Compares the first-draw chance of the top label under the cut domain
    against the full-universe selection.

    The universe is every stored label of h, zero counts included; it must
    hold at least kbar labels. The cut rule wins exactly when the stop
    weight is at most the total weight of the tail beyond the cut; the
    returned condition records that comparison and is checked against the
    probabilities themselves.
    """
    ranked = sorted(h.counts.items(), key=lambda e: (-e[1], e[0]))
    if len(ranked) < kbar:
        raise ValueError("universe must contain at least kbar labels")
    eps = params.eps
    log_ws = [eps * count for _, count in ranked]
    top = log_ws[0]
    head = [math.exp(v - top) for v in log_ws[:kbar]]
    tail = [math.exp(v - top) for v in log_ws[kbar:]]
    w_bot = math.exp(eps * bottom_threshold(h, kbar, params, "limited").value - top)
    p_limited = head[0] / (w_bot + sum(head))
    p_full = head[0] / (sum(head) + sum(tail))
    condition = w_bot <= sum(tail)
    if (p_limited >= p_full) != condition and not math.isclose(
        p_limited, p_full, rel_tol=1e-12, abs_tol=1e-15
    ):
        raise RuntimeError("first-index condition disagrees with the exact probabilities")
    return FirstIndexComparison(p_limited=p_limited, p_full=p_full, condition_holds=condition)


# Stock verification suites: one small enumerated family, parameters chosen
# so every law is exactly computable in well under a minute.
_FAMILY_UNIVERSE = ("a", "b", "c")
_FAMILY_MAX_COUNT = 3
_FAMILY_PARAMS = dict(eps=0.3, delta=0.2, delta_prime=0.0)


def _suite_dp(threshold_scale: float, max_outcomes: int) -> dict:
    params = PrivacyParams(**_FAMILY_PARAMS)
    pairs = enumerate_neighbors(_FAMILY_UNIVERSE, _FAMILY_MAX_COUNT)
    checks = []
    plans = [
        ("limited", MechanismConfig("limited", 2, 2, params, threshold_scale), 2 * params.eps, params.delta),
        ("strict", MechanismConfig("strict", 2, 2, params, threshold_scale), 2 * params.eps, params.delta),
        ("optimal", MechanismConfig("optimal", 2, 3, params, threshold_scale), 3 * params.eps, params.delta),
        ("fixed", MechanismConfig("fixed", 2, 2, params, threshold_scale), 2 * params.eps, 2 * params.delta),
    ]
    for name, config, eps_target, delta_target in plans:
        worst = None
        failures = 0
        for pair in pairs:
            report = verify_mechanism_dp(pair, config, eps_target, delta_target, max_outcomes)
            if worst is None or report.delta_measured > worst.delta_measured:
                worst = report
            failures += 0 if report.passed else 1
        checks.append(
            {
                "name": f"dp:{name}",
                "pairs": len(pairs),
                "failures": failures,
                "worst": worst.to_json_dict(),
                "passed": failures == 0,
            }
        )
    return {"suite": "dp", "passed": all(c["passed"] for c in checks), "checks": checks}


def _suite_bad_event(threshold_scale: float) -> dict:
    params = PrivacyParams(**_FAMILY_PARAMS)
    pairs = enumerate_neighbors(_FAMILY_UNIVERSE, _FAMILY_MAX_COUNT)
    worst = -1.0
    worst_pair = None
    failures = 0
    for pair in pairs:
        for oriented in (pair, flip_pair(pair)):
            mass = bad_event_probability(oriented, 2, 2, params, threshold_scale)
            if mass > worst:
                worst, worst_pair = mass, oriented.describe()
            if mass > params.delta:
                failures += 1
    check = {
        "name": "bad-event:limited",
        "pairs": 2 * len(pairs),
        "failures": failures,
        "worst": {"pair": worst_pair, "mass": worst, "delta": params.delta},
        "passed": failures == 0,
    }
    return {"suite": "bad-event", "passed": check["passed"], "checks": [check]}


def _suite_equivalence(seed: int, n_samples: int) -> dict:
    h = Histogram({"a": 4, "b": 3, "c": 1, "d": 0})
    params = PrivacyParams(eps=1.0, delta=0.1)
    config = MechanismConfig("limited", 3, 4, params)
    exact = exact_mechanism_distribution(h, config)
    empirical = monte_carlo_distribution(config, h, n_samples, SeededRng(seed))
    tv = total_variation(exact, empirical)
    check = {
        "name": "equivalence:limited",
        "samples": n_samples,
        "tv": tv,
        "tolerance": 0.02,
        "passed": tv < 0.02,
    }
    return {"suite": "equivalence", "passed": check["passed"], "checks": [check]}


def verify_suite(
    suite: str,
    threshold_scale: float = 1.0,
    seed: int = 0,
    n_samples: int = 200000,
    max_outcomes: int = _DEFAULT_MAX_OUTCOMES,
) -> dict:
    """Runs a named verification suite and returns a JSON-ready summary.

    Suites: "dp" (exact neighbor-pair checks for the limited, strict,
    optimal and fixed mechanisms), "bad-event" (foreign-label mass bound,
    both orientations), "equivalence" (sampled mechanism vs exact law), or
    "all". threshold_scale below 1 weakens the modeled stop margin and must
    make "dp" or "bad-event" fail; it leaves "equivalence" untouched.
    """
    if suite == "dp":
        return _suite_dp(threshold_scale, max_outcomes)
    if suite == "bad-event":
        return _suite_bad_event(threshold_scale)
    if suite == "equivalence":
        return _suite_equivalence(seed, n_samples)
    if suite == "all":
        results = [
            _suite_dp(threshold_scale, max_outcomes),
            _suite_bad_event(threshold_scale),
            _suite_equivalence(seed, n_samples),
        ]
        return {
            "suite": "all",
            "passed": all(r["passed"] for r in results),
            "suites": results,
        }
    raise ValueError(f"unknown suite {suite!r}")
