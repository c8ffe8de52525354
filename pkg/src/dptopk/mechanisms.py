"""Private top-k selection mechanisms.

All selection rules share one engine: add noise to candidate counts, compare
against a (possibly noisy) stop threshold, keep the qualifying prefix of the
noisy ranking. Variants differ in the candidate domain, the noise family,
and the threshold margin. A vectorized batch path backs the Monte-Carlo
tooling; single runs are batches of one. The step-by-step peeling sampler is
kept deliberately sequential because its agreement with the one-shot rule is
one of the distributional facts under test.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from dptopk.core import (
    Histogram,
    PrivacyParams,
    TopKOutput,
    TopKRequest,
    limited_domain,
    sorted_view,
    strict_limited_domain,
)
from dptopk.noise import NoiseScale, SeededRng, sample_gumbel, sample_laplace

__all__ = [
    "BatchOutcomes",
    "BottomThreshold",
    "MechanismResult",
    "THRESHOLD_VARIANTS",
    "bottom_threshold",
    "exponential_mechanism",
    "fixed_threshold_topk",
    "laplace_limited_topk",
    "limited_domain_topk",
    "oneshot_gumbel_topk",
    "optimal_threshold_topk",
    "peeling_em",
    "run_batch",
    "run_mechanism",
    "threshold_scores",
]

THRESHOLD_VARIANTS = ("limited", "strict", "laplace", "fixed")


@dataclasses.dataclass(frozen=True)
class BottomThreshold:
    """Stop-symbol count: value = rank_count(kbar+1) + 1 + additive_term."""

    value: float
    additive_term: float


@dataclasses.dataclass(frozen=True)
class MechanismResult:
    """A mechanism run: the released output plus, for the optimal-threshold
    composite, the publicly released cut."""

    output: TopKOutput
    kbar_selected: Optional[int] = None


@dataclasses.dataclass(frozen=True)
class BatchOutcomes:
    """Vectorized mechanism outcomes for Monte-Carlo use.

    idx holds positions into labels, one row per run, -1 padded. For ranked
    mechanisms a row is the released prefix in released order; for the
    fixed-threshold mechanism it is the released set in rank order.
    kbar_selected is present only for the optimal-threshold composite.
    """

    mechanism: str
    labels: Tuple[str, ...]
    idx: np.ndarray
    terminated: np.ndarray
    kbar_selected: Optional[np.ndarray] = None


def bottom_threshold(
    h: Histogram,
    kbar: int,
    params: PrivacyParams,
    variant: str = "limited",
) -> BottomThreshold:
    """Computes the stop-symbol count for a mechanism variant.

    The additive margin T is ln(m/delta)/eps where m is min(sensitivity,
    kbar) for "limited", kbar for "strict", the restricted sensitivity for
    "laplace", and 1/2 for "fixed" (there kbar is the output size k).

    Args:
      h: input histogram.
      kbar: candidate cut (the output size k for the "fixed" variant).
      params: privacy parameters; "laplace" requires restricted sensitivity.
      variant: one of THRESHOLD_VARIANTS.

    Returns:
      BottomThreshold at rank_count(kbar+1) + 1 + T.
    """
    if kbar < 1:
        raise ValueError("kbar must be >= 1")
    if variant == "limited":
        m = float(params.sensitivity.effective_min(kbar))
    elif variant == "strict":
        m = float(kbar)
    elif variant == "laplace":
        if not params.sensitivity.is_restricted:
            raise ValueError("laplace variant requires restricted sensitivity")
        m = float(params.sensitivity.delta)
    elif variant == "fixed":
        m = 0.5
    else:
        raise ValueError(f"unknown threshold variant {variant!r}")
    additive = math.log(m / params.delta) / params.eps
    base = sorted_view(h).rank_count(kbar + 1)
    return BottomThreshold(value=base + 1.0 + additive, additive_term=additive)


def exponential_mechanism(
    h: Histogram,
    candidates: Sequence[str],
    eps: float,
    rng: SeededRng,
) -> str:
    """Selects one candidate with probability proportional to exp(eps*count).

    Implemented as the noisy argmax of count + Gumbel(1/eps).
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    if not eps > 0:
        raise ValueError("eps must be positive")
    counts = np.array([h.get(label) for label in candidates], dtype=float)
    noisy = counts + sample_gumbel(rng, NoiseScale(1.0 / eps), len(candidates))
    return candidates[int(np.argmax(noisy))]


def oneshot_gumbel_topk(
    h: Histogram,
    candidates: Sequence[str],
    k: int,
    eps: float,
    rng: SeededRng,
) -> Tuple[str, ...]:
    """Returns the k candidates with the largest count + Gumbel(1/eps) noise,
    in descending noisy order. Distributed as k rounds of peeling selection."""
    if k < 1 or k > len(candidates):
        raise ValueError("k must satisfy 1 <= k <= len(candidates)")
    if not eps > 0:
        raise ValueError("eps must be positive")
    counts = np.array([h.get(label) for label in candidates], dtype=float)
    noisy = counts + sample_gumbel(rng, NoiseScale(1.0 / eps), len(candidates))
    order = np.argsort(-noisy)[:k]
    return tuple(candidates[int(i)] for i in order)


def _batch_threshold_prefix(
    counts: np.ndarray,
    h_bot: float,
    k: int,
    eps: float,
    rng: SeededRng,
    n: int,
    noise: str,
) -> Tuple[np.ndarray, np.ndarray]:
    """One-shot noisy ranking against a noisy stop threshold, n runs at once.

    Returns (idx, terminated): idx is (n, k) int32 of candidate positions in
    released order, -1 padded; terminated marks rows cut short of k.
    """
    m = counts.shape[0]
    scale = NoiseScale(1.0 / eps)
    sampler = sample_gumbel if noise == "gumbel" else sample_laplace
    idx = np.full((n, k), -1, dtype=np.int32)
    if m == 0:
        return idx, np.ones(n, dtype=bool)
    noisy = counts[None, :] + sampler(rng, scale, (n, m))
    noisy_bot = h_bot + sampler(rng, scale, (n, 1))
    take = min(k, m)
    order = np.argsort(-noisy, axis=1)[:, :take]
    above = np.take_along_axis(noisy, order, axis=1) > noisy_bot
    full = above.all(axis=1)
    lengths = np.where(full, take, above.argmin(axis=1))
    keep = np.arange(take)[None, :] < lengths[:, None]
    idx[:, :take] = np.where(keep, order, -1)
    terminated = lengths < k
    return idx, terminated


def _decode_row(
    labels: Tuple[str, ...],
    idx_row: np.ndarray,
    terminated: bool,
) -> TopKOutput:
    indices = tuple(labels[int(i)] for i in idx_row if i >= 0)
    return TopKOutput(indices=indices, terminated=bool(terminated))


def limited_domain_topk(
    h: Histogram,
    req: TopKRequest,
    params: PrivacyParams,
    rng: SeededRng,
) -> TopKOutput:
    """Top-k over the kbar highest-ranked labels with Gumbel noise.

    Adds Gumbel(1/eps) noise to the kbar candidate counts and to the stop
    threshold, then releases the noisy-descending prefix that clears the
    noisy threshold, truncated at k. A short prefix is stop-terminated.
    """
    domain = limited_domain(h, req.kbar)
    h_bot = bottom_threshold(h, req.kbar, params, "limited").value
    counts = np.array([h.get(label) for label in domain], dtype=float)
    idx, term = _batch_threshold_prefix(counts, h_bot, req.k, params.eps, rng, 1, "gumbel")
    return _decode_row(domain, idx[0], term[0])


def peeling_em(
    h: Histogram,
    domain: Sequence[str],
    k: int,
    kbar: int,
    params: PrivacyParams,
    rng: SeededRng,
) -> TopKOutput:
    """Draws up to k labels one at a time, stopping at the stop symbol.

    Each round selects from the remaining domain plus the stop symbol with
    probability proportional to exp(eps*count), the stop symbol weighted by
    the threshold count. Equal in distribution to limited_domain_topk when
    domain is the kbar-limited domain of h.
    """
    if k < 0 or k > kbar:
        raise ValueError("k must satisfy 0 <= k <= kbar")
    h_bot = bottom_threshold(h, kbar, params, "limited").value
    scale = NoiseScale(1.0 / params.eps)
    remaining = list(domain)
    released = []
    terminated = False
    for _ in range(k):
        noisy_bot = h_bot + sample_gumbel(rng, scale)
        if remaining:
            counts = np.array([h.get(label) for label in remaining], dtype=float)
            noisy = counts + sample_gumbel(rng, scale, len(remaining))
            winner = int(np.argmax(noisy))
            if noisy[winner] > noisy_bot:
                released.append(remaining.pop(winner))
                continue
        terminated = True
        break
    return TopKOutput(indices=tuple(released), terminated=terminated)


def strict_limited_topk(
    h: Histogram,
    req: TopKRequest,
    params: PrivacyParams,
    rng: SeededRng,
) -> TopKOutput:
    """Like limited_domain_topk but candidates must strictly beat the
    (kbar+1)-th count, the margin is ln(kbar/delta)/eps, and no padding is
    applied (the candidate list may be empty)."""
    candidates = strict_limited_domain(h, req.kbar)
    h_bot = bottom_threshold(h, req.kbar, params, "strict").value
    counts = np.array([h.get(label) for label in candidates], dtype=float)
    idx, term = _batch_threshold_prefix(counts, h_bot, req.k, params.eps, rng, 1, "gumbel")
    return _decode_row(candidates, idx[0], term[0])


def laplace_limited_topk(
    h: Histogram,
    req: TopKRequest,
    params: PrivacyParams,
    rng: SeededRng,
) -> TopKOutput:
    """Limited-domain top-k with Laplace(1/eps) noise.

    Requires restricted sensitivity; the threshold margin is
    ln(sensitivity/delta)/eps. Intended for sensitivity below k.
    """
    if not params.sensitivity.is_restricted:
        raise ValueError("laplace mechanism requires restricted sensitivity")
    domain = limited_domain(h, req.kbar)
    h_bot = bottom_threshold(h, req.kbar, params, "laplace").value
    counts = np.array([h.get(label) for label in domain], dtype=float)
    idx, term = _batch_threshold_prefix(counts, h_bot, req.k, params.eps, rng, 1, "laplace")
    return _decode_row(domain, idx[0], term[0])


def threshold_scores(h: Histogram, k: int, dbar: int, params: PrivacyParams) -> np.ndarray:
    """Cut-selection scores rank_count(i) + ln(i/delta)/eps for i in [k, dbar].

    Lower is better: a low score marks a sharp drop in the ranked counts
    right below an affordable stop margin.
    """
    view = sorted_view(h)
    return np.array(
        [view.rank_count(i) + math.log(i / params.delta) / params.eps for i in range(k, dbar + 1)],
        dtype=float,
    )


def optimal_threshold_topk(
    h: Histogram,
    k: int,
    dbar: int,
    params: PrivacyParams,
    rng: SeededRng,
) -> Tuple[int, TopKOutput]:
    """Selects the candidate cut privately, then runs top-(k-1) under it.

    The cut kbar in [k, dbar] is drawn by the exponential mechanism over
    negated threshold_scores (argmax of -score + Gumbel(1/eps)), released
    for free, and used as the limited-domain cut for a top-(k-1) run.

    Returns:
      (kbar, output). Budget accounting charges cost(output) + 1.
    """
    if params.sensitivity.is_restricted:
        raise ValueError("optimal-threshold mechanism requires unrestricted sensitivity")
    if dbar < k:
        raise ValueError("dbar must be >= k")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = threshold_scores(h, k, dbar, params)
    noisy = -scores + sample_gumbel(rng, NoiseScale(1.0 / params.eps), scores.shape[0])
    kbar = k + int(np.argmax(noisy))
    if k == 1:
        return kbar, TopKOutput(indices=(), terminated=False)
    inner = TopKRequest(k=k - 1, kbar=kbar, mechanism="limited")
    return kbar, limited_domain_topk(h, inner, params, rng)


def fixed_threshold_topk(
    h: Histogram,
    k: int,
    params: PrivacyParams,
    rng: SeededRng,
) -> TopKOutput:
    """Releases a subset of the strict level-k domain by noisy thresholding.

    The stop count uses margin ln(1/(2*delta))/eps and carries no noise of
    its own; each candidate whose count strictly beats the (k+1)-th count is
    included independently when count + Laplace(1/eps) clears the stop
    count. The result is an unordered set (reported in rank order) and is
    never stop-terminated.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = strict_limited_domain(h, k)
    h_bot = bottom_threshold(h, k, params, "fixed").value
    if not candidates:
        return TopKOutput(indices=(), terminated=False)
    counts = np.array([h.get(label) for label in candidates], dtype=float)
    noisy = counts + sample_laplace(rng, NoiseScale(1.0 / params.eps), len(candidates))
    released = tuple(label for label, v in zip(candidates, noisy) if v > h_bot)
    return TopKOutput(indices=released, terminated=False)


def run_mechanism(
    h: Histogram,
    req: TopKRequest,
    params: PrivacyParams,
    rng: SeededRng,
) -> MechanismResult:
    """Dispatches req.mechanism. For "optimal", req.kbar is the top of the
    cut search range and the selected cut is reported in the result."""
    if req.mechanism == "limited":
        return MechanismResult(output=limited_domain_topk(h, req, params, rng))
    if req.mechanism == "strict":
        return MechanismResult(output=strict_limited_topk(h, req, params, rng))
    if req.mechanism == "laplace":
        return MechanismResult(output=laplace_limited_topk(h, req, params, rng))
    if req.mechanism == "optimal":
        kbar, output = optimal_threshold_topk(h, req.k, req.kbar, params, rng)
        return MechanismResult(output=output, kbar_selected=kbar)
    if req.mechanism == "fixed":
        return MechanismResult(output=fixed_threshold_topk(h, req.k, params, rng))
    raise ValueError(f"unknown mechanism {req.mechanism!r}")


def run_batch(
    h: Histogram,
    req: TopKRequest,
    params: PrivacyParams,
    rng: SeededRng,
    n: int,
) -> BatchOutcomes:
    """Runs the requested mechanism n times with vectorized noise.

    The sampled law is identical to n independent run_mechanism calls; only
    the noise draws are batched.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if req.mechanism == "limited":
        domain = limited_domain(h, req.kbar)
        h_bot = bottom_threshold(h, req.kbar, params, "limited").value
        counts = np.array([h.get(label) for label in domain], dtype=float)
        idx, term = _batch_threshold_prefix(counts, h_bot, req.k, params.eps, rng, n, "gumbel")
        return BatchOutcomes("limited", domain, idx, term)
    if req.mechanism == "strict":
        candidates = strict_limited_domain(h, req.kbar)
        h_bot = bottom_threshold(h, req.kbar, params, "strict").value
        counts = np.array([h.get(label) for label in candidates], dtype=float)
        idx, term = _batch_threshold_prefix(counts, h_bot, req.k, params.eps, rng, n, "gumbel")
        return BatchOutcomes("strict", candidates, idx, term)
    if req.mechanism == "laplace":
        if not params.sensitivity.is_restricted:
            raise ValueError("laplace mechanism requires restricted sensitivity")
        domain = limited_domain(h, req.kbar)
        h_bot = bottom_threshold(h, req.kbar, params, "laplace").value
        counts = np.array([h.get(label) for label in domain], dtype=float)
        idx, term = _batch_threshold_prefix(counts, h_bot, req.k, params.eps, rng, n, "laplace")
        return BatchOutcomes("laplace", domain, idx, term)
    if req.mechanism == "fixed":
        candidates = strict_limited_domain(h, req.k)
        h_bot = bottom_threshold(h, req.k, params, "fixed").value
        idx = np.full((n, max(req.k, 1)), -1, dtype=np.int32)
        term = np.zeros(n, dtype=bool)
        if candidates:
            counts = np.array([h.get(label) for label in candidates], dtype=float)
            noisy = counts[None, :] + sample_laplace(
                rng, NoiseScale(1.0 / params.eps), (n, len(candidates))
            )
            include = noisy > h_bot
            # set semantics: report included positions in rank order
            for j in range(len(candidates)):
                col = include[:, : j + 1].sum(axis=1) - 1
                rows = include[:, j]
                idx[rows, col[rows]] = j
        return BatchOutcomes("fixed", candidates, idx, term)
    if req.mechanism == "optimal":
        if params.sensitivity.is_restricted:
            raise ValueError("optimal-threshold mechanism requires unrestricted sensitivity")
        dbar = req.kbar
        master = limited_domain(h, dbar)
        scores = threshold_scores(h, req.k, dbar, params)
        noisy = -scores[None, :] + sample_gumbel(
            rng, NoiseScale(1.0 / params.eps), (n, scores.shape[0])
        )
        kbar_sel = req.k + np.argmax(noisy, axis=1).astype(np.int32)
        width = max(req.k - 1, 1)
        idx = np.full((n, width), -1, dtype=np.int32)
        term = np.zeros(n, dtype=bool)
        for kbar in np.unique(kbar_sel):
            rows = np.flatnonzero(kbar_sel == kbar)
            if req.k == 1:
                continue
            h_bot = bottom_threshold(h, int(kbar), params, "limited").value
            counts = np.array([h.get(label) for label in master[: int(kbar)]], dtype=float)
            sub_idx, sub_term = _batch_threshold_prefix(
                counts, h_bot, req.k - 1, params.eps, rng, rows.shape[0], "gumbel"
            )
            idx[rows] = sub_idx
            term[rows] = sub_term
        return BatchOutcomes("optimal", master, idx, term, kbar_selected=kbar_sel)
    raise ValueError(f"unknown mechanism {req.mechanism!r}")
