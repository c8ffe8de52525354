"""Privacy-loss arithmetic and the pay-as-released budget session.

Composition bounds are computed for a worst case fixed up front (the total
index budget kmax and query budget ellmax), while the session charges each
query only for what it actually released: the returned indices plus one for
an early stop. A rejected query changes nothing.

Sessions are single-writer state machines. Callers that share a session
across threads or tasks must serialize query calls themselves; the HTTP
layer does so with one lock per session.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile
import uuid
from typing import Dict, List, Optional, Sequence

import numpy as np

from dptopk.core import (
    Histogram,
    PrivacyParams,
    SensitivitySetting,
    TopKRequest,
    UNRESTRICTED,
)
from dptopk.mechanisms import MechanismResult, run_mechanism
from dptopk.noise import SeededRng

__all__ = [
    "BudgetRejected",
    "BudgetSession",
    "CompositionBound",
    "SessionReport",
    "SessionStore",
    "advanced_composition",
    "bounded_range_composition",
    "eps_prime",
    "eps_prime_branches",
    "load_session",
    "mechanism_privacy_contract",
    "optimal_composition_delta",
    "optimal_dp_composition",
    "save_session",
    "session_create",
    "session_privacy_report",
    "session_query",
]

_OPTIMAL_K_CAP = 10_000


@dataclasses.dataclass(frozen=True)
class CompositionBound:
    """A privacy guarantee (eps_total, delta_total) plus branch bookkeeping.

    branch names the winning term of the relevant minimum; branches maps
    every evaluated term to its eps value so callers can inspect the ones
    that lost.
    """

    eps_total: float
    delta_total: float
    branch: str
    branches: Dict[str, float]

    def __post_init__(self):
        if self.eps_total < 0:
            raise ValueError("eps_total must be non-negative")
        if not 0 <= self.delta_total <= 1:
            raise ValueError("delta_total must lie in [0, 1]")


class BudgetRejected(Exception):
    """A query was refused for budget reasons; nothing was spent."""


def eps_prime_branches(k: int, eps: float, delta_prime: float) -> Dict[str, float]:
    """The three candidate totals for k homogeneous eps-range-bounded calls.

    With delta_prime = 0 only the linear term applies; otherwise the two
    noisy terms trade a sqrt(k) growth for the extra delta_prime slack.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if delta_prime < 0:
        raise ValueError("delta_prime must be non-negative")
    branches = {"basic": k * eps}
    if delta_prime > 0:
        log_term = math.log(1.0 / delta_prime)
        branches["advanced"] = (
            k * eps * (math.exp(eps) - 1.0) / (math.exp(eps) + 1.0)
            + eps * math.sqrt(2.0 * k * log_term)
        )
        branches["bounded-range"] = k * eps * eps / 2.0 + eps * math.sqrt(
            0.5 * k * log_term
        )
    return branches


def eps_prime(k: int, eps: float, delta_prime: float) -> float:
    """Total eps for k homogeneous calls: the smallest applicable branch."""
    return min(eps_prime_branches(k, eps, delta_prime).values())


def advanced_composition(
    eps_list: Sequence[float],
    delta_list: Sequence[float],
    delta_prime: float,
) -> CompositionBound:
    """Composes heterogeneous (eps_i, delta_i)-DP calls.

    eps_total is the smaller of the plain sum and the noisy bound
    sum_i eps_i*(e^{eps_i}-1)/(e^{eps_i}+1) + sqrt(2*sum eps_i^2*ln(1/d'));
    delta_total is sum delta_i + delta_prime.
    """
    if len(eps_list) != len(delta_list):
        raise ValueError("eps_list and delta_list must have equal length")
    if not eps_list:
        raise ValueError("at least one mechanism is required")
    if any(not e > 0 for e in eps_list):
        raise ValueError("every eps must be positive")
    if delta_prime < 0:
        raise ValueError("delta_prime must be non-negative")
    branches = {"basic": float(sum(eps_list))}
    if delta_prime > 0:
        log_term = math.log(1.0 / delta_prime)
        mean_term = sum(e * (math.exp(e) - 1.0) / (math.exp(e) + 1.0) for e in eps_list)
        branches["advanced"] = mean_term + math.sqrt(
            2.0 * sum(e * e for e in eps_list) * log_term
        )
    branch = min(branches, key=branches.get)
    return CompositionBound(
        eps_total=branches[branch],
        delta_total=float(sum(delta_list)) + delta_prime,
        branch=branch,
        branches=branches,
    )


def bounded_range_composition(eps_list: Sequence[float], delta: float) -> CompositionBound:
    """Composes eps_i-range-bounded calls; tighter than advanced composition.

    Range-boundedness is the caller's obligation (the count-based selection
    rules here satisfy it). Adds a third candidate total
    sum eps_i^2/2 + sqrt(sum eps_i^2/2 * ln(1/delta)); delta_total is just
    delta because range-bounded calls spend no per-call delta.
    """
    if not eps_list:
        raise ValueError("at least one mechanism is required")
    if any(not e > 0 for e in eps_list):
        raise ValueError("every eps must be positive")
    if delta < 0 or delta >= 1:
        raise ValueError("delta must lie in [0, 1)")
    branches = {"basic": float(sum(eps_list))}
    if delta > 0:
        log_term = math.log(1.0 / delta)
        sum_sq = sum(e * e for e in eps_list)
        mean_term = sum(e * (math.exp(e) - 1.0) / (math.exp(e) + 1.0) for e in eps_list)
        branches["advanced"] = mean_term + math.sqrt(2.0 * sum_sq * log_term)
        branches["bounded-range"] = sum_sq / 2.0 + math.sqrt(0.5 * sum_sq * log_term)
    branch = min(branches, key=branches.get)
    return CompositionBound(
        eps_total=branches[branch],
        delta_total=delta,
        branch=branch,
        branches=branches,
    )


def optimal_composition_delta(k: int, eps: float, i: int) -> float:
    """Exact smallest delta at which k pure-eps calls are ((k-2i)eps, delta)-DP.

    delta_i = sum_{l=0}^{i-1} C(k,l) * (e^{(k-l)eps} - e^{(k-2i+l)eps})
    divided by (1+e^eps)^k, evaluated in log space.
    """
    if k < 1 or k > _OPTIMAL_K_CAP:
        raise ValueError(f"k must lie in [1, {_OPTIMAL_K_CAP}]")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if i < 0 or i > k // 2:
        raise ValueError("i must lie in [0, k//2]")
    if i == 0:
        return 0.0
    log_denominator = k * float(np.logaddexp(0.0, eps))
    ells = np.arange(i, dtype=float)
    log_binom = (
        math.lgamma(k + 1)
        - np.array([math.lgamma(l + 1) + math.lgamma(k - l + 1) for l in range(i)])
    )
    # e^{(k-l)eps} - e^{(k-2i+l)eps} = e^{(k-l)eps} * (1 - e^{-2(i-l)eps})
    log_terms = log_binom + (k - ells) * eps + np.log1p(-np.exp(-2.0 * (i - ells) * eps))
    peak = float(np.max(log_terms))
    log_numerator = peak + math.log(float(np.sum(np.exp(log_terms - peak))))
    return math.exp(log_numerator - log_denominator)


def optimal_dp_composition(k: int, eps: float, delta_cap: float) -> CompositionBound:
    """Best exact guarantee for k pure-eps calls under a delta budget.

    Scans i = 0..k//2 and keeps the largest i whose exact delta_i stays at
    or below delta_cap, i.e. the smallest achievable (k-2i)*eps.
    """
    if not 0 < delta_cap < 1:
        raise ValueError("delta_cap must lie in (0, 1)")
    best_i = 0
    best_delta = 0.0
    for i in range(k // 2 + 1):
        delta_i = optimal_composition_delta(k, eps, i)
        if delta_i <= delta_cap:
            best_i, best_delta = i, delta_i
    eps_total = (k - 2 * best_i) * eps
    return CompositionBound(
        eps_total=eps_total,
        delta_total=best_delta,
        branch="optimal",
        branches={"optimal": eps_total},
    )


def mechanism_privacy_contract(
    mechanism: str,
    k: int,
    params: PrivacyParams,
) -> CompositionBound:
    """Per-call privacy statement for one mechanism invocation.

    The ranked Gumbel mechanisms cost (eps_prime(k), delta + delta_prime),
    the cut-selecting composite substitutes k+1, the Laplace variant costs
    (d*eps, (e^{d*eps}+1)*delta_bar) at restricted sensitivity d, and the
    fixed-threshold rule costs (k*eps, k*delta) or its advanced-composition
    counterpart when delta_prime is spent.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if mechanism in ("limited", "strict"):
        branches = eps_prime_branches(k, params.eps, params.delta_prime)
        branch = min(branches, key=branches.get)
        return CompositionBound(
            eps_total=branches[branch],
            delta_total=params.delta + params.delta_prime,
            branch=branch,
            branches=branches,
        )
    if mechanism == "optimal":
        branches = eps_prime_branches(k + 1, params.eps, params.delta_prime)
        branch = min(branches, key=branches.get)
        return CompositionBound(
            eps_total=branches[branch],
            delta_total=params.delta + params.delta_prime,
            branch=branch,
            branches=branches,
        )
    if mechanism == "laplace":
        if not params.sensitivity.is_restricted:
            raise ValueError("laplace contract requires restricted sensitivity")
        d = params.sensitivity.delta
        eps_total = d * params.eps
        delta_bar = (params.delta / 4.0) * (3.0 + math.log(d / params.delta))
        return CompositionBound(
            eps_total=eps_total,
            delta_total=min(1.0, (math.exp(eps_total) + 1.0) * delta_bar),
            branch="laplace",
            branches={"laplace": eps_total},
        )
    if mechanism == "fixed":
        branches = {"basic": k * params.eps}
        delta_by_branch = {"basic": min(1.0, k * params.delta)}
        if params.delta_prime > 0:
            log_term = math.log(1.0 / params.delta_prime)
            e = params.eps
            branches["advanced"] = k * e * (math.exp(e) - 1.0) / (
                math.exp(e) + 1.0
            ) + e * math.sqrt(2.0 * k * log_term)
            delta_by_branch["advanced"] = min(1.0, k * params.delta + params.delta_prime)
        branch = min(branches, key=branches.get)
        return CompositionBound(
            eps_total=branches[branch],
            delta_total=delta_by_branch[branch],
            branch=branch,
            branches=branches,
        )
    raise ValueError(f"unknown mechanism {mechanism!r}")


@dataclasses.dataclass
class BudgetSession:
    """Mutable pay-as-released budget state.

    kmax_remaining counts indices (stop symbols included) still spendable;
    ellmax_remaining counts queries. Both only ever decrease. The log keeps
    one row per accepted query with the charged cost.
    """

    session_id: str
    eps: float
    delta: float
    delta_prime: float
    kmax_initial: int
    kmax_remaining: int
    ellmax_initial: int
    ellmax_remaining: int
    log: List[dict] = dataclasses.field(default_factory=list)

    def spent(self) -> int:
        return self.kmax_initial - self.kmax_remaining

    def to_json_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "eps": self.eps,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "kmax_initial": self.kmax_initial,
            "kmax_remaining": self.kmax_remaining,
            "ellmax_initial": self.ellmax_initial,
            "ellmax_remaining": self.ellmax_remaining,
            "log": list(self.log),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "BudgetSession":
        return cls(
            session_id=payload["session_id"],
            eps=payload["eps"],
            delta=payload["delta"],
            delta_prime=payload["delta_prime"],
            kmax_initial=payload["kmax_initial"],
            kmax_remaining=payload["kmax_remaining"],
            ellmax_initial=payload["ellmax_initial"],
            ellmax_remaining=payload["ellmax_remaining"],
            log=list(payload["log"]),
        )


@dataclasses.dataclass(frozen=True)
class SessionReport:
    """A session's a-priori guarantee plus realized spending."""

    session_id: str
    bound: CompositionBound
    spent: int
    queries: int
    kmax_initial: int
    kmax_remaining: int
    ellmax_initial: int
    ellmax_remaining: int

    def to_json_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "privacy": {
                "eps_max": self.bound.eps_total,
                "delta_total": self.bound.delta_total,
            },
            "spent": self.spent,
            "queries": self.queries,
            "budget": {
                "kmax_initial": self.kmax_initial,
                "kmax_remaining": self.kmax_remaining,
                "ellmax_initial": self.ellmax_initial,
                "ellmax_remaining": self.ellmax_remaining,
            },
        }


def session_create(
    kmax: int,
    ellmax: int,
    eps: float,
    delta: float,
    delta_prime: float = 0.0,
    session_id: Optional[str] = None,
) -> BudgetSession:
    """Opens a session with full budget.

    The guarantee quoted at creation holds for the whole adaptive lifetime:
    eps_max = eps_prime(kmax) and delta_total = 2*ellmax*delta + delta_prime.
    """
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    if ellmax < 1:
        raise ValueError("ellmax must be >= 1")
    PrivacyParams(eps=eps, delta=delta, delta_prime=delta_prime)  # validate
    return BudgetSession(
        session_id=session_id or uuid.uuid4().hex,
        eps=eps,
        delta=delta,
        delta_prime=delta_prime,
        kmax_initial=kmax,
        kmax_remaining=kmax,
        ellmax_initial=ellmax,
        ellmax_remaining=ellmax,
    )


def session_query(
    session: BudgetSession,
    h: Histogram,
    req: TopKRequest,
    rng: SeededRng,
    sensitivity: SensitivitySetting = UNRESTRICTED,
    store: Optional["SessionStore"] = None,
) -> MechanismResult:
    """Runs one query against the session budget.

    Rejects (raising BudgetRejected, spending nothing) when the query
    budget is exhausted or req.k exceeds the remaining index budget.
    Otherwise charges the realized cost: released indices, plus one for an
    early stop, plus one more for the cut-selecting composite. The updated
    state is journaled to store before the result is returned, so a crash
    can waste budget but never under-count it.
    """
    if session.ellmax_remaining <= 0:
        raise BudgetRejected("query budget exhausted")
    if req.k > session.kmax_remaining:
        raise BudgetRejected(
            f"k={req.k} exceeds remaining index budget {session.kmax_remaining}"
        )
    params = PrivacyParams(
        eps=session.eps,
        delta=session.delta,
        delta_prime=session.delta_prime,
        sensitivity=sensitivity,
    )
    result = run_mechanism(h, req, params, rng)
    cost = result.output.cost + (1 if req.mechanism == "optimal" else 0)
    session.kmax_remaining -= cost
    session.ellmax_remaining -= 1
    session.log.append(
        {
            "k": req.k,
            "kbar": req.kbar,
            "mechanism": req.mechanism,
            "indices": list(result.output.indices),
            "terminated": result.output.terminated,
            "cost": cost,
        }
    )
    if store is not None:
        store.save(session)
    return result


def session_close(session: BudgetSession, store: Optional["SessionStore"] = None) -> None:
    """Closes the session by zeroing the query budget."""
    session.ellmax_remaining = 0
    if store is not None:
        store.save(session)


def session_privacy_report(session: BudgetSession) -> SessionReport:
    """The a-priori guarantee (in terms of the initial budgets) plus the
    realized spending so far."""
    branches = eps_prime_branches(session.kmax_initial, session.eps, session.delta_prime)
    branch = min(branches, key=branches.get)
    bound = CompositionBound(
        eps_total=branches[branch],
        delta_total=min(1.0, 2.0 * session.ellmax_initial * session.delta + session.delta_prime),
        branch=branch,
        branches=branches,
    )
    return SessionReport(
        session_id=session.session_id,
        bound=bound,
        spent=session.spent(),
        queries=len(session.log),
        kmax_initial=session.kmax_initial,
        kmax_remaining=session.kmax_remaining,
        ellmax_initial=session.ellmax_initial,
        ellmax_remaining=session.ellmax_remaining,
    )


def save_session(session: BudgetSession, path: str) -> None:
    """Atomically writes the session JSON to path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(session.to_json_dict(), handle, indent=2)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def load_session(path: str) -> BudgetSession:
    """Reads a session JSON written by save_session."""
    with open(path, "r", encoding="utf-8") as handle:
        return BudgetSession.from_json_dict(json.load(handle))


class SessionStore:
    """One JSON file per session under a directory."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def path(self, session_id: str) -> str:
        if not session_id.replace("-", "").isalnum():
            raise KeyError(session_id)
        return os.path.join(self.directory, f"{session_id}.json")

    def save(self, session: BudgetSession) -> None:
        save_session(session, self.path(session.session_id))

    def load(self, session_id: str) -> BudgetSession:
        path = self.path(session_id)
        if not os.path.exists(path):
            raise KeyError(session_id)
        return load_session(path)
