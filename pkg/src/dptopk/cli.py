"""Command line front end for private top-k queries and budget sessions.

Every command prints machine-readable output (JSON objects, or CSV for the
composition table) so runs can be scripted and diffed. Seeded runs are byte
identical: keys are emitted sorted and floats use repr-stable formatting.

Exit codes: 0 for success (budget rejections included, they are a normal
outcome), 2 for usage errors, 3 when a verification suite fails.
"""

from __future__ import annotations

import json
import math
import os
import sys
from typing import Dict, List, Optional, Sequence

import click
import numpy as np

from dptopk.accountant import (
    BudgetRejected,
    bounded_range_composition,
    load_session,
    mechanism_privacy_contract,
    optimal_dp_composition,
    save_session,
    session_close,
    session_create,
    session_privacy_report,
    session_query,
)
from dptopk.core import (
    MECHANISMS,
    Histogram,
    ParseError,
    PrivacyParams,
    SensitivitySetting,
    TopKRequest,
    UNRESTRICTED,
    ingest_csv,
    sorted_view,
)
from dptopk.mechanisms import run_batch, run_mechanism
from dptopk.noise import SeededRng
from dptopk.oracle import verify_suite

SEED_ENV_VAR = "DPTOPK_SEED"


def _resolve_seed(seed: Optional[int]) -> Optional[int]:
    """CLI flag first, then the environment, then fresh entropy (None)."""
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise click.UsageError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return None


def parse_sensitivity(text: str) -> SensitivitySetting:
    """Parses 'unrestricted' or a positive integer cap on counts per user."""
    if text == "unrestricted":
        return UNRESTRICTED
    try:
        cap = int(text)
    except ValueError as exc:
        raise ValueError(
            f"sensitivity must be 'unrestricted' or a positive integer, got {text!r}"
        ) from exc
    return SensitivitySetting.restricted(cap)


def load_histogram_file(path: str) -> Histogram:
    """Reads a histogram from CSV (label,count header) or a JSON object.

    '-' reads CSV from stdin. JSON files must contain a single object
    mapping labels to integer counts.
    """
    if path == "-":
        return ingest_csv(sys.stdin)
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    if path.endswith(".json"):
        payload = json.loads(text)
        if not isinstance(payload, dict):
            raise ParseError(1, "JSON histogram must be an object mapping labels to counts")
        return Histogram(payload)
    return ingest_csv(text.splitlines())


def powerlaw_histogram(scale: float, exponent: float, support: int) -> Histogram:
    """Counts floor(scale * r^-exponent) for ranks r = 1..support."""
    if support < 1:
        raise ValueError("support must be >= 1")
    if scale <= 0:
        raise ValueError("scale must be positive")
    width = len(str(support))
    return Histogram(
        {f"r{r:0{width}d}": int(scale * r ** -exponent) for r in range(1, support + 1)}
    )


def flat_histogram(count: int, support: int) -> Histogram:
    """Every one of `support` labels holds the same count."""
    if support < 1:
        raise ValueError("support must be >= 1")
    width = len(str(support))
    return Histogram({f"r{r:0{width}d}": count for r in range(1, support + 1)})


def accuracy_report(
    h: Histogram,
    k: int,
    kbar: int,
    params: PrivacyParams,
    beta: float,
    trials: int,
    rng: SeededRng,
) -> dict:
    """Monte-Carlo utility report for the ranked mechanism on one histogram.

    alpha = ln(k*kbar/beta)/eps is the error radius below the k-th true
    count that released indices should stay above. A run is short when it
    stopped before k indices, and a violation when any released index falls
    more than alpha below the k-th count.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    alpha = math.log(k * kbar / beta) / params.eps
    view = sorted_view(h)
    margin = params.sensitivity.effective_min(kbar)
    separation_holds = view.rank_count(k) >= (
        view.rank_count(kbar + 1)
        + 1.0
        + math.log(margin / params.delta) / params.eps
        + math.log(k / beta) / params.eps
    )
    req = TopKRequest(k=k, kbar=kbar, mechanism="limited")
    batch = run_batch(h, req, params, rng, trials)
    counts = np.array([h.get(label) for label in batch.labels], dtype=float)
    released = counts[np.maximum(batch.idx, 0)]
    released[batch.idx < 0] = np.inf
    violations = (released < view.rank_count(k) - alpha).any(axis=1)
    return {
        "alpha": alpha,
        "beta": beta,
        "k": k,
        "kbar": kbar,
        "trials": trials,
        "separation_holds": bool(separation_holds),
        "short_output_rate": float(batch.terminated.mean()),
        "violation_rate": float(violations.mean()),
    }


def compose_row(k: int, eps: float, delta: float) -> Dict[str, float]:
    """One comparison row of the composition table.

    eps_bounded_range is evaluated at the flag delta. The ratio instead
    matches deltas: it divides the exact-composition eps by the
    range-bounded eps evaluated at the delta the exact bound actually
    spends, so both sides of the quotient hold at the same delta.
    """
    bounded = bounded_range_composition([eps] * k, delta)
    optimal = optimal_dp_composition(k, eps, delta)
    matched = bounded_range_composition([eps] * k, optimal.delta_total)
    return {
        "eps_bounded_range": bounded.eps_total,
        "eps_optimal": optimal.eps_total,
        "ratio": optimal.eps_total / matched.eps_total,
    }


def parse_int_range(text: str) -> List[int]:
    """Parses '5:100:5' (inclusive), '3,7,12', or a single integer."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                start, stop, step = parts[0], parts[1], 1
            elif len(parts) == 3:
                start, stop, step = parts
            else:
                raise ValueError
            if step < 1 or stop < start:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ValueError(f"cannot parse integer range {text!r}") from exc


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise ValueError(f"cannot parse number list {text!r}") from exc


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def _echo_json(payload: dict) -> None:
    click.echo(json.dumps(payload, sort_keys=True))


@click.group()
def cli():
    """Differentially private top-k selection with budget sessions."""


@cli.command("topk")
@click.option("--input", "input_path", required=True, help="Histogram file (.csv/.json), '-' for stdin CSV.")
@click.option("--k", type=int, required=True, help="Indices requested.")
@click.option("--kbar", type=int, required=True, help="Candidate domain size.")
@click.option("--eps", type=float, required=True)
@click.option("--delta", type=float, required=True)
@click.option("--delta-prime", type=float, default=0.0, show_default=True)
@click.option("--sensitivity", default="unrestricted", show_default=True, help="'unrestricted' or an integer cap.")
@click.option("--mechanism", type=click.Choice(MECHANISMS), default="limited", show_default=True)
@click.option("--seed", type=int, default=None, help=f"Overrides ${SEED_ENV_VAR}.")
def cmd_topk(input_path, k, kbar, eps, delta, delta_prime, sensitivity, mechanism, seed):
    """Runs one private top-k query and prints the outcome with its privacy cost."""
    try:
        h = load_histogram_file(input_path)
        params = PrivacyParams(
            eps=eps,
            delta=delta,
            delta_prime=delta_prime,
            sensitivity=parse_sensitivity(sensitivity),
        )
        req = TopKRequest(k=k, kbar=kbar, mechanism=mechanism)
        contract = mechanism_privacy_contract(mechanism, k, params)
        result = run_mechanism(h, req, params, SeededRng(_resolve_seed(seed)))
    except (ValueError, OSError) as exc:
        raise click.UsageError(str(exc)) from exc
    _echo_json(
        {
            "indices": list(result.output.indices),
            "terminated": result.output.terminated,
            "cost": result.output.cost,
            "kbar_selected": result.kbar_selected,
            "privacy": {
                "eps_prime": contract.eps_total,
                "delta_total": contract.delta_total,
            },
        }
    )


@cli.group("session")
def session_group():
    """Pay-as-released budget sessions persisted to a state file."""


@session_group.command("create")
@click.option("--state", required=True, type=click.Path(), help="Session state file to write.")
@click.option("--kmax", type=int, required=True, help="Total index budget.")
@click.option("--ellmax", type=int, required=True, help="Total query budget.")
@click.option("--eps", type=float, required=True)
@click.option("--delta", type=float, required=True)
@click.option("--delta-prime", type=float, default=0.0, show_default=True)
@click.option("--session-id", default=None, help="Defaults to a random id.")
def cmd_session_create(state, kmax, ellmax, eps, delta, delta_prime, session_id):
    """Opens a session and prints its lifetime privacy guarantee."""
    try:
        session = session_create(kmax, ellmax, eps, delta, delta_prime, session_id)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    save_session(session, state)
    _echo_json(session_privacy_report(session).to_json_dict())


def _load_state(state: str):
    try:
        return load_session(state)
    except (OSError, KeyError, ValueError) as exc:
        raise click.UsageError(f"cannot read session state {state!r}: {exc}") from exc


@session_group.command("query")
@click.option("--state", required=True, type=click.Path(), help="Session state file.")
@click.option("--input", "input_path", required=True, help="Histogram file (.csv/.json), '-' for stdin CSV.")
@click.option("--k", type=int, required=True)
@click.option("--kbar", type=int, required=True)
@click.option("--mechanism", type=click.Choice(MECHANISMS), default="limited", show_default=True)
@click.option("--sensitivity", default="unrestricted", show_default=True)
@click.option("--seed", type=int, default=None)
def cmd_session_query(state, input_path, k, kbar, mechanism, sensitivity, seed):
    """Runs one query against the session budget; rejection is a soft outcome."""
    session = _load_state(state)
    try:
        h = load_histogram_file(input_path)
        req = TopKRequest(k=k, kbar=kbar, mechanism=mechanism)
        setting = parse_sensitivity(sensitivity)
    except (ValueError, OSError) as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        result = session_query(session, h, req, SeededRng(_resolve_seed(seed)), setting)
    except BudgetRejected as exc:
        _echo_json(
            {
                "status": "rejected",
                "message": str(exc),
                "budget": {
                    "kmax_remaining": session.kmax_remaining,
                    "ellmax_remaining": session.ellmax_remaining,
                },
            }
        )
        return
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    save_session(session, state)
    _echo_json(
        {
            "status": "ok",
            "indices": list(result.output.indices),
            "terminated": result.output.terminated,
            "cost": session.log[-1]["cost"],
            "kbar_selected": result.kbar_selected,
            "budget": {
                "kmax_remaining": session.kmax_remaining,
                "ellmax_remaining": session.ellmax_remaining,
            },
        }
    )


@session_group.command("report")
@click.option("--state", required=True, type=click.Path(), help="Session state file.")
def cmd_session_report(state):
    """Prints the lifetime guarantee, realized spending, and the query log."""
    session = _load_state(state)
    payload = session_privacy_report(session).to_json_dict()
    payload["log"] = list(session.log)
    _echo_json(payload)


@session_group.command("close")
@click.option("--state", required=True, type=click.Path(), help="Session state file.")
def cmd_session_close(state):
    """Closes the session; further queries will be rejected."""
    session = _load_state(state)
    session_close(session)
    save_session(session, state)
    _echo_json(
        {
            "session_id": session.session_id,
            "status": "closed",
            "budget": {
                "kmax_remaining": session.kmax_remaining,
                "ellmax_remaining": session.ellmax_remaining,
            },
        }
    )


@cli.command("compose")
@click.option("--k-range", default="5:100:5", show_default=True, help="start:stop:step, comma list, or one integer.")
@click.option("--eps-range", default="0.01,0.05,0.1,0.5,1.0", show_default=True, help="Comma list of eps values.")
@click.option("--delta", type=float, default=1e-6, show_default=True)
def cmd_compose(k_range, eps_range, delta):
    """Prints a CSV comparing the range-bounded bound against exact composition."""
    try:
        ks = parse_int_range(k_range)
        eps_values = parse_float_list(eps_range)
        if not ks or not eps_values:
            raise ValueError("ranges must be non-empty")
        if any(e <= 0 for e in eps_values):
            raise ValueError("every eps must be positive")
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    click.echo("k,eps,eps_bounded_range,eps_optimal,ratio")
    for k in ks:
        for eps in eps_values:
            row = compose_row(k, eps, delta)
            click.echo(
                ",".join(
                    [
                        str(k),
                        _fmt(eps),
                        _fmt(row["eps_bounded_range"]),
                        _fmt(row["eps_optimal"]),
                        _fmt(row["ratio"]),
                    ]
                )
            )


@cli.command("accuracy")
@click.option("--distribution", type=click.Choice(["powerlaw", "flat", "custom"]), default="powerlaw", show_default=True)
@click.option("--scale", type=float, default=1000.0, show_default=True, help="Power-law numerator C.")
@click.option("--exponent", type=float, default=1.0, show_default=True, help="Power-law exponent s.")
@click.option("--support", type=int, default=50, show_default=True, help="Number of labels.")
@click.option("--count", type=int, default=5, show_default=True, help="Per-label count for flat.")
@click.option("--input", "input_path", default=None, help="Histogram file for custom.")
@click.option("--k", type=int, required=True)
@click.option("--kbar", type=int, required=True)
@click.option("--eps", type=float, required=True)
@click.option("--delta", type=float, required=True)
@click.option("--beta", type=float, default=0.05, show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=None)
def cmd_accuracy(distribution, scale, exponent, support, count, input_path, k, kbar, eps, delta, beta, trials, seed):
    """Monte-Carlo check of the error radius and short-output rate."""
    if trials < 100:
        raise click.UsageError("trials must be >= 100")
    try:
        if distribution == "powerlaw":
            h = powerlaw_histogram(scale, exponent, support)
        elif distribution == "flat":
            h = flat_histogram(count, support)
        else:
            if input_path is None:
                raise ValueError("custom distribution requires --input")
            h = load_histogram_file(input_path)
        params = PrivacyParams(eps=eps, delta=delta)
        report = accuracy_report(
            h, k, kbar, params, beta, trials, SeededRng(_resolve_seed(seed))
        )
    except (ValueError, OSError) as exc:
        raise click.UsageError(str(exc)) from exc
    report["distribution"] = distribution
    _echo_json(report)


@cli.command("verify")
@click.option("--suite", "suites", multiple=True, type=click.Choice(["dp", "bad-event", "equivalence", "all"]), help="May be repeated.")
@click.option("--samples", type=int, default=200000, show_default=True, help="Monte-Carlo samples for the equivalence suite.")
@click.option("--max-outcomes", type=int, default=10**6, show_default=True, help="Cap on exact enumeration size.")
@click.option("--threshold-scale", type=float, default=1.0, hidden=True)
@click.option("--seed", type=int, default=None)
def cmd_verify(suites, samples, max_outcomes, threshold_scale, seed):
    """Runs the self-verification suites; exits 3 if any check fails."""
    if not suites:
        raise click.UsageError("at least one --suite is required (dp, bad-event, equivalence, all)")
    resolved = _resolve_seed(seed)
    results = [
        verify_suite(
            name,
            threshold_scale=threshold_scale,
            seed=resolved if resolved is not None else 0,
            n_samples=samples,
            max_outcomes=max_outcomes,
        )
        for name in suites
    ]
    passed = all(r["passed"] for r in results)
    _echo_json({"passed": passed, "suites": list(results)})
    if not passed:
        sys.exit(3)


def main():
    cli()


if __name__ == "__main__":
    main()
