/**
 * View model for one budget session.
 *
 * The model holds no privacy arithmetic.  Displayed numbers are exact
 * substrings of the most recent report body, and two client-side
 * invariants are enforced when a fresh report is merged in: remaining
 * budget gauges never increase, and the query history is append-only.
 * A report that violates either indicates a server or wiring bug, so
 * the merge throws instead of rendering misleading state.
 */

import { rawToken } from "./json_raw.js";
import type { LogRow, SessionReport } from "./api.js";

export interface Gauge {
  remaining: number;
  initial: number;
  /** Verbatim source slice for the remaining value. */
  rawRemaining: string;
  /** Verbatim source slice for the initial value. */
  rawInitial: string;
}

export interface PrivacyDisplay {
  epsMaxRaw: string;
  deltaTotalRaw: string;
}

export interface SessionViewModel {
  sessionId: string;
  privacy: PrivacyDisplay;
  kmax: Gauge;
  ellmax: Gauge;
  spentRaw: string;
  history: LogRow[];
  /** Human-readable notice for a rejected query, or null. */
  banner: string | null;
}

function gauge(raw: string, report: SessionReport, field: "kmax" | "ellmax"): Gauge {
  return {
    remaining: report.budget[`${field}_remaining`],
    initial: report.budget[`${field}_initial`],
    rawRemaining: rawToken(raw, ["budget", `${field}_remaining`]),
    rawInitial: rawToken(raw, ["budget", `${field}_initial`]),
  };
}

/** Build a fresh view model from a session report and its exact body text. */
export function fromReport(raw: string, report: SessionReport): SessionViewModel {
  return {
    sessionId: report.session_id,
    privacy: {
      epsMaxRaw: rawToken(raw, ["privacy", "eps_max"]),
      deltaTotalRaw: rawToken(raw, ["privacy", "delta_total"]),
    },
    kmax: gauge(raw, report, "kmax"),
    ellmax: gauge(raw, report, "ellmax"),
    spentRaw: rawToken(raw, ["spent"]),
    history: report.log.map((row) => ({ ...row, indices: [...row.indices] })),
    banner: null,
  };
}

function sameRow(a: LogRow, b: LogRow): boolean {
  return (
    a.k === b.k &&
    a.kbar === b.kbar &&
    a.mechanism === b.mechanism &&
    a.terminated === b.terminated &&
    a.cost === b.cost &&
    a.indices.length === b.indices.length &&
    a.indices.every((label, i) => label === b.indices[i])
  );
}

/**
 * Fold a re-fetched report into an existing view model.
 *
 * Throws if the report is for a different session, if either remaining
 * gauge grew, or if the server log does not extend the local history.
 * The banner is preserved so a rejection notice survives the
 * read-after-write refresh that follows it.
 */
export function mergeReport(
  vm: SessionViewModel,
  raw: string,
  report: SessionReport,
): SessionViewModel {
  if (report.session_id !== vm.sessionId) {
    throw new Error(
      `report is for session ${report.session_id}, not ${vm.sessionId}`,
    );
  }
  if (report.budget.kmax_remaining > vm.kmax.remaining) {
    throw new Error(
      `kmax gauge increased: ${vm.kmax.remaining} -> ${report.budget.kmax_remaining}`,
    );
  }
  if (report.budget.ellmax_remaining > vm.ellmax.remaining) {
    throw new Error(
      `ellmax gauge increased: ${vm.ellmax.remaining} -> ${report.budget.ellmax_remaining}`,
    );
  }
  if (report.log.length < vm.history.length) {
    throw new Error(
      `history shrank: ${vm.history.length} rows locally, ${report.log.length} reported`,
    );
  }
  vm.history.forEach((row, i) => {
    const reported = report.log[i];
    if (reported === undefined || !sameRow(row, reported)) {
      throw new Error(`history rewritten at row ${i}`);
    }
  });
  const next = fromReport(raw, report);
  next.banner = vm.banner;
  return next;
}

/** Copy of the model with a rejection banner; all other state is untouched. */
export function withBanner(vm: SessionViewModel, message: string): SessionViewModel {
  return { ...vm, banner: message };
}

/** Copy of the model with any banner cleared. */
export function clearBanner(vm: SessionViewModel): SessionViewModel {
  return { ...vm, banner: null };
}
