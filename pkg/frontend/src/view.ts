/**
 * HTML renderers.
 *
 * Pure string producers so rendering is testable without a DOM.  Every
 * number shown in the privacy block and the gauges is the verbatim
 * token carried by the view model; no value is re-serialized on the
 * client.  Fields that end-to-end checks compare against response
 * bytes carry a data-field attribute.
 */

import type { QueryOutcome } from "./api.js";
import type { SessionViewModel } from "./model.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderPrivacyBlock(vm: SessionViewModel): string {
  return [
    '<dl class="privacy">',
    "<dt>session</dt>",
    `<dd data-field="session_id">${escapeHtml(vm.sessionId)}</dd>`,
    "<dt>&epsilon; guarantee</dt>",
    `<dd data-field="eps_max">${escapeHtml(vm.privacy.epsMaxRaw)}</dd>`,
    "<dt>&delta; guarantee</dt>",
    `<dd data-field="delta_total">${escapeHtml(vm.privacy.deltaTotalRaw)}</dd>`,
    "</dl>",
  ].join("");
}

function gaugeMarkup(
  label: string,
  field: string,
  rawRemaining: string,
  rawInitial: string,
  remaining: number,
  initial: number,
): string {
  const percent = initial > 0 ? Math.round((remaining / initial) * 100) : 0;
  return [
    `<div class="gauge" data-gauge="${field}">`,
    `<span class="gauge-label">${escapeHtml(label)}</span>`,
    `<span class="gauge-value"><span data-field="${field}_remaining">${escapeHtml(
      rawRemaining,
    )}</span> / <span data-field="${field}_initial">${escapeHtml(rawInitial)}</span></span>`,
    `<span class="gauge-bar"><span class="gauge-fill" style="width:${percent}%"></span></span>`,
    "</div>",
  ].join("");
}

export function renderGauges(vm: SessionViewModel): string {
  return [
    gaugeMarkup(
      "answers remaining",
      "kmax",
      vm.kmax.rawRemaining,
      vm.kmax.rawInitial,
      vm.kmax.remaining,
      vm.kmax.initial,
    ),
    gaugeMarkup(
      "queries remaining",
      "ellmax",
      vm.ellmax.rawRemaining,
      vm.ellmax.rawInitial,
      vm.ellmax.remaining,
      vm.ellmax.initial,
    ),
    `<div class="gauge-spent">spent <span data-field="spent">${escapeHtml(
      vm.spentRaw,
    )}</span></div>`,
  ].join("");
}

function indicesMarkup(indices: readonly string[], terminated: boolean): string {
  const chips = indices.map(
    (label) => `<span class="chip">${escapeHtml(label)}</span>`,
  );
  if (terminated) {
    chips.push('<span class="chip chip-stop" title="stopped early">&#x22A5;</span>');
  }
  if (chips.length === 0) {
    return '<span class="empty">(none)</span>';
  }
  return chips.join("");
}

export function renderHistory(vm: SessionViewModel): string {
  if (vm.history.length === 0) {
    return '<p class="empty">No queries yet.</p>';
  }
  const rows = vm.history.map((row, i) =>
    [
      "<tr>",
      `<td>${i + 1}</td>`,
      `<td>${escapeHtml(row.mechanism)}</td>`,
      `<td>${row.k}</td>`,
      `<td>${row.kbar}</td>`,
      `<td>${indicesMarkup(row.indices, row.terminated)}</td>`,
      `<td>${row.cost}</td>`,
      "</tr>",
    ].join(""),
  );
  return [
    '<table class="history">',
    "<thead><tr><th>#</th><th>mechanism</th><th>k</th><th>k&#773;</th><th>released</th><th>cost</th></tr></thead>",
    `<tbody>${rows.join("")}</tbody>`,
    "</table>",
  ].join("");
}

export function renderBanner(vm: SessionViewModel): string {
  if (vm.banner === null) {
    return "";
  }
  return `<div class="banner" role="alert">${escapeHtml(vm.banner)}</div>`;
}

export function renderOutcome(outcome: QueryOutcome): string {
  if (outcome.status === "rejected") {
    return [
      '<div class="outcome outcome-rejected">',
      "<strong>rejected</strong> ",
      escapeHtml(outcome.message),
      "</div>",
    ].join("");
  }
  return [
    '<div class="outcome outcome-ok">',
    `<strong>released</strong> ${indicesMarkup(outcome.indices, outcome.terminated)}`,
    ` <span class="cost">cost ${outcome.cost}</span>`,
    "</div>",
  ].join("");
}

export function renderNotFound(sessionId: string): string {
  return `<div class="banner" role="alert">session not found: ${escapeHtml(
    sessionId,
  )}</div>`;
}
