/**
 * Console wiring.
 *
 * Holds the single mutable view model, serializes mutations (one
 * in-flight request at a time), and re-fetches the session report
 * after every mutation so the screen always reflects server state
 * rather than locally predicted state.
 */

import { ApiError, ServiceClient } from "./api.js";
import type { QueryRequest } from "./api.js";
import {
  clearBanner,
  fromReport,
  mergeReport,
  withBanner,
} from "./model.js";
import type { SessionViewModel } from "./model.js";
import {
  renderBanner,
  renderGauges,
  renderHistory,
  renderNotFound,
  renderOutcome,
  renderPrivacyBlock,
} from "./view.js";

let vm: SessionViewModel | null = null;
let inflight = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function inputValue(id: string): string {
  return el<HTMLInputElement>(id).value.trim();
}

function numberValue(id: string): number {
  const text = inputValue(id);
  const value = Number(text);
  if (text === "" || !Number.isFinite(value)) {
    throw new Error(`${id} must be a number, got ${JSON.stringify(text)}`);
  }
  return value;
}

function client(): ServiceClient {
  const base = inputValue("service-url") || window.location.origin;
  return new ServiceClient(base);
}

function render(): void {
  const banner = el("banner");
  const privacy = el("privacy");
  const gauges = el("gauges");
  const history = el("history");
  const panel = el("session-panel");
  if (vm === null) {
    panel.hidden = true;
    banner.innerHTML = "";
    return;
  }
  panel.hidden = false;
  banner.innerHTML = renderBanner(vm);
  privacy.innerHTML = renderPrivacyBlock(vm);
  gauges.innerHTML = renderGauges(vm);
  history.innerHTML = renderHistory(vm);
}

function showError(message: string): void {
  el("banner").innerHTML = renderBanner({
    banner: message,
  } as SessionViewModel);
}

function setBusy(busy: boolean): void {
  inflight = busy;
  for (const button of document.querySelectorAll("button")) {
    button.disabled = busy;
  }
}

async function guarded(action: () => Promise<void>): Promise<void> {
  if (inflight) {
    return;
  }
  setBusy(true);
  try {
    await action();
  } catch (err) {
    if (err instanceof ApiError && err.status === 404) {
      el("banner").innerHTML = renderNotFound(vm?.sessionId ?? "?");
    } else {
      showError(err instanceof Error ? err.message : String(err));
    }
  } finally {
    setBusy(false);
  }
}

async function refresh(preserveBanner: boolean): Promise<void> {
  if (vm === null) {
    return;
  }
  const res = await client().getSession(vm.sessionId);
  const before = preserveBanner ? vm : clearBanner(vm);
  vm = mergeReport(before, res.raw, res.body);
  render();
}

async function createSession(): Promise<void> {
  const res = await client().createSession({
    kmax: numberValue("create-kmax"),
    ellmax: numberValue("create-ellmax"),
    eps: numberValue("create-eps"),
    delta: numberValue("create-delta"),
    delta_prime: numberValue("create-delta-prime"),
  });
  const report = await client().getSession(res.body.session_id);
  vm = fromReport(report.raw, report.body);
  el("outcome").innerHTML = "";
  render();
}

async function loadSession(): Promise<void> {
  const sessionId = inputValue("load-session-id");
  if (sessionId === "") {
    throw new Error("enter a session id to load");
  }
  const report = await client().getSession(sessionId);
  vm = fromReport(report.raw, report.body);
  el("outcome").innerHTML = "";
  render();
}

function queryRequest(): QueryRequest {
  const source = el<HTMLSelectElement>("query-source").value;
  const req: QueryRequest = {
    k: numberValue("query-k"),
    kbar: numberValue("query-kbar"),
    mechanism: el<HTMLSelectElement>("query-mechanism").value,
    sensitivity: "unrestricted",
  };
  const sensitivity = inputValue("query-sensitivity");
  if (sensitivity !== "" && sensitivity !== "unrestricted") {
    req.sensitivity = Number(sensitivity);
  }
  if (source === "dataset") {
    const ref = inputValue("query-dataset-ref");
    if (ref === "") {
      throw new Error("select or paste a dataset id");
    }
    req.dataset_ref = ref;
  } else {
    const text = el<HTMLTextAreaElement>("query-histogram").value.trim();
    if (text === "") {
      throw new Error("enter a histogram as JSON, e.g. {\"a\": 10, \"b\": 6}");
    }
    req.histogram = JSON.parse(text) as Record<string, number>;
  }
  return req;
}

async function submitQuery(): Promise<void> {
  if (vm === null) {
    throw new Error("create or load a session first");
  }
  const res = await client().submitQuery(vm.sessionId, queryRequest());
  el("outcome").innerHTML = renderOutcome(res.body);
  if (res.body.status === "rejected") {
    vm = withBanner(vm, `query rejected: ${res.body.message}`);
    await refresh(true);
  } else {
    vm = clearBanner(vm);
    await refresh(false);
  }
}

async function closeSession(): Promise<void> {
  if (vm === null) {
    throw new Error("no session to close");
  }
  await client().closeSession(vm.sessionId);
  vm = withBanner(vm, "session closed; further queries will be rejected");
  await refresh(true);
}

async function uploadDataset(): Promise<void> {
  const csv = el<HTMLTextAreaElement>("dataset-csv").value;
  if (csv.trim() === "") {
    throw new Error("paste CSV rows first (label,count per line)");
  }
  const res = await client().uploadDataset(csv);
  el<HTMLInputElement>("query-dataset-ref").value = res.body.dataset_id;
  el<HTMLSelectElement>("query-source").value = "dataset";
  el("dataset-status").textContent = `uploaded as ${res.body.dataset_id}`;
}

function bind(): void {
  el("create-form").addEventListener("submit", (event) => {
    event.preventDefault();
    void guarded(createSession);
  });
  el("load-form").addEventListener("submit", (event) => {
    event.preventDefault();
    void guarded(loadSession);
  });
  el("query-form").addEventListener("submit", (event) => {
    event.preventDefault();
    void guarded(submitQuery);
  });
  el("close-session").addEventListener("click", () => {
    void guarded(closeSession);
  });
  el("upload-dataset").addEventListener("click", () => {
    void guarded(uploadDataset);
  });
  el("refresh-session").addEventListener("click", () => {
    void guarded(() => refresh(false));
  });
}

bind();
