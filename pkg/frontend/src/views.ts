/**
 * HTML renderers. Pure string-in/string-out so they test without a DOM;
 * main.ts wires the event handlers by data attributes.
 */

import type {
  CollabDoc,
  DriftDoc,
  MetricsDoc,
  PendingReview,
  PlanDoc,
  Signature,
} from "./api.js";
import { ageText, countdown, escapeHtml, percent, sparklineSvg } from "./format.js";
import type { SparkPoint } from "./state.js";
import { FieldState, formIsValid } from "./validate.js";

function kvTable(record: { [k: string]: unknown }): string {
  const rows = Object.entries(record)
    .map(
      ([k, v]) =>
        `<tr><th>${escapeHtml(k)}</th><td>${escapeHtml(JSON.stringify(v))}</td></tr>`,
    )
    .join("");
  return `<table class="kv">${rows}</table>`;
}

export function renderReviewCard(
  item: PendingReview,
  fields: FieldState[],
  nowMs: number,
): string {
  const submitDisabled = formIsValid(fields) ? "" : " disabled";
  const inputs = fields
    .map((f) => {
      const error = f.ok ? "" : `<span class="error">${escapeHtml(f.error ?? "")}</span>`;
      return (
        `<label>${escapeHtml(f.name)} <small>(${escapeHtml(f.kind)})</small>` +
        `<input data-field="${escapeHtml(f.name)}" data-token="${escapeHtml(item.token)}"` +
        ` value="${escapeHtml(f.raw)}"/>${error}</label>`
      );
    })
    .join("");
  return `
<article class="card review" data-token="${escapeHtml(item.token)}">
  <header>
    <strong>${escapeHtml(item.sample.caller_id)}</strong>
    <span class="age">${escapeHtml(ageText(item.sample.created_at, nowMs))}</span>
  </header>
  ${kvTable(item.sample.inputs)}
  <p class="proposed">proposed: <code>${escapeHtml(JSON.stringify(item.sample.output))}</code></p>
  <form class="override">${inputs}</form>
  <footer>
    <button data-action="confirm" data-token="${escapeHtml(item.token)}">confirm</button>
    <button data-action="override" data-token="${escapeHtml(item.token)}"${submitDisabled}>override</button>
  </footer>
</article>`;
}

export function renderReviewQueue(
  items: PendingReview[],
  fieldsByToken: Map<string, FieldState[]>,
  nowMs: number,
): string {
  if (items.length === 0) return `<p class="empty">no pending reviews</p>`;
  return items
    .map((item) => renderReviewCard(item, fieldsByToken.get(item.token) ?? [], nowMs))
    .join("\n");
}

export function renderCollabCard(
  req: CollabDoc,
  fields: FieldState[],
  nowMs: number,
): string {
  const remaining = countdown(req.deadline, nowMs);
  if (remaining === null) {
    return `
<article class="card collab expired" data-request="${escapeHtml(req.id)}">
  <header><strong>${escapeHtml(req.caller_id)}</strong> <span class="expired">expired</span></header>
  ${kvTable(req.inputs)}
</article>`;
  }
  const submitDisabled = formIsValid(fields) ? "" : " disabled";
  const inputs = fields
    .map(
      (f) =>
        `<label>${escapeHtml(f.name)} <small>(${escapeHtml(f.kind)})</small>` +
        `<input data-field="${escapeHtml(f.name)}" data-request="${escapeHtml(req.id)}"` +
        ` value="${escapeHtml(f.raw)}"/></label>`,
    )
    .join("");
  return `
<article class="card collab" data-request="${escapeHtml(req.id)}">
  <header>
    <strong>${escapeHtml(req.caller_id)}</strong>
    <span class="countdown">${escapeHtml(remaining)} left</span>
  </header>
  ${kvTable(req.inputs)}
  <form class="answer">${inputs}</form>
  <footer>
    <button data-action="answer" data-request="${escapeHtml(req.id)}"${submitDisabled}>answer</button>
  </footer>
</article>`;
}

export function renderDashboard(
  metrics: MetricsDoc,
  plan: PlanDoc | null,
  drift: DriftDoc,
  history: SparkPoint[],
  stale: boolean,
): string {
  const counts = metrics.category_counts;
  const memberRows = metrics.members
    .map(
      (m) => `
    <tr>
      <td>${escapeHtml(m.callable_id)}</td>
      <td>${escapeHtml(m.role)}</td>
      <td class="qual-${escapeHtml(m.qualification)}">${escapeHtml(m.qualification)}</td>
      <td>${escapeHtml(percent(m.metrics.gold_accuracy))}</td>
      <td>${escapeHtml(percent(m.metrics.silver_accuracy))}</td>
      <td>${m.metrics.latency_ewma_s === null ? "–" : escapeHtml((m.metrics.latency_ewma_s * 1000).toFixed(1) + "ms")}</td>
      <td>${m.invocations}</td>
    </tr>`,
    )
    .join("");
  const driftBlock =
    drift.status === "alert"
      ? `<p class="alert">drift alert: windowed ${escapeHtml(percent(drift.windowed_accuracy))} below threshold</p>`
      : `<p class="drift-${escapeHtml(drift.status)}">drift: ${escapeHtml(drift.status)}${
          drift.windowed_accuracy === null
            ? ""
            : ` (windowed ${escapeHtml(percent(drift.windowed_accuracy))})`
        }</p>`;
  return `
${stale ? `<div class="banner stale">gateway unreachable: showing last known data</div>` : ""}
<section class="dashboard" data-caller="${escapeHtml(metrics.caller_id)}">
  <header>
    <h2>${escapeHtml(metrics.caller_id)}</h2>
    <span class="badge target">${escapeHtml(metrics.call_target)}</span>
    <span class="badge plan">${escapeHtml(plan?.state ?? "no plan")}</span>
  </header>
  <ul class="counts">
    <li>gold <b>${counts.gold}</b></li>
    <li>platinum <b>${counts.platinum}</b></li>
    <li>silver <b>${counts.silver}</b></li>
    <li>bronze <b>${counts.bronze}</b></li>
  </ul>
  <div class="sparks">
    <span>gold ${sparklineSvg(history, (p) => p.gold)}</span>
    <span>silver ${sparklineSvg(history, (p) => p.silver)}</span>
  </div>
  ${driftBlock}
  <table class="members">
    <thead><tr><th>member</th><th>role</th><th>qualification</th>
      <th>gold</th><th>silver</th><th>latency</th><th>calls</th></tr></thead>
    <tbody>${memberRows}</tbody>
  </table>
</section>`;
}

export function renderLogin(error?: string): string {
  return `
<form class="login">
  <h1>mcall console</h1>
  <label>gateway url <input name="url" value="http://127.0.0.1:8080"/></label>
  <label>api key <input name="key" type="password"/></label>
  ${error ? `<p class="error">${escapeHtml(error)}</p>` : ""}
  <button data-action="login">connect</button>
</form>`;
}

export function outputsOf(signature: Signature): Signature["outputs"] {
  return signature.outputs;
}
