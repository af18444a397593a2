/**
 * Browser entry: login (the key stays in memory), three tabs (reviews,
 * collaboration, dashboards), polling every 2s. All mutations go straight
 * to the gateway; a failed submit rolls the card back unless the conflict
 * means someone already reviewed it.
 */

import { GatewayClient, GatewayError, type CallerDetail, type CollabDoc, type PendingReview } from "./api.js";
import { Poller } from "./poller.js";
import { MetricsHistory, ReviewQueue } from "./state.js";
import { renderCollabCard, renderDashboard, renderLogin, renderReviewQueue } from "./views.js";
import { FieldState, formRecord, prefill, validateForm } from "./validate.js";

type Tab = "reviews" | "collab" | "dashboard";

class ConsoleApp {
  private client: GatewayClient | null = null;
  private tab: Tab = "reviews";
  private callers: CallerDetail[] = [];
  private queue = new ReviewQueue();
  private rawByToken = new Map<string, { [name: string]: string }>();
  private collabs: CollabDoc[] = [];
  private collabRaw = new Map<string, { [name: string]: string }>();
  private history = new MetricsHistory();
  private dashboards = new Map<string, string>();
  private poller: Poller | null = null;
  private notice = "";

  constructor(private root: HTMLElement) {
    root.addEventListener("click", (ev) => void this.onClick(ev));
    root.addEventListener("input", (ev) => this.onInput(ev));
    this.render();
  }

  private signatureFor(callerId: string): CallerDetail | undefined {
    return this.callers.find((c) => c.id === callerId);
  }

  private fieldsFor(item: PendingReview): FieldState[] {
    const detail = this.signatureFor(item.sample.caller_id);
    if (!detail) return [];
    const raw =
      this.rawByToken.get(item.token) ??
      prefill(detail.signature.outputs, item.sample.output);
    this.rawByToken.set(item.token, raw);
    return validateForm(detail.signature.outputs, raw);
  }

  private collabFields(req: CollabDoc): FieldState[] {
    const detail = this.signatureFor(req.caller_id);
    if (!detail) return [];
    const raw = this.collabRaw.get(req.id) ?? {};
    this.collabRaw.set(req.id, raw);
    return validateForm(detail.signature.outputs, raw);
  }

  private async tick(): Promise<void> {
    if (!this.client) return;
    const summaries = await this.client.listCallers();
    this.callers = await Promise.all(summaries.map((s) => this.client!.showCaller(s.id)));
    const pending = (
      await Promise.all(this.callers.map((c) => this.client!.pendingReviews(c.id)))
    ).flat();
    this.queue.sync(pending);
    this.collabs = await this.client.openCollab();
    for (const caller of this.callers) {
      const [metrics, plan, drift] = await Promise.all([
        this.client.metrics(caller.id),
        this.client.plan(caller.id),
        this.client.drift(caller.id),
      ]);
      this.history.record(caller.id, metrics, Date.now());
      this.dashboards.set(
        caller.id,
        renderDashboard(metrics, plan, drift, this.history.points(caller.id),
                        this.poller?.isStale() ?? false),
      );
    }
    this.render();
  }

  private async onClick(ev: Event): Promise<void> {
    const target = ev.target as HTMLElement;
    const action = target.dataset.action;
    if (!action) return;
    ev.preventDefault();
    if (action === "login") {
      const url = (this.root.querySelector("input[name=url]") as HTMLInputElement).value;
      const key = (this.root.querySelector("input[name=key]") as HTMLInputElement).value;
      this.client = new GatewayClient(url, key);
      this.poller = new Poller(() => this.tick(), { intervalMs: 2000 });
      this.poller.start();
      this.render();
      return;
    }
    if (action === "tab") {
      this.tab = target.dataset.tab as Tab;
      this.render();
      return;
    }
    if (!this.client) return;
    if (action === "confirm" || action === "override") {
      const token = target.dataset.token!;
      const item = this.queue.list().find((i) => i.token === token);
      if (!item) return;
      this.queue.beginSubmit(token);
      this.render();
      try {
        if (action === "confirm") {
          await this.client.confirm(token);
        } else {
          const fields = this.fieldsFor(item);
          await this.client.override(token, formRecord(fields));
        }
        this.queue.finishSubmit(token);
        this.notice = "";
      } catch (err) {
        if (err instanceof GatewayError && err.alreadyReviewed) {
          this.queue.finishSubmit(token);
          this.notice = "already reviewed";
        } else {
          this.queue.rollback(token, item);
          this.notice = `review failed: ${String(err)}`;
        }
      }
      this.render();
    }
    if (action === "answer") {
      const id = target.dataset.request!;
      const req = this.collabs.find((r) => r.id === id);
      if (!req) return;
      try {
        await this.client.answerCollab(id, formRecord(this.collabFields(req)));
        this.collabs = this.collabs.filter((r) => r.id !== id);
        this.notice = "";
      } catch (err) {
        this.notice =
          err instanceof GatewayError && err.status === 409
            ? "already answered"
            : `answer failed: ${String(err)}`;
      }
      this.render();
    }
  }

  private onInput(ev: Event): void {
    const input = ev.target as HTMLInputElement;
    const field = input.dataset.field;
    if (!field) return;
    if (input.dataset.token) {
      const raw = this.rawByToken.get(input.dataset.token) ?? {};
      raw[field] = input.value;
      this.rawByToken.set(input.dataset.token, raw);
    }
    if (input.dataset.request) {
      const raw = this.collabRaw.get(input.dataset.request) ?? {};
      raw[field] = input.value;
      this.collabRaw.set(input.dataset.request, raw);
    }
    this.render();
  }

  private render(): void {
    if (!this.client) {
      this.root.innerHTML = renderLogin();
      return;
    }
    const stale = this.poller?.isStale() ?? false;
    const tabs = (["reviews", "collab", "dashboard"] as Tab[])
      .map(
        (t) =>
          `<button data-action="tab" data-tab="${t}" class="${t === this.tab ? "active" : ""}">${t}</button>`,
      )
      .join("");
    let body = "";
    if (this.tab === "reviews") {
      const fields = new Map(this.queue.list().map((i) => [i.token, this.fieldsFor(i)]));
      body = renderReviewQueue(this.queue.list(), fields, Date.now());
    } else if (this.tab === "collab") {
      body =
        this.collabs.map((r) => renderCollabCard(r, this.collabFields(r), Date.now())).join("") ||
        `<p class="empty">no open requests</p>`;
    } else {
      body = [...this.dashboards.values()].join("\n") || `<p class="empty">no callers</p>`;
    }
    this.root.innerHTML = `
      ${stale ? `<div class="banner stale">gateway unreachable: showing last known data</div>` : ""}
      ${this.notice ? `<div class="banner notice">${this.notice}</div>` : ""}
      <nav>${tabs}</nav>
      <main>${body}</main>`;
  }
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) new ConsoleApp(root);
}

export { ConsoleApp };
