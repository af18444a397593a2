import { describe, expect, it } from "vitest";

import type { CollabDoc, DriftDoc, MetricsDoc, PendingReview, PlanDoc } from "../src/api.js";
import { countdown, formatDuration, sparklineSvg } from "../src/format.js";
import { renderCollabCard, renderDashboard, renderReviewCard } from "../src/views.js";
import { validateForm } from "../src/validate.js";

const NOW = 2_000_000 * 1000; // ms

function pending(): PendingReview {
  return {
    token: "tok-9",
    sample: {
      id: "s-1",
      caller_id: "fdc-eu",
      inputs: { amount: 1200, region: "EU" },
      context: {},
      output: { fraud: 0 },
      origin: "call",
      split: "evaluation",
      supervision: "unsupervised",
      created_at: NOW / 1000 - 90,
      config_version: 1,
    },
  };
}

describe("review card", () => {
  const outputs: [string, string][] = [["fraud", "number"]];

  it("shows inputs, proposed output, and age", () => {
    const html = renderReviewCard(pending(), validateForm(outputs, { fraud: "0" }), NOW);
    expect(html).toContain("fdc-eu");
    expect(html).toContain("amount");
    expect(html).toContain("1200");
    expect(html).toContain("1m 30s ago");
    expect(html).toContain('{&quot;fraud&quot;:0}');
  });

  it("disables the override button while a field is invalid", () => {
    const bad = renderReviewCard(pending(), validateForm(outputs, { fraud: "oops" }), NOW);
    expect(bad).toContain('data-action="override" data-token="tok-9" disabled');
    const good = renderReviewCard(pending(), validateForm(outputs, { fraud: "1" }), NOW);
    expect(good).toContain('data-action="override" data-token="tok-9">');
  });

  it("escapes markup in values", () => {
    const item = pending();
    item.sample.inputs = { note: "<script>alert(1)</script>" };
    const html = renderReviewCard(item, validateForm(outputs, { fraud: "1" }), NOW);
    expect(html).not.toContain("<script>alert");
  });
});

describe("collab card", () => {
  const base: CollabDoc = {
    id: "req-1",
    caller_id: "fdc-eu",
    inputs: { amount: 10 },
    deadline: NOW / 1000 + 125,
    state: "open",
    opened_at: NOW / 1000 - 5,
  };

  it("shows a countdown and an enabled answer button when valid", () => {
    const html = renderCollabCard(base, validateForm([["fraud", "number"]], { fraud: "1" }), NOW);
    expect(html).toContain("2m 5s left");
    expect(html).toContain('data-action="answer" data-request="req-1">');
  });

  it("renders expired requests without a form", () => {
    const html = renderCollabCard({ ...base, deadline: NOW / 1000 - 1 }, [], NOW);
    expect(html).toContain("expired");
    expect(html).not.toContain("data-action=\"answer\"");
  });
});

describe("dashboard", () => {
  const metrics: MetricsDoc = {
    caller_id: "fdc-eu",
    category_counts: { gold: 21, platinum: 68, silver: 16, bronze: 45 },
    sample_count: 150,
    host_invocations: 150,
    call_target: "both",
    members: [
      {
        registration_id: "r1",
        callable_id: "mfd-eu",
        role: "ensemble",
        qualification: "qualified",
        metrics: {
          gold_accuracy: 0.83,
          silver_accuracy: 0.88,
          combined_accuracy: 0.85,
          sample_counts: {},
          latency_ewma_s: 0.0021,
          last_evaluated: NOW / 1000,
        },
        invocations: 70,
      },
    ],
    learned_weights: null,
  };
  const plan: PlanDoc = {
    caller_id: "fdc-eu",
    candidate_rid: "r1",
    state: "hybrid",
    history: [],
    active: true,
  };
  const drift: DriftDoc = {
    status: "alert",
    windowed_accuracy: 0.61,
    baseline_accuracy: 0.82,
    supervised_count: 400,
    alert: {},
  };

  it("renders every figure straight from the gateway documents", () => {
    const html = renderDashboard(metrics, plan, drift, [], false);
    expect(html).toContain("gold <b>21</b>");
    expect(html).toContain("platinum <b>68</b>");
    expect(html).toContain("both");
    expect(html).toContain("hybrid");
    expect(html).toContain("83.0%");
    expect(html).toContain("88.0%");
    expect(html).toContain("2.1ms");
    expect(html).toContain("drift alert");
    expect(html).toContain("61.0%");
    expect(html).toContain("qualified");
  });

  it("shows the stale banner only when asked", () => {
    expect(renderDashboard(metrics, plan, drift, [], true)).toContain("gateway unreachable");
    expect(renderDashboard(metrics, plan, drift, [], false)).not.toContain("gateway unreachable");
  });

  it("handles a caller with no plan and no members", () => {
    const empty: MetricsDoc = { ...metrics, members: [], caller_id: "bare" };
    const ok: DriftDoc = { status: "not_enough_data", windowed_accuracy: null,
                           baseline_accuracy: null, supervised_count: 0, alert: null };
    const html = renderDashboard(empty, null, ok, [], false);
    expect(html).toContain("no plan");
    expect(html).toContain("not_enough_data");
  });
});

describe("format helpers", () => {
  it("formats durations", () => {
    expect(formatDuration(5)).toBe("5s");
    expect(formatDuration(130)).toBe("2m 10s");
    expect(formatDuration(3840)).toBe("1h 4m");
  });

  it("countdown is null past the deadline", () => {
    expect(countdown(NOW / 1000 - 1, NOW)).toBeNull();
    expect(countdown(NOW / 1000 + 61, NOW)).toBe("1m 1s");
  });

  it("sparkline skips nulls and needs two points", () => {
    expect(sparklineSvg([{ at: 1, gold: 0.5, silver: null }], (p) => p.gold)).toBe("");
    const svg = sparklineSvg(
      [
        { at: 1, gold: 0.2, silver: null },
        { at: 2, gold: null, silver: null },
        { at: 3, gold: 0.9, silver: null },
      ],
      (p) => p.gold,
    );
    expect(svg).toContain("polyline");
    expect(svg.match(/,/g)?.length).toBeGreaterThanOrEqual(2);
  });
});
