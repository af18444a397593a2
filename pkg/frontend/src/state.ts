/**
 * Client-side stores. All truth lives in the gateway; these hold only what
 * a view needs between polls (optimistically removed cards, metric history
 * for sparklines). Refreshing the page loses nothing that matters.
 */

import type { MetricsDoc, PendingReview } from "./api.js";

/**
 * Review queue with optimistic removal: a submitted card disappears
 * immediately and comes back only if the submit failed for a reason other
 * than "already reviewed" (a 409 means someone else got there first, which
 * is a completed review, not a failure).
 */
export class ReviewQueue {
  private items: PendingReview[] = [];
  private inFlight = new Set<string>();

  sync(fromGateway: PendingReview[]): void {
    this.items = fromGateway.filter((item) => !this.inFlight.has(item.token));
  }

  list(): PendingReview[] {
    return [...this.items];
  }

  beginSubmit(token: string): void {
    this.inFlight.add(token);
    this.items = this.items.filter((item) => item.token !== token);
  }

  finishSubmit(token: string): void {
    this.inFlight.delete(token);
  }

  rollback(token: string, item: PendingReview): void {
    this.inFlight.delete(token);
    if (!this.items.some((other) => other.token === token)) {
      this.items = [item, ...this.items];
    }
  }
}

export interface SparkPoint {
  at: number;
  gold: number | null;
  silver: number | null;
}

/**
 * Rolling accuracy history per caller, one point per poll. Every number is
 * a field from one /metrics response; the console never computes its own
 * accuracy figures.
 */
export class MetricsHistory {
  private series = new Map<string, SparkPoint[]>();

  constructor(private capacity = 120) {}

  record(callerId: string, metrics: MetricsDoc, at: number): void {
    const member = metrics.members.find((m) => m.role === "ensemble") ?? metrics.members[0];
    const point: SparkPoint = {
      at,
      gold: member?.metrics.gold_accuracy ?? null,
      silver: member?.metrics.silver_accuracy ?? null,
    };
    const list = this.series.get(callerId) ?? [];
    list.push(point);
    if (list.length > this.capacity) list.shift();
    this.series.set(callerId, list);
  }

  points(callerId: string): SparkPoint[] {
    return this.series.get(callerId) ?? [];
  }
}
