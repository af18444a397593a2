/** Small pure helpers shared by the views. */

import type { SparkPoint } from "./state.js";

export function escapeHtml(text: unknown): string {
  return String(text)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

/** "3s", "2m 10s", "1h 4m" from a second count. */
export function formatDuration(totalSeconds: number): string {
  const s = Math.max(0, Math.floor(totalSeconds));
  if (s < 60) return `${s}s`;
  if (s < 3600) return `${Math.floor(s / 60)}m ${s % 60}s`;
  return `${Math.floor(s / 3600)}h ${Math.floor((s % 3600) / 60)}m`;
}

/** Age of an epoch-seconds timestamp relative to nowMs. */
export function ageText(createdAtEpochS: number, nowMs: number): string {
  return formatDuration(nowMs / 1000 - createdAtEpochS) + " ago";
}

/** Remaining time until an epoch-seconds deadline; null when passed. */
export function countdown(deadlineEpochS: number, nowMs: number): string | null {
  const remaining = deadlineEpochS - nowMs / 1000;
  if (remaining <= 0) return null;
  return formatDuration(remaining);
}

export function percent(value: number | null): string {
  return value === null ? "–" : `${(value * 100).toFixed(1)}%`;
}

/**
 * Inline SVG sparkline over [0,1]-valued points; gaps (nulls) are skipped.
 * Returns "" when fewer than two points exist.
 */
export function sparklineSvg(
  points: SparkPoint[],
  pick: (p: SparkPoint) => number | null,
  width = 120,
  height = 24,
): string {
  const values = points.map(pick);
  const known = values.filter((v): v is number => v !== null);
  if (known.length < 2) return "";
  const n = values.length;
  const coords: string[] = [];
  values.forEach((v, i) => {
    if (v === null) return;
    const x = (i / (n - 1)) * (width - 2) + 1;
    const y = height - 1 - v * (height - 2);
    coords.push(`${x.toFixed(1)},${y.toFixed(1)}`);
  });
  return (
    `<svg class="spark" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">` +
    `<polyline fill="none" stroke="currentColor" stroke-width="1.5" points="${coords.join(" ")}"/>` +
    `</svg>`
  );
}
