/**
 * Signature-driven validation for override and collaboration answer forms.
 *
 * Form fields arrive as strings; each declared output parameter parses
 * according to its value kind. Submit stays disabled until every field
 * parses, mirroring the server's 422 checks so valid forms never bounce.
 */

import type { Param, Record_ } from "./api.js";

export interface FieldState {
  name: string;
  kind: string;
  raw: string;
  ok: boolean;
  value?: unknown;
  error?: string;
}

export function parseField(kind: string, raw: string): { ok: boolean; value?: unknown; error?: string } {
  const text = raw.trim();
  if (text === "") return { ok: false, error: "required" };
  switch (kind) {
    case "number": {
      const n = Number(text);
      if (!Number.isFinite(n)) return { ok: false, error: "not a number" };
      return { ok: true, value: n };
    }
    case "boolean": {
      if (text === "true") return { ok: true, value: true };
      if (text === "false") return { ok: true, value: false };
      return { ok: false, error: "true or false" };
    }
    case "string":
      return { ok: true, value: raw };
    case "list":
    case "map":
    case "any": {
      try {
        const value = JSON.parse(text) as unknown;
        if (kind === "list" && !Array.isArray(value)) return { ok: false, error: "JSON list required" };
        if (kind === "map" && (typeof value !== "object" || value === null || Array.isArray(value))) {
          return { ok: false, error: "JSON object required" };
        }
        return { ok: true, value };
      } catch {
        if (kind === "any") return { ok: true, value: raw };
        return { ok: false, error: "invalid JSON" };
      }
    }
    default:
      return { ok: false, error: `unknown kind ${kind}` };
  }
}

export function validateForm(outputs: Param[], raw: { [name: string]: string }): FieldState[] {
  return outputs.map(([name, kind]) => {
    const parsed = parseField(kind, raw[name] ?? "");
    return { name, kind, raw: raw[name] ?? "", ...parsed };
  });
}

export function formIsValid(fields: FieldState[]): boolean {
  return fields.length > 0 && fields.every((f) => f.ok);
}

export function formRecord(fields: FieldState[]): Record_ {
  const record: Record_ = {};
  for (const f of fields) record[f.name] = f.value;
  return record;
}

/** Prefill form text from a proposed output record. */
export function prefill(outputs: Param[], proposed: Record_): { [name: string]: string } {
  const raw: { [name: string]: string } = {};
  for (const [name, kind] of outputs) {
    const value = proposed[name];
    if (value === undefined) {
      raw[name] = "";
    } else if (kind === "string") {
      raw[name] = String(value);
    } else {
      raw[name] = JSON.stringify(value);
    }
  }
  return raw;
}
