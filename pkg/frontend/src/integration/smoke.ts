/**
 * Live-gateway smoke check:
 *
 *   node dist/integration/smoke.js http://127.0.0.1:8080 <api-key>
 *
 * Creates a caller, makes a sampled call, confirms the review appears in
 * the queue, overrides it, and checks the gold count moved. Exits non-zero
 * on the first failed expectation.
 */

import { GatewayClient } from "../api.js";

async function main(): Promise<void> {
  const [url, key] = process.argv.slice(2);
  if (!url || !key) {
    console.error("usage: smoke.js <gateway-url> <admin-api-key>");
    process.exit(2);
  }
  const client = new GatewayClient(url, key);
  const name = `console-smoke-${Date.now()}`;
  const signature = {
    inputs: [["v", "number"]],
    outputs: [["y", "number"]],
    context_params: [],
  };

  const post = async (path: string, body: unknown) => {
    const resp = await fetch(`${url}/v1${path}`, {
      method: "POST",
      headers: { "X-Api-Key": key, "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw new Error(`POST ${path} -> ${resp.status}: ${await resp.text()}`);
    return resp.json();
  };

  await post("/callers", {
    name,
    signature,
    config: { call_target: "registered", feedback_fraction: 1.0, rng_seed: 3 },
  });
  await post(`/callers/${name}/register`, {
    callable: {
      kind: "model",
      signature,
      binding: { type: "builtin", model: { kind: "constant", value: 0, output: "y" } },
    },
  });
  const before = await client.metrics(name);
  const call = (await post(`/callers/${name}/call`, { inputs: { v: 1 } })) as {
    review_token: string;
  };

  const pending = await client.pendingReviews(name);
  if (!pending.some((p) => p.token === call.review_token)) {
    throw new Error("pending review not visible in the queue");
  }
  await client.override(call.review_token, { y: 1 });
  const after = await client.metrics(name);
  const grew =
    after.category_counts.gold + after.category_counts.platinum >
    before.category_counts.gold + before.category_counts.platinum;
  if (!grew) throw new Error("override did not increase supervised counts");

  // Collaboration: an external member's call blocks until the console answers.
  await post(`/callers/${name}/register`, {
    callable: { kind: "external", signature, binding: { type: "external", timeout_s: 30 } },
  });
  const inFlight = post(`/callers/${name}/call`, { inputs: { v: 2 } }) as Promise<{
    member_outputs: { ok: boolean; output?: { y?: number } }[];
  }>;
  let answered = false;
  for (let i = 0; i < 100 && !answered; i++) {
    const open = await client.openCollab();
    const mine = open.find((r) => r.caller_id === name);
    if (mine) {
      await client.answerCollab(mine.id, { y: 7 });
      answered = true;
    } else {
      await new Promise((r) => setTimeout(r, 100));
    }
  }
  if (!answered) throw new Error("collaboration request never appeared");
  const result = await inFlight;
  const joined = result.member_outputs.some((m) => m.ok && m.output?.y === 7);
  if (!joined) throw new Error("collaboration answer missing from member outputs");
  console.log("smoke ok:", name);
}

main().catch((err) => {
  console.error(String(err));
  process.exit(1);
});
