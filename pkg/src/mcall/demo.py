"""Reproducible end-to-end scenario: transforming a rules-based fraud check.

One caller per region wraps the same crude legacy rule and registers a
nearest-centroid candidate model. Synthetic transactions stream through the
gateway; sampled outputs are confirmed or overridden with the true label;
the candidate trains on supervised data; a transformation plan steps each
region from host-only through hybrid to model-only; drift checks watch the
supervised window. Midway, the EU labeling rule can flip to exercise drift
detection while the US region stays healthy.

Everything is seeded and the report contains only logical steps (never wall
clock), so two runs of the same scenario produce identical reports. The demo
drives the gateway over HTTP (an in-process transport), so the whole wire
surface is exercised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from fastapi.testclient import TestClient

from .core import Runtime
from .gateway import create_app
from .records import Record
from .rng import SplitMix64, mix_str

DEMO_ADMIN_KEY = "demo-admin-key"

SIGNATURE = {
    "inputs": [["amount", "number"], ["hour", "number"],
               ["merchant_risk", "number"], ["region", "string"]],
    "outputs": [["fraud", "number"]],
    "context_params": [],
}

FEATURES = ["amount", "hour", "merchant_risk"]


def legacy_rule(record: Record) -> Record:
    """The deliberately crude incumbent: flag anything over 1000."""
    return {"fraud": 1 if record["amount"] > 1000 else 0}


def register_implementations(runtime: Runtime) -> None:
    """Make demo implementations rebindable by ref (used on restore too)."""
    runtime.hooks.add_implementation("demo:legacy_rule", legacy_rule)


def synth_transaction(region: str, step: int, seed: int,
                      drifted: bool = False) -> Tuple[Record, int]:
    """Deterministic transaction and its true label for (region, step, seed)."""
    r = SplitMix64(mix_str(mix_str(seed, region), str(step)))
    amount = 0.01 + r.next_float() * 1999.98
    hour = int(r.next_float() * 24)
    risk = r.next_float()
    inputs = {"amount": amount, "hour": hour, "merchant_risk": risk, "region": region}
    if region == "US":
        label = 1 if (amount > 800 and risk > 0.7) else 0
    elif not drifted:
        label = 1 if ((amount > 500 and hour <= 5) or risk > 0.9) else 0
    else:
        label = 1 if risk > 0.6 else 0
    return inputs, label


@dataclass
class DemoScenario:
    regions: Tuple[str, ...] = ("EU", "US")
    steps: int = 5000
    drift_at: Optional[int] = None          # EU labeling rule flips at this step
    seed: int = 42
    quality_thresholds: Tuple[float, float] = (0.7, 0.5)
    validation_threshold: Tuple[float, float] = (0.72, 0.55)
    edata_fraction: float = 0.25
    feedback_fraction: float = 0.6
    plan_interval: int = 100
    drift_interval: int = 25
    drift_window: int = 200
    shared_model: bool = False
    report_path: Optional[str] = None

    def __post_init__(self):
        if self.drift_at is not None and not 0 <= self.drift_at < self.steps:
            raise ValueError("drift_at must lie within the step range")

    def to_json(self) -> dict:
        return {
            "regions": list(self.regions),
            "steps": self.steps,
            "drift_at": self.drift_at,
            "seed": self.seed,
            "quality_thresholds": list(self.quality_thresholds),
            "validation_threshold": list(self.validation_threshold),
            "edata_fraction": self.edata_fraction,
            "feedback_fraction": self.feedback_fraction,
            "plan_interval": self.plan_interval,
            "drift_interval": self.drift_interval,
            "drift_window": self.drift_window,
            "shared_model": self.shared_model,
        }


@dataclass
class RegionTrack:
    caller_id: str
    candidate_rid: str = ""
    plan_state: str = "host_only"
    cutover_supervised: Optional[int] = None   # supervised count when model-only began
    series: List[dict] = field(default_factory=list)
    drift_alerts: List[int] = field(default_factory=list)
    anomalies: List[str] = field(default_factory=list)


def run_demo(scenario: DemoScenario) -> dict:
    """Run the scenario against an embedded gateway; returns the report."""
    runtime = Runtime()
    register_implementations(runtime)
    app = create_app(runtime, {DEMO_ADMIN_KEY: "admin"})
    headers = {"X-Api-Key": DEMO_ADMIN_KEY}

    with TestClient(app, raise_server_exceptions=True) as client:

        def post(path: str, payload: dict, ok=(200,)) -> dict:
            resp = client.post(f"/v1{path}", json=payload, headers=headers)
            if resp.status_code not in ok:
                raise RuntimeError(f"POST {path} -> {resp.status_code}: {resp.text}")
            return resp.json()

        def get(path: str) -> dict:
            resp = client.get(f"/v1{path}", headers=headers)
            if resp.status_code != 200:
                raise RuntimeError(f"GET {path} -> {resp.status_code}: {resp.text}")
            return resp.json()

        tracks: Dict[str, RegionTrack] = {}
        for region in scenario.regions:
            cid = f"fdc-{region.lower()}"
            post("/callers", {
                "name": cid,
                "signature": SIGNATURE,
                "host": {"kind": "function", "signature": SIGNATURE,
                         "binding": {"type": "local", "ref": "demo:legacy_rule"}},
                "config": {
                    "call_target": "host",
                    "aggregation": {"strategy": "voting"},
                    "edata_fraction": scenario.edata_fraction,
                    "feedback_fraction": scenario.feedback_fraction,
                    "quality_thresholds": list(scenario.quality_thresholds),
                    "validation_threshold": list(scenario.validation_threshold),
                    "rng_seed": mix_str(scenario.seed, region),
                },
            })
            model_id = "mfd-shared" if scenario.shared_model else f"mfd-{region.lower()}"
            reg = post(f"/callers/{cid}/register", {
                "callable": {
                    "id": model_id,
                    "kind": "model",
                    "signature": SIGNATURE,
                    "binding": {"type": "builtin", "model": {
                        "kind": "nearest_centroid", "features": FEATURES,
                        "output": "fraud", "seed": mix_str(scenario.seed, model_id),
                    }},
                },
                "role": "ensemble",
            })
            track = RegionTrack(caller_id=cid, candidate_rid=reg["id"])
            post(f"/callers/{cid}/plan", {"candidate": reg["id"],
                                          "drift_window": scenario.drift_window})
            tracks[region] = track

        def maintain(step: int) -> None:
            """Train, step the plan, and snapshot metrics for each region."""
            for region, track in tracks.items():
                cid = track.caller_id
                counts = get(f"/callers/{cid}/metrics")["category_counts"]
                if counts["platinum"] > 0:
                    post(f"/callers/{cid}/train", {
                        "target": track.candidate_rid, "init": "fresh",
                        "dataset": {"categories": ["platinum"]},
                    })
                plan = post(f"/callers/{cid}/plan/step", {})
                previous = track.plan_state
                track.plan_state = plan["state"]
                if previous != "model_only" and track.plan_state == "model_only":
                    supervised = counts["gold"] + counts["platinum"]
                    track.cutover_supervised = supervised
                metrics = get(f"/callers/{cid}/metrics")
                member = next(m for m in metrics["members"]
                              if m["registration_id"] == track.candidate_rid)
                track.series.append({
                    "step": step,
                    "plan_state": track.plan_state,
                    "gold_accuracy": member["metrics"]["gold_accuracy"],
                    "silver_accuracy": member["metrics"]["silver_accuracy"],
                    "qualification": member["qualification"],
                })

        def check_drift(step: int) -> None:
            for region, track in tracks.items():
                if track.plan_state != "model_only" or track.cutover_supervised is None:
                    continue
                result = get(f"/callers/{track.caller_id}/drift?window={scenario.drift_window}")
                if result["status"] != "alert":
                    continue
                # Only heed windows made entirely of post-cutover samples.
                if result["supervised_count"] >= track.cutover_supervised + scenario.drift_window:
                    track.drift_alerts.append(step)

        for step in range(scenario.steps):
            for region, track in tracks.items():
                drifted = (region == "EU" and scenario.drift_at is not None
                           and step >= scenario.drift_at)
                inputs, label = synth_transaction(region, step, scenario.seed, drifted)
                result = post(f"/callers/{track.caller_id}/call", {"inputs": inputs})
                token = result.get("review_token")
                if token:
                    truth = {"fraud": label}
                    if result["output"] == truth:
                        post(f"/reviews/{token}", {"action": "confirm"})
                    else:
                        post(f"/reviews/{token}", {"action": "override", "output": truth})
            if step % scenario.plan_interval == scenario.plan_interval - 1:
                maintain(step)
            if step % scenario.drift_interval == scenario.drift_interval - 1:
                check_drift(step)

        report = {"scenario": scenario.to_json(), "regions": {}}
        for region, track in tracks.items():
            cid = track.caller_id
            metrics = get(f"/callers/{cid}/metrics")
            plan = get(f"/callers/{cid}/plan")
            report["regions"][region] = {
                "caller_id": cid,
                "final_plan_state": plan["state"],
                "plan_transitions": [e["transition"] for e in plan["history"]],
                # wall-clock 'at' stripped: reports must be run-identical
                "plan_history": [{"transition": e["transition"],
                                  "evidence": e["evidence"]} for e in plan["history"]],
                "category_counts": metrics["category_counts"],
                "sample_count": metrics["sample_count"],
                "host_invocations": metrics["host_invocations"],
                "accuracy_series": track.series,
                "drift_alerts": track.drift_alerts,
                "first_drift_alert": track.drift_alerts[0] if track.drift_alerts else None,
                "anomalies": track.anomalies,
            }

    if scenario.report_path:
        write_report(report, scenario.report_path)
    return report


def write_report(report: dict, path: str, csv_path: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("region,step,plan_state,gold_accuracy,silver_accuracy,qualification\n")
            for region, doc in report["regions"].items():
                for row in doc["accuracy_series"]:
                    fh.write(",".join(str(row_part) for row_part in (
                        region, row["step"], row["plan_state"],
                        row["gold_accuracy"], row["silver_accuracy"],
                        row["qualification"])) + "\n")
