"""Operator command line.

Every command except ``serve`` and ``demo run`` talks HTTP to a gateway, so
the one wire surface carries all administration. The client configuration is
a small JSON file ``{"url": "http://...", "api_key": "..."}`` passed with
``--config`` (or the MCALL_CONFIG environment variable).

Exit codes: 0 success, 1 usage error, 2 gateway/config error, 3 demo
assertion failure.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass
from typing import Optional

import click
import httpx

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_GATEWAY = 2
EXIT_DEMO_ASSERT = 3


class GatewayCommandError(Exception):
    pass


class DemoAssertionError(Exception):
    pass


@dataclass
class ClientConfig:
    url: str
    api_key: str


def _load_client_config(path: Optional[str]) -> ClientConfig:
    path = path or os.environ.get("MCALL_CONFIG")
    if not path:
        raise GatewayCommandError(
            "no client config: pass --config PATH or set MCALL_CONFIG")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return ClientConfig(url=doc["url"].rstrip("/"), api_key=doc["api_key"])
    except (OSError, ValueError, KeyError) as exc:
        raise GatewayCommandError(f"bad client config {path}: {exc}") from None


class Client:
    def __init__(self, cfg: ClientConfig):
        self.cfg = cfg
        self.http = httpx.Client(base_url=cfg.url + "/v1",
                                 headers={"X-Api-Key": cfg.api_key}, timeout=60.0)

    def request(self, method: str, path: str, payload: dict = None) -> dict:
        try:
            resp = self.http.request(method, path, json=payload)
        except httpx.HTTPError as exc:
            raise GatewayCommandError(f"gateway unreachable: {exc}") from None
        if resp.status_code >= 400:
            try:
                message = resp.json()["error"]["message"]
            except Exception:
                message = resp.text
            raise GatewayCommandError(f"{resp.status_code}: {message}")
        return resp.json()


def _emit(ctx: click.Context, doc, human: str = None) -> None:
    if ctx.obj.get("json") or human is None:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        click.echo(human)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Client config JSON with gateway url and api key.")
@click.option("--json", "json_out", is_flag=True, help="Always print raw JSON.")
@click.pass_context
def cli(ctx, config_path, json_out):
    """Administer model callers through a gateway."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["json"] = json_out


def _client(ctx) -> Client:
    return Client(_load_client_config(ctx.obj.get("config_path")))


# -- serve ---------------------------------------------------------------

@cli.command()
@click.option("--config", "service_config", type=click.Path(exists=False), required=True,
              help="Service config JSON (bind, api_keys, persistence_dir).")
def serve(service_config):
    """Run the gateway until interrupted; persists callers on shutdown."""
    from .errors import McallError
    from .gateway import start_service
    try:
        start_service(service_config, block=True)
    except McallError as exc:
        raise GatewayCommandError(str(exc)) from None


# -- caller ---------------------------------------------------------------

@cli.group()
def caller():
    """Create and inspect callers."""


@caller.command("create")
@click.option("--file", "spec_file", type=click.Path(exists=True), required=True,
              help="Caller description JSON (name, signature, config, host).")
@click.pass_context
def caller_create(ctx, spec_file):
    with open(spec_file, encoding="utf-8") as fh:
        payload = json.load(fh)
    doc = _client(ctx).request("POST", "/callers", payload)
    _emit(ctx, doc, f"created caller {doc['id']}")


@caller.command("list")
@click.pass_context
def caller_list(ctx):
    doc = _client(ctx).request("GET", "/callers")
    lines = [f"{c['id']}  target={c['call_target']}  samples={c['sample_count']}"
             f"  plan={c['plan_state'] or '-'}" for c in doc]
    _emit(ctx, doc, "\n".join(lines) if lines else "(no callers)")


@caller.command("show")
@click.argument("caller_id")
@click.pass_context
def caller_show(ctx, caller_id):
    _emit(ctx, _client(ctx).request("GET", f"/callers/{caller_id}"))


# -- dataset ---------------------------------------------------------------

@cli.group()
def dataset():
    """Inspect cached samples."""


@dataset.command("show")
@click.argument("caller_id")
@click.option("--category", type=click.Choice(["gold", "platinum", "silver", "bronze"]),
              default=None)
@click.option("--origin", type=click.Choice(["call", "sensor"]), default=None)
@click.option("--limit", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write JSONL here instead of stdout.")
@click.pass_context
def dataset_show(ctx, caller_id, category, origin, limit, out_path):
    """Print matching samples as JSONL."""
    params = []
    if category:
        params.append(f"category={category}")
    if origin:
        params.append(f"origin={origin}")
    if limit is not None:
        params.append(f"limit={limit}")
    query = ("?" + "&".join(params)) if params else ""
    samples = _client(ctx).request("GET", f"/callers/{caller_id}/dataset{query}")
    lines = "\n".join(json.dumps(s, sort_keys=True) for s in samples)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(lines + ("\n" if lines else ""))
        click.echo(f"wrote {len(samples)} samples to {out_path}")
    else:
        click.echo(lines if lines else "(no samples)")


# -- reviews ---------------------------------------------------------------

@cli.group()
def review():
    """List and apply supervision feedback."""


@review.command("list")
@click.argument("caller_id")
@click.option("--limit", type=int, default=20)
@click.pass_context
def review_list(ctx, caller_id, limit):
    doc = _client(ctx).request("GET", f"/callers/{caller_id}/reviews?state=pending&limit={limit}")
    lines = [f"{item['token']}  inputs={json.dumps(item['sample']['inputs'])}"
             f"  output={json.dumps(item['sample']['output'])}" for item in doc]
    _emit(ctx, doc, "\n".join(lines) if lines else "(no pending reviews)")


@review.command("apply")
@click.argument("token")
@click.option("--confirm", "do_confirm", is_flag=True)
@click.option("--override", "override_json", default=None,
              help="JSON output record replacing the cached one.")
@click.option("--reward", type=float, default=None)
@click.pass_context
def review_apply(ctx, token, do_confirm, override_json, reward):
    actions = [bool(do_confirm), override_json is not None, reward is not None]
    if sum(actions) != 1:
        raise click.UsageError("choose exactly one of --confirm / --override / --reward")
    if do_confirm:
        payload = {"action": "confirm"}
    elif override_json is not None:
        payload = {"action": "override", "output": json.loads(override_json)}
    else:
        payload = {"action": "reward", "value": reward}
    doc = _client(ctx).request("POST", f"/reviews/{token}", payload)
    _emit(ctx, doc, f"sample {doc['id']} now {doc.get('review', {}).get('state', 'none')}")


# -- train / eval ---------------------------------------------------------------

@cli.command()
@click.argument("caller_id")
@click.option("--target", default=None, help="Registration id (defaults to caller-level).")
@click.option("--mode", type=click.Choice(["local", "nested"]), default="local")
@click.option("--init", type=click.Choice(["fresh", "incremental"]), default="incremental")
@click.option("--bagging", is_flag=True)
@click.pass_context
def train(ctx, caller_id, target, mode, init, bagging):
    """Train a registered model or the caller's own parameters."""
    payload = {"mode": mode, "init": init, "bagging": bagging}
    if target:
        payload["target"] = target
    _emit(ctx, _client(ctx).request("POST", f"/callers/{caller_id}/train", payload))


@cli.command()
@click.argument("caller_id")
@click.option("--target", default=None)
@click.option("--behavior", type=click.Choice(["golden", "combined"]), default="combined")
@click.option("--scope", type=click.Choice(["local", "nested"]), default="local")
@click.pass_context
def eval(ctx, caller_id, target, behavior, scope):
    """Evaluate a caller or one registration."""
    payload = {"behavior": behavior, "scope": scope}
    if target:
        payload["target"] = target
    _emit(ctx, _client(ctx).request("POST", f"/callers/{caller_id}/eval", payload))


# -- call target ---------------------------------------------------------------

@cli.group()
def target():
    """Call-target routing."""


@target.command("set")
@click.argument("caller_id")
@click.argument("value", type=click.Choice(["host", "registered", "both"]))
@click.pass_context
def target_set(ctx, caller_id, value):
    doc = _client(ctx).request("PATCH", f"/callers/{caller_id}/config",
                               {"call_target": value})
    _emit(ctx, doc, f"call_target={doc['call_target']}")


# -- plans ---------------------------------------------------------------

@cli.group()
def plan():
    """Transformation plans."""


@plan.command("start")
@click.argument("caller_id")
@click.option("--candidate", required=True, help="Candidate registration id.")
@click.option("--demote-on-drift", is_flag=True)
@click.pass_context
def plan_start(ctx, caller_id, candidate, demote_on_drift):
    doc = _client(ctx).request("POST", f"/callers/{caller_id}/plan",
                               {"candidate": candidate, "demote_on_drift": demote_on_drift})
    _emit(ctx, doc, f"plan state={doc['state']}")


@plan.command("step")
@click.argument("caller_id")
@click.pass_context
def plan_step(ctx, caller_id):
    doc = _client(ctx).request("POST", f"/callers/{caller_id}/plan/step", {})
    _emit(ctx, doc, f"plan state={doc['state']}")


@plan.command("status")
@click.argument("caller_id")
@click.pass_context
def plan_status(ctx, caller_id):
    _emit(ctx, _client(ctx).request("GET", f"/callers/{caller_id}/plan"))


# -- demo ---------------------------------------------------------------

@cli.group()
def demo():
    """The end-to-end fraud-transformation scenario."""


@demo.command("run")
@click.option("--seed", type=int, default=42)
@click.option("--steps", type=int, default=5000)
@click.option("--drift-at", type=int, default=None)
@click.option("--regions", default="EU,US")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.pass_context
def demo_run(ctx, seed, steps, drift_at, regions, out_path, csv_path):
    """Run the scripted scenario against an embedded gateway."""
    from .demo import DemoScenario, run_demo, write_report
    try:
        scenario = DemoScenario(regions=tuple(regions.split(",")), steps=steps,
                                drift_at=drift_at, seed=seed)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    report = run_demo(scenario)
    if out_path:
        write_report(report, out_path, csv_path)
    summary = {
        region: {
            "final_plan_state": doc["final_plan_state"],
            "first_drift_alert": doc["first_drift_alert"],
            "category_counts": doc["category_counts"],
        }
        for region, doc in report["regions"].items()
    }
    _emit(ctx, summary if not ctx.obj.get("json") else report)
    anomalies = [a for doc in report["regions"].values() for a in doc["anomalies"]]
    if anomalies:
        raise DemoAssertionError("; ".join(anomalies))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
        return EXIT_OK
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except DemoAssertionError as exc:
        click.echo(f"demo assertion failed: {exc}", err=True)
        return EXIT_DEMO_ASSERT
    except GatewayCommandError as exc:
        click.echo(f"gateway error: {exc}", err=True)
        return EXIT_GATEWAY


if __name__ == "__main__":
    sys.exit(main())
