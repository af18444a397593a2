"""CLI against a live gateway, plus service bootstrap behavior."""

import json
import socket
import time

import httpx
import pytest

from mcall.cli import main
from mcall.errors import ConfigError
from mcall.gateway import load_service_config, start_service

SIG = {"inputs": [["v", "number"]], "outputs": [["y", "number"]], "context_params": []}


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def live_gateway(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    port = free_port()
    service_cfg = root / "service.json"
    service_cfg.write_text(json.dumps({
        "bind": {"host": "127.0.0.1", "port": port},
        "api_keys": {"adm": "admin", "view": "viewer"},
        "persistence_dir": str(root / "state"),
    }))
    handle = start_service(str(service_cfg))
    for _ in range(100):
        try:
            httpx.get(f"http://127.0.0.1:{port}/v1/callers",
                      headers={"X-Api-Key": "adm"}, timeout=1.0)
            break
        except httpx.HTTPError:
            time.sleep(0.05)
    client_cfg = root / "client.json"
    client_cfg.write_text(json.dumps({"url": f"http://127.0.0.1:{port}",
                                      "api_key": "adm"}))
    yield handle, str(client_cfg), str(service_cfg), root
    handle.stop()


def run_cli(client_cfg, *args):
    return main(["--config", client_cfg, *args])


class TestCliAgainstGateway:
    def test_caller_create_list_show(self, live_gateway, tmp_path, capsys):
        _, client_cfg, _, _ = live_gateway
        spec = tmp_path / "caller.json"
        spec.write_text(json.dumps({
            "name": "cli-c", "signature": SIG,
            "config": {"feedback_fraction": 1.0, "rng_seed": 4,
                       "call_target": "registered"},
        }))
        assert run_cli(client_cfg, "caller", "create", "--file", str(spec)) == 0
        assert run_cli(client_cfg, "caller", "list") == 0
        assert "cli-c" in capsys.readouterr().out
        assert run_cli(client_cfg, "caller", "show", "cli-c") == 0

    def test_register_call_review_dataset_flow(self, live_gateway, capsys):
        handle, client_cfg, _, _ = live_gateway
        url, key = handle.url, "adm"
        http = httpx.Client(base_url=url + "/v1", headers={"X-Api-Key": key})
        http.post("/callers/cli-c/register", json={
            "callable": {"kind": "model", "signature": SIG,
                         "binding": {"type": "builtin",
                                     "model": {"kind": "constant", "value": 0.0,
                                               "output": "y"}}}})
        res = http.post("/callers/cli-c/call", json={"inputs": {"v": 1.0}}).json()
        token = res["review_token"]

        assert run_cli(client_cfg, "review", "list", "cli-c") == 0
        assert token in capsys.readouterr().out
        assert run_cli(client_cfg, "review", "apply", token,
                       "--override", '{"y": 5.0}') == 0
        capsys.readouterr()
        assert run_cli(client_cfg, "dataset", "show", "cli-c") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        docs = [json.loads(l) for l in lines]
        overridden = [d for d in docs if d.get("review", {}).get("state") == "overridden"]
        assert overridden and overridden[0]["output"] == {"y": 5.0}
        assert overridden[0]["original_output"] == {"y": 0.0}
        # category filter narrows to the supervised split of that sample
        category = "gold" if overridden[0]["split"] == "evaluation" else "platinum"
        assert run_cli(client_cfg, "dataset", "show", "cli-c",
                       "--category", category) == 0
        filtered = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        assert any(d["id"] == overridden[0]["id"] for d in filtered)

    def test_target_set_and_eval_train(self, live_gateway, capsys):
        handle, client_cfg, _, _ = live_gateway
        http = httpx.Client(base_url=handle.url + "/v1", headers={"X-Api-Key": "adm"})
        regs = http.get("/callers/cli-c/metrics").json()["members"]
        rid = regs[0]["registration_id"]
        for i in range(6):
            res = http.post("/callers/cli-c/call", json={"inputs": {"v": float(i)}}).json()
            if res["review_token"]:
                http.post(f"/reviews/{res['review_token']}", json={"action": "confirm"})
        assert run_cli(client_cfg, "eval", "cli-c", "--target", rid) == 0
        capsys.readouterr()
        assert run_cli(client_cfg, "train", "cli-c", "--target", rid) == 0

    def test_gateway_error_exit_code(self, live_gateway, capsys):
        _, client_cfg, _, _ = live_gateway
        assert run_cli(client_cfg, "caller", "show", "nope") == 2

    def test_usage_error_exit_code(self, live_gateway, capsys):
        _, client_cfg, _, _ = live_gateway
        assert run_cli(client_cfg, "review", "apply", "tok") == 1  # no action picked
        assert main(["caller", "bogus-subcommand"]) == 1

    def test_unreachable_gateway_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "client.json"
        cfg.write_text(json.dumps({"url": "http://127.0.0.1:9", "api_key": "x"}))
        assert run_cli(str(cfg), "caller", "list") == 2


class TestServiceBootstrap:
    def test_port_conflict_fails_fast(self, live_gateway, tmp_path):
        handle, _, service_cfg, _ = live_gateway
        with pytest.raises(ConfigError):
            start_service(service_cfg)  # same port is already bound

    def test_invalid_config_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_service_config(str(bad))
        nokeys = tmp_path / "nokeys.json"
        nokeys.write_text(json.dumps({"bind": {"port": 1}}))
        with pytest.raises(ConfigError):
            load_service_config(str(nokeys))

    def test_serve_cli_invalid_config_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["serve", "--config", str(bad)]) == 2

    def test_restart_restores_callers(self, tmp_path):
        port = free_port()
        cfg_path = tmp_path / "svc.json"
        cfg_path.write_text(json.dumps({
            "bind": {"host": "127.0.0.1", "port": port},
            "api_keys": {"adm": "admin"},
            "persistence_dir": str(tmp_path / "state"),
        }))
        handle = start_service(str(cfg_path))
        base = f"http://127.0.0.1:{port}/v1"
        headers = {"X-Api-Key": "adm"}
        for _ in range(100):
            try:
                httpx.get(base + "/callers", headers=headers, timeout=1.0)
                break
            except httpx.HTTPError:
                time.sleep(0.05)
        httpx.post(base + "/callers", headers=headers, json={
            "name": "boot", "signature": SIG,
            "config": {"call_target": "registered", "rng_seed": 1}})
        httpx.post(base + "/callers/boot/register", headers=headers, json={
            "callable": {"kind": "model", "signature": SIG,
                         "binding": {"type": "builtin",
                                     "model": {"kind": "constant", "value": 2.0,
                                               "output": "y"}}}})
        for i in range(5):
            httpx.post(base + "/callers/boot/call", headers=headers,
                       json={"inputs": {"v": float(i)}})
        handle.stop()

        handle2 = start_service(str(cfg_path))
        try:
            for _ in range(100):
                try:
                    doc = httpx.get(base + "/callers/boot", headers=headers,
                                    timeout=1.0).json()
                    break
                except httpx.HTTPError:
                    time.sleep(0.05)
            assert doc["sample_count"] == 5
        finally:
            handle2.stop()


class TestDemoCli:
    def test_micro_demo_run_writes_report(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        csv = tmp_path / "series.csv"
        code = main(["demo", "run", "--seed", "7", "--steps", "120",
                     "--out", str(out), "--csv", str(csv)])
        assert code == 0
        report = json.loads(out.read_text())
        assert set(report["regions"]) == {"EU", "US"}
        assert csv.read_text().startswith("region,step")

    def test_drift_at_must_be_in_range(self, capsys):
        assert main(["demo", "run", "--steps", "10", "--drift-at", "50"]) == 1
