import json
import time

import numpy as np
import pytest
import requests

from cforan import runtime, service
from cforan.config import (AgentConfig, NetworkConfig, PrecoderConfig,
                           Scenario, ScenarioError, load_scenario)


def desk_scenario(**overrides) -> Scenario:
    base = dict(
        name="desk",
        network=NetworkConfig(num_orus=6, num_users=3, area_side_m=800.0,
                              l_max=4, topology_seed=2, channel_seed=2),
        precoder=PrecoderConfig(rate_tol_mbps=0.05, patience=3, max_iters=80),
        agents=AgentConfig(patience=2, loop_cap=40),
        initial_intent="Maximize the sum of rates. No minimum rate requirements.",
    )
    base.update(overrides)
    return Scenario(**base)


class TestScenarioConfig:
    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "scn.yaml"
        path.write_text(
            "name: t\n"
            "network:\n  num_orus: 4\n  num_users: 2\n  area_side_m: 300\n"
            "  pathloss:\n    exponent: 3.5\n"
            "intent_schedule:\n  - [5, 'Enter the energy-saving mode.']\n"
            "total_loops: 8\n")
        scn = load_scenario(str(path))
        assert scn.network.num_orus == 4
        assert scn.network.pathloss.exponent == 3.5
        assert scn.intent_schedule == [(5, "Enter the energy-saving mode.")]

    def test_unknown_field_named(self, tmp_path):
        path = tmp_path / "scn.yaml"
        path.write_text("network:\n  num_oruz: 4\n")
        with pytest.raises(ScenarioError, match="network.num_oruz"):
            load_scenario(str(path))

    def test_invalid_value_named(self, tmp_path):
        path = tmp_path / "scn.yaml"
        path.write_text("network:\n  num_orus: 0\n")
        with pytest.raises(ScenarioError, match="network.num_orus"):
            load_scenario(str(path))

    def test_schedule_must_increase(self, tmp_path):
        path = tmp_path / "scn.yaml"
        path.write_text("intent_schedule:\n  - [5, 'a']\n  - [5, 'b']\n")
        with pytest.raises(ScenarioError, match="intent_schedule"):
            load_scenario(str(path))

    def test_hash_stable(self):
        assert desk_scenario().hash() == desk_scenario().hash()


class TestBaselines:
    def test_full_power_unconstrained(self):
        record = runtime.run_scenario(desk_scenario(), "full_power")
        final = record.snapshots[-1]
        assert final["active_fraction"] == 1.0
        assert np.all(np.array(final["upsilon"]) == 0.0)
        assert record.episodes[-1]["converged"]

    def test_greedy_single_binding_user_activates_one(self):
        scn = desk_scenario(
            initial_intent="Maximize the sum of rates. "
                           "Guarantee 1 Mbps for user 1.")
        record = runtime.run_scenario(scn, "greedy")
        final = record.snapshots[-1]
        assert final["active_count"] == 1
        assert final["rates_mbps"][0] >= 1.0 - scn.agents.viol_tol_mbps
        # the activated O-RU is user 1's strongest
        world = runtime.build_world(scn, with_memory=False)
        strongest = int(np.argmax(world.fading.beta[0]))
        assert final["z"][strongest] == 1

    def test_greedy_no_constraints_activates_nothing(self):
        record = runtime.run_scenario(desk_scenario(), "greedy")
        assert record.snapshots[-1]["active_count"] == 0

    def test_greedy_never_activates_for_satisfied_user(self):
        scn = desk_scenario(
            initial_intent="Maximize the sum of rates. "
                           "Guarantee 1 Mbps for user 1 and user 2.")
        record = runtime.run_scenario(scn, "greedy")
        # one strong O-RU satisfies both modest demands: user 2 adds nothing
        snaps = record.snapshots
        assert snaps[-1]["active_count"] <= 2

    def test_proposed_unconstrained_converges(self):
        record = runtime.run_scenario(desk_scenario(), "proposed")
        assert record.episodes[-1]["converged"]
        assert record.episodes[-1]["loops_to_converge"] == 1

    def test_drl_ga_multipliers_climb_on_violations(self):
        # uncoordinated baseline: mu and lambda rise by plain gradient steps
        # whenever a violation persists (non-ES keeps every radio on)
        scn = desk_scenario(
            initial_intent="Maximize the sum of rates. "
                           "Guarantee 100000 Mbps for user 1.",
            agents=AgentConfig(patience=2, loop_cap=6))
        record = runtime.run_scenario(scn, "drl_ga")
        mu1 = [s["mu"][0] for s in record.snapshots]
        lam1 = [s["lam"][0] for s in record.snapshots]
        assert len(record.snapshots) == 6          # capped, never satisfied
        assert all(b >= a for a, b in zip(mu1, mu1[1:]))
        assert all(b >= a for a, b in zip(lam1, lam1[1:]))
        assert lam1[-1] > lam1[0]
        assert lam1[-1] <= scn.agents.lambda_max
        assert not record.episodes[-1]["converged"]

    def test_reproducible_records(self):
        a = runtime.run_scenario(desk_scenario(), "proposed")
        b = runtime.run_scenario(desk_scenario(), "proposed")
        assert a.snapshots == b.snapshots


class TestExport:
    def test_empty_record_header_only(self, tmp_path):
        record = runtime.RunRecord("x", "h", "proposed")
        paths = runtime.export_metrics(record, str(tmp_path))
        lines = open(paths["series"]).read().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("loop,active_count,active_fraction,decision")

    def test_series_columns_stable(self, tmp_path):
        record = runtime.run_scenario(desk_scenario(), "full_power")
        paths = runtime.export_metrics(record, str(tmp_path))
        header = open(paths["series"]).read().splitlines()[0].split(",")
        assert header[:4] == ["loop", "active_count", "active_fraction", "decision"]
        assert "rate_mbps_u1" in header and "upsilon_u3" in header
        assert header.index("rate_mbps_u1") < header.index("alpha_u1")

    def test_identical_runs_identical_files(self, tmp_path):
        scn = desk_scenario()
        rec_a = runtime.run_scenario(scn, "full_power")
        rec_b = runtime.run_scenario(scn, "full_power")
        pa = runtime.export_metrics(rec_a, str(tmp_path / "a"))
        pb = runtime.export_metrics(rec_b, str(tmp_path / "b"))
        assert open(pa["series"]).read() == open(pb["series"]).read()

    def test_messages_jsonl(self, tmp_path):
        record = runtime.run_scenario(desk_scenario(), "proposed")
        paths = runtime.export_metrics(record, str(tmp_path))
        lines = open(paths["messages"]).read().splitlines()
        assert len(lines) == len(record.messages) > 0
        assert json.loads(lines[0])["sender"] == "supervisor"


def sse_events(port, timeout=30.0, want=None):
    """Collect SSE events until run-end (or `want` snapshot events)."""
    events = []
    with requests.get(f"http://127.0.0.1:{port}/events", stream=True,
                      timeout=timeout) as resp:
        name = None
        for raw in resp.iter_lines():
            line = raw.decode()
            if line.startswith("event: "):
                name = line[len("event: "):]
            elif line.startswith("data: "):
                events.append((name, json.loads(line[len("data: "):])))
                if name == "run-end":
                    break
                if want is not None:
                    snaps = [e for e in events if e[0] == "snapshot"]
                    if len(snaps) >= want:
                        break
    return events


class TestService:
    def test_initial_state_all_on(self):
        runner = runtime.ScenarioRunner(desk_scenario(total_loops=5), "full_power")
        live = service.LiveRunner(runner)
        state = live.state()
        assert state["loop"] == 0
        assert all(v == 1 for v in state["z"])

    def test_ten_loop_stream_and_state(self):
        scn = desk_scenario(total_loops=10)
        runner = runtime.ScenarioRunner(scn, "full_power")
        handle = service.serve(runner, port=0)
        try:
            events = sse_events(handle.port)
            snaps = [e for e in events if e[0] == "snapshot"]
            assert len(snaps) == 10
            loops = [s[1]["loop"] for s in snaps]
            assert loops == list(range(1, 11))
            state = requests.get(
                f"http://127.0.0.1:{handle.port}/state", timeout=5).json()
            assert state["loop"] == 10
            assert state["schema"] == "cforan.v1"
            world = requests.get(
                f"http://127.0.0.1:{handle.port}/world", timeout=5).json()
            assert world["num_orus"] == scn.network.num_orus
            assert len(world["oru_positions"]) == scn.network.num_orus
        finally:
            handle.stop()

    def test_intent_applied_at_next_boundary(self):
        scn = desk_scenario(total_loops=12)
        runner = runtime.ScenarioRunner(scn, "proposed")
        handle = service.serve(runner, port=0, loop_delay_s=0.15)
        try:
            ack = requests.post(
                f"http://127.0.0.1:{handle.port}/intent",
                json={"text": "Maximize the sum of log-rates. "
                              "No minimum rate requirements."},
                timeout=5).json()
            assert ack["accepted"]
            assert ack["objective"]["utility_kind"] == "sum_log_rate"
            handle.wait_finished(timeout=60)
            intents = runner.record.intents
            assert any(i["objective"]["utility_kind"] == "sum_log_rate"
                       for i in intents)
        finally:
            handle.stop()

    def test_malformed_intent_diagnosed(self):
        scn = desk_scenario(total_loops=3)
        runner = runtime.ScenarioRunner(scn, "full_power")
        handle = service.serve(runner, port=0)
        try:
            resp = requests.post(f"http://127.0.0.1:{handle.port}/intent",
                                 json={"text": "Make it purple."}, timeout=5)
            assert resp.status_code == 422
            body = resp.json()
            assert not body["accepted"]
            assert "cannot parse" in body["error"]
        finally:
            handle.stop()

    def test_stream_snapshots_match_record(self):
        scn = desk_scenario(total_loops=6)
        runner = runtime.ScenarioRunner(scn, "full_power")
        handle = service.serve(runner, port=0)
        try:
            events = sse_events(handle.port)
            snaps = [e[1] for e in events if e[0] == "snapshot"]
            for got, want in zip(snaps, runner.record.snapshots):
                assert got["rates_mbps"] == want["rates_mbps"]
                assert got["z"] == want["z"]
        finally:
            handle.stop()
