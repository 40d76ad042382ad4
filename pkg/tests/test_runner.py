import csv
from pathlib import Path

import pytest

from fluxsim.core.snapshot import SnapshotTree
from fluxsim.detection.report import METRICS_COLUMNS, REPORT_FILE, render_report
from fluxsim.sim.bot import Status
from fluxsim.sim.botmaster import BotRecord
from fluxsim.sim.eventlog import load_events_from_file
from fluxsim.sim.runner import SNAPSHOTS_FILE, build_world, run_scenario, run_world
from fluxsim.sim.scenario import build_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
ARTIFACTS = ["events.jsonl", "metrics.csv", "report.csv", "registry_snapshots.bin", "summary.md"]


def small_raw(**overrides):
    raw = {
        "name": "small",
        "master_seed": 9,
        "duration_ms": 1_800_000,
        "dga": {"alpha": 200, "beta": 20},
        "servers": {"count": 3},
        "bots": [
            {"profile": "auto_grant", "count": 6, "jitter": {"min_ms": 5000, "max_ms": 30000}, "hop_interval_ms": 300_000},
            {"profile": "notify_deny", "count": 2, "jitter": {"mode": "disabled", "period_ms": 20000}},
        ],
        "command_schedule": [
            {"at_ms": 300_000, "targets": {"profile": "auto_grant"}, "kind": "GRAB_GPS_LOCATION"},
            {"at_ms": 600_000, "targets": "all", "kind": "CAPTURE_IMAGE"},
        ],
        "faults": [{"type": "IpReassign", "bot": "bot-002", "at_ms": 450_000}],
        "assertions": [{"metric": "bots_registered", "op": "equals", "value": 8}],
    }
    raw.update(overrides)
    return raw


def test_run_writes_every_artifact(tmp_path):
    result = run_scenario(build_scenario(small_raw()), tmp_path)
    for name in ARTIFACTS:
        assert (tmp_path / name).exists()
    assert result.passed
    assert result.exit_code == 0
    assert result.summary["bots"] == 8
    assert result.summary["commands_ok"] == 6 + 6
    assert result.summary["commands_denied"] == 2
    with open(tmp_path / "metrics.csv", newline="") as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == METRICS_COLUMNS
        assert len(list(reader)) == 8


def test_same_seed_gives_identical_artifacts(tmp_path):
    run_scenario(build_scenario(small_raw()), tmp_path / "a")
    run_scenario(build_scenario(small_raw()), tmp_path / "b")
    for name in ARTIFACTS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_different_seed_changes_the_trace(tmp_path):
    run_scenario(build_scenario(small_raw()), tmp_path / "a")
    run_scenario(build_scenario(small_raw(master_seed=10)), tmp_path / "b")
    assert (tmp_path / "a" / "events.jsonl").read_bytes() != (tmp_path / "b" / "events.jsonl").read_bytes()


def test_events_log_starts_with_run_record(tmp_path):
    run_scenario(build_scenario(small_raw()), tmp_path)
    events = load_events_from_file(tmp_path / "events.jsonl")
    assert events[0]["kind"] == "run"
    assert events[0]["scenario"]["master_seed"] == 9
    times = [e["time"] for e in events[1:] if e["kind"] == "traffic"]
    assert times == sorted(times)


def test_report_rerender_is_byte_identical(tmp_path):
    run_scenario(build_scenario(small_raw()), tmp_path)
    first = (tmp_path / REPORT_FILE).read_bytes()
    render_report(tmp_path)
    assert (tmp_path / REPORT_FILE).read_bytes() == first


def test_snapshot_dump_replays_to_the_final_registry(tmp_path):
    scenario = build_scenario(small_raw())
    run_scenario(scenario, tmp_path)
    tree = SnapshotTree.load(str(tmp_path / SNAPSHOTS_FILE), BotRecord.from_dict)
    registry = tree.materialize(tree.latest)
    assert sorted(registry) == list(range(1, 9))
    assert {r.device_id for r in registry.values()} == {f"dev{i:03d}" for i in range(1, 9)}


def test_failed_assertion_sets_exit_code(tmp_path):
    raw = small_raw(assertions=[{"metric": "restores", "op": "equals", "value": 1}])
    result = run_scenario(build_scenario(raw), tmp_path)
    assert not result.passed
    assert result.exit_code == 1
    assert "- FAIL: restores equals 1" in (tmp_path / "summary.md").read_text()


def test_reassigned_bot_keeps_its_id_and_gets_commands():
    world = build_world(build_scenario(small_raw()))
    run_world(world)
    bot = world.bot("bot-002")
    record = world.botmaster.state.registry[bot.state.bot_id]
    assert record.ip == bot.address
    assert bot.state.stats.commands_ok == 2


@pytest.mark.parametrize("name", ["default", "baseline_linear", "takedown", "compromise", "permissions", "no_jitter", "sms_channel"])
def test_bundled_scenario_assertions_hold(name, tmp_path):
    result = run_scenario(parse_scenario(str(SCENARIOS / f"{name}.json")), tmp_path)
    failed = [(o.metric, o.actual) for o in result.outcomes if not o.passed]
    assert failed == []


def test_default_run_follows_the_protocol(tmp_path):
    world = build_world(parse_scenario(str(SCENARIOS / "default.json")))
    run_world(world)
    bots = {b.name for b in world.bots}
    servers = {s.name for s in world.servers}
    for row in world.kernel.trace.rows:
        if row.src in bots and row.direction == "out":
            assert row.dst in servers
        if row.dst == "botmaster":
            assert row.src in servers
    acked = {(b.name, uid) for b in world.bots for uid in b.state.stats.acked_unique_ids}
    assert len(acked) == 50
    assert all(uid.endswith("-1800000") for _, uid in acked)


def test_compromise_restores_the_pre_fault_registry():
    scenario = parse_scenario(str(SCENARIOS / "compromise.json"))
    fault_at = scenario.faults[0].at_ms
    world = build_world(scenario)
    run_world(world)

    expected = {}
    for event in world.kernel.log.records:
        if event["time"] >= fault_at:
            continue
        if event["kind"] == "register":
            expected[event["bot_id"]] = event["ip"]
        elif event["kind"] == "reip":
            expected[event["bot_id"]] = event["ip"]
    registry = world.botmaster.state.registry
    assert {bot_id: r.ip for bot_id, r in registry.items()} == expected
    assert all(r.device_id.startswith("dev") for r in registry.values())
    assert world.botmaster.state.next_bot_id == max(registry) + 1
    restore = next(world.kernel.log.of_kind("restore"))
    assert restore["time"] == fault_at + scenario.faults[0].restore_delay_ms


def run_bundled(name):
    world = build_world(parse_scenario(str(SCENARIOS / f"{name}.json")))
    run_world(world)
    return world


@pytest.fixture(scope="module")
def default_world():
    return run_bundled("default")


def test_no_acquisition_misses_more_than_one_window(default_world):
    gamma = default_world.scenario.dga.window().gamma
    acquisitions = [a for b in default_world.bots for a in b.state.stats.acquisitions]
    assert len(acquisitions) > len(default_world.bots)
    assert all(a.found for a in acquisitions)
    assert max(a.misses for a in acquisitions) <= gamma


def test_every_command_answers_a_dcr_from_the_same_bot(default_world):
    bots = {b.name for b in default_world.bots}
    last_dcr = {}
    commands = 0
    for row in default_world.kernel.trace.rows:
        if row.msg_tag == "DCR" and row.src in bots:
            last_dcr[row.src] = row.dst
        elif row.msg_tag == "Command":
            commands += 1
            assert last_dcr.get(row.dst) == row.src, row
    assert commands >= 50


def test_server_sessions_end_within_a_hop_interval(default_world):
    group = default_world.scenario.bots[0]
    bound = group.hop_interval_ms + group.jitter.max_ms
    bots = {b.name for b in default_world.bots}
    sessions = {}
    longest = 0
    for row in default_world.kernel.trace.rows:
        if row.src not in bots:
            continue
        if row.direction == "dns":
            sessions.pop(row.src, None)
        elif row.direction == "out":
            start, dst = sessions.get(row.src, (row.time, row.dst))
            if dst != row.dst:
                start, dst = row.time, row.dst
            sessions[row.src] = (start, dst)
            longest = max(longest, row.time - start)
    assert 0 < longest <= bound


def test_default_run_reports_storage_and_switches(default_world):
    world = default_world
    received = world.botmaster.state.received_uploads
    assert len(received) == 50
    assert sum(b.state.stats.freed_bytes for b in world.bots) == sum(received.values())
    assert sum(len(b.state.server_history) for b in world.bots) > len(world.bots)


def test_windowed_lookup_beats_the_linear_scan(tmp_path):
    baseline = run_scenario(parse_scenario(str(SCENARIOS / "baseline_linear.json")), tmp_path / "linear")
    windowed = run_scenario(parse_scenario(str(SCENARIOS / "default.json")), tmp_path / "windowed")
    assert windowed.summary["mean_polls_per_acquisition"] > 0
    ratio = baseline.summary["mean_polls_per_acquisition"] / windowed.summary["mean_polls_per_acquisition"]
    assert ratio >= 25


def test_takedown_bots_reacquire_within_a_hop_interval():
    scenario = parse_scenario(str(SCENARIOS / "takedown.json"))
    fault = next(f for f in scenario.faults if f.type == "ServerTakedown")
    world = build_world(scenario)
    dead = world.server("cc-01").address
    run_world(world)

    group = scenario.bots[0]
    bound = group.hop_interval_ms + scenario.dga.window().gamma * scenario.net.latency_ms
    affected = 0
    for bot in world.bots:
        history = bot.state.server_history
        before = [address for t, address in history if t <= fault.at_ms]
        if not before or before[-1] != dead:
            continue
        affected += 1
        after = [(t, address) for t, address in history if t > fault.at_ms]
        assert after, bot.name
        t, address = after[0]
        assert address != dead
        assert t - fault.at_ms <= bound, bot.name
    assert affected > 0
    assert all(not b.state.command_db.pending(Status.HALF_EXECUTED) for b in world.bots)


def test_sms_commands_bypass_the_servers():
    world = run_bundled("sms_channel")
    rows = [r for r in world.kernel.trace.rows if r.msg_tag == "SpamSms"]
    assert len(rows) == 20
    assert all(r.src == "botmaster" and r.direction == "sms" for r in rows)
    assert not any(r.msg_tag in ("Command", "PublishCommand") for r in world.kernel.trace.rows)
    for bot in world.bots:
        assert bot.state.stats.sms_commands == 2
        assert len(bot.state.stats.acked_unique_ids) == 2
        assert len(bot.state.command_db) == 0
