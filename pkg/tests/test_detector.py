import pytest

from fluxsim.core.dga import CostMode, WindowConfig, lookup_cost
from fluxsim.core.errors import ConfigError
from fluxsim.core.registrar import NxRecord
from fluxsim.detection.detector import (
    DetectorSettings,
    bandwidth_overhead,
    battery_decline,
    build_report,
    nxdomain_rate,
    persistence_score,
    regularity_score,
)
from fluxsim.detection.formatter import format_cost_table, format_summary_markdown
from fluxsim.detection.report import report_to_csv
from fluxsim.detection.triggers import AssertionOutcome, evaluate_conditions
from fluxsim.sim.kernel import TrafficRow
from fluxsim.sim.scenario import Assertion

HOUR = 3_600_000


def out_rows(host, times, dst="cc-01"):
    return [TrafficRow(t, host, dst, 100, "out", "DCR") for t in times]


def test_fixed_period_has_zero_variation():
    assert regularity_score(out_rows("bot-001", range(0, 3_000_000, 300_000)), "bot-001") == 0.0


def test_regularity_needs_three_contacts():
    assert regularity_score(out_rows("bot-001", [0, 100]), "bot-001") is None


def test_same_instant_sends_are_one_contact():
    rows = out_rows("bot-001", [0, 0, 100, 100, 200])
    assert regularity_score(rows, "bot-001") == 0.0


def test_jittered_gaps_vary():
    rows = out_rows("bot-001", [0, 60_000, 660_000, 800_000, 1_350_000])
    assert regularity_score(rows, "bot-001") > 0.1


def test_dns_rows_are_not_contacts():
    rows = out_rows("bot-001", [0, 300_000]) + [TrafficRow(400_000, "bot-001", "x.com", 500, "dns", "DNS", False)]
    assert regularity_score(rows, "bot-001") is None


def test_single_destination_is_fully_persistent():
    rows = out_rows("bot-001", range(0, HOUR, 300_000))
    assert persistence_score(rows, "bot-001", 600_000, HOUR) == 1.0


def test_hopping_splits_persistence():
    rows = out_rows("bot-001", [0, 300_000], "cc-01") + out_rows("bot-001", [700_000, 1_000_000], "cc-02")
    assert persistence_score(rows, "bot-001", 600_000, 1_200_000) == 0.5


def test_persistence_needs_two_windows():
    with pytest.raises(ConfigError):
        persistence_score([], "bot-001", 600_000, 600_000)


def test_nxdomain_rate_per_hour():
    nx = [NxRecord(i, "bot-001", "x.com") for i in range(120)] + [NxRecord(0, "bot-002", "y.com")]
    assert nxdomain_rate(nx, "bot-001", 2 * HOUR) == 60.0


def test_bandwidth_overhead_reference():
    assert bandwidth_overhead(128.89, 142.34) == 10.4


def test_bandwidth_overhead_needs_baseline():
    with pytest.raises(ConfigError):
        bandwidth_overhead(0, 10)


def test_battery_decline_reference():
    assert battery_decline(3100, 2390, 2240) == pytest.approx(4.84, abs=0.01)


def test_report_flags_and_csv():
    rows = out_rows("bot-001", range(0, HOUR, 300_000)) + out_rows("bot-002", [0, 60_000, 660_000, 800_000])
    nx = [NxRecord(i, "bot-002", "x.com") for i in range(80)]
    report = build_report(rows, nx, ["bot-001", "bot-002"], DetectorSettings(), HOUR,
                          baseline_bytes=1000, infected_bytes=1100, batteries=[(3100, 2390, 2240)])
    first, second = report.hosts
    assert first.regularity_flag and first.persistence_flag and not first.nxdomain_flag
    assert not second.regularity_flag and second.nxdomain_flag
    assert report.overhead_percent == 10.0
    assert report.flagged_fraction("regularity_flag") == 0.5

    text = report_to_csv(report)
    lines = text.splitlines()
    assert lines[0] == "host,regularity_score,regularity_flag,persistence_score,persistence_flag,nxdomain_rate,nxdomain_flag"
    assert lines[1] == "bot-001,0.0000,1,1.0000,1,0.0000,0"
    assert "# overhead_percent=10.0" in lines
    assert "# battery_decline_percent=4.8" in lines


def test_host_without_traffic():
    report = build_report([], [], ["bot-009"], DetectorSettings(), HOUR)
    host = report.hosts[0]
    assert host.regularity_score is None
    assert not host.regularity_flag
    assert host.persistence_score == 0
    assert report.overhead_percent is None
    assert "# overhead_percent=n/a" in report_to_csv(report)


# --- assertions and formatting ----------------------------------------------

def test_assertions_pass_fail_and_unknown_metric():
    summary = {"overhead_percent": 4.2, "restores": 1}
    outcomes = evaluate_conditions(summary, [
        Assertion("overhead_percent", "below", 15),
        Assertion("restores", "equals", 2),
        Assertion("nothing_here", "above", 0),
    ])
    assert [o.passed for o in outcomes] == [True, False, False]
    assert outcomes[2].actual is None


def test_cost_table_text():
    cfg = WindowConfig(10000, 100)
    table = format_cost_table([lookup_cost(cfg, 500, 0.2, mode) for mode in CostMode])
    assert "49 KB" in table and "20 s" in table
    assert "2441 KB" in table and "1000 s" in table


def test_summary_markdown():
    outcome = AssertionOutcome("restores", "equals", 1, 1, True)
    text = format_summary_markdown("demo", {"restores": 1, "overhead_percent": 4.25}, [outcome], "table")
    assert text.startswith("# Run summary: demo\n")
    assert "| overhead_percent | 4.25 |" in text
    assert "- PASS: restores equals 1 (actual: 1)" in text
    assert text.endswith("```\ntable\n```\n")
