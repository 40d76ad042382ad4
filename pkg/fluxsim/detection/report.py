"""Render ``report.csv`` from a run directory's saved logs.

The run path and ``fluxsim report DIR`` both go through ``render_report`` so the
file is byte-identical either way.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Tuple

from fluxsim.core.errors import ConfigError
from fluxsim.core.registrar import NxRecord
from fluxsim.detection.detector import DetectionReport, DetectorSettings, build_report
from fluxsim.detection.formatter import format_percent, format_score
from fluxsim.sim.device import DeviceProfile
from fluxsim.sim.eventlog import EVENTS_FILE, load_events_from_file, run_record
from fluxsim.sim.kernel import TrafficRow

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.csv"

METRICS_COLUMNS = [
    "bot_id", "bytes_up", "bytes_down", "polls", "nx_misses", "commands_ok", "commands_denied",
    "battery_end_mAh", "commands_failed", "host", "profile",
]

REPORT_COLUMNS = [
    "host", "regularity_score", "regularity_flag", "persistence_score", "persistence_flag",
    "nxdomain_rate", "nxdomain_flag",
]


def load_metrics(path: Path) -> List[Dict[str, str]]:
    if not path.exists():
        raise ConfigError("metrics file not found", path=str(path))
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in METRICS_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"missing columns {missing}", path=str(path))
        return list(reader)


def load_run(run_dir: Path) -> Tuple[Dict[str, Any], List[TrafficRow], List[NxRecord], List[Dict[str, str]]]:
    run_dir = Path(run_dir)
    events = load_events_from_file(run_dir / EVENTS_FILE)
    header = run_record(events)
    if header is None:
        raise ConfigError("events log has no run record", path=str(run_dir / EVENTS_FILE))
    rows = [TrafficRow.from_dict(e) for e in events if e["kind"] == "traffic"]
    nx_log = [NxRecord(e["time"], e["querier"], e["domain"]) for e in events if e["kind"] == "nxdomain"]
    return header["scenario"], rows, nx_log, load_metrics(run_dir / METRICS_FILE)


def report_from_logs(scenario: Dict[str, Any], rows, nx_log, metrics: List[Dict[str, str]]) -> DetectionReport:
    horizon = scenario["duration_ms"]
    hours = horizon / 3_600_000
    profiles = scenario["device_profiles"]
    baseline = 0.0
    traffic = 0
    batteries = []
    for m in metrics:
        profile = DeviceProfile.from_dict(m["profile"], profiles[m["profile"]])
        baseline += profile.legit_bytes_per_hour * hours
        traffic += int(m["bytes_up"]) + int(m["bytes_down"])
        batteries.append((profile.battery_capacity, profile.baseline_end(horizon), float(m["battery_end_mAh"])))
    return build_report(
        rows,
        nx_log,
        [m["host"] for m in metrics],
        DetectorSettings(**scenario["detector"]),
        horizon,
        baseline_bytes=baseline,
        infected_bytes=baseline + traffic,
        batteries=batteries,
    )


def report_to_csv(report: DetectionReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for h in report.hosts:
        writer.writerow([
            h.host,
            format_score(h.regularity_score),
            int(h.regularity_flag),
            format_score(h.persistence_score),
            int(h.persistence_flag),
            format_score(h.nxdomain_rate),
            int(h.nxdomain_flag),
        ])
    buf.write(f"# hosts={len(report.hosts)}\n")
    buf.write(f"# regularity_flagged={report.flagged('regularity_flag')}\n")
    buf.write(f"# persistence_flagged={report.flagged('persistence_flag')}\n")
    buf.write(f"# nxdomain_flagged={report.flagged('nxdomain_flag')}\n")
    buf.write(f"# overhead_percent={format_percent(report.overhead_percent)}\n")
    buf.write(f"# battery_decline_percent={format_percent(report.battery_decline_percent)}\n")
    return buf.getvalue()


def render_report(run_dir: Path) -> DetectionReport:
    run_dir = Path(run_dir)
    scenario, rows, nx_log, metrics = load_run(run_dir)
    report = report_from_logs(scenario, rows, nx_log, metrics)
    path = run_dir / REPORT_FILE
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(report_to_csv(report))
    logger.info(f"🛡️ Report for {len(report.hosts)} hosts written to {path}")
    return report
