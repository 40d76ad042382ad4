"""Defender-side scores computed from a run's traffic trace and NXDOMAIN log.

Regularity and persistence look at a host's outbound message rows; sends that
share a timestamp count as a single contact.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from fluxsim.core.errors import ConfigError
from fluxsim.detection.conditions import nxdomain_flag, persistence_flag, regularity_flag

logger = logging.getLogger(__name__)

MS_PER_HOUR = 3_600_000


@dataclass(frozen=True)
class DetectorSettings:
    regularity_cv: float = 0.1
    persistence_window_ms: int = 600_000
    persistence_threshold: float = 0.6
    nxdomain_per_hour: float = 50.0


def _outbound(rows: Iterable, host: str) -> List:
    return [r for r in rows if r.src == host and r.direction == "out"]


def regularity_score(rows: Iterable, host: str) -> Optional[float]:
    """Coefficient of variation of the gaps between contacts; None below 3 contacts."""
    times = np.unique(np.array([r.time for r in _outbound(rows, host)], dtype=np.float64))
    if times.size < 3:
        return None
    gaps = np.diff(times)
    mean = np.mean(gaps)
    if mean <= 0:
        return None
    return float(np.std(gaps) / mean)


def persistence_score(rows: Iterable, host: str, window_ms: int, horizon_ms: int) -> float:
    """Largest share of windows in which one destination was contacted."""
    total = math.ceil(horizon_ms / window_ms)
    if total < 2:
        raise ConfigError(f"horizon {horizon_ms} ms spans fewer than two {window_ms} ms windows", path="detector")
    windows: Dict[str, Set[int]] = defaultdict(set)
    for row in _outbound(rows, host):
        windows[row.dst].add(min(row.time // window_ms, total - 1))
    return max((len(w) for w in windows.values()), default=0) / total


def nxdomain_rate(nx_log: Iterable, host: str, horizon_ms: int) -> float:
    if horizon_ms <= 0:
        raise ConfigError("horizon must be positive", path="detector")
    count = sum(1 for record in nx_log if record.querier == host)
    return count / (horizon_ms / MS_PER_HOUR)


def bandwidth_overhead(baseline_bytes: float, infected_bytes: float) -> float:
    if baseline_bytes <= 0:
        raise ConfigError("baseline traffic must be positive", path="detector")
    return round((infected_bytes - baseline_bytes) / baseline_bytes * 100, 1)


def battery_decline(capacity: float, baseline_end: float, bot_end: float) -> float:
    """Extra percentage points of battery the bot costs over the same horizon."""
    if capacity <= 0:
        raise ConfigError("battery capacity must be positive", path="detector")
    return (baseline_end - bot_end) / capacity * 100


@dataclass(frozen=True)
class HostVerdict:
    host: str
    regularity_score: Optional[float]
    regularity_flag: bool
    persistence_score: float
    persistence_flag: bool
    nxdomain_rate: float
    nxdomain_flag: bool


@dataclass
class DetectionReport:
    hosts: List[HostVerdict] = field(default_factory=list)
    overhead_percent: Optional[float] = None
    battery_decline_percent: Optional[float] = None

    def flagged(self, flag: str) -> int:
        return sum(1 for h in self.hosts if getattr(h, flag))

    def flagged_fraction(self, flag: str) -> float:
        return self.flagged(flag) / len(self.hosts) if self.hosts else 0.0


def build_report(
    rows: Sequence,
    nx_log: Sequence,
    hosts: Sequence[str],
    settings: DetectorSettings,
    horizon_ms: int,
    baseline_bytes: Optional[float] = None,
    infected_bytes: Optional[float] = None,
    batteries: Sequence[Tuple[float, float, float]] = (),
) -> DetectionReport:
    """Score every host; ``batteries`` holds (capacity, baseline_end, bot_end) per device."""
    by_host: Dict[str, List] = defaultdict(list)
    for row in rows:
        if row.direction == "out":
            by_host[row.src].append(row)
    nx_by_host: Dict[str, List] = defaultdict(list)
    for record in nx_log:
        nx_by_host[record.querier].append(record)

    report = DetectionReport()
    for host in hosts:
        contacts = by_host.get(host, [])
        cv = regularity_score(contacts, host)
        persistence = persistence_score(contacts, host, settings.persistence_window_ms, horizon_ms)
        nx_rate = nxdomain_rate(nx_by_host.get(host, []), host, horizon_ms)
        report.hosts.append(HostVerdict(
            host=host,
            regularity_score=cv,
            regularity_flag=regularity_flag(cv, settings.regularity_cv),
            persistence_score=persistence,
            persistence_flag=persistence_flag(persistence, settings.persistence_threshold),
            nxdomain_rate=nx_rate,
            nxdomain_flag=nxdomain_flag(nx_rate, settings.nxdomain_per_hour),
        ))

    if baseline_bytes is not None and infected_bytes is not None and baseline_bytes > 0:
        report.overhead_percent = bandwidth_overhead(baseline_bytes, infected_bytes)
    if batteries:
        declines = [battery_decline(*b) for b in batteries]
        report.battery_decline_percent = sum(declines) / len(declines)
    logger.debug(f"🛡️ Scored {len(report.hosts)} hosts")
    return report
