import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from fluxsim.core.errors import ConfigError

logger = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"


class EventLog:
    """
    Append-only journal of one run: a leading ``run`` record, then traffic,
    nxdomain and fault records in sim-time order.
    """

    def __init__(self):
        self.records: List[Dict[str, Any]] = []

    def append(self, kind: str, time: int, **fields: Any) -> Dict[str, Any]:
        record = {"kind": kind, "time": time, **fields}
        self.records.append(record)
        return record

    def set_run_record(self, scenario: Dict[str, Any]) -> None:
        header = {"kind": "run", "time": 0, "scenario": scenario}
        if self.records and self.records[0].get("kind") == "run":
            self.records[0] = header
        else:
            self.records.insert(0, header)

    def of_kind(self, kind: str) -> Iterator[Dict[str, Any]]:
        return (r for r in self.records if r["kind"] == kind)

    def write(self, path: Path) -> int:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for record in self.records:
                f.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        logger.info(f"📝 Wrote {len(self.records)} records to {path}")
        return len(self.records)


def load_events_from_file(path: Path) -> List[Dict[str, Any]]:
    """Read every record back; a malformed line is a configuration problem."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("events log not found", path=str(path))
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ConfigError(f"malformed JSON: {e.msg}", path=f"{path}:{lineno}")
    return events


def run_record(events: List[Dict[str, Any]]) -> Optional[Dict[str, Any]]:
    if events and events[0].get("kind") == "run":
        return events[0]
    return None
