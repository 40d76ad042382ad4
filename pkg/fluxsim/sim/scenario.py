"""Scenario files: JSON (or YAML) documents overlaid on ``config/defaults.yaml``.

Every section is checked against its known keys, and errors carry the dotted
key path of the offending entry (``bots[0].colour``).
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple, Union

from fluxsim.core.config import DEFAULT_TLDS, FIXED_POLL_PERIOD_MS, HOP_INTERVAL_MS
from fluxsim.core.config_loader import deep_merge, load_config, load_yaml
from fluxsim.core.dga import DgaSeed, DomainList, WindowConfig, generate_domains, load_dictionary
from fluxsim.core.errors import ConfigError, EncodingError
from fluxsim.core.protocol import CommandKind, default_templates, render_sms
from fluxsim.detection.detector import DetectorSettings
from fluxsim.detection.triggers import default_conditions
from fluxsim.sim.device import DeviceProfile, PayloadModel
from fluxsim.sim.kernel import NetModel

logger = logging.getLogger(__name__)

LOOKUP_MODES = ("windowed", "linear")
REGISTRATION_MODES = ("windowed", "single")
FAULT_TYPES = ("ServerTakedown", "BotmasterCompromise", "IpReassign", "Recharge")
CHANNELS = ("internet", "sms")

_MISSING = object()


@dataclass(frozen=True)
class PollJitter:
    enabled: bool = True
    min_ms: int = 60_000
    max_ms: int = 600_000
    period_ms: int = FIXED_POLL_PERIOD_MS

    def next_delay(self, rng) -> int:
        if self.enabled:
            return rng.uniform_int(self.min_ms, self.max_ms)
        return self.period_ms


@dataclass(frozen=True)
class DgaSettings:
    seed_string: str = "fluxsim"
    date: str = "2021-01-01"
    alpha: int = 10000
    beta: int = 100
    tlds: Tuple[str, ...] = tuple(DEFAULT_TLDS)
    dictionary: Optional[Tuple[str, ...]] = None
    lookup: str = "windowed"

    def seed(self) -> DgaSeed:
        return DgaSeed.parse(self.seed_string, self.date)

    def window(self) -> WindowConfig:
        return self._window

    @cached_property
    def _window(self) -> WindowConfig:
        return WindowConfig(self.alpha, self.beta)

    @cached_property
    def _domains(self) -> DomainList:
        return generate_domains(self.seed(), self.alpha, self.tlds, self.dictionary)

    def domains(self) -> DomainList:
        return self._domains


@dataclass(frozen=True)
class ServerSettings:
    count: int = 10
    registration: str = "windowed"
    windows: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True)
class BotGroup:
    profile: str
    count: int
    jitter: PollJitter
    hop_interval_ms: Optional[int]


@dataclass(frozen=True)
class TargetSelector:
    """``all``, an explicit id list, the ``first`` N ids, or every bot of a ``profile``."""

    mode: str
    value: Union[None, int, str, Tuple[int, ...]] = None


@dataclass(frozen=True)
class CommandEntry:
    at_ms: int
    targets: TargetSelector
    kind: CommandKind
    params: Dict[str, str]
    channel: str = "internet"


@dataclass(frozen=True)
class FaultEntry:
    type: str
    at_ms: int
    target: Optional[str] = None
    period_ms: int = 0
    restore_delay_ms: int = 60_000
    tamper_count: int = 0


@dataclass(frozen=True)
class TimingSettings:
    lookup_backoff_ms: int = 60_000
    heartbeat_ms: int = 30_000
    battery_recheck_ms: int = 900_000
    start_spread_ms: int = 60_000
    dcr_timeout_ms: int = 10_000


@dataclass(frozen=True)
class CostModel:
    bytes_per_access: float = 500
    seconds_per_access: float = 0.2


@dataclass(frozen=True)
class Assertion:
    metric: str
    op: str
    value: float


@dataclass
class Scenario:
    name: str
    master_seed: int
    duration_ms: int
    dga: DgaSettings
    servers: ServerSettings
    bots: List[BotGroup]
    device_profiles: Dict[str, DeviceProfile]
    faults: List[FaultEntry] = field(default_factory=list)
    net: NetModel = field(default_factory=NetModel)
    command_schedule: List[CommandEntry] = field(default_factory=list)
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    timing: TimingSettings = field(default_factory=TimingSettings)
    payloads: PayloadModel = field(default_factory=PayloadModel)
    cost_model: CostModel = field(default_factory=CostModel)
    assertions: List[Assertion] = field(default_factory=list)
    output_dir: Optional[str] = None

    @property
    def bot_count(self) -> int:
        return sum(group.count for group in self.bots)

    def to_dict(self) -> Dict[str, Any]:
        """Resolved scenario for the run record. Host paths are left out."""
        return {
            "name": self.name,
            "master_seed": self.master_seed,
            "duration_ms": self.duration_ms,
            "dga": {**asdict(self.dga), "tlds": list(self.dga.tlds),
                    "dictionary": list(self.dga.dictionary) if self.dga.dictionary else None},
            "servers": {**asdict(self.servers), "windows": list(self.servers.windows) if self.servers.windows else None},
            "bots": [{"profile": g.profile, "count": g.count, "jitter": asdict(g.jitter),
                      "hop_interval_ms": g.hop_interval_ms} for g in self.bots],
            "device_profiles": {name: p.to_dict() for name, p in self.device_profiles.items()},
            "faults": [asdict(f) for f in self.faults],
            "net": asdict(self.net),
            "command_schedule": [{"at_ms": c.at_ms, "kind": c.kind.value, "params": dict(c.params),
                                  "targets": {"mode": c.targets.mode, "value": _plain(c.targets.value)},
                                  "channel": c.channel}
                                 for c in self.command_schedule],
            "detector": asdict(self.detector),
            "timing": asdict(self.timing),
            "payloads": asdict(self.payloads),
            "cost_model": asdict(self.cost_model),
            "assertions": [asdict(a) for a in self.assertions],
        }


def _plain(value):
    return list(value) if isinstance(value, tuple) else value


# --- field readers ----------------------------------------------------------

def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _section(raw: Any, path: str, allowed) -> Dict[str, Any]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", path=path)
    for key in raw:
        if key not in allowed:
            raise ConfigError("unknown key", path=_join(path, key))
    return raw


def _int(raw: Dict[str, Any], key: str, path: str, default: Any = _MISSING, minimum: Optional[int] = None) -> Any:
    value = raw.get(key, default)
    where = _join(path, key)
    if value is _MISSING:
        raise ConfigError("required", path=where)
    if value is None and default is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", path=where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be at least {minimum}, got {value}", path=where)
    return value


def _num(raw: Dict[str, Any], key: str, path: str, default: Any = _MISSING, positive: bool = False) -> float:
    value = raw.get(key, default)
    where = _join(path, key)
    if value is _MISSING:
        raise ConfigError("required", path=where)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path=where)
    if positive and value <= 0:
        raise ConfigError(f"must be positive, got {value}", path=where)
    return value


def _str(raw: Dict[str, Any], key: str, path: str, default: Any = _MISSING, choices=None) -> str:
    value = raw.get(key, default)
    where = _join(path, key)
    if value is _MISSING:
        raise ConfigError("required", path=where)
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", path=where)
    if choices is not None and value not in choices:
        raise ConfigError(f"must be one of {list(choices)}, got {value!r}", path=where)
    return value


def _list(raw: Dict[str, Any], key: str, path: str) -> List[Any]:
    value = raw.get(key) or []
    if not isinstance(value, list):
        raise ConfigError("expected a list", path=_join(path, key))
    return value


# --- sections ---------------------------------------------------------------

DGA_KEYS = ("seed_string", "date", "alpha", "beta", "tlds", "dictionary", "lookup")


def _parse_dga(raw: Any, base_dir: str) -> DgaSettings:
    raw = _section(raw, "dga", DGA_KEYS)
    defaults = DgaSettings()
    tlds = raw.get("tlds", list(defaults.tlds))
    if not isinstance(tlds, list) or not all(isinstance(t, str) for t in tlds):
        raise ConfigError("expected a list of strings", path="dga.tlds")
    dictionary = raw.get("dictionary")
    if isinstance(dictionary, str):
        words = load_dictionary(os.path.join(base_dir, dictionary))
    elif isinstance(dictionary, list):
        words = [str(w) for w in dictionary]
    elif dictionary is None:
        words = None
    else:
        raise ConfigError("expected a file path or a word list", path="dga.dictionary")
    settings = DgaSettings(
        seed_string=_str(raw, "seed_string", "dga", defaults.seed_string),
        date=_str(raw, "date", "dga", defaults.date),
        alpha=_int(raw, "alpha", "dga", defaults.alpha, minimum=1),
        beta=_int(raw, "beta", "dga", defaults.beta, minimum=1),
        tlds=tuple(tlds),
        dictionary=tuple(words) if words is not None else None,
        lookup=_str(raw, "lookup", "dga", defaults.lookup, choices=LOOKUP_MODES),
    )
    settings.seed()
    try:
        settings.window()
        settings.domains()
    except ConfigError as e:
        raise ConfigError(e.message, path=_join("dga", (e.path or "").replace("dga.", ""))) from None
    return settings


def _parse_servers(raw: Any, cfg: WindowConfig) -> ServerSettings:
    raw = _section(raw, "servers", ("count", "registration", "windows"))
    windows = raw.get("windows")
    if windows is not None:
        if not isinstance(windows, list) or not all(isinstance(w, int) and 0 <= w < cfg.beta for w in windows):
            raise ConfigError(f"expected window indices in 0..{cfg.beta - 1}", path="servers.windows")
        windows = tuple(windows)
    return ServerSettings(
        count=_int(raw, "count", "servers", 10, minimum=1),
        registration=_str(raw, "registration", "servers", "windowed", choices=REGISTRATION_MODES),
        windows=windows,
    )


def _parse_jitter(raw: Any, path: str) -> PollJitter:
    raw = _section(raw, path, ("mode", "min_ms", "max_ms", "period_ms"))
    mode = _str(raw, "mode", path, "enabled", choices=("enabled", "disabled"))
    jitter = PollJitter(
        enabled=mode == "enabled",
        min_ms=_int(raw, "min_ms", path, 60_000, minimum=1),
        max_ms=_int(raw, "max_ms", path, 600_000, minimum=1),
        period_ms=_int(raw, "period_ms", path, FIXED_POLL_PERIOD_MS, minimum=1),
    )
    if jitter.max_ms < jitter.min_ms:
        raise ConfigError("max_ms is below min_ms", path=_join(path, "max_ms"))
    return jitter


def _parse_bots(raw: Any, profiles: Dict[str, DeviceProfile]) -> List[BotGroup]:
    if raw is None:
        raw = [{"profile": "auto_grant", "count": 100}]
    if not isinstance(raw, list) or not raw:
        raise ConfigError("expected a non-empty list", path="bots")
    groups = []
    for i, entry in enumerate(raw):
        path = f"bots[{i}]"
        entry = _section(entry, path, ("profile", "count", "jitter", "hop_interval_ms"))
        profile = _str(entry, "profile", path, "auto_grant")
        if profile not in profiles:
            raise ConfigError(f"unknown device profile {profile!r}", path=_join(path, "profile"))
        groups.append(BotGroup(
            profile=profile,
            count=_int(entry, "count", path, minimum=1),
            jitter=_parse_jitter(entry.get("jitter"), _join(path, "jitter")),
            hop_interval_ms=None if entry.get("hop_interval_ms", HOP_INTERVAL_MS) is None
            else _int(entry, "hop_interval_ms", path, HOP_INTERVAL_MS, minimum=1),
        ))
    return groups


def _parse_profiles(raw: Any, defaults: Dict[str, Any]) -> Dict[str, DeviceProfile]:
    raw = _section(raw, "device_profiles", _AnyKey())
    base_profiles = defaults.get("device_profiles", {})
    merged = dict(base_profiles)
    for name, override in raw.items():
        if not isinstance(override, dict):
            raise ConfigError("expected an object", path=f"device_profiles.{name}")
        base = base_profiles.get(name, base_profiles.get("auto_grant", {}))
        merged[name] = deep_merge(base, override)
    return {name: DeviceProfile.from_dict(name, data) for name, data in merged.items()}


class _AnyKey:
    def __contains__(self, key) -> bool:
        return isinstance(key, str)


def _parse_targets(raw: Any, path: str) -> TargetSelector:
    if raw == "all":
        return TargetSelector("all")
    if isinstance(raw, list):
        if not all(isinstance(t, int) and not isinstance(t, bool) and t >= 1 for t in raw):
            raise ConfigError("expected positive bot ids", path=path)
        return TargetSelector("ids", tuple(raw))
    if isinstance(raw, dict) and len(raw) == 1:
        (mode, value), = raw.items()
        if mode == "first":
            return TargetSelector("first", _int(raw, "first", path, minimum=0))
        if mode == "profile":
            return TargetSelector("profile", _str(raw, "profile", path))
        raise ConfigError("unknown key", path=_join(path, mode))
    raise ConfigError('expected "all", a list of ids, {"first": N} or {"profile": name}', path=path)


def _check_sms(kind: CommandKind, params: Dict[str, str], path: str) -> None:
    """Every template of the kind must fit one SMS with these parameters."""
    templates = default_templates().templates_for(kind)
    if not templates:
        raise ConfigError(f"no SMS template for {kind.value}", path=_join(path, "channel"))
    for template in templates:
        try:
            render_sms(template, params)
        except EncodingError as e:
            raise ConfigError(str(e), path=_join(path, "params"))


def _parse_commands(raw: Any, duration_ms: int) -> List[CommandEntry]:
    entries = []
    seen = set()
    for i, entry in enumerate(raw or []):
        path = f"command_schedule[{i}]"
        entry = _section(entry, path, ("at_ms", "targets", "kind", "params", "channel"))
        at_ms = _int(entry, "at_ms", path, minimum=0)
        if at_ms in seen:
            raise ConfigError("two publications at the same instant", path=_join(path, "at_ms"))
        seen.add(at_ms)
        try:
            kind = CommandKind(_str(entry, "kind", path))
        except ValueError:
            raise ConfigError(f"unknown command kind {entry['kind']!r}", path=_join(path, "kind"))
        params = entry.get("params") or {}
        if not isinstance(params, dict):
            raise ConfigError("expected an object", path=_join(path, "params"))
        params = {str(k): str(v) for k, v in params.items()}
        channel = _str(entry, "channel", path, "internet", choices=CHANNELS)
        if channel == "sms":
            _check_sms(kind, params, path)
        entries.append(CommandEntry(at_ms, _parse_targets(entry.get("targets", "all"), _join(path, "targets")),
                                    kind, params, channel))
        if at_ms > duration_ms:
            logger.warning(f"⚠️ {path} fires after the run ends")
    return sorted(entries, key=lambda c: c.at_ms)


def _parse_faults(raw: Any) -> List[FaultEntry]:
    faults = []
    for i, entry in enumerate(raw or []):
        path = f"faults[{i}]"
        entry = _section(entry, path, ("type", "at_ms", "server", "bot", "period_ms", "restore_delay_ms", "tamper_count"))
        kind = _str(entry, "type", path, choices=FAULT_TYPES)
        target_key = {"ServerTakedown": "server", "IpReassign": "bot", "Recharge": "bot"}.get(kind)
        for key in ("server", "bot"):
            if key in entry and key != target_key:
                raise ConfigError(f"not valid for {kind}", path=_join(path, key))
        faults.append(FaultEntry(
            type=kind,
            at_ms=_int(entry, "at_ms", path, minimum=0),
            target=_str(entry, target_key, path) if target_key else None,
            period_ms=_int(entry, "period_ms", path, 0, minimum=0),
            restore_delay_ms=_int(entry, "restore_delay_ms", path, 60_000, minimum=0),
            tamper_count=_int(entry, "tamper_count", path, 0, minimum=0),
        ))
    return faults


def _parse_assertions(raw: Any) -> List[Assertion]:
    out = []
    for i, entry in enumerate(raw or []):
        path = f"assertions[{i}]"
        entry = _section(entry, path, ("metric", "op", "value"))
        out.append(Assertion(
            metric=_str(entry, "metric", path),
            op=_str(entry, "op", path, choices=tuple(default_conditions)),
            value=_num(entry, "value", path),
        ))
    return out


def _flat(section: str, raw: Any, defaults: Dict[str, Any]) -> Dict[str, Any]:
    base = defaults.get(section, {})
    return deep_merge(base, _section(raw, section, base))


TOP_KEYS = (
    "name", "master_seed", "duration_ms", "dga", "servers", "bots", "device_profiles", "faults", "net",
    "command_schedule", "detector", "timing", "payloads", "cost_model", "assertions", "output_dir",
)


def build_scenario(raw: Any, name: str = "scenario", base_dir: str = ".", defaults: Optional[Dict[str, Any]] = None,
                   seed_override: Optional[int] = None) -> Scenario:
    defaults = defaults if defaults is not None else load_config()
    raw = _section(raw, "", TOP_KEYS)
    duration_ms = _int(raw, "duration_ms", "", 7_200_000, minimum=1)
    dga = _parse_dga(raw.get("dga"), base_dir)
    profiles = _parse_profiles(raw.get("device_profiles"), defaults)

    net = _flat("net", raw.get("net"), defaults)
    detector = _flat("detector", raw.get("detector"), defaults)
    timing = _flat("timing", raw.get("timing"), defaults)
    payloads = _flat("payloads", raw.get("payloads"), defaults)
    cost = _flat("cost_model", raw.get("cost_model"), defaults)

    scenario = Scenario(
        name=_str(raw, "name", "", name),
        master_seed=seed_override if seed_override is not None else _int(raw, "master_seed", "", 42, minimum=0),
        duration_ms=duration_ms,
        dga=dga,
        servers=_parse_servers(raw.get("servers"), dga.window()),
        bots=_parse_bots(raw.get("bots"), profiles),
        device_profiles=profiles,
        faults=_parse_faults(raw.get("faults")),
        net=NetModel(
            latency_ms=_int(net, "latency_ms", "net", minimum=0),
            overhead_bytes=_int(net, "overhead_bytes", "net", minimum=0),
            dns_bytes=_int(net, "dns_bytes", "net", minimum=1),
        ),
        command_schedule=_parse_commands(raw.get("command_schedule"), duration_ms),
        detector=DetectorSettings(
            regularity_cv=_num(detector, "regularity_cv", "detector", positive=True),
            persistence_window_ms=_int(detector, "persistence_window_ms", "detector", minimum=1),
            persistence_threshold=_num(detector, "persistence_threshold", "detector", positive=True),
            nxdomain_per_hour=_num(detector, "nxdomain_per_hour", "detector", positive=True),
        ),
        timing=TimingSettings(**{k: _int(timing, k, "timing", minimum=1) for k in asdict(TimingSettings())}),
        payloads=PayloadModel(
            image_bytes=_int(payloads, "image_bytes", "payloads", minimum=0),
            audio_bytes_per_minute=_int(payloads, "audio_bytes_per_minute", "payloads", minimum=0),
            gps_bytes=_int(payloads, "gps_bytes", "payloads", minimum=0),
            jpeg_ratio=_num(payloads, "jpeg_ratio", "payloads", positive=True),
            opus_ratio=_num(payloads, "opus_ratio", "payloads", positive=True),
        ),
        cost_model=CostModel(
            bytes_per_access=_num(cost, "bytes_per_access", "cost_model", positive=True),
            seconds_per_access=_num(cost, "seconds_per_access", "cost_model", positive=True),
        ),
        assertions=_parse_assertions(raw.get("assertions")),
        output_dir=raw.get("output_dir"),
    )
    if scenario.duration_ms < 2 * scenario.detector.persistence_window_ms:
        raise ConfigError("run must span at least two persistence windows", path="detector.persistence_window_ms")
    return scenario


def parse_scenario(path: str, seed_override: Optional[int] = None, defaults: Optional[Dict[str, Any]] = None) -> Scenario:
    raw = load_yaml(path)
    name = os.path.splitext(os.path.basename(path))[0]
    scenario = build_scenario(raw, name=name, base_dir=os.path.dirname(os.path.abspath(path)),
                              defaults=defaults, seed_override=seed_override)
    logger.info(f"📋 Scenario {scenario.name}: {scenario.bot_count} bots, {scenario.servers.count} servers, "
                f"alpha={scenario.dga.alpha} beta={scenario.dga.beta}")
    return scenario
