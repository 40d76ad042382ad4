"""Behavioural device model: battery, storage, sensors and payload sizes."""

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet

from fluxsim.core.errors import ConfigError
from fluxsim.core.protocol import CommandKind

logger = logging.getLogger(__name__)

MS_PER_HOUR = 3_600_000


class PermissionModel(str, Enum):
    AUTO_GRANT = "AUTO_GRANT"
    NOTIFY_DENY = "NOTIFY_DENY"


class Sensor(str, Enum):
    CAMERA = "Camera"
    MIC = "Mic"
    GPS = "GPS"


SENSOR_FOR = {
    CommandKind.CAPTURE_IMAGE: Sensor.CAMERA,
    CommandKind.RECORD_AUDIO: Sensor.MIC,
    CommandKind.RECORD_VOICE_CALL: Sensor.MIC,
    CommandKind.GRAB_GPS_LOCATION: Sensor.GPS,
}

PROFILE_KEYS = (
    "battery_capacity", "battery_level", "baseline_drain", "bot_drain", "battery_threshold",
    "permission_model", "sensors", "storage_free", "legit_bytes_per_hour",
)


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    battery_capacity: float
    battery_level: float
    baseline_drain: float
    bot_drain: float
    battery_threshold: float
    permission_model: PermissionModel
    sensors: FrozenSet[Sensor]
    storage_free: int
    legit_bytes_per_hour: int

    def __post_init__(self):
        path = f"device_profiles.{self.name}"
        if self.battery_capacity <= 0:
            raise ConfigError("must be positive", path=f"{path}.battery_capacity")
        if not 0 <= self.battery_level <= self.battery_capacity:
            raise ConfigError("must lie in [0, battery_capacity]", path=f"{path}.battery_level")
        if not 0 < self.battery_threshold < 1:
            raise ConfigError("must lie strictly between 0 and 1", path=f"{path}.battery_threshold")
        if self.baseline_drain < 0 or self.bot_drain < 0:
            raise ConfigError("drain rates cannot be negative", path=path)
        if self.storage_free < 0 or self.legit_bytes_per_hour < 0:
            raise ConfigError("sizes cannot be negative", path=path)

    @classmethod
    def from_dict(cls, name: str, data: Dict[str, Any]) -> "DeviceProfile":
        path = f"device_profiles.{name}"
        for key in data:
            if key not in PROFILE_KEYS:
                raise ConfigError("unknown key", path=f"{path}.{key}")
        missing = [k for k in PROFILE_KEYS if k not in data]
        if missing:
            raise ConfigError(f"missing keys {missing}", path=path)
        try:
            permission = PermissionModel(data["permission_model"])
        except ValueError:
            raise ConfigError(f"unknown permission model {data['permission_model']!r}", path=f"{path}.permission_model")
        try:
            sensors = frozenset(Sensor(s) for s in data["sensors"])
        except (TypeError, ValueError):
            raise ConfigError("sensors must be a list drawn from Camera, Mic, GPS", path=f"{path}.sensors")
        try:
            return cls(
                name=name,
                battery_capacity=float(data["battery_capacity"]),
                battery_level=float(data["battery_level"]),
                baseline_drain=float(data["baseline_drain"]),
                bot_drain=float(data["bot_drain"]),
                battery_threshold=float(data["battery_threshold"]),
                permission_model=permission,
                sensors=sensors,
                storage_free=int(data["storage_free"]),
                legit_bytes_per_hour=int(data["legit_bytes_per_hour"]),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad numeric value: {e}", path=path)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("name")
        data["permission_model"] = self.permission_model.value
        data["sensors"] = sorted(s.value for s in self.sensors)
        return data

    def baseline_end(self, horizon_ms: int) -> float:
        """Battery left after ``horizon_ms`` of legitimate use only."""
        return max(0.0, self.battery_level - self.baseline_drain * horizon_ms / MS_PER_HOUR)


@dataclass
class Device:
    """Live device state. Battery drains lazily: ``advance`` settles it up to ``now``."""

    profile: DeviceProfile
    level: float = field(init=False)
    storage_free: int = field(init=False)
    active: bool = True
    last_update: int = 0

    def __post_init__(self):
        self.level = self.profile.battery_level
        self.storage_free = self.profile.storage_free

    def drain_rate(self) -> float:
        return self.profile.baseline_drain + (self.profile.bot_drain if self.active else 0.0)

    def advance(self, now: int) -> float:
        if now > self.last_update:
            hours = (now - self.last_update) / MS_PER_HOUR
            self.level = max(0.0, self.level - self.drain_rate() * hours)
            self.last_update = now
        return self.level

    def set_active(self, now: int, active: bool) -> None:
        self.advance(now)
        self.active = active

    def below_threshold(self) -> bool:
        return self.level < self.profile.battery_threshold * self.profile.battery_capacity

    def recharge(self, now: int) -> None:
        self.advance(now)
        self.level = self.profile.battery_capacity
        logger.debug(f"🔌 Device {self.profile.name} recharged at t={now}")

    def has_sensor(self, kind: CommandKind) -> bool:
        return SENSOR_FOR[CommandKind(kind)] in self.profile.sensors


@dataclass(frozen=True)
class PayloadModel:
    image_bytes: int = 2_000_000
    audio_bytes_per_minute: int = 1_000_000
    gps_bytes: int = 128
    jpeg_ratio: float = 0.40
    opus_ratio: float = 0.10

    def raw_size(self, kind: CommandKind, params: Dict[str, str]) -> int:
        kind = CommandKind(kind)
        if kind is CommandKind.CAPTURE_IMAGE:
            return self.image_bytes
        if kind is CommandKind.GRAB_GPS_LOCATION:
            return self.gps_bytes
        seconds = int(params.get("time", "60"))
        if seconds < 0:
            raise ValueError(f"negative recording time {seconds}")
        return self.audio_bytes_per_minute * seconds // 60

    def compressed_size(self, kind: CommandKind, raw: int) -> int:
        kind = CommandKind(kind)
        if kind is CommandKind.CAPTURE_IMAGE:
            return int(round(raw * self.jpeg_ratio))
        if kind is CommandKind.GRAB_GPS_LOCATION:
            return raw
        return int(round(raw * self.opus_ratio))

    @staticmethod
    def is_compressed(kind: CommandKind) -> bool:
        # GPS text is shipped as-is
        return CommandKind(kind) is not CommandKind.GRAB_GPS_LOCATION
