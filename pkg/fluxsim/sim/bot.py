"""Bot state machine.

A bot finds a C&C server through the shared domain list, enrolls with
SRR/RGR, then pulls commands with DCRs at jittered instants. Commands run
through a small command database (PENDING, HALF-EXECUTED, EXECUTED); results
are uploaded on the following tick and wiped once acknowledged. Every
``hop_interval`` the bot drops its server and looks one up again.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Set, Tuple

from fluxsim.core.dga import LookupResult, enhanced_lookup, linear_lookup
from fluxsim.core.errors import DecodeError, InternalError
from fluxsim.core.protocol import (
    DCR,
    RGR,
    SRR,
    Command,
    CommandKind,
    NothingForYou,
    RCAd,
    SpamSms,
    Upload,
    UploadAck,
    default_templates,
    make_unique_id,
    sms_decode,
)
from fluxsim.sim.device import Device, PayloadModel, PermissionModel
from fluxsim.sim.kernel import Node, SimKernel
from fluxsim.sim.scenario import DgaSettings, PollJitter, TimingSettings

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    UNREGISTERED = "Unregistered"
    ACQUIRING = "Acquiring"
    REGISTERED = "Registered"


class Status(str, Enum):
    PENDING = "PENDING"
    HALF_EXECUTED = "HALF-EXECUTED"
    EXECUTED = "EXECUTED"


STATUS_ORDER = [Status.PENDING, Status.HALF_EXECUTED, Status.EXECUTED]


@dataclass
class CommandRecord:
    command_kind: CommandKind
    timestamp: int
    params: Dict[str, str]
    status: Status = Status.PENDING
    unique_id: Optional[str] = None
    payload_size: Optional[int] = None
    compressed_size: Optional[int] = None
    compressed: bool = True
    denied: bool = False
    failed: bool = False
    history: List[Status] = field(default_factory=lambda: [Status.PENDING])

    def advance(self, status: Status) -> None:
        if STATUS_ORDER.index(status) != STATUS_ORDER.index(self.status) + 1:
            raise InternalError(f"illegal status change {self.status.value} -> {status.value}")
        self.status = status
        self.history.append(status)


class CommandDb:
    def __init__(self):
        self.records: List[CommandRecord] = []

    def add(self, kind: CommandKind, timestamp: int, params: Dict[str, str]) -> CommandRecord:
        record = CommandRecord(CommandKind(kind), timestamp, dict(params))
        self.records.append(record)
        return record

    def find(self, unique_id: str) -> Optional[CommandRecord]:
        return next((r for r in self.records if r.unique_id == unique_id), None)

    def pending(self, status: Status) -> List[CommandRecord]:
        return [r for r in self.records if r.status is status]

    def update(self, unique_id: str, status: Status) -> Optional[CommandRecord]:
        record = self.find(unique_id)
        if record is not None:
            record.advance(status)
        return record

    def sanitize(self) -> List[CommandRecord]:
        """Drop EXECUTED records; returns what was removed."""
        removed = [r for r in self.records if r.status is Status.EXECUTED]
        self.records = [r for r in self.records if r.status is not Status.EXECUTED]
        return removed

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class Acquisition:
    time: int
    polls: int
    misses: int
    found: bool


@dataclass
class BotStats:
    polls: int = 0
    nx_misses: int = 0
    commands_ok: int = 0
    commands_denied: int = 0
    commands_failed: int = 0
    duplicate_commands: int = 0
    sms_commands: int = 0
    spam_discarded: int = 0
    acquisitions: List[Acquisition] = field(default_factory=list)
    acked_unique_ids: List[str] = field(default_factory=list)
    freed_bytes: int = 0


@dataclass
class BotState:
    device_id: str
    device: Device
    poll_jitter: PollJitter
    hop_interval: Optional[int] = None
    bot_id: Optional[int] = None
    address: str = ""
    phase: Phase = Phase.UNREGISTERED
    current_server: Optional[str] = None
    command_db: CommandDb = field(default_factory=CommandDb)
    hop_deadline: Optional[int] = None
    sleeping: bool = False
    dcr_sent_at: Optional[int] = None
    seen_commands: Set[int] = field(default_factory=set)
    server_history: List[Tuple[int, str]] = field(default_factory=list)
    stats: BotStats = field(default_factory=BotStats)


class Bot(Node):
    kind = "bot"
    HANDLERS = {
        RGR: "handle_rgr",
        Command: "handle_command",
        NothingForYou: "handle_nothing",
        UploadAck: "handle_upload_ack",
        RCAd: "handle_rcad",
        SpamSms: "handle_sms",
    }

    def __init__(self, name: str, state: BotState, dga: DgaSettings, timing: TimingSettings, payloads: PayloadModel):
        super().__init__(name)
        self.state = state
        self.dga = dga
        self.timing = timing
        self.payloads = payloads
        self._poll_rng = None
        self._lookup_rng = None
        self._hop_scheduled = False

    def on_address_change(self, kernel: SimKernel, old: Optional[str], new: str) -> None:
        self.state.address = new
        if self._poll_rng is None:
            self._poll_rng = kernel.stream(self.name, "poll")
            self._lookup_rng = kernel.stream(self.name, "lookup")

    def on_timer(self, kernel: SimKernel, tag: str, payload: Any = None) -> None:
        if tag == "tick":
            self.bot_tick(kernel)
        elif tag == "hop":
            self.hop(kernel)
        else:
            super().on_timer(kernel, tag, payload)

    # lookup

    def _acquire(self, kernel: SimKernel) -> Optional[str]:
        st = self.state
        found: Dict[str, str] = {}
        misses_before = st.stats.nx_misses

        def resolve(domain: str) -> bool:
            st.stats.polls += 1
            address = kernel.resolve(self, domain)
            if address is None:
                st.stats.nx_misses += 1
                return False
            found["address"] = address
            return True

        domains = self.dga.domains()
        seed = self._lookup_rng.next()
        if self.dga.lookup == "linear":
            result: LookupResult = linear_lookup(domains, resolve, seed)
        else:
            result = enhanced_lookup(domains, self.dga.window(), resolve, seed)

        st.stats.acquisitions.append(Acquisition(kernel.now, result.polls, st.stats.nx_misses - misses_before, result.found))
        if not result.found:
            if kernel.warnings.can_log((self.name, "lookup"), kernel.now):
                logger.warning(f"🔍 {self.name} found no server after {result.polls} polls")
            return None
        logger.debug(f"🔍 {self.name} resolved {result.domain} -> {found['address']} in {result.polls} polls")
        return found["address"]

    def _switch_server(self, now: int, address: str) -> None:
        self.state.current_server = address
        self.state.dcr_sent_at = None
        self.state.server_history.append((now, address))

    # tick

    def bot_tick(self, kernel: SimKernel) -> None:
        st = self.state
        now = kernel.now
        device = st.device
        device.advance(now)

        if device.below_threshold():
            if not st.sleeping:
                st.sleeping = True
                device.set_active(now, False)
                logger.info(f"🔋 {self.name} asleep: battery at {device.level:.0f} mAh")
            kernel.set_timer(self.name, self.timing.battery_recheck_ms, "tick")
            return
        if st.sleeping:
            st.sleeping = False
            device.set_active(now, True)
            logger.info(f"🔋 {self.name} awake at t={now}")

        if st.phase is not Phase.REGISTERED:
            address = self._acquire(kernel)
            if address is None:
                kernel.set_timer(self.name, self.timing.lookup_backoff_ms, "tick")
                return
            st.phase = Phase.ACQUIRING
            self._switch_server(now, address)
            details = {"ip": self.address, "profile": device.profile.name}
            kernel.send(self, address, SRR(st.device_id, details))
        else:
            if st.dcr_sent_at is not None and now - st.dcr_sent_at >= self.timing.dcr_timeout_ms:
                logger.debug(f"⌛ {self.name}: no reply from {st.current_server}, looking again")
                st.current_server = None
                st.dcr_sent_at = None
            if st.current_server is None:
                address = self._acquire(kernel)
                if address is None:
                    kernel.set_timer(self.name, self.timing.lookup_backoff_ms, "tick")
                    return
                self._switch_server(now, address)
            for record in st.command_db.pending(Status.PENDING):
                if not record.denied and not record.failed:
                    self.execute_command(record, now)
            self.upload_and_sanitize(kernel)
            self._send_dcr(kernel)

        kernel.set_timer(self.name, st.poll_jitter.next_delay(self._poll_rng), "tick")

    def _send_dcr(self, kernel: SimKernel) -> None:
        st = self.state
        if st.dcr_sent_at is not None and kernel.now - st.dcr_sent_at < self.timing.dcr_timeout_ms:
            return
        st.dcr_sent_at = kernel.now
        kernel.send(self, st.current_server, DCR(st.bot_id, self.address))

    # hop

    def _schedule_hop(self, kernel: SimKernel) -> None:
        interval = self.state.hop_interval
        deadline = (kernel.now // interval + 1) * interval
        self.state.hop_deadline = deadline
        kernel.set_timer(self.name, deadline - kernel.now, "hop")

    def hop(self, kernel: SimKernel) -> None:
        st = self.state
        self._schedule_hop(kernel)
        if st.phase is not Phase.REGISTERED:
            return
        if st.sleeping:
            st.current_server = None
            return
        previous = st.current_server
        st.current_server = None
        st.dcr_sent_at = None
        address = self._acquire(kernel)
        if address is None:
            return
        logger.debug(f"🔀 {self.name} hops {previous} -> {address}")
        self._switch_server(kernel.now, address)

    # commands

    def execute_command(self, record: CommandRecord, now: int) -> CommandRecord:
        if record.status is not Status.PENDING:
            raise InternalError(f"{self.name}: cannot execute a {record.status.value} record")
        st = self.state
        device = st.device
        if not device.has_sensor(record.command_kind):
            if not record.failed:
                record.failed = True
                st.stats.commands_failed += 1
                logger.info(f"🚫 {self.name} lacks the sensor for {record.command_kind.value}")
            return record
        if device.profile.permission_model is PermissionModel.NOTIFY_DENY:
            if not record.denied:
                record.denied = True
                st.stats.commands_denied += 1
                logger.debug(f"🙅 {self.name} user notified, {record.command_kind.value} not granted")
            return record
        try:
            raw = self.payloads.raw_size(record.command_kind, record.params)
        except ValueError as e:
            record.failed = True
            st.stats.commands_failed += 1
            logger.warning(f"⚠️ {self.name} bad parameters for {record.command_kind.value}: {e}")
            return record
        compressed = self.payloads.compressed_size(record.command_kind, raw)
        if device.storage_free < compressed:
            logger.debug(f"💾 {self.name} defers {record.command_kind.value}: storage full")
            return record
        device.storage_free -= compressed
        record.payload_size = raw
        record.compressed_size = compressed
        record.compressed = self.payloads.is_compressed(record.command_kind)
        record.unique_id = make_unique_id(st.device_id, record.timestamp)
        record.advance(Status.HALF_EXECUTED)
        return record

    def upload_and_sanitize(self, kernel: SimKernel) -> List[Upload]:
        """Send every HALF-EXECUTED record; removal happens when the ack arrives."""
        st = self.state
        sent = []
        if st.current_server is None or st.bot_id is None:
            return sent
        for record in st.command_db.pending(Status.HALF_EXECUTED):
            upload = Upload(st.bot_id, record.unique_id, record.compressed_size, record.compressed)
            kernel.send(self, st.current_server, upload)
            sent.append(upload)
        return sent

    # handlers

    def handle_rgr(self, kernel: SimKernel, msg: RGR, src: str) -> None:
        st = self.state
        if msg.device_id != st.device_id:
            return
        st.bot_id = msg.assigned_bot_id
        st.phase = Phase.REGISTERED
        if st.current_server is None:
            self._switch_server(kernel.now, src)
        logger.debug(f"✅ {self.name} registered as bot {st.bot_id}")
        if st.hop_interval and not self._hop_scheduled:
            self._hop_scheduled = True
            self._schedule_hop(kernel)

    def handle_command(self, kernel: SimKernel, msg: Command, src: str) -> None:
        st = self.state
        st.dcr_sent_at = None
        if msg.timestamp in st.seen_commands:
            st.stats.duplicate_commands += 1
            return
        st.seen_commands.add(msg.timestamp)
        record = st.command_db.add(msg.command_kind, msg.timestamp, msg.params)
        self.execute_command(record, kernel.now)

    def handle_sms(self, kernel: SimKernel, msg: SpamSms, src: str) -> None:
        """SMS commands carry no publication time, so the record is stamped on arrival."""
        st = self.state
        try:
            decoded = sms_decode(msg, default_templates())
        except DecodeError:
            decoded = None
        if decoded is None:
            st.stats.spam_discarded += 1
            logger.debug(f"🗑️ {self.name} discarded an ordinary SMS")
            return
        kind, params = decoded
        st.stats.sms_commands += 1
        record = st.command_db.add(kind, kernel.now, params)
        self.execute_command(record, kernel.now)

    def handle_nothing(self, kernel: SimKernel, msg: NothingForYou, src: str) -> None:
        self.state.dcr_sent_at = None

    def handle_upload_ack(self, kernel: SimKernel, msg: UploadAck, src: str) -> None:
        st = self.state
        record = st.command_db.find(msg.unique_id)
        if record is None or record.status is not Status.HALF_EXECUTED:
            return
        st.command_db.update(msg.unique_id, Status.EXECUTED)
        st.stats.commands_ok += 1
        st.stats.acked_unique_ids.append(msg.unique_id)
        for removed in st.command_db.sanitize():
            st.device.storage_free += removed.compressed_size
            st.stats.freed_bytes += removed.compressed_size

    def handle_rcad(self, kernel: SimKernel, msg: RCAd, src: str) -> None:
        if self.state.phase is Phase.UNREGISTERED:
            return
        logger.debug(f"📣 {self.name} moves to {msg.new_server_address}")
        self._switch_server(kernel.now, msg.new_server_address)

    def recharge(self, kernel: SimKernel) -> None:
        self.state.device.recharge(kernel.now)

    def finalize(self, now: int) -> None:
        self.state.device.advance(now)
