"""Botmaster node: bot registry, command publication and recovery.

Every registry mutation is written through the snapshot tree, so the registry
always equals ``snapshots.materialize(snapshots.latest)``. Slot index is the
bot id.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from fluxsim.core.errors import EncodingError, RestoreError, ValidationError
from fluxsim.core.protocol import (
    RCIPB,
    RGR,
    SRR,
    CommandKind,
    PublishCommand,
    Upload,
    UploadAck,
    default_templates,
    parse_unique_id,
    sms_encode,
)
from fluxsim.core.snapshot import SnapshotTree
from fluxsim.sim.kernel import DIRECTION_SMS, BotmasterCompromise, Node, SimKernel
from fluxsim.sim.scenario import CommandEntry, DgaSettings, TargetSelector

logger = logging.getLogger(__name__)

TAMPER_IP = "0.0.0.0"


@dataclass(frozen=True)
class BotRecord:
    device_id: str
    ip: str
    registered_at: int
    profile: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"device_id": self.device_id, "ip": self.ip, "registered_at": self.registered_at, "profile": self.profile}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BotRecord":
        return cls(data["device_id"], data["ip"], data["registered_at"], data.get("profile", ""))


@dataclass
class ServerEntry:
    name: str
    address: str
    up: bool = True
    replaced_by: Optional[str] = None


@dataclass
class OutstandingPublication:
    timestamp: int
    kind: CommandKind
    params: Dict[str, str]
    remaining: Dict[int, str]

    def to_message(self) -> PublishCommand:
        return PublishCommand(tuple(sorted(self.remaining.items())), self.kind, dict(self.params), self.timestamp)


@dataclass
class BotmasterState:
    registry: Dict[int, BotRecord] = field(default_factory=dict)
    servers: List[ServerEntry] = field(default_factory=list)
    snapshots: SnapshotTree = field(default_factory=SnapshotTree)
    next_bot_id: int = 1
    # sim time at which each snapshot version was created
    version_times: List[int] = field(default_factory=lambda: [0])
    publications: Dict[int, OutstandingPublication] = field(default_factory=dict)
    received_uploads: Dict[str, int] = field(default_factory=dict)
    device_index: Dict[str, int] = field(default_factory=dict)

    def version_before(self, t: int) -> int:
        """Last snapshot version created strictly before ``t``."""
        good = 0
        for version, created in enumerate(self.version_times):
            if created < t:
                good = version
        return good


def write_record(state: BotmasterState, bot_id: int, record: Optional[BotRecord], now: int) -> int:
    tree = state.snapshots
    while bot_id >= tree.capacity:
        tree.grow()
        state.version_times.append(now)
    version = tree.update(tree.latest, bot_id, record)
    state.version_times.append(now)
    if record is None:
        state.registry.pop(bot_id, None)
    else:
        state.registry[bot_id] = record
    return version


def restore_botmaster(state: BotmasterState, good_version: int, now: Optional[int] = None) -> BotmasterState:
    """New state whose registry is the snapshot at ``good_version``.

    The tree keeps its history; the rollback is recorded as a branch version.
    """
    tree = state.snapshots
    if not 0 <= good_version < tree.versions:
        raise RestoreError(f"no snapshot version {good_version} (have {tree.versions})")
    tree.branch(good_version)
    state.version_times.append(now if now is not None else state.version_times[-1])
    registry = tree.materialize(good_version)
    return BotmasterState(
        registry=dict(registry),
        servers=state.servers,
        snapshots=tree,
        next_bot_id=max(registry) + 1 if registry else 1,
        version_times=state.version_times,
        publications=state.publications,
        received_uploads=state.received_uploads,
        device_index={record.device_id: bot_id for bot_id, record in registry.items()},
    )


def resolve_targets(selector: TargetSelector, registry: Dict[int, BotRecord]) -> Dict[int, str]:
    if selector.mode == "all":
        ids = sorted(registry)
    elif selector.mode == "first":
        ids = sorted(registry)[:selector.value]
    elif selector.mode == "ids":
        ids = [i for i in selector.value if i in registry]
        missing = [i for i in selector.value if i not in registry]
        if missing:
            logger.warning(f"⚠️ Command targets not in registry: {missing}")
    elif selector.mode == "profile":
        ids = [i for i in sorted(registry) if registry[i].profile == selector.value]
    else:
        raise ValidationError(f"unknown target mode {selector.mode!r}")
    return {i: registry[i].ip for i in ids}


class Botmaster(Node):
    kind = "botmaster"
    HANDLERS = {
        SRR: "botmaster_register",
        RCIPB: "handle_rcipb",
        Upload: "handle_upload",
    }

    def __init__(self, name: str, dga: DgaSettings, heartbeat_ms: int, spawn_server: Optional[Callable] = None):
        super().__init__(name)
        self.state = BotmasterState()
        self.dga = dga
        self.heartbeat_ms = heartbeat_ms
        self.spawn_server = spawn_server
        self.deferred: List[CommandEntry] = []
        self.duplicate_uploads = 0
        self.replacements = 0
        self.restores = 0
        self._sms_rng = None

    def add_server(self, name: str, address: str) -> None:
        self.state.servers.append(ServerEntry(name, address))

    def up_servers(self, kernel: SimKernel) -> List[ServerEntry]:
        return [s for s in self.state.servers if s.up and kernel.is_up(s.address)]

    def on_timer(self, kernel: SimKernel, tag: str, payload: Any = None) -> None:
        if tag == "heartbeat":
            if self.up:
                self.heartbeat(kernel)
            kernel.set_timer(self.name, self.heartbeat_ms, "heartbeat")
        elif tag == "publish":
            if not self.up:
                logger.info(f"⏸️ Botmaster down, publication at t={kernel.now} deferred")
                self.deferred.append(payload)
                return
            self.publish_entry(kernel, payload)
        elif tag == "restore":
            self.finish_restore(kernel, payload)
        else:
            super().on_timer(kernel, tag, payload)

    # registry

    def botmaster_register(self, kernel: SimKernel, msg: SRR, src: str) -> None:
        st = self.state
        ip = str(msg.device_details.get("ip", ""))
        profile = str(msg.device_details.get("profile", ""))
        bot_id = st.device_index.get(msg.device_id)
        if bot_id is None:
            bot_id = st.next_bot_id
            st.next_bot_id += 1
            st.device_index[msg.device_id] = bot_id
            write_record(st, bot_id, BotRecord(msg.device_id, ip, kernel.now, profile), kernel.now)
            kernel.log.append("register", kernel.now, bot_id=bot_id, device_id=msg.device_id, ip=ip, profile=profile)
            logger.debug(f"📝 Registered {msg.device_id} as bot {bot_id}")
        else:
            self._update_ip(kernel, bot_id, ip)
        kernel.send(self, src, RGR(msg.device_id, bot_id))

    def _update_ip(self, kernel: SimKernel, bot_id: int, ip: str) -> None:
        st = self.state
        record = st.registry.get(bot_id)
        if record is None or record.ip == ip:
            return
        write_record(st, bot_id, BotRecord(record.device_id, ip, record.registered_at, record.profile), kernel.now)
        kernel.log.append("reip", kernel.now, bot_id=bot_id, ip=ip)
        for pub in st.publications.values():
            if bot_id in pub.remaining:
                pub.remaining[bot_id] = ip

    def handle_rcipb(self, kernel: SimKernel, msg: RCIPB, src: str) -> None:
        self._update_ip(kernel, msg.bot_id, msg.new_ip)

    # publication

    def publish_command(self, kernel: SimKernel, targets: Dict[int, str], kind: CommandKind,
                        params: Dict[str, str], timestamp: Optional[int] = None) -> int:
        """Push a publication to every up server; returns the number of servers reached."""
        if not targets:
            logger.warning(f"⚠️ Publication of {CommandKind(kind).value} has no targets, skipped")
            return 0
        unknown = [i for i in targets if i not in self.state.registry]
        if unknown:
            raise ValidationError(f"targets not in registry: {unknown}")
        timestamp = kernel.now if timestamp is None else timestamp
        pub = OutstandingPublication(timestamp, CommandKind(kind), dict(params), dict(targets))
        self.state.publications[timestamp] = pub
        servers = self.up_servers(kernel)
        for server in servers:
            kernel.send(self, server.address, pub.to_message())
        kernel.log.append("publish", kernel.now, timestamp=timestamp, command_kind=pub.kind.value, targets=sorted(targets))
        logger.info(f"📢 Published {pub.kind.value} for {len(targets)} bots on {len(servers)} servers")
        return len(servers)

    def publish_entry(self, kernel: SimKernel, entry: CommandEntry) -> int:
        targets = resolve_targets(entry.targets, self.state.registry)
        if entry.channel == "sms":
            return self.sms_command(kernel, targets, entry.kind, entry.params)
        return self.publish_command(kernel, targets, entry.kind, entry.params, timestamp=entry.at_ms)

    def sms_command(self, kernel: SimKernel, targets: Dict[int, str], kind: CommandKind,
                    params: Dict[str, str]) -> int:
        """One-way delivery: a spam-looking SMS straight to each target's registered address.

        Results still come back as Uploads through the servers.
        """
        if not targets:
            logger.warning(f"⚠️ SMS for {CommandKind(kind).value} has no targets, skipped")
            return 0
        if self._sms_rng is None:
            self._sms_rng = kernel.stream(self.name, "sms")
        sent = 0
        for bot_id, ip in sorted(targets.items()):
            try:
                sms = sms_encode(kind, params, default_templates(), self._sms_rng)
            except EncodingError as e:
                logger.error(f"❌ SMS for bot {bot_id} not sent: {e}")
                continue
            if kernel.send(self, ip, sms, direction=DIRECTION_SMS) is not None:
                sent += 1
        kernel.log.append("sms", kernel.now, command_kind=CommandKind(kind).value, targets=sorted(targets), sent=sent)
        logger.info(f"📱 Texted {CommandKind(kind).value} to {sent}/{len(targets)} bots")
        return sent

    def handle_upload(self, kernel: SimKernel, msg: Upload, src: str) -> None:
        st = self.state
        if msg.unique_id in st.received_uploads:
            self.duplicate_uploads += 1
        else:
            st.received_uploads[msg.unique_id] = msg.payload_bytes
            kernel.log.append("upload", kernel.now, bot_id=msg.bot_id, unique_id=msg.unique_id, payload_bytes=msg.payload_bytes)
        kernel.send(self, src, UploadAck(msg.unique_id))

        try:
            _, timestamp = parse_unique_id(msg.unique_id)
        except ValidationError:
            return
        pub = st.publications.get(timestamp)
        if pub is None or msg.bot_id not in pub.remaining:
            return
        del pub.remaining[msg.bot_id]
        if not pub.remaining:
            del st.publications[timestamp]
        for server in self.up_servers(kernel):
            kernel.send(self, server.address, pub.to_message())

    # server failure

    def heartbeat(self, kernel: SimKernel) -> None:
        for entry in list(self.state.servers):
            if entry.up and not kernel.is_up(entry.address):
                entry.up = False
                self.replace_server(kernel, entry)

    def replace_server(self, kernel: SimKernel, dead: ServerEntry):
        if self.spawn_server is None:
            logger.warning(f"⚠️ Server {dead.name} is down and no replacement is configured")
            return None
        self.replacements += 1
        server = self.spawn_server(kernel, len(self.state.servers) + 1)
        dead.replaced_by = server.name
        self.state.servers.append(ServerEntry(server.name, server.address))
        server.seed_state(
            [pub.to_message() for _, pub in sorted(self.state.publications.items())],
            {bot_id: record.ip for bot_id, record in self.state.registry.items()},
        )
        domain = server.register_fresh_domain(kernel, self.dga.domains(), self.dga.window(), kernel.stream(self.name, "replace"))
        sent = server.broadcast_rcad(kernel, sorted({r.ip for r in self.state.registry.values()}))
        kernel.log.append("replace", kernel.now, dead=dead.name, new=server.name, address=server.address, domain=domain, rcad=sent)
        logger.info(f"🔧 Replaced {dead.name} with {server.name} at {server.address}")
        return server

    # compromise and restore

    def compromise(self, kernel: SimKernel, spec: BotmasterCompromise) -> None:
        st = self.state
        good = st.version_before(kernel.now)
        self.up = False
        for i in range(spec.tamper_count):
            bot_id = st.next_bot_id
            st.next_bot_id += 1
            write_record(st, bot_id, BotRecord(f"tamper-{i}", TAMPER_IP, kernel.now), kernel.now)
        logger.info(f"☠️ Botmaster compromised at t={kernel.now}, known good version {good}")
        kernel.set_timer(self.name, spec.restore_delay_ms, "restore", good)

    def finish_restore(self, kernel: SimKernel, good_version: int) -> None:
        self.state = restore_botmaster(self.state, good_version, kernel.now)
        self.up = True
        self.restores += 1
        kernel.log.append("restore", kernel.now, version=good_version, registry_size=len(self.state.registry))
        logger.info(f"♻️ Botmaster restored to version {good_version} with {len(self.state.registry)} bots")
        deferred, self.deferred = self.deferred, []
        for entry in deferred:
            self.publish_entry(kernel, entry)
