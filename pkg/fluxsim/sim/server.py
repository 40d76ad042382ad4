"""C&C server node: relays enrollment and uploads, serves pulled commands."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from fluxsim.core.dga import DomainList, WindowConfig
from fluxsim.core.errors import ValidationError
from fluxsim.core.protocol import (
    DCR,
    RCIPB,
    RGR,
    SRR,
    Command,
    CommandKind,
    Message,
    NothingForYou,
    PublishCommand,
    RCAd,
    Upload,
    UploadAck,
    parse_unique_id,
)
from fluxsim.core.registrar import RegistrationResult
from fluxsim.sim.kernel import Node, SimKernel

logger = logging.getLogger(__name__)


class DispatchList:
    """Rows of (bot_id, bot_ip) for one publication; bot ids are unique."""

    def __init__(self, rows: Iterable[Tuple[int, str]] = ()):
        self._rows: Dict[int, str] = {}
        for bot_id, ip in rows:
            self._rows[bot_id] = ip

    @property
    def rows(self) -> List[Tuple[int, str]]:
        return list(self._rows.items())

    def find(self, bot_id: int) -> Optional[str]:
        return self._rows.get(bot_id)

    def update_ip(self, bot_id: int, ip: str) -> None:
        self._rows[bot_id] = ip

    def consume(self, bot_id: int) -> bool:
        return self._rows.pop(bot_id, None) is not None

    def __len__(self) -> int:
        return len(self._rows)


@dataclass
class Publication:
    timestamp: int
    command_kind: CommandKind
    params: Dict[str, str]
    rows: DispatchList
    dispatched: Set[int] = field(default_factory=set)


@dataclass(frozen=True)
class DispatchOutcome:
    reply: Message
    rcipb: Optional[RCIPB] = None


@dataclass
class ServerStats:
    commands_sent: int = 0
    nothing_sent: int = 0
    rcipb_sent: int = 0
    uploads_relayed: int = 0


class CncServer(Node):
    kind = "server"
    HANDLERS = {
        SRR: "handle_srr",
        RGR: "handle_rgr",
        DCR: "handle_dcr",
        PublishCommand: "handle_publish",
        Upload: "handle_upload",
        UploadAck: "handle_upload_ack",
    }

    def __init__(self, name: str, botmaster_address: str):
        super().__init__(name)
        self.botmaster_address = botmaster_address
        self.publications: Dict[int, Publication] = {}
        self.bot_cache: Dict[int, str] = {}
        self.pending_registrations: Dict[str, str] = {}
        self.upload_routes: Dict[str, str] = {}
        self.domains: List[str] = []
        self.stats = ServerStats()

    # enrollment

    def handle_srr(self, kernel: SimKernel, msg: SRR, src: str) -> None:
        self.pending_registrations[msg.device_id] = src
        kernel.send(self, self.botmaster_address, msg)

    def handle_rgr(self, kernel: SimKernel, msg: RGR, src: str) -> None:
        address = self.pending_registrations.pop(msg.device_id, None)
        if address is None:
            logger.debug(f"{self.name}: RGR for unknown device {msg.device_id}")
            return
        self.bot_cache[msg.assigned_bot_id] = address
        kernel.send(self, address, msg)

    # commands

    def dispatch_command(self, dcr: DCR) -> DispatchOutcome:
        """Serve the oldest publication that still lists this bot."""
        for timestamp in sorted(self.publications):
            pub = self.publications[timestamp]
            stored_ip = pub.rows.find(dcr.bot_id)
            if stored_ip is None:
                continue
            rcipb = None
            if stored_ip != dcr.bot_ip:
                pub.rows.update_ip(dcr.bot_id, dcr.bot_ip)
                rcipb = RCIPB(dcr.bot_id, dcr.bot_ip)
            pub.rows.consume(dcr.bot_id)
            pub.dispatched.add(dcr.bot_id)
            command = Command(pub.command_kind, timestamp, dict(pub.params), self.address)
            return DispatchOutcome(command, rcipb)
        return DispatchOutcome(NothingForYou())

    def handle_dcr(self, kernel: SimKernel, msg: DCR, src: str) -> None:
        self.bot_cache[msg.bot_id] = src
        outcome = self.dispatch_command(msg)
        if outcome.rcipb is not None:
            self.stats.rcipb_sent += 1
            kernel.send(self, self.botmaster_address, outcome.rcipb)
        if isinstance(outcome.reply, Command):
            self.stats.commands_sent += 1
        else:
            self.stats.nothing_sent += 1
        kernel.send(self, src, outcome.reply)

    def handle_publish(self, kernel: SimKernel, msg: PublishCommand, src: str) -> None:
        previous = self.publications.get(msg.timestamp)
        if not msg.targets:
            self.publications.pop(msg.timestamp, None)
            return
        dispatched = previous.dispatched if previous is not None else set()
        rows = [(bot_id, ip) for bot_id, ip in msg.targets if bot_id not in dispatched]
        self.publications[msg.timestamp] = Publication(msg.timestamp, msg.command_kind, dict(msg.params), DispatchList(rows), dispatched)

    # uploads

    def handle_upload(self, kernel: SimKernel, msg: Upload, src: str) -> None:
        try:
            _, timestamp = parse_unique_id(msg.unique_id)
        except ValidationError:
            logger.debug(f"{self.name}: malformed unique id {msg.unique_id!r}")
            return
        pub = self.publications.get(timestamp)
        if pub is not None:
            pub.rows.consume(msg.bot_id)
            pub.dispatched.add(msg.bot_id)
        self.upload_routes[msg.unique_id] = src
        self.stats.uploads_relayed += 1
        kernel.send(self, self.botmaster_address, msg)

    def handle_upload_ack(self, kernel: SimKernel, msg: UploadAck, src: str) -> None:
        address = self.upload_routes.pop(msg.unique_id, None)
        if address is not None:
            kernel.send(self, address, msg)

    # replacement support

    def seed_state(self, publications: Iterable[PublishCommand], bot_cache: Dict[int, str]) -> None:
        """Take over a dead server's duties from the botmaster's records."""
        self.bot_cache.update(bot_cache)
        for msg in publications:
            self.publications[msg.timestamp] = Publication(msg.timestamp, msg.command_kind, dict(msg.params), DispatchList(msg.targets))

    def register_domain(self, kernel: SimKernel, domain: str) -> bool:
        result = kernel.registrar.register(domain, self.address, kernel.now)
        if result is RegistrationResult.ALREADY_REGISTERED:
            logger.debug(f"{self.name}: {domain} already registered, skipped")
            return False
        self.domains.append(domain)
        return True

    def register_fresh_domain(self, kernel: SimKernel, domains: DomainList, cfg: WindowConfig, rng) -> Optional[str]:
        """Register one domain in a random window, stepping forward past taken names."""
        window = rng.next() % cfg.beta
        start = window * cfg.gamma + rng.next() % cfg.gamma
        for step in range(cfg.alpha):
            domain = domains[(start + step) % cfg.alpha]
            if self.register_domain(kernel, domain):
                logger.info(f"🆕 {self.name} registered {domain} in window {window}")
                return domain
        logger.warning(f"⚠️ {self.name} found no free domain to register")
        return None

    def broadcast_rcad(self, kernel: SimKernel, ips: Iterable[str]) -> int:
        sent = 0
        for ip in ips:
            kernel.send(self, ip, RCAd(self.address))
            sent += 1
        logger.info(f"📣 {self.name} sent RCAd to {sent} bots")
        return sent
