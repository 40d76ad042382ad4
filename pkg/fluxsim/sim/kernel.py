"""Deterministic discrete-event kernel.

Events pop in (fire_at, seq) order from a single heap. Every node and every
randomized subsystem draws from its own stream derived from the master seed,
so the scenario plus the seed fixes every artifact byte for byte.
"""

import heapq
import ipaddress
import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Union

from fluxsim.core.config import ADDRESS_POOL, DEFAULT_DNS_BYTES, DEFAULT_LATENCY_MS, DEFAULT_OVERHEAD_BYTES
from fluxsim.core.errors import ConfigError, InternalError
from fluxsim.core.protocol import Message, Upload, encode, message_name
from fluxsim.core.registrar import Registrar
from fluxsim.core.rng import XorShift64Star, derive_stream
from fluxsim.sim.eventlog import EventLog

logger = logging.getLogger(__name__)

DIRECTION_OUT = "out"
DIRECTION_DNS = "dns"
DIRECTION_SMS = "sms"
DNS_TAG = "DNS"


# --- event kinds ------------------------------------------------------------

@dataclass(frozen=True)
class Deliver:
    message: Message
    src: str
    src_address: str
    dst: str
    dst_address: str


@dataclass(frozen=True)
class Timer:
    node: str
    tag: str
    payload: Any = None


@dataclass(frozen=True)
class ServerTakedown:
    address: str
    at: int


@dataclass(frozen=True)
class BotmasterCompromise:
    at: int
    restore_delay_ms: int = 60_000
    tamper_count: int = 0
    node: str = "botmaster"


@dataclass(frozen=True)
class IpReassign:
    bot: str
    at: int
    period: int = 0


@dataclass(frozen=True)
class Recharge:
    bot: str
    at: int


FaultSpec = Union[ServerTakedown, BotmasterCompromise, IpReassign, Recharge]


@dataclass(frozen=True)
class Fault:
    spec: FaultSpec


@dataclass(frozen=True)
class Event:
    fire_at: int
    seq: int
    kind: Union[Deliver, Timer, Fault, IpReassign]


# --- net model and trace ----------------------------------------------------

@dataclass(frozen=True)
class NetModel:
    latency_ms: int = DEFAULT_LATENCY_MS
    overhead_bytes: int = DEFAULT_OVERHEAD_BYTES
    dns_bytes: int = DEFAULT_DNS_BYTES

    def bytes(self, msg: Message) -> int:
        size = len(encode(msg)) + self.overhead_bytes
        if isinstance(msg, Upload):
            size += msg.payload_bytes
        return size


@dataclass(frozen=True)
class TrafficRow:
    time: int
    src: str
    dst: str
    bytes: int
    direction: str
    msg_tag: str
    resolved_ok: Optional[bool] = None
    delivered: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrafficRow":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


@dataclass
class TrafficTrace:
    rows: List[TrafficRow] = field(default_factory=list)

    def append(self, row: TrafficRow) -> None:
        if self.rows and row.time < self.rows[-1].time:
            raise InternalError(f"trace time went backwards: {row.time} < {self.rows[-1].time}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class RunStats:
    """Counters for one run."""
    events_processed: int = 0
    deliveries: int = 0
    dropped_at_send: int = 0
    dropped_in_flight: int = 0
    timers: int = 0
    faults: int = 0


@dataclass(frozen=True)
class RunSummary:
    clock: int
    events_processed: int
    rows: int
    dropped: int


class LogRateLimiter:
    """Lets one message per key through every ``cooldown_ms`` of sim time."""

    def __init__(self, cooldown_ms: int):
        self.cooldown = cooldown_ms
        self.last_logged: Dict[Any, int] = {}

    def can_log(self, key: Any, now: int) -> bool:
        if key not in self.last_logged or (now - self.last_logged[key]) > self.cooldown:
            self.last_logged[key] = now
            return True
        return False


class AddressAllocator:
    """Monotone allocator inside the simulated pool; addresses are never reused."""

    def __init__(self, pool: str = ADDRESS_POOL):
        self.network = ipaddress.IPv4Network(pool)
        self._next = 1

    def allocate(self) -> str:
        if self._next >= self.network.num_addresses - 1:
            raise InternalError(f"address pool {self.network} exhausted")
        address = str(self.network[self._next])
        self._next += 1
        return address


# --- nodes ------------------------------------------------------------------

class Node:
    """Base for every simulated actor. ``HANDLERS`` maps message types to method names."""

    kind = "node"
    HANDLERS: Dict[type, str] = {}

    def __init__(self, name: str):
        self.name = name
        self.address: Optional[str] = None
        self.up = True

    def on_message(self, kernel: "SimKernel", msg: Message, src_address: str) -> None:
        method = self.HANDLERS.get(type(msg))
        if method is None:
            logger.debug(f"{self.name} ignores {message_name(msg)} from {src_address}")
            return
        getattr(self, method)(kernel, msg, src_address)

    def on_timer(self, kernel: "SimKernel", tag: str, payload: Any = None) -> None:
        logger.debug(f"{self.name} has no timer {tag!r}")

    def on_address_change(self, kernel: "SimKernel", old: Optional[str], new: str) -> None:
        pass


class SimKernel:
    def __init__(self, master_seed: int = 0, net: Optional[NetModel] = None, registrar: Optional[Registrar] = None):
        self.master_seed = master_seed
        self.net = net or NetModel()
        self.registrar = registrar or Registrar()
        self.now = 0
        self.nodes: Dict[str, Node] = {}
        self.trace = TrafficTrace()
        self.log = EventLog()
        self.stats = RunStats()
        self.warnings = LogRateLimiter(60_000)
        self._queue: List[tuple] = []
        self._seq = itertools.count()
        self._by_address: Dict[str, str] = {}
        self._addresses = AddressAllocator()

    # nodes and addresses

    def add_node(self, node: Node) -> Node:
        if node.name in self.nodes:
            raise ConfigError(f"duplicate node name {node.name!r}")
        self.nodes[node.name] = node
        if node.address is None:
            node.address = self._addresses.allocate()
        self._by_address[node.address] = node.name
        node.on_address_change(self, None, node.address)
        logger.debug(f"➕ {node.kind} {node.name} at {node.address}")
        return node

    def node(self, name: str) -> Node:
        try:
            return self.nodes[name]
        except KeyError:
            raise ConfigError(f"unknown node {name!r}")

    def node_at(self, address: str) -> Optional[Node]:
        name = self._by_address.get(address)
        return self.nodes[name] if name is not None else None

    def is_up(self, address: str) -> bool:
        node = self.node_at(address)
        return node is not None and node.up

    def reassign_address(self, name: str) -> str:
        node = self.node(name)
        old = node.address
        self._by_address.pop(old, None)
        node.address = self._addresses.allocate()
        self._by_address[node.address] = name
        node.on_address_change(self, old, node.address)
        return node.address

    def stream(self, node_name: str, purpose: str) -> XorShift64Star:
        return derive_stream(self.master_seed, node_name, purpose)

    # scheduling

    def schedule(self, fire_at: int, kind) -> Event:
        if fire_at < self.now:
            raise InternalError(f"cannot schedule at {fire_at}, clock is {self.now}")
        ev = Event(fire_at, next(self._seq), kind)
        heapq.heappush(self._queue, (ev.fire_at, ev.seq, ev))
        return ev

    def set_timer(self, node_name: str, delay_ms: int, tag: str, payload: Any = None) -> Event:
        return self.schedule(self.now + delay_ms, Timer(node_name, tag, payload))

    # traffic

    def _record(self, row: TrafficRow) -> None:
        self.trace.append(row)
        self.log.append("traffic", row.time, **{k: v for k, v in row.to_dict().items() if k != "time"})

    def send(self, src: Node, dst_address: str, msg: Message, direction: str = DIRECTION_OUT) -> Optional[Event]:
        dst = self.node_at(dst_address)
        delivered = dst is not None and dst.up and src.up
        self._record(TrafficRow(
            time=self.now,
            src=src.name,
            dst=dst.name if dst is not None else dst_address,
            bytes=self.net.bytes(msg),
            direction=direction,
            msg_tag=message_name(msg),
            delivered=delivered,
        ))
        if not delivered:
            self.stats.dropped_at_send += 1
            if self.warnings.can_log((src.name, "drop"), self.now):
                logger.warning(f"📭 {message_name(msg)} from {src.name} to {dst_address} dropped")
            return None
        return self.schedule(self.now + self.net.latency_ms, Deliver(msg, src.name, src.address, dst.name, dst_address))

    def resolve(self, querier: Node, domain: str) -> Optional[str]:
        before = len(self.registrar.nx_log)
        address = self.registrar.resolve(domain, querier.name, self.now)
        self._record(TrafficRow(
            time=self.now,
            src=querier.name,
            dst=domain,
            bytes=self.net.dns_bytes,
            direction=DIRECTION_DNS,
            msg_tag=DNS_TAG,
            resolved_ok=address is not None,
        ))
        for record in self.registrar.nx_log[before:]:
            self.log.append("nxdomain", record.time, querier=record.querier, domain=record.domain)
        return address

    # faults

    def inject_fault(self, spec: FaultSpec) -> Event:
        if isinstance(spec, ServerTakedown):
            target = self.node_at(spec.address)
            if target is None or target.kind != "server":
                raise ConfigError(f"no server at {spec.address}", path="faults")
        elif isinstance(spec, BotmasterCompromise):
            if self.node(spec.node).kind != "botmaster":
                raise ConfigError(f"{spec.node!r} is not a botmaster", path="faults")
        elif isinstance(spec, (IpReassign, Recharge)):
            if self.node(spec.bot).kind != "bot":
                raise ConfigError(f"{spec.bot!r} is not a bot", path="faults")
        else:
            raise ConfigError(f"unknown fault {spec!r}", path="faults")
        if isinstance(spec, IpReassign):
            return self.schedule(spec.at, spec)
        return self.schedule(spec.at, Fault(spec))

    def _fault_takedown(self, spec: ServerTakedown) -> None:
        node = self.node_at(spec.address)
        node.up = False
        removed = self.registrar.takedown(spec.address)
        self.log.append("fault", self.now, fault="ServerTakedown", target=node.name, address=spec.address, domains_removed=removed)
        logger.info(f"💥 Server {node.name} ({spec.address}) taken down at t={self.now}")

    def _fault_compromise(self, spec: BotmasterCompromise) -> None:
        self.log.append("fault", self.now, fault="BotmasterCompromise", target=spec.node, tamper_count=spec.tamper_count)
        self.nodes[spec.node].compromise(self, spec)

    def _fault_recharge(self, spec: Recharge) -> None:
        self.log.append("fault", self.now, fault="Recharge", target=spec.bot)
        self.nodes[spec.bot].recharge(self)

    def _ip_reassign(self, spec: IpReassign) -> None:
        old = self.nodes[spec.bot].address
        new = self.reassign_address(spec.bot)
        self.log.append("fault", self.now, fault="IpReassign", target=spec.bot, old_address=old, new_address=new)
        if spec.period > 0:
            self.schedule(self.now + spec.period, IpReassign(spec.bot, self.now + spec.period, spec.period))

    FAULT_HANDLERS = {
        ServerTakedown: "_fault_takedown",
        BotmasterCompromise: "_fault_compromise",
        Recharge: "_fault_recharge",
    }

    # loop

    def _dispatch(self, ev: Event) -> None:
        kind = ev.kind
        if isinstance(kind, Deliver):
            dst = self.nodes[kind.dst]
            if not dst.up or dst.address != kind.dst_address:
                self.stats.dropped_in_flight += 1
                logger.debug(f"{message_name(kind.message)} to {kind.dst} lost in flight")
                return
            self.stats.deliveries += 1
            dst.on_message(self, kind.message, kind.src_address)
        elif isinstance(kind, Timer):
            self.stats.timers += 1
            self.nodes[kind.node].on_timer(self, kind.tag, kind.payload)
        elif isinstance(kind, Fault):
            self.stats.faults += 1
            getattr(self, self.FAULT_HANDLERS[type(kind.spec)])(kind.spec)
        elif isinstance(kind, IpReassign):
            self.stats.faults += 1
            self._ip_reassign(kind)
        else:
            raise InternalError(f"unknown event kind {kind!r}")

    def run_until(self, t_end: int) -> RunSummary:
        while self._queue and self._queue[0][0] <= t_end:
            fire_at, _, ev = heapq.heappop(self._queue)
            if fire_at < self.now:
                raise InternalError(f"clock went backwards: {fire_at} < {self.now}")
            self.now = fire_at
            self.stats.events_processed += 1
            self._dispatch(ev)
        self.now = max(self.now, t_end)
        return RunSummary(
            clock=self.now,
            events_processed=self.stats.events_processed,
            rows=len(self.trace),
            dropped=self.stats.dropped_at_send + self.stats.dropped_in_flight,
        )
