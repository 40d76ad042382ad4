"""Simulated registrar and resolver that servers and bots act against."""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Set

from fluxsim.core.errors import ValidationError

logger = logging.getLogger(__name__)

DOMAIN_RE = re.compile(r"^[a-z-]{2,32}\.[a-z]{2,}(\.[a-z]{2,})*$")


class RegistrationResult(str, Enum):
    OK = "ok"
    ALREADY_REGISTERED = "already_registered"


@dataclass(frozen=True)
class Registration:
    server_address: str
    registered_at: int


@dataclass(frozen=True)
class NxRecord:
    time: int
    querier: str
    domain: str


@dataclass
class Registrar:
    registered: Dict[str, Registration] = field(default_factory=dict)
    blacklisted: Set[str] = field(default_factory=set)
    nx_log: List[NxRecord] = field(default_factory=list)

    def register(self, domain: str, server_address: str, now: int) -> RegistrationResult:
        if not DOMAIN_RE.match(domain):
            raise ValidationError(f"invalid domain {domain!r}")
        if domain in self.registered:
            return RegistrationResult.ALREADY_REGISTERED
        self.registered[domain] = Registration(server_address, now)
        logger.debug(f"🌐 {domain} -> {server_address} at t={now}")
        return RegistrationResult.OK

    def resolve(self, domain: str, querier: str, now: int) -> Optional[str]:
        entry = self.registered.get(domain)
        if entry is None or domain in self.blacklisted:
            self.nx_log.append(NxRecord(now, querier, domain))
            return None
        return entry.server_address

    def blacklist(self, domain: str) -> int:
        removed = 1 if domain in self.registered and domain not in self.blacklisted else 0
        self.blacklisted.add(domain)
        return removed

    def takedown(self, server_address: str) -> int:
        seized = [d for d, entry in self.registered.items() if entry.server_address == server_address]
        for domain in seized:
            del self.registered[domain]
        if seized:
            logger.info(f"🚫 Took down {server_address}: {len(seized)} domains removed")
        return len(seized)

    def domains_for(self, server_address: str) -> List[str]:
        return [
            d for d, entry in self.registered.items()
            if entry.server_address == server_address and d not in self.blacklisted
        ]

    def nx_counts(self) -> Counter:
        return Counter(record.querier for record in self.nx_log)
