"""Domain generation, windowing and the lookup cost model.

The generator is seeded from ``seed_string|YYYY-MM-DD`` through FNV-1a-64 and
stepped with xorshift64*. Servers register one domain per window and bots
search one window at a time, so a bot needs at most gamma polls whenever every
window holds a registered domain.
"""

import datetime
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property, lru_cache
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from fluxsim.core.errors import ConfigError
from fluxsim.core.rng import XorShift64Star, fnv1a64

logger = logging.getLogger(__name__)

_WORD_RE = re.compile(r"^[a-z]{1,15}$")
_TLD_RE = re.compile(r"^[a-z]{2,}(\.[a-z]{2,})*$")


@dataclass(frozen=True)
class DgaSeed:
    seed_string: str
    date: datetime.date

    @classmethod
    def parse(cls, seed_string: str, date: str) -> "DgaSeed":
        try:
            return cls(seed_string, datetime.date.fromisoformat(date))
        except ValueError:
            raise ConfigError(f"not a YYYY-MM-DD date: {date!r}", path="dga.date")

    def material(self) -> bytes:
        return f"{self.seed_string}|{self.date.isoformat()}".encode("utf-8")


@dataclass(frozen=True)
class WindowConfig:
    alpha: int
    beta: int
    gamma: int = field(init=False)

    def __post_init__(self):
        if self.beta < 1:
            raise ConfigError(f"must be at least 1, got {self.beta}", path="beta")
        if self.alpha < self.beta:
            raise ConfigError(f"alpha {self.alpha} is smaller than beta {self.beta}", path="beta")
        if self.alpha % self.beta != 0:
            raise ConfigError(f"{self.beta} does not divide alpha {self.alpha}", path="beta")
        object.__setattr__(self, "gamma", self.alpha // self.beta)

    def window_of(self, index: int) -> int:
        return index // self.gamma

    def window_range(self, window: int) -> range:
        return range(window * self.gamma, (window + 1) * self.gamma)


@dataclass(frozen=True)
class DomainList:
    domains: Tuple[str, ...]
    seed: DgaSeed
    tlds: Tuple[str, ...]
    dictionary: Optional[Tuple[str, ...]] = None

    def __len__(self) -> int:
        return len(self.domains)

    def __getitem__(self, index: int) -> str:
        return self.domains[index]

    def __iter__(self) -> Iterator[str]:
        return iter(self.domains)

    @cached_property
    def _positions(self) -> Dict[str, int]:
        positions: Dict[str, int] = {}
        for i, domain in enumerate(self.domains):
            positions.setdefault(domain, i)
        return positions

    def index_of(self, domain: str) -> Optional[int]:
        return self._positions.get(domain)


@dataclass(frozen=True)
class RegistrationPlan:
    entries: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class LookupResult:
    domain: Optional[str]
    index: Optional[int]
    polls: int
    windows_tried: int

    @property
    def found(self) -> bool:
        return self.domain is not None


class CostMode(str, Enum):
    WINDOWED = "windowed"
    BASELINE_AVERAGE = "baseline-average"


@dataclass(frozen=True)
class LookupCost:
    mode: CostMode
    accesses: float
    bytes: float
    seconds: float

    @property
    def kilobytes(self) -> int:
        # half-up rounding, 1 KB = 1024 B
        return int(self.bytes / 1024 + 0.5)


def _check_tlds(tlds: Sequence[str]) -> Tuple[str, ...]:
    if not tlds:
        raise ConfigError("at least one TLD is required", path="dga.tlds")
    for tld in tlds:
        if not _TLD_RE.match(tld):
            raise ConfigError(f"invalid TLD {tld!r}", path="dga.tlds")
    return tuple(tlds)


def _check_dictionary(words: Sequence[str]) -> Tuple[str, ...]:
    if not words:
        raise ConfigError("dictionary is empty", path="dga.dictionary")
    for word in words:
        if not _WORD_RE.match(word):
            raise ConfigError(f"dictionary words must be 1-15 lowercase letters, got {word!r}", path="dga.dictionary")
    return tuple(words)


@lru_cache(maxsize=32)
def _generate(material: bytes, alpha: int, tlds: Tuple[str, ...], dictionary: Optional[Tuple[str, ...]]) -> Tuple[str, ...]:
    rng = XorShift64Star(fnv1a64(material))
    out: List[str] = []
    for _ in range(alpha):
        if dictionary is None:
            length = 8 + rng.next() % 9
            label = "".join(chr(ord("a") + rng.next() % 26) for _ in range(length))
        else:
            first = dictionary[rng.next() % len(dictionary)]
            second = dictionary[rng.next() % len(dictionary)]
            label = f"{first}-{second}"
        tld = tlds[rng.next() % len(tlds)]
        out.append(f"{label}.{tld}")
    return tuple(out)


def generate_domains(seed: DgaSeed, alpha: int, tlds: Sequence[str], dictionary: Optional[Sequence[str]] = None) -> DomainList:
    if alpha < 1:
        raise ConfigError(f"must be at least 1, got {alpha}", path="alpha")
    tld_tuple = _check_tlds(tlds)
    words = _check_dictionary(dictionary) if dictionary is not None else None
    domains = _generate(seed.material(), alpha, tld_tuple, words)
    return DomainList(domains, seed, tld_tuple, words)


def load_dictionary(path: str) -> List[str]:
    """One word per line; blank lines and ``#`` comments ignored."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read dictionary: {e}", path=path)
    words = [line.strip().lower() for line in lines]
    return list(_check_dictionary([w for w in words if w and not w.startswith("#")]))


def plan_registrations(domains: DomainList, cfg: WindowConfig, rng_seed: int, windows: Optional[Sequence[int]] = None) -> RegistrationPlan:
    """Pick one random domain in each window (all windows unless ``windows`` narrows them)."""
    if len(domains) != cfg.alpha:
        raise ConfigError(f"domain list has {len(domains)} entries, alpha is {cfg.alpha}", path="alpha")
    rng = XorShift64Star(rng_seed)
    selected = range(cfg.beta) if windows is None else sorted(set(windows))
    entries = []
    for window in selected:
        if not 0 <= window < cfg.beta:
            raise ConfigError(f"window {window} outside 0..{cfg.beta - 1}", path="servers.windows")
        entries.append((window, window * cfg.gamma + rng.next() % cfg.gamma))
    return RegistrationPlan(tuple(entries))


def enhanced_lookup(
    domains: DomainList,
    cfg: WindowConfig,
    resolve: Callable[[str], bool],
    rng_seed: int,
) -> LookupResult:
    """Search random windows without replacement, polling each in index order.

    The window order is a Fisher-Yates shuffle drawn lazily, one swap per
    window actually tried.
    """
    rng = XorShift64Star(rng_seed)
    order = list(range(cfg.beta))
    polls = 0
    for k in range(cfg.beta):
        j = k + rng.next() % (cfg.beta - k)
        order[k], order[j] = order[j], order[k]
        for index in cfg.window_range(order[k]):
            polls += 1
            domain = domains[index]
            if resolve(domain):
                return LookupResult(domain, index, polls, k + 1)
    return LookupResult(None, None, polls, cfg.beta)


def linear_lookup(
    domains: DomainList,
    resolve: Callable[[str], bool],
    rng_seed: int,
) -> LookupResult:
    """Non-windowed scan from a random start, wrapping around the list."""
    alpha = len(domains)
    rng = XorShift64Star(rng_seed)
    start = rng.next() % alpha
    for step in range(alpha):
        index = (start + step) % alpha
        domain = domains[index]
        if resolve(domain):
            return LookupResult(domain, index, step + 1, 1)
    return LookupResult(None, None, alpha, 1)


def lookup_cost(cfg: WindowConfig, bytes_per_access: float, seconds_per_access: float, mode: CostMode) -> LookupCost:
    if bytes_per_access <= 0 or seconds_per_access <= 0:
        raise ConfigError("access rates must be positive", path="cost_model")
    mode = CostMode(mode)
    if mode is CostMode.WINDOWED:
        accesses: float = cfg.gamma
    else:
        accesses = cfg.alpha / 2
    return LookupCost(mode, accesses, accesses * bytes_per_access, accesses * seconds_per_access)


def divisors(n: int) -> List[int]:
    small = [d for d in range(1, int(n ** 0.5) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


def curve_data(alpha: int, betas: Sequence[int]) -> List[Tuple[int, int]]:
    points = []
    for beta in betas:
        if beta < 1 or alpha % beta != 0:
            logger.warning(f"⚠️ Skipping beta={beta}: does not divide alpha={alpha}")
            continue
        points.append((beta, alpha // beta))
    return points
