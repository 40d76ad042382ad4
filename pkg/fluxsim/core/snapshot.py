"""Persistent segment tree holding every version of the bot registry.

Updates copy only the root-to-leaf path, so each version stays readable
forever and shares all untouched subtrees with its parent. Empty subtrees
are represented by ``None``.
"""

import json
import logging
import struct
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

from fluxsim.core.errors import DecodeError, OutOfRange, UnknownVersion

logger = logging.getLogger(__name__)

_FRAME = struct.Struct(">I")


@dataclass(frozen=True)
class _Node:
    left: Optional["_Node"]
    right: Optional["_Node"]
    count: int
    payload: Any = None


def _count(node: Optional[_Node]) -> int:
    return node.count if node is not None else 0


def _round_up(capacity: int) -> int:
    cap = 1
    while cap < capacity:
        cap <<= 1
    return cap


class SnapshotTree:
    def __init__(self, capacity: int = 1):
        self._roots: List[Optional[_Node]] = [None]
        self._capacities: List[int] = [_round_up(max(1, capacity))]
        # replay log: ("update", base, slot, record) | ("grow", base) | ("branch", base)
        self._log: List[Tuple] = []
        self.last_allocations = 0

    @property
    def capacity(self) -> int:
        return self._capacities[-1]

    @property
    def versions(self) -> int:
        return len(self._roots)

    @property
    def latest(self) -> int:
        return len(self._roots) - 1

    def capacity_of(self, version: int) -> int:
        self._check_version(version)
        return self._capacities[version]

    def _check_version(self, version: int) -> None:
        if not 0 <= version < len(self._roots):
            raise UnknownVersion(version)

    def _check_slot(self, version: int, slot: int) -> None:
        if not 0 <= slot < self._capacities[version]:
            raise OutOfRange(slot, self._capacities[version])

    def _set(self, node: Optional[_Node], lo: int, hi: int, slot: int, record: Any) -> Optional[_Node]:
        self.last_allocations += 1
        if lo == hi:
            return _Node(None, None, 0 if record is None else 1, record)
        mid = (lo + hi) // 2
        left = node.left if node is not None else None
        right = node.right if node is not None else None
        if slot <= mid:
            left = self._set(left, lo, mid, slot, record)
        else:
            right = self._set(right, mid + 1, hi, slot, record)
        return _Node(left, right, _count(left) + _count(right))

    def update(self, version: int, slot: int, record: Any) -> int:
        """New version equal to ``version`` with ``slot`` set (``None`` clears it)."""
        self._check_version(version)
        self._check_slot(version, slot)
        self.last_allocations = 0
        cap = self._capacities[version]
        self._roots.append(self._set(self._roots[version], 0, cap - 1, slot, record))
        self._capacities.append(cap)
        self._log.append(("update", version, slot, record))
        return self.latest

    def grow(self, version: Optional[int] = None) -> int:
        """Doubled-capacity version; the old tree becomes the left half."""
        version = self.latest if version is None else version
        self._check_version(version)
        old = self._roots[version]
        self.last_allocations = 1 if old is not None else 0
        self._roots.append(_Node(old, None, old.count) if old is not None else None)
        self._capacities.append(self._capacities[version] * 2)
        self._log.append(("grow", version))
        logger.debug(f"🌲 Snapshot tree grown to capacity {self.capacity}")
        return self.latest

    def branch(self, version: int) -> int:
        """New version sharing ``version``'s root; used for rollbacks."""
        self._check_version(version)
        self._roots.append(self._roots[version])
        self._capacities.append(self._capacities[version])
        self._log.append(("branch", version))
        return self.latest

    def get(self, version: int, slot: int) -> Any:
        self._check_version(version)
        self._check_slot(version, slot)
        node = self._roots[version]
        lo, hi = 0, self._capacities[version] - 1
        while node is not None and lo != hi:
            mid = (lo + hi) // 2
            if slot <= mid:
                node, hi = node.left, mid
            else:
                node, lo = node.right, mid + 1
        return node.payload if node is not None else None

    def range_count(self, version: int, lo: int, hi: int) -> int:
        self._check_version(version)
        self._check_slot(version, lo)
        self._check_slot(version, hi)
        if lo > hi:
            raise OutOfRange(lo, hi + 1)
        return self._range(self._roots[version], 0, self._capacities[version] - 1, lo, hi)

    def _range(self, node: Optional[_Node], lo: int, hi: int, qlo: int, qhi: int) -> int:
        if node is None or qhi < lo or hi < qlo:
            return 0
        if qlo <= lo and hi <= qhi:
            return node.count
        mid = (lo + hi) // 2
        return self._range(node.left, lo, mid, qlo, qhi) + self._range(node.right, mid + 1, hi, qlo, qhi)

    def materialize(self, version: int) -> Dict[int, Any]:
        self._check_version(version)
        out: Dict[int, Any] = {}
        stack = [(self._roots[version], 0, self._capacities[version] - 1)]
        while stack:
            node, lo, hi = stack.pop()
            if node is None or node.count == 0:
                continue
            if lo == hi:
                out[lo] = node.payload
                continue
            mid = (lo + hi) // 2
            stack.append((node.right, mid + 1, hi))
            stack.append((node.left, lo, mid))
        return dict(sorted(out.items()))

    # --- dump / replay ----------------------------------------------------

    def dump(self, path: str, encode_record: Callable[[Any], Any] = lambda r: r) -> int:
        """Write the replay log as length-prefixed JSON frames. Returns frame count."""
        header = {"op": "new", "capacity": self._capacities[0]}
        with open(path, "wb") as f:
            for entry in [header] + [self._entry_to_json(e, encode_record) for e in self._log]:
                body = json.dumps(entry, sort_keys=True, separators=(",", ":")).encode("utf-8")
                f.write(_FRAME.pack(len(body)) + body)
        return len(self._log) + 1

    @staticmethod
    def _entry_to_json(entry: Tuple, encode_record: Callable[[Any], Any]) -> Dict[str, Any]:
        if entry[0] == "update":
            _, base, slot, record = entry
            return {"op": "update", "base": base, "slot": slot,
                    "record": None if record is None else encode_record(record)}
        return {"op": entry[0], "base": entry[1]}

    @classmethod
    def load(cls, path: str, decode_record: Callable[[Any], Any] = lambda r: r) -> "SnapshotTree":
        with open(path, "rb") as f:
            data = f.read()
        tree: Optional[SnapshotTree] = None
        offset = 0
        while offset < len(data):
            if offset + _FRAME.size > len(data):
                raise DecodeError("truncated frame header", offset)
            (length,) = _FRAME.unpack_from(data, offset)
            start = offset + _FRAME.size
            if start + length > len(data):
                raise DecodeError("truncated frame body", start)
            try:
                entry = json.loads(data[start:start + length].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise DecodeError("malformed frame body", start)
            tree = cls._replay(tree, entry, decode_record, offset)
            offset = start + length
        if tree is None:
            raise DecodeError("empty snapshot dump", 0)
        return tree

    @classmethod
    def _replay(cls, tree: Optional["SnapshotTree"], entry: Dict[str, Any], decode_record, offset: int) -> "SnapshotTree":
        op = entry.get("op")
        if op == "new" and tree is None:
            return cls(entry["capacity"])
        if tree is None:
            raise DecodeError("dump does not start with a header frame", offset)
        if op == "update":
            record = entry["record"]
            tree.update(entry["base"], entry["slot"], None if record is None else decode_record(record))
        elif op == "grow":
            tree.grow(entry["base"])
        elif op == "branch":
            tree.branch(entry["base"])
        else:
            raise DecodeError(f"unknown dump op {op!r}", offset)
        return tree
