"""Exception hierarchy shared by every fluxsim package.

Expected negative outcomes (NXDOMAIN, NotFound lookups, NotForUs SMS,
AlreadyRegistered) are plain values and never raised.
"""

from typing import Optional


class FluxsimError(Exception):
    """Base class for every error raised by fluxsim."""

    exit_code = 1


class ConfigError(FluxsimError):
    """Invalid scenario, template table, or parameter combination."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class DecodeError(FluxsimError):
    """A frame or SMS slot could not be decoded."""

    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (at offset {offset})")


class EncodingError(FluxsimError):
    """A value cannot be rendered within its wire budget."""


class ValidationError(FluxsimError):
    """A value breaks a syntactic rule (reserved separator, bad domain)."""


class InternalError(FluxsimError):
    """Bug guard: an invariant of the simulator itself was violated."""


class RestoreError(FluxsimError):
    """The requested snapshot version cannot be restored."""


class UnknownVersion(FluxsimError):
    def __init__(self, version: int):
        self.version = version
        super().__init__(f"unknown snapshot version {version}")


class OutOfRange(FluxsimError):
    def __init__(self, slot: int, capacity: int):
        self.slot = slot
        self.capacity = capacity
        super().__init__(f"slot {slot} outside capacity {capacity}")
