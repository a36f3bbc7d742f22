"""The key-value state machine that the executor applies committed commands to."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class Kind(str, enum.Enum):
    GET = "get"
    PUT = "put"
    DEL = "del"


@dataclass(frozen=True)
class Command:
    kind: Kind
    key: bytes
    value: Optional[bytes] = None

    def __post_init__(self):
        if not isinstance(self.kind, Kind):
            object.__setattr__(self, "kind", Kind(self.kind))
        if not self.key:
            raise ValueError("command key must be non-empty")
        if self.kind is Kind.PUT:
            if self.value is None:
                raise ValueError("put requires a value")
        elif self.value is not None:
            raise ValueError(f"{self.kind.value} carries no value")

    @classmethod
    def get(cls, key: bytes) -> "Command":
        return cls(Kind.GET, key)

    @classmethod
    def put(cls, key: bytes, value: bytes) -> "Command":
        return cls(Kind.PUT, key, value)

    @classmethod
    def delete(cls, key: bytes) -> "Command":
        return cls(Kind.DEL, key)


@dataclass(frozen=True)
class CommandResult:
    ok: bool
    value: Optional[bytes] = None


class KVStore:
    """A wrapper around a dict. Single executor only; not safe to share."""

    def __init__(self):
        self._data: dict[bytes, bytes] = {}

    def execute(self, cmd: Command) -> CommandResult:
        if cmd.kind is Kind.GET:
            value = self._data.get(cmd.key)
            if value is None:
                return CommandResult(False)
            return CommandResult(True, value)
        if cmd.kind is Kind.PUT:
            self._data[cmd.key] = cmd.value
            return CommandResult(True)
        # a missing key is an in-band failure so the executor never stalls
        return CommandResult(self._data.pop(cmd.key, None) is not None)

    def size(self) -> int:
        return len(self._data)

    def items(self) -> dict[bytes, bytes]:
        return dict(self._data)

    def __len__(self):
        return len(self._data)
