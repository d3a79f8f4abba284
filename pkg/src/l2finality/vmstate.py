"""Virtual machine state: a total Key -> Value mapping with canonical commitments.

Canonical serialization (all integers little-endian)::

    u64   number of entries n (zero-valued entries are never serialized)
    n times, keys in ascending total order:
        u8    key kind   (0 = account balance, 1 = pool reserve, 2 = contract slot)
        u64   primary id (account-id / pool-id / contract-id)
        u64   secondary  (0 for balances, token tag for reserves, slot index)
        u128  value

The commitment is the SHA-256 digest of these bytes.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping

MAX_U64 = 2**64 - 1
MAX_VALUE = 2**128 - 1

_HEADER = struct.Struct("<Q")
_KEY = struct.Struct("<BQQ")


class ValueOverflowError(ArithmeticError):
    """Raised when a value leaves the unsigned 128-bit range."""


class UnresolvableNameError(KeyError):
    """A natural name refers to a transaction id that cannot be resolved."""


class KeyKind(enum.IntEnum):
    ACCOUNT_BALANCE = 0
    POOL_RESERVE = 1
    CONTRACT_SLOT = 2


@dataclass(frozen=True, order=True, slots=True)
class Key:
    """A state key. Ordering is by kind, then primary id, then secondary index."""

    kind: KeyKind
    ident: int
    index: int = 0

    def __post_init__(self):
        if not 0 <= self.ident <= MAX_U64 or not 0 <= self.index <= MAX_U64:
            raise ValueError(f"key fields must fit in 64 bits: {self!r}")

    @classmethod
    def account(cls, account_id: int) -> Key:
        return cls(KeyKind.ACCOUNT_BALANCE, account_id, 0)

    @classmethod
    def reserve(cls, pool_id: int, token: int) -> Key:
        return cls(KeyKind.POOL_RESERVE, pool_id, token)

    @classmethod
    def slot(cls, contract_id: int, slot_index: int) -> Key:
        return cls(KeyKind.CONTRACT_SLOT, contract_id, slot_index)

    def __repr__(self):
        return f"Key({self.kind.name}, {self.ident}, {self.index})"


def check_value(v: int) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise TypeError(f"values are integers, got {type(v).__name__}")
    if v < 0 or v > MAX_VALUE:
        raise ValueOverflowError(f"value {v} outside u128 range")
    return v


def checked_add(a: int, b: int) -> int:
    return check_value(a + b)


def checked_sub(a: int, b: int) -> int:
    return check_value(a - b)


@dataclass(frozen=True, slots=True)
class StateCommitment:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("commitment digest must be 32 bytes")

    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def fromhex(cls, text: str) -> StateCommitment:
        return cls(bytes.fromhex(text))

    def __repr__(self):
        return f"StateCommitment({self.digest.hex()[:16]}...)"


class State:
    """Immutable total mapping from keys to values; absent keys read as zero."""

    __slots__ = ("_entries", "_hash")

    def __init__(self, entries: Mapping[Key, int] | Iterable[tuple[Key, int]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[Key, int] = {}
        for k, v in items:
            if not isinstance(k, Key):
                raise TypeError(f"state keys must be Key, got {type(k).__name__}")
            if check_value(v):
                self._entries[k] = v
        self._hash: int | None = None

    def get(self, key: Key) -> int:
        return self._entries.get(key, 0)

    __getitem__ = get

    def set(self, key: Key, value: int) -> State:
        return self.update({key: value})

    def update(self, changes: Mapping[Key, int]) -> State:
        merged = dict(self._entries)
        merged.update(changes)
        return State(merged)

    def items(self) -> list[tuple[Key, int]]:
        """Non-zero entries in canonical key order."""
        return sorted(self._entries.items())

    def keys(self) -> list[Key]:
        return sorted(self._entries)

    def __iter__(self) -> Iterator[Key]:
        return iter(self.keys())

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        if not isinstance(other, State):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._entries.items()))
        return self._hash

    def __repr__(self):
        body = ", ".join(f"{k!r}: {v}" for k, v in self.items())
        return f"State({{{body}}})"

    def serialize(self) -> bytes:
        return serialize_state(self)

    @classmethod
    def deserialize(cls, data: bytes) -> State:
        return deserialize_state(data)


EMPTY = State()


def get(state: State, key: Key) -> int:
    return state.get(key)


def serialize_state(state: State) -> bytes:
    items = state.items()
    parts = [_HEADER.pack(len(items))]
    for key, value in items:
        parts.append(_KEY.pack(int(key.kind), key.ident, key.index))
        parts.append(value.to_bytes(16, "little"))
    return b"".join(parts)


def deserialize_state(data: bytes) -> State:
    (n,) = _HEADER.unpack_from(data, 0)
    width = _KEY.size + 16
    if len(data) != _HEADER.size + n * width:
        raise ValueError("canonical state has wrong length")
    entries = []
    off = _HEADER.size
    prev = None
    for _ in range(n):
        kind, ident, index = _KEY.unpack_from(data, off)
        key = Key(KeyKind(kind), ident, index)
        value = int.from_bytes(data[off + _KEY.size:off + width], "little")
        if prev is not None and key <= prev:
            raise ValueError("canonical state keys out of order")
        if value == 0:
            raise ValueError("canonical state must omit zero entries")
        prev = key
        entries.append((key, value))
        off += width
    return State(entries)


def commit(state: State) -> StateCommitment:
    return StateCommitment(hashlib.sha256(serialize_state(state)).digest())


@dataclass(frozen=True, slots=True)
class NaturalName:
    """A state named by a base checkpoint and the transactions applied after it."""

    base: int = 0
    suffix: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "suffix", tuple(self.suffix))
        if len(set(self.suffix)) != len(self.suffix):
            raise ValueError("transaction ids in a natural name must be unique")

    def extend(self, *txn_ids: int) -> NaturalName:
        return NaturalName(self.base, self.suffix + txn_ids)


def _default_semantics():
    from .txn import execute

    return execute


def evaluate(name: NaturalName, registry, base_state: State,
             semantics: Callable | None = None) -> State:
    """Apply the transactions of `name` to `base_state`, left to right.

    `registry` maps transaction ids to transactions; `semantics` is any
    callable ``(txn, state) -> outcome`` whose outcome has ``new_state``.
    """
    run = semantics or _default_semantics()
    state = base_state
    for txn_id in name.suffix:
        try:
            t = registry[txn_id]
        except UnresolvableNameError:
            raise
        except KeyError:
            raise UnresolvableNameError(txn_id) from None
        state = run(t, state).new_state
    return state


def commutes_at(f, g, s: State, semantics: Callable | None = None) -> bool:
    run = semantics or _default_semantics()
    fg = run(g, run(f, s).new_state).new_state
    gf = run(f, run(g, s).new_state).new_state
    return commit(fg) == commit(gf)
