"""Append-only log with pluggable log-finality modes and callData storage.

Positions start at 1 and are dense. Position 0 is reserved for "before the
first entry", which is where the genesis checkpoint sits.

Ledger dump format (UTF-8 text, one entry per line, tab separated)::

    position  kind  appended_at  body-digest-hex  body

``body`` is the entry's canonical JSON (sorted keys, no whitespace) and the
digest is its SHA-256. A leading ``#`` line records the finality mode.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Iterator, Union

from .txn import Transaction, decode_transaction
from .vmstate import StateCommitment, UnresolvableNameError


class RecordsUnavailableError(UnresolvableNameError):
    """The requested records were garbage collected behind a checkpoint."""


class CallDataUnavailableError(UnresolvableNameError):
    """A CAS reference resolves to nothing in the availability store."""


class CallDataIntegrityError(RuntimeError):
    """A stored payload does not hash to its reference digest (simulator bug)."""


class OutOfRangeError(IndexError):
    pass


class UnsupportedModeError(ValueError):
    pass


# -- finality modes -----------------------------------------------------------

@dataclass(frozen=True)
class Instant:
    def __str__(self):
        return "instant"


@dataclass(frozen=True)
class Probabilistic:
    depth: int = 6
    reorg_prob: float = 0.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("probabilistic finality depth must be >= 1")
        if not 0 <= self.reorg_prob < 1:
            raise ValueError("reorg_prob must lie in [0, 1)")

    def __str__(self):
        return f"probabilistic:{self.depth}:{self.reorg_prob!r}"


FinalityMode = Union[Instant, Probabilistic]


def parse_mode(text: str) -> FinalityMode:
    if text == "instant":
        return Instant()
    kind, _, rest = text.partition(":")
    if kind != "probabilistic":
        raise ValueError(f"unknown finality mode {text!r}")
    depth, _, prob = rest.partition(":")
    return Probabilistic(int(depth or 6), float(prob or 0.0))


class FinalityStatus(enum.Enum):
    PENDING = "pending"
    LOG_FINAL = "log_final"


# -- callData references and availability ---------------------------------------

def payload_digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class Inline:
    payload: bytes


@dataclass(frozen=True)
class Cas:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError("CAS digest must be 32 bytes")


CallDataRef = Union[Inline, Cas]


class AvailabilityStore:
    """Content-addressed payload store with an adversarial withhold switch.

    A withheld payload is named but absent from the store; the withholder
    keeps a private copy and may :meth:`release` it later.
    """

    def __init__(self):
        self._payloads: dict[bytes, bytes] = {}
        self._held_back: dict[bytes, bytes] = {}
        self._reclaimed: set[bytes] = set()

    def store(self, payload: bytes, mode: str = "inline", withhold: bool = False) -> CallDataRef:
        if mode == "inline":
            return Inline(bytes(payload))
        if mode != "cas":
            raise ValueError(f"unknown callData mode {mode!r}")
        digest = payload_digest(payload)
        if withhold:
            self._held_back[digest] = bytes(payload)
        else:
            self._payloads[digest] = bytes(payload)
        return Cas(digest)

    def fetch(self, ref: CallDataRef) -> bytes | None:
        """The payload behind `ref`, or ``None`` when it is unavailable."""
        if isinstance(ref, Inline):
            return ref.payload
        if ref.digest in self._reclaimed:
            raise RecordsUnavailableError(ref.digest.hex())
        payload = self._payloads.get(ref.digest)
        if payload is not None and payload_digest(payload) != ref.digest:
            raise CallDataIntegrityError(f"payload for {ref.digest.hex()} fails to re-hash")
        return payload

    def is_available(self, ref: CallDataRef) -> bool:
        return isinstance(ref, Inline) or ref.digest in self._payloads

    def release(self, digest: bytes) -> bool:
        payload = self._held_back.pop(digest, None)
        if payload is None:
            return False
        self._payloads[digest] = payload
        return True

    def reclaim(self, digest: bytes) -> int:
        """Drop a payload for good; returns the number of bytes freed."""
        self._reclaimed.add(digest)
        self._held_back.pop(digest, None)
        payload = self._payloads.pop(digest, None)
        return 0 if payload is None else len(payload)

    def available_payloads(self) -> list[tuple[bytes, bytes]]:
        return sorted(self._payloads.items())

    def __len__(self):
        return len(self._payloads)


# -- the unavailable-callData dilemma --------------------------------------------

@dataclass(frozen=True)
class WaitIndefinitely:
    def __str__(self):
        return "wait"


@dataclass(frozen=True)
class TimeoutAbort:
    timeout: int = 0

    def __post_init__(self):
        if self.timeout < 0:
            raise ValueError("timeout must be non-negative")

    def __str__(self):
        return f"timeout:{self.timeout}"


AvailabilityPolicy = Union[WaitIndefinitely, TimeoutAbort]


def parse_policy(text: str) -> AvailabilityPolicy:
    if text == "wait":
        return WaitIndefinitely()
    kind, _, n = text.partition(":")
    if kind != "timeout":
        raise ValueError(f"unknown availability policy {text!r}")
    return TimeoutAbort(int(n or 0))


@dataclass(frozen=True)
class Stalled:
    """Liveness sacrificed: still waiting, with no bound on the wait."""

    ticks: int


@dataclass(frozen=True)
class Waiting:
    """Bounded wait under a timeout; not yet a decision."""

    ticks: int


@dataclass(frozen=True)
class AbortedTxn:
    """Finality sacrificed: the transaction is treated as implicitly aborted."""

    order_finality_violation: bool = True


def resolve_unavailable(policy: AvailabilityPolicy, waited: int) -> Stalled | Waiting | AbortedTxn:
    """Decide what to do after `waited` ticks without the callData."""
    if isinstance(policy, WaitIndefinitely):
        return Stalled(waited + 1)
    if waited < policy.timeout:
        return Waiting(waited + 1)
    return AbortedTxn()


# -- log entries -----------------------------------------------------------------

def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _ref_body(ref: CallDataRef) -> dict:
    if isinstance(ref, Inline):
        return {"inline": ref.payload.hex()}
    return {"cas": ref.digest.hex()}


def _ref_from_body(body: dict) -> CallDataRef:
    if "inline" in body:
        return Inline(bytes.fromhex(body["inline"]))
    return Cas(bytes.fromhex(body["cas"]))


@dataclass(frozen=True)
class OrderCommit:
    batch_id: int
    txn_ids: tuple[int, ...]
    refs: tuple[CallDataRef, ...]

    kind = "order_commit"

    def __post_init__(self):
        if len(self.txn_ids) != len(self.refs):
            raise ValueError("one callData reference per transaction")

    def body(self) -> dict:
        return {"batch": self.batch_id, "txns": list(self.txn_ids),
                "refs": [_ref_body(r) for r in self.refs]}

    @classmethod
    def from_body(cls, b: dict) -> OrderCommit:
        return cls(b["batch"], tuple(b["txns"]), tuple(_ref_from_body(r) for r in b["refs"]))


@dataclass(frozen=True)
class StateCommit:
    batch_id: int
    commitment: StateCommitment
    skipped: tuple[int, ...] = ()

    kind = "state_commit"

    def body(self) -> dict:
        return {"batch": self.batch_id, "commitment": self.commitment.hex(),
                "skipped": list(self.skipped)}

    @classmethod
    def from_body(cls, b: dict) -> StateCommit:
        return cls(b["batch"], StateCommitment.fromhex(b["commitment"]), tuple(b["skipped"]))


@dataclass(frozen=True)
class DisputableAssertion:
    batch_id: int
    commitment: StateCommitment
    window_end: int
    skipped: tuple[int, ...] = ()

    kind = "disputable_assertion"

    def body(self) -> dict:
        return {"batch": self.batch_id, "commitment": self.commitment.hex(),
                "window_end": self.window_end, "skipped": list(self.skipped)}

    @classmethod
    def from_body(cls, b: dict) -> DisputableAssertion:
        return cls(b["batch"], StateCommitment.fromhex(b["commitment"]), b["window_end"],
                   tuple(b["skipped"]))


@dataclass(frozen=True)
class CheckpointDecl:
    checkpoint_id: int
    named_position: int
    commitment: StateCommitment
    gate: object

    kind = "checkpoint_decl"

    def body(self) -> dict:
        return {"checkpoint": self.checkpoint_id, "named_position": self.named_position,
                "commitment": self.commitment.hex(), "gate": self.gate.to_dict()}

    @classmethod
    def from_body(cls, b: dict) -> CheckpointDecl:
        from .checkpoint import gate_from_dict

        return cls(b["checkpoint"], b["named_position"], StateCommitment.fromhex(b["commitment"]),
                   gate_from_dict(b["gate"]))


EntryKind = Union[OrderCommit, StateCommit, DisputableAssertion, CheckpointDecl]
_KINDS = {k.kind: k for k in (OrderCommit, StateCommit, DisputableAssertion, CheckpointDecl)}


@dataclass(frozen=True)
class LogEntry:
    position: int
    kind: EntryKind
    appended_at: int

    def body_bytes(self) -> bytes:
        return _canonical(self.kind.body())

    def digest(self) -> bytes:
        return hashlib.sha256(self.body_bytes()).digest()

    def dump_line(self) -> str:
        return "\t".join([str(self.position), self.kind.kind, str(self.appended_at),
                          self.digest().hex(), self.body_bytes().decode()])


# -- the ledger ------------------------------------------------------------------

@dataclass
class Ledger:
    mode: FinalityMode = field(default_factory=Instant)

    def __post_init__(self):
        self._entries: list[LogEntry] = []
        self._first = 1
        self._final_through = 0
        self._txn_positions: dict[int, int] = {}

    @property
    def head(self) -> int:
        return self._first + len(self._entries) - 1

    @property
    def first_retained(self) -> int:
        return self._first

    @property
    def final_through(self) -> int:
        """Highest LogFinal position; everything at or below it is final."""
        return self._final_through

    def append(self, kind: EntryKind, tick: int) -> int:
        pos = self.head + 1
        self._entries.append(LogEntry(pos, kind, tick))
        if isinstance(kind, OrderCommit):
            for t in kind.txn_ids:
                self._txn_positions[t] = pos
        self._advance_frontier()
        return pos

    def _advance_frontier(self):
        k = 0 if isinstance(self.mode, Instant) else self.mode.depth
        self._final_through = max(self._final_through, self.head - k)

    def entry(self, position: int) -> LogEntry:
        if position > self.head or position < 1:
            raise OutOfRangeError(f"position {position} not in log (head {self.head})")
        if position < self._first:
            raise RecordsUnavailableError(f"log position {position} was garbage collected")
        return self._entries[position - self._first]

    def __iter__(self) -> Iterator[LogEntry]:
        return iter(list(self._entries))

    def __len__(self):
        return len(self._entries)

    def finality_status(self, position: int, head: int | None = None) -> FinalityStatus:
        head = self.head if head is None else head
        if position > head or position < 1:
            raise OutOfRangeError(f"position {position} beyond head {head}")
        if position <= self._final_through:
            return FinalityStatus.LOG_FINAL
        if isinstance(self.mode, Instant):
            return FinalityStatus.LOG_FINAL
        if head - position >= self.mode.depth:
            return FinalityStatus.LOG_FINAL
        return FinalityStatus.PENDING

    def is_final(self, position: int) -> bool:
        return self.finality_status(position) is FinalityStatus.LOG_FINAL

    def adversary_reorg(self, depth: int, rng: random.Random) -> tuple[LogEntry, ...] | None:
        """Maybe drop the non-final suffix of the log.

        Returns the dropped entries, or ``None`` when nothing happened.
        """
        if not isinstance(self.mode, Probabilistic):
            raise UnsupportedModeError("reorgs only exist under probabilistic finality")
        hit = rng.random() < self.mode.reorg_prob
        if depth <= 0 or not hit:
            return None
        cut = max(self.head - min(depth, self.mode.depth), self._final_through)
        if cut >= self.head:
            return None
        keep = cut - self._first + 1
        dropped = tuple(self._entries[keep:])
        del self._entries[keep:]
        for e in dropped:
            if isinstance(e.kind, OrderCommit):
                for t in e.kind.txn_ids:
                    self._txn_positions.pop(t, None)
        return dropped

    def truncate_through(self, position: int) -> tuple[LogEntry, ...]:
        """Garbage-collect every entry at or below `position`."""
        if position > self._final_through:
            raise ValueError("cannot reclaim entries that are not LogFinal")
        n = max(0, position - self._first + 1)
        dropped = tuple(self._entries[:n])
        del self._entries[:n]
        self._first += n
        return dropped

    def position_of(self, txn_id: int) -> int:
        try:
            return self._txn_positions[txn_id]
        except KeyError:
            raise UnresolvableNameError(txn_id) from None

    def order_commits(self, after: int = 0) -> list[LogEntry]:
        return [e for e in self._entries if e.position > after and isinstance(e.kind, OrderCommit)]

    def dump(self) -> str:
        lines = [f"#\tmode\t{self.mode}\tfirst\t{self._first}\tfinal_through\t{self._final_through}"]
        lines.extend(e.dump_line() for e in self._entries)
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> Ledger:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split("\t")
        if header[0] != "#" or header[1] != "mode":
            raise ValueError("ledger dump is missing its header line")
        meta = dict(zip(header[1::2], header[2::2]))
        ledger = cls(parse_mode(meta["mode"]))
        ledger._first = int(meta["first"])
        for ln in lines[1:]:
            pos, kind, tick, digest, body = ln.split("\t", 4)
            entry = LogEntry(int(pos), _KINDS[kind].from_body(json.loads(body)), int(tick))
            if entry.digest().hex() != digest:
                raise CallDataIntegrityError(f"ledger line {pos} fails its digest")
            if entry.position != ledger.head + 1:
                raise ValueError(f"ledger dump positions are not dense at {pos}")
            ledger._entries.append(entry)
            if isinstance(entry.kind, OrderCommit):
                for t in entry.kind.txn_ids:
                    ledger._txn_positions[t] = entry.position
        ledger._final_through = int(meta["final_through"])
        return ledger


class LedgerRegistry:
    """Resolve transaction ids to bodies through the log and availability store."""

    def __init__(self, ledger: Ledger, store: AvailabilityStore):
        self.ledger = ledger
        self.store = store

    def __getitem__(self, txn_id: int) -> Transaction:
        entry = self.ledger.entry(self.ledger.position_of(txn_id))
        commit = entry.kind
        ref = commit.refs[commit.txn_ids.index(txn_id)]
        payload = self.store.fetch(ref)
        if payload is None:
            raise CallDataUnavailableError(txn_id)
        t = decode_transaction(payload)
        if t.txn_id != txn_id:
            raise CallDataIntegrityError(f"payload for txn {txn_id} names txn {t.txn_id}")
        return t


def order_final(ledger: Ledger, store: AvailabilityStore, position: int) -> bool:
    """An OrderCommit is order-final once LogFinal with all callData available."""
    entry = ledger.entry(position)
    if not isinstance(entry.kind, OrderCommit):
        raise ValueError(f"position {position} is not an OrderCommit")
    return ledger.is_final(position) and all(store.is_available(r) for r in entry.kind.refs)
