"""Checkpoint lifecycle: declaration, gated finalization, GC and replay recovery.

Checkpoint export format (UTF-8, tab separated ``key value`` lines)::

    checkpoint_id   <int>
    named_position  <int>       log position of the last included OrderCommit
    commitment      <hex>       digest of the state below
    state           <hex>       canonical state serialization (see vmstate)
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence, Union

from .ledger import (AvailabilityStore, Cas, CheckpointDecl, DisputableAssertion, Ledger,
                     OrderCommit, RecordsUnavailableError, StateCommit)
from .txn import Status, Transaction, decode_transaction
from .vmstate import State, StateCommitment, commit, deserialize_state, serialize_state


class PrematureCheckpointError(ValueError):
    pass


class UnfinalizedCandidateError(ValueError):
    pass


class UnrecoverableError(RuntimeError):
    """Replay needs callData that is no longer (or never was) available."""


@dataclass(frozen=True)
class BlockHeight:
    height: int

    def satisfied(self, head: int, tick: int, attestations: int | None = None) -> bool:
        return head >= self.height

    def to_dict(self) -> dict:
        return {"block_height": self.height}


@dataclass(frozen=True)
class TimeOracle:
    """`quorum` of the simulated oracles must attest that `target_tick` has passed.

    Oracle ``i`` starts attesting at ``attest_ticks[i]``; honest oracles flip
    at the target itself, late or broken ones later (or never, if negative).
    """

    quorum: int
    attest_ticks: tuple[int, ...]
    target_tick: int

    def __post_init__(self):
        object.__setattr__(self, "attest_ticks", tuple(self.attest_ticks))
        if not 1 <= self.quorum <= len(self.attest_ticks):
            raise ValueError("time-oracle quorum must be between 1 and the oracle count")

    def attestations(self, tick: int) -> int:
        return sum(0 <= t <= tick for t in self.attest_ticks)

    def satisfied(self, head: int, tick: int, attestations: int | None = None) -> bool:
        count = self.attestations(tick) if attestations is None else attestations
        return tick >= self.target_tick and count >= self.quorum

    def to_dict(self) -> dict:
        return {"time_oracle": {"quorum": self.quorum, "attest_ticks": list(self.attest_ticks),
                                "target_tick": self.target_tick}}


Gate = Union[BlockHeight, TimeOracle]


def gate_from_dict(d: Mapping) -> Gate:
    if "block_height" in d:
        return BlockHeight(int(d["block_height"]))
    if "time_oracle" in d:
        o = d["time_oracle"]
        ticks = o.get("attest_ticks")
        if ticks is None:
            ticks = [o["target_tick"]] * int(o["oracles"])
        return TimeOracle(int(o["quorum"]), tuple(ticks), int(o["target_tick"]))
    raise ValueError(f"unknown checkpoint gate {dict(d)!r}")


@dataclass(frozen=True)
class Checkpoint:
    checkpoint_id: int
    named_position: int
    value: State
    declared_at: int = 0
    gate: Gate | None = None
    finalized_at: int | None = None
    decl_position: int | None = None

    @classmethod
    def genesis(cls, state: State) -> Checkpoint:
        return cls(0, 0, state, 0, None, 0, None)

    @property
    def commitment(self) -> StateCommitment:
        return commit(self.value)

    @property
    def finalized(self) -> bool:
        return self.finalized_at is not None

    def export(self) -> str:
        return "".join([
            f"checkpoint_id\t{self.checkpoint_id}\n",
            f"named_position\t{self.named_position}\n",
            f"commitment\t{self.commitment.hex()}\n",
            f"state\t{serialize_state(self.value).hex()}\n",
        ])

    @classmethod
    def load(cls, text: str) -> Checkpoint:
        fields = dict(line.split("\t", 1) for line in text.splitlines() if line.strip())
        value = deserialize_state(bytes.fromhex(fields["state"]))
        if commit(value).hex() != fields["commitment"]:
            raise ValueError("checkpoint export: state does not match its commitment")
        return cls(int(fields["checkpoint_id"]), int(fields["named_position"]), value,
                   finalized_at=0)


class CheckpointRegistry:
    """Declared and finalized checkpoints of one run, starting from genesis."""

    def __init__(self, ledger: Ledger, genesis: State, min_gap: int = 1000):
        if min_gap < 1:
            raise ValueError("minimum checkpoint gap must be >= 1")
        self.ledger = ledger
        self.min_gap = min_gap
        self.finalized: list[Checkpoint] = [Checkpoint.genesis(genesis)]
        self.pending: list[Checkpoint] = []

    @property
    def latest(self) -> Checkpoint:
        return self.finalized[-1]

    def _last_named(self) -> int:
        return (self.pending or self.finalized)[-1].named_position

    def declare_checkpoint(self, named_position: int, gate: Gate, value: State, tick: int,
                           state_final: bool) -> Checkpoint:
        """Log a checkpoint decision for the state after `named_position`."""
        if named_position - self._last_named() < self.min_gap:
            raise PrematureCheckpointError(
                f"position {named_position} is within {self.min_gap} of the previous checkpoint")
        if not state_final or not self.ledger.is_final(named_position):
            raise UnfinalizedCandidateError(f"state at position {named_position} is not final")
        cid = len(self.finalized) + len(self.pending)
        decl = CheckpointDecl(cid, named_position, commit(value), gate)
        pos = self.ledger.append(decl, tick)
        cp = Checkpoint(cid, named_position, value, tick, gate, None, pos)
        self.pending.append(cp)
        return cp

    def relocate(self, dropped_positions: Mapping[int, int]):
        """Follow declarations that a reorg pushed to new log positions."""
        self.pending = [replace(c, decl_position=dropped_positions.get(c.decl_position, c.decl_position))
                        for c in self.pending]

    def advance(self, tick: int) -> list[Checkpoint]:
        """Finalize pending declarations whose gates are now satisfied, in order."""
        done = []
        while self.pending:
            cp = finalize_checkpoint(self.pending[0], self.ledger, tick)
            if cp is None:
                break
            self.pending.pop(0)
            self.finalized.append(cp)
            done.append(cp)
        return done


def finalize_checkpoint(declaration: Checkpoint, ledger: Ledger, tick: int,
                        attestations: int | None = None) -> Checkpoint | None:
    """The finalized checkpoint, or ``None`` while still pending."""
    if declaration.decl_position is None or declaration.decl_position > ledger.head:
        return None
    if not ledger.is_final(declaration.decl_position):
        return None
    if not declaration.gate.satisfied(ledger.head, tick, attestations):
        return None
    return replace(declaration, finalized_at=tick)


@dataclass(frozen=True)
class ReclaimReport:
    entries: int = 0
    payloads: int = 0
    bytes: int = 0


def garbage_collect(ledger: Ledger, store: AvailabilityStore,
                    checkpoint: Checkpoint | None) -> ReclaimReport:
    """Drop log entries and callData at or below a finalized checkpoint."""
    if checkpoint is None or not checkpoint.finalized or checkpoint.named_position < ledger.first_retained:
        return ReclaimReport()
    dropped = ledger.truncate_through(checkpoint.named_position)
    payloads = freed = 0
    for e in dropped:
        if isinstance(e.kind, OrderCommit):
            for ref in e.kind.refs:
                if isinstance(ref, Cas):
                    freed += store.reclaim(ref.digest)
                    payloads += 1
                else:
                    freed += len(ref.payload)
                    payloads += 1
    return ReclaimReport(len(dropped), payloads, freed)


def skipped_txns(ledger: Ledger) -> dict[int, tuple[int, ...]]:
    """Per batch, the transactions its state determination treated as implicitly aborted."""
    out: dict[int, tuple[int, ...]] = {}
    for e in ledger:
        if isinstance(e.kind, (StateCommit, DisputableAssertion)):
            out[e.kind.batch_id] = e.kind.skipped
    return out


def replay_suffix(ledger: Ledger, store: AvailabilityStore, checkpoint: Checkpoint,
                  through_batch: int | None = None) -> list[Transaction]:
    """Transactions committed after `checkpoint`, in log order.

    Only batches whose state was determined are included (or those up to
    `through_batch`); transactions their determination skipped are left out.
    """
    if checkpoint.named_position < ledger.first_retained - 1:
        raise UnrecoverableError("log entries after the checkpoint were reclaimed")
    skips = skipped_txns(ledger)
    out = []
    for e in ledger.order_commits(after=checkpoint.named_position):
        b = e.kind.batch_id
        if (through_batch is None and b not in skips) or (through_batch is not None and b > through_batch):
            break
        skip = set(skips.get(b, ()))
        for tid, ref in zip(e.kind.txn_ids, e.kind.refs):
            if tid in skip:
                continue
            try:
                payload = store.fetch(ref)
            except RecordsUnavailableError as exc:
                raise UnrecoverableError(f"callData for txn {tid} was reclaimed") from exc
            if payload is None:
                raise UnrecoverableError(f"callData for txn {tid} is unavailable")
            out.append(decode_transaction(payload))
    return out


@dataclass(frozen=True)
class ReplayResult:
    state: State
    statuses: dict[int, Status]
    flipped: int

    @property
    def commitment(self) -> StateCommitment:
        return commit(self.state)


def recover_replay(checkpoint: Checkpoint, suffix: Sequence[Transaction], patched: Callable,
                   original: Mapping[int, Status] | None = None) -> ReplayResult:
    """Re-execute `suffix` from the checkpoint value under `patched` semantics.

    `flipped` counts transactions whose status differs from `original`.
    """
    s = checkpoint.value
    statuses = {}
    for t in suffix:
        out = patched(t, s)
        statuses[t.txn_id] = out.status
        s = out.new_state
    flipped = 0
    if original:
        flipped = sum(1 for tid, st in statuses.items() if tid in original and original[tid] != st)
    return ReplayResult(s, statuses, flipped)


def verify_chain_freshness(compromised: Sequence[bool], N: int, M: int, rng: random.Random, *,
                           true_head: StateCommitment, fork_head: StateCommitment) -> StateCommitment | None:
    """Query N random observers; return the head at least M of them agree on.

    Honest observers report `true_head`, compromised ones `fork_head`.
    ``None`` means ambiguous (no qualifying head, or more than one).
    """
    if not 1 <= M <= N <= len(compromised):
        raise ValueError("need 1 <= M <= N <= population size")
    sample = rng.sample(range(len(compromised)), N)
    reports = [fork_head if compromised[i] else true_head for i in sample]
    winners = {h for h in set(reports)
               if reports.count(h) >= M and isinstance(h, StateCommitment)}
    return winners.pop() if len(winners) == 1 else None
