"""State-value finality by committee: discrepancy detection and resolution.

A small committee sampled uniformly from the unslashed pool executes each
batch (DD). Unanimity commits; any disagreement escalates to the whole pool
(DR), whose plurality answer wins, and DD members that disagreed with it are
slashed. The optimistic challenge-window strategy lives here too, for
comparison.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

from .vmstate import State, StateCommitment, commit


class InfeasibleCommitteeError(ValueError):
    pass


class NoResolutionError(RuntimeError):
    pass


class EquivocationError(ValueError):
    pass


def _digest(*parts: bytes) -> StateCommitment:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return StateCommitment(h.digest())


@dataclass(frozen=True)
class AlwaysWrong:
    digest: StateCommitment = field(default_factory=lambda: _digest(b"always-wrong"))


@dataclass(frozen=True)
class ColludingWrong:
    """All colluders report the same wrong digest, derived from the true one."""


@dataclass(frozen=True)
class Copycat:
    """Copies the first non-copycat report in committee-id order.

    With nobody to copy it falls back to `seed`, or to honest execution if
    `seed` is ``None``.
    """

    seed: StateCommitment | None = None


@dataclass(frozen=True)
class CheatWithProb:
    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("cheat probability must lie in [0, 1]")


ByzantineStrategy = Union[AlwaysWrong, ColludingWrong, Copycat, CheatWithProb]


def strategy_from_config(name: str, p: float | None = None) -> ByzantineStrategy:
    if name == "always_wrong":
        return AlwaysWrong()
    if name == "colluding":
        return ColludingWrong()
    if name == "copycat":
        return Copycat()
    if name == "cheat_prob":
        if p is None:
            raise ValueError("strategy cheat_prob needs a probability p")
        return CheatWithProb(p)
    raise ValueError(f"unknown byzantine strategy {name!r}")


@dataclass
class Node:
    node_id: int
    honest: bool = True
    stake: int = 100
    slashed: bool = False
    strategy: ByzantineStrategy | None = None


class NodePool:
    def __init__(self, nodes: Iterable[Node]):
        self.nodes: dict[int, Node] = {}
        for n in nodes:
            if n.node_id in self.nodes:
                raise ValueError(f"duplicate node id {n.node_id}")
            if n.stake <= 0 and not n.slashed:
                raise ValueError(f"node {n.node_id} needs positive stake")
            if not n.honest and n.strategy is None:
                raise ValueError(f"byzantine node {n.node_id} has no strategy")
            self.nodes[n.node_id] = n

    @classmethod
    def build(cls, T: int, B: int, strategy: ByzantineStrategy | Sequence[ByzantineStrategy] = ColludingWrong(),
              stake: int = 100, rng: random.Random | None = None) -> NodePool:
        """T nodes, B of them Byzantine; which ids are Byzantine is drawn from `rng`
        (or the first B ids without one). A strategy sequence is cycled."""
        if not 0 <= B <= T:
            raise ValueError("need 0 <= B <= T")
        bad = set(rng.sample(range(T), B)) if rng else set(range(B))
        strategies = [strategy] if not isinstance(strategy, Sequence) else list(strategy)
        nodes, k = [], 0
        for i in range(T):
            if i in bad:
                nodes.append(Node(i, False, stake, strategy=strategies[k % len(strategies)]))
                k += 1
            else:
                nodes.append(Node(i, True, stake))
        return cls(nodes)

    @property
    def T(self) -> int:
        return len(self.nodes)

    @property
    def B(self) -> int:
        return sum(not n.honest for n in self.nodes.values())

    def unslashed(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if not n.slashed)

    @property
    def strategies(self) -> dict[int, ByzantineStrategy]:
        return {i: n.strategy for i, n in self.nodes.items() if not n.honest}

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]


def sample_committee(pool: NodePool, C: int, rng: random.Random) -> tuple[int, ...]:
    """Uniform sample without replacement from the unslashed nodes (not stake weighted)."""
    live = pool.unslashed()
    if not 1 <= C <= len(live):
        raise InfeasibleCommitteeError(f"committee size {C} with {len(live)} unslashed nodes")
    return tuple(sorted(rng.sample(live, C)))


@dataclass(frozen=True)
class CommitteeReport:
    node_id: int
    claimed: StateCommitment


class ReportStore:
    """At most one signed report per node per batch."""

    def __init__(self):
        self._reports: dict[tuple[int, int], StateCommitment] = {}

    def submit(self, batch_id: int, report: CommitteeReport):
        key = (batch_id, report.node_id)
        if key in self._reports:
            raise EquivocationError(f"node {report.node_id} already reported on batch {batch_id}")
        self._reports[key] = report.claimed

    def reports(self, batch_id: int) -> list[CommitteeReport]:
        return [CommitteeReport(n, c) for (b, n), c in sorted(self._reports.items()) if b == batch_id]


def true_commitment(batch, input_state: State, semantics: Callable | None = None) -> StateCommitment:
    if semantics is None:
        from .txn import execute as semantics
    s = input_state
    for t in batch:
        s = semantics(t, s).new_state
    return commit(s)


def _claims(members: Sequence[int], truth: StateCommitment,
            strategies: Mapping[int, ByzantineStrategy], rng: random.Random | None) -> list[CommitteeReport]:
    direct: dict[int, StateCommitment] = {}
    for m in members:
        s = strategies.get(m)
        if s is None:
            direct[m] = truth
        elif isinstance(s, AlwaysWrong):
            direct[m] = s.digest
        elif isinstance(s, ColludingWrong):
            direct[m] = _digest(b"colluding:", truth.digest)
        elif isinstance(s, CheatWithProb):
            if rng is None:
                raise ValueError("CheatWithProb needs an rng")
            cheat = rng.random() < s.p
            direct[m] = _digest(b"cheat:", m.to_bytes(8, "little"), truth.digest) if cheat else truth
    source = next((direct[m] for m in members if m in direct), None)
    out = []
    for m in members:
        if m in direct:
            out.append(CommitteeReport(m, direct[m]))
        else:
            seed = strategies[m].seed
            out.append(CommitteeReport(m, source or seed or truth))
    return out


@dataclass(frozen=True)
class DdOutcome:
    reports: tuple[CommitteeReport, ...]
    truth: StateCommitment

    @property
    def agreed(self) -> StateCommitment | None:
        """The unanimous commitment, or ``None`` on a discrepancy."""
        claims = {r.claimed for r in self.reports}
        return claims.pop() if len(claims) == 1 else None

    @property
    def discrepancy(self) -> bool:
        return self.agreed is None

    @property
    def safety_failure(self) -> bool:
        a = self.agreed
        return a is not None and a != self.truth


def run_dd(committee: Sequence[int], batch, input_state: State,
           strategies: Mapping[int, ByzantineStrategy], *, rng: random.Random | None = None,
           truth: StateCommitment | None = None, semantics: Callable | None = None,
           store: ReportStore | None = None, batch_id: int = 0) -> DdOutcome:
    """Discrepancy detection: every member reports, commit only on unanimity."""
    if not committee:
        raise InfeasibleCommitteeError("empty committee")
    members = sorted(committee)
    if truth is None:
        truth = true_commitment(batch, input_state, semantics)
    reports = _claims(members, truth, strategies, rng)
    if store is not None:
        for r in reports:
            store.submit(batch_id, r)
    return DdOutcome(tuple(reports), truth)


@dataclass(frozen=True)
class DrResult:
    commitment: StateCommitment
    truth: StateCommitment
    ambiguous: bool
    reports: tuple[CommitteeReport, ...]

    @property
    def safety_failure(self) -> bool:
        return self.commitment != self.truth


def run_dr(pool: NodePool, batch, input_state: State,
           strategies: Mapping[int, ByzantineStrategy] | None = None, *,
           rng: random.Random | None = None, truth: StateCommitment | None = None,
           semantics: Callable | None = None) -> DrResult:
    """Discrepancy resolution: plurality vote of every unslashed node.

    Ties go to the lowest digest and are flagged ambiguous.
    """
    live = pool.unslashed()
    if not live:
        raise NoResolutionError("no unslashed nodes to resolve the discrepancy")
    if strategies is None:
        strategies = pool.strategies
    if truth is None:
        truth = true_commitment(batch, input_state, semantics)
    reports = _claims(live, truth, strategies, rng)
    counts = Counter(r.claimed for r in reports)
    top = max(counts.values())
    leaders = sorted((c for c, n in counts.items() if n == top), key=lambda c: c.digest)
    return DrResult(leaders[0], truth, len(leaders) > 1, tuple(reports))


@dataclass(frozen=True)
class SlashEvent:
    node_id: int
    amount: int
    honest: bool


def slash(dd_reports: Iterable[CommitteeReport], dr_result: DrResult | StateCommitment,
          pool: NodePool, penalty=Fraction(1)) -> list[SlashEvent]:
    """Slash every DD reporter whose claim differs from the DR outcome."""
    resolved = dr_result.commitment if isinstance(dr_result, DrResult) else dr_result
    penalty = Fraction(penalty)
    if not 0 <= penalty <= 1:
        raise ValueError("penalty is a stake fraction in [0, 1]")
    events = []
    for r in dd_reports:
        node = pool[r.node_id]
        if r.claimed == resolved or node.slashed:
            continue
        amount = int(penalty * node.stake)
        node.stake -= amount
        node.slashed = True
        events.append(SlashEvent(node.node_id, amount, node.honest))
    return events


@dataclass(frozen=True)
class AcceptedAt:
    tick: int
    safety_failure: bool = False


@dataclass(frozen=True)
class Reverted:
    """A challenge landed; the executor is slashed and the challenger rewarded."""

    challenge_tick: int


def optimistic_assert(assert_tick: int, window: int, validators: int, cheat: bool,
                      rng: random.Random) -> AcceptedAt | Reverted:
    """Disputable assertion posted at `assert_tick` with a `window`-tick dispute period."""
    if window <= 0:
        raise ValueError("dispute window must be positive")
    if cheat and validators >= 1:
        return Reverted(rng.randint(assert_tick + 1, assert_tick + window))
    return AcceptedAt(assert_tick + window, safety_failure=cheat)
