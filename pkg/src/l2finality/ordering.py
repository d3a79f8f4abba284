"""The VM job queue: mempool, ordering policies and the sandwich adversary."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .txn import (ASSET, NUMERAIRE, ExecOutcome, SwapBuy, SwapSell, Transaction,
                  swap_output)
from .vmstate import Key, KeyKind, State


class DuplicateTransactionError(ValueError):
    pass


class NotFrontRunnableError(ValueError):
    pass


class Mempool:
    def __init__(self, txns: Iterable[Transaction] = ()):
        self._pending: dict[int, Transaction] = {}
        for t in txns:
            self.add(t)

    def add(self, t: Transaction):
        if t.txn_id in self._pending:
            raise DuplicateTransactionError(f"txn {t.txn_id} already pending")
        self._pending[t.txn_id] = t

    def remove(self, txn_ids: Iterable[int]):
        for i in txn_ids:
            self._pending.pop(i, None)

    def __contains__(self, txn_id):
        return txn_id in self._pending

    def __iter__(self):
        return iter(self._pending.values())

    def __len__(self):
        return len(self._pending)


def _arrival_key(t: Transaction):
    return (t.arrival_time, t.txn_id)


@dataclass(frozen=True)
class ArrivalOrder:
    def order(self, txns: Sequence[Transaction]) -> list[Transaction]:
        return sorted(txns, key=_arrival_key)

    def __str__(self):
        return "arrival"


@dataclass(frozen=True)
class GasPriceThenArrival:
    def order(self, txns: Sequence[Transaction]) -> list[Transaction]:
        return sorted(txns, key=lambda t: (-t.gas_price, t.arrival_time, t.txn_id))

    def __str__(self):
        return "gas_price"


@dataclass(frozen=True)
class RandomPermutation:
    seed: int = 0

    def order(self, txns: Sequence[Transaction]) -> list[Transaction]:
        out = sorted(txns, key=_arrival_key)
        random.Random(self.seed).shuffle(out)
        return out

    def __str__(self):
        return f"random:{self.seed}"


OrderingPolicy = Union[ArrivalOrder, GasPriceThenArrival, RandomPermutation]


def parse_policy(text: str) -> OrderingPolicy:
    if text == "arrival":
        return ArrivalOrder()
    if text == "gas_price":
        return GasPriceThenArrival()
    if text.startswith("random:"):
        return RandomPermutation(int(text.split(":", 1)[1]))
    raise ValueError(f"unknown ordering policy {text!r} (arrival | gas_price | random:<seed>)")


def schedule(policy: OrderingPolicy, mempool: Mempool | Iterable[Transaction],
             batch_size: int) -> list[Transaction]:
    """The first `batch_size` transactions of the policy's total order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return policy.order(list(mempool))[:batch_size]


@dataclass(frozen=True)
class SandwichPlan:
    front: Transaction
    victim: Transaction
    back: Transaction

    @property
    def txns(self) -> tuple[Transaction, Transaction, Transaction]:
        return (self.front, self.victim, self.back)


def inject_sandwich(adversary: int, victim: Transaction, state_view: State, *,
                    front_amount: int, epsilon: int = 1, front_id: int, back_id: int,
                    arrival_time: int | None = None, exit_fraction: Fraction | float = 1,
                    gas_limit: int | None = None) -> SandwichPlan:
    """Wrap `victim` in a front-run and a trailing pseudo-inverse.

    The front transaction trades in the victim's direction at a gas price
    `epsilon` above the victim's; the back transaction unwinds
    ``exit_fraction`` of the predicted proceeds (predicted on `state_view`)
    at `epsilon` below.
    """
    a = victim.action
    if not isinstance(a, (SwapBuy, SwapSell)):
        raise NotFrontRunnableError(f"txn {victim.txn_id} is not a swap")
    if victim.gas_price < epsilon:
        raise ValueError("epsilon exceeds the victim's gas price")
    r_num = state_view.get(Key.reserve(a.pool, NUMERAIRE))
    r_asset = state_view.get(Key.reserve(a.pool, ASSET))
    if isinstance(a, SwapBuy):
        acquired = swap_output(r_num, r_asset, front_amount)
    else:
        acquired = swap_output(r_asset, r_num, front_amount)
    unwind = int(Fraction(exit_fraction) * acquired)
    front_action = type(a)(a.pool, front_amount)
    back_action = (SwapSell if isinstance(a, SwapBuy) else SwapBuy)(a.pool, unwind)
    when = victim.arrival_time if arrival_time is None else arrival_time
    limit = victim.gas_limit if gas_limit is None else gas_limit
    front = Transaction(front_id, adversary, front_action, limit, victim.gas_price + epsilon,
                        True, when)
    back = Transaction(back_id, adversary, back_action, limit, victim.gas_price - epsilon,
                       True, when)
    return SandwichPlan(front, victim, back)


@dataclass
class Trace:
    """Executed transactions with their outcomes, starting from `initial`."""

    initial: State
    steps: list[tuple[Transaction, ExecOutcome]] = field(default_factory=list)

    def record(self, t: Transaction, outcome: ExecOutcome):
        self.steps.append((t, outcome))

    @property
    def final(self) -> State:
        return self.steps[-1][1].new_state if self.steps else self.initial


def attacker_profit(trace: Trace, adversary: int) -> int:
    """Change in the adversary's wealth in numeraire, gas included.

    Numeraire balance changes count at face value; any change in asset holdings
    is marked at the final pool's spot price, rounded toward zero.
    """
    start, end = trace.initial, trace.final
    acct = Key.account(adversary)
    profit = Fraction(end.get(acct) - start.get(acct))
    pools = {k.ident for k in list(start.keys()) + list(end.keys())
             if k.kind is KeyKind.CONTRACT_SLOT and k.index == adversary}
    for p in sorted(pools):
        delta = end.get(Key.slot(p, adversary)) - start.get(Key.slot(p, adversary))
        r_asset = end.get(Key.reserve(p, ASSET))
        if delta and r_asset:
            profit += Fraction(delta * end.get(Key.reserve(p, NUMERAIRE)), r_asset)
    return int(profit)
