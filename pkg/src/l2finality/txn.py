"""Transactions as curried state transforms.

A transaction splits into a call component (the contract effect, which may
abort and then returns its input state) and a gas component (units consumed,
or ``None`` when the gas limit would be exceeded). :func:`execute` composes
the two: gas is debited from the sender after the call component runs.

Token conventions used by the built-in contracts:

* ``Key.account(a)`` holds account ``a``'s numeraire balance.
* ``Key.reserve(p, NUMERAIRE)`` and ``Key.reserve(p, ASSET)`` are pool ``p``'s
  reserves; pool ``p`` also acts as the asset token contract, so an account's
  asset holding lives at ``Key.slot(p, a)``.
* Gas fees are credited to the account :data:`FEE_SINK`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from typing import Union

from .vmstate import MAX_U64, Key, KeyKind, State, check_value

FEE_SINK = 0
NUMERAIRE = 0
ASSET = 1


@dataclass(frozen=True, slots=True)
class Transfer:
    to: int
    amount: int


@dataclass(frozen=True, slots=True)
class SwapBuy:
    """Pay ``amount_in`` numeraire into the pool, receive the pool's asset."""

    pool: int
    amount_in: int


@dataclass(frozen=True, slots=True)
class SwapSell:
    """Pay ``amount_in`` asset into the pool, receive numeraire."""

    pool: int
    amount_in: int


@dataclass(frozen=True, slots=True)
class NoOp:
    pass


@dataclass(frozen=True, slots=True)
class Malformed:
    """callData that does not decode to any contract entry point."""

    data: bytes = b""

    def __post_init__(self):
        if not isinstance(decode_action(self.data), Malformed):
            raise ValueError("Malformed payload decodes to a valid action")


Action = Union[Transfer, SwapBuy, SwapSell, NoOp, Malformed]

_TAGS = {Transfer: 1, SwapBuy: 2, SwapSell: 3, NoOp: 4}
_AMOUNT_ACTION = struct.Struct("<BQ16s")


def encode_action(action: Action) -> bytes:
    if isinstance(action, Malformed):
        return action.data
    if isinstance(action, NoOp):
        return bytes([_TAGS[NoOp]])
    target = action.to if isinstance(action, Transfer) else action.pool
    amount = action.amount if isinstance(action, Transfer) else action.amount_in
    return _AMOUNT_ACTION.pack(_TAGS[type(action)], target, amount.to_bytes(16, "little"))


def decode_action(data: bytes) -> Action:
    """Parse callData; anything unparseable is a :class:`Malformed` action."""
    if data == b"\x04":
        return NoOp()
    if len(data) == _AMOUNT_ACTION.size and data[0] in (1, 2, 3):
        tag, target, raw = _AMOUNT_ACTION.unpack(data)
        amount = int.from_bytes(raw, "little")
        return {1: Transfer, 2: SwapBuy, 3: SwapSell}[tag](target, amount)
    return _malformed(data)


def _malformed(data: bytes) -> Malformed:
    m = object.__new__(Malformed)
    object.__setattr__(m, "data", bytes(data))
    return m


@dataclass(frozen=True, slots=True)
class Transaction:
    txn_id: int
    sender: int
    action: Action
    gas_limit: int
    gas_price: int
    signed: bool = True
    arrival_time: int = 0

    def __post_init__(self):
        if self.gas_limit <= 0:
            raise ValueError(f"txn {self.txn_id}: gas_limit must be positive")
        if self.gas_price < 0:
            raise ValueError(f"txn {self.txn_id}: gas_price must be non-negative")
        for name in ("txn_id", "sender", "gas_limit", "arrival_time"):
            v = getattr(self, name)
            if not 0 <= v <= MAX_U64:
                raise ValueError(f"txn {self.txn_id}: {name} must fit in 64 bits")
        check_value(self.gas_price)

    @property
    def max_fee(self) -> int:
        return self.gas_limit * self.gas_price

    def with_(self, **changes) -> Transaction:
        return replace(self, **changes)


_TXN_HEADER = struct.Struct("<QQQ16sBQ")


def encode_transaction(t: Transaction) -> bytes:
    """Envelope (id, sender, gas limit, gas price, signature flag, arrival) + callData."""
    head = _TXN_HEADER.pack(t.txn_id, t.sender, t.gas_limit,
                            t.gas_price.to_bytes(16, "little"), int(t.signed), t.arrival_time)
    return head + encode_action(t.action)


def decode_transaction(data: bytes) -> Transaction:
    if len(data) < _TXN_HEADER.size:
        raise ValueError("transaction payload shorter than its envelope")
    txn_id, sender, gas_limit, price, signed, arrival = _TXN_HEADER.unpack_from(data)
    return Transaction(txn_id, sender, decode_action(data[_TXN_HEADER.size:]), gas_limit,
                       int.from_bytes(price, "little"), bool(signed), arrival)


@dataclass(frozen=True, slots=True)
class CostTable:
    noop: int = 10
    transfer: int = 21
    swap: int = 100
    abort_fee: int = 5

    @classmethod
    def from_config(cls, cfg: dict | None) -> CostTable:
        cfg = dict(cfg or {})
        unknown = set(cfg) - {"noop", "transfer", "swap", "abort_fee"}
        if unknown:
            raise ValueError(f"unknown gas cost entries: {sorted(unknown)}")
        table = cls(**cfg)
        for name in ("noop", "transfer", "swap", "abort_fee"):
            if getattr(table, name) < 0:
                raise ValueError(f"gas cost {name} must be non-negative")
        return table

    def cost(self, action: Action) -> int:
        if isinstance(action, NoOp):
            return self.noop
        if isinstance(action, Transfer):
            return self.transfer
        if isinstance(action, (SwapBuy, SwapSell)):
            return self.swap
        return self.abort_fee


DEFAULT_COSTS = CostTable()


class Status(enum.Enum):
    COMMITTED = "committed"
    ABORTED = "aborted"
    GAS_EXHAUSTED = "gas_exhausted"


@dataclass(frozen=True, slots=True)
class ExecOutcome:
    status: Status
    gas_used: int
    new_state: State
    reason: str | None = None
    gas_underpaid: bool = False


@dataclass(frozen=True, slots=True)
class CallResult:
    state: State
    abort_reason: str | None = None

    @property
    def aborted(self) -> bool:
        return self.abort_reason is not None


def swap_output(reserve_in: int, reserve_out: int, amount_in: int) -> int:
    """Constant-product output, no trading fee, rounded down."""
    return reserve_out * amount_in // (reserve_in + amount_in)


def _spendable(t: Transaction, s: State) -> int:
    return max(s.get(Key.account(t.sender)) - t.max_fee, 0)


def call_component(t: Transaction, s: State, *, unchecked_sell: bool = False) -> CallResult:
    """Contract effect of `t` on `s`; aborts return `s` itself.

    ``unchecked_sell`` plants a bug in the pool contract: a sell larger than
    the seller's holding only debits what is held but pays for the full amount.
    """
    a = t.action
    if isinstance(a, NoOp):
        return CallResult(s)
    if isinstance(a, Malformed):
        return CallResult(s, "malformed callData")

    sender_key = Key.account(t.sender)
    if isinstance(a, Transfer):
        if a.amount > _spendable(t, s):
            return CallResult(s, "insufficient funds")
        if a.to == t.sender:
            return CallResult(s)
        to_key = Key.account(a.to)
        return CallResult(s.update({sender_key: s[sender_key] - a.amount,
                                    to_key: s[to_key] + a.amount}))

    num_key, asset_key = Key.reserve(a.pool, NUMERAIRE), Key.reserve(a.pool, ASSET)
    r_num, r_asset = s[num_key], s[asset_key]
    if r_num == 0 or r_asset == 0:
        return CallResult(s, "no such pool")
    if a.amount_in == 0:
        return CallResult(s, "zero swap amount")
    holding_key = Key.slot(a.pool, t.sender)

    if isinstance(a, SwapBuy):
        if a.amount_in > _spendable(t, s):
            return CallResult(s, "insufficient funds")
        out = swap_output(r_num, r_asset, a.amount_in)
        if out == 0:
            return CallResult(s, "zero swap output")
        return CallResult(s.update({
            sender_key: s[sender_key] - a.amount_in,
            num_key: r_num + a.amount_in,
            asset_key: r_asset - out,
            holding_key: s[holding_key] + out,
        }))

    held = s[holding_key]
    if a.amount_in > held and not unchecked_sell:
        return CallResult(s, "insufficient asset holding")
    out = swap_output(r_asset, r_num, a.amount_in)
    if out == 0:
        return CallResult(s, "zero swap output")
    return CallResult(s.update({
        holding_key: held - min(held, a.amount_in),
        asset_key: r_asset + a.amount_in,
        num_key: r_num - out,
        sender_key: s[sender_key] + out,
    }))


def gas_component(t: Transaction, s: State, costs: CostTable = DEFAULT_COSTS) -> int | None:
    """Gas units consumed by `t`, or ``None`` if that exceeds the gas limit."""
    used = costs.cost(t.action)
    return None if used > t.gas_limit else used


def _charge(s: State, sender: int, owed: int) -> tuple[State, bool]:
    key = Key.account(sender)
    paid = min(s[key], owed)
    if sender == FEE_SINK or paid == 0:
        return s, paid < owed
    sink = Key.account(FEE_SINK)
    return s.update({key: s[key] - paid, sink: s[sink] + paid}), paid < owed


def execute(t: Transaction, s: State, costs: CostTable = DEFAULT_COSTS, *,
            unchecked_sell: bool = False) -> ExecOutcome:
    used = gas_component(t, s, costs)
    if used is None:
        new, under = _charge(s, t.sender, t.max_fee)
        return ExecOutcome(Status.GAS_EXHAUSTED, t.gas_limit, new, "gas limit exceeded", under)
    call = call_component(t, s, unchecked_sell=unchecked_sell)
    new, under = _charge(call.state, t.sender, used * t.gas_price)
    status = Status.ABORTED if call.aborted else Status.COMMITTED
    return ExecOutcome(status, used, new, call.abort_reason, under)


KNOWN_BUGS = frozenset({"unchecked_sell"})


@dataclass(frozen=True)
class Semantics:
    """A transaction interpreter: cost table plus any planted bugs.

    Instances are callable with the same signature as :func:`execute` minus the
    keyword options, so they slot in wherever an interpreter is expected.
    """

    costs: CostTable = DEFAULT_COSTS
    bugs: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "bugs", frozenset(self.bugs))
        unknown = self.bugs - KNOWN_BUGS
        if unknown:
            raise ValueError(f"unknown planted bugs: {sorted(unknown)}")

    def __call__(self, t: Transaction, s: State) -> ExecOutcome:
        return execute(t, s, self.costs, unchecked_sell="unchecked_sell" in self.bugs)

    def patched(self, *fixed: str) -> Semantics:
        """The same interpreter with the named bugs (default: all) fixed."""
        return replace(self, bugs=self.bugs - set(fixed or self.bugs))


class Wft(enum.Enum):
    WELL_FORMED = "well_formed"
    NO_SIGNATURE = "no_signature"
    INSUFFICIENT_POSTING_FEE = "insufficient_posting_fee"
    INSUFFICIENT_GAS_COVER = "insufficient_gas_cover"

    @property
    def ok(self) -> bool:
        return self is Wft.WELL_FORMED


def check_wft(t: Transaction, balance_estimate: int, posting_fee: int,
              strict_gas_check: bool = False) -> Wft:
    """Admission checks only; the callData stays opaque here."""
    if not t.signed:
        return Wft.NO_SIGNATURE
    if balance_estimate < posting_fee:
        return Wft.INSUFFICIENT_POSTING_FEE
    if strict_gas_check and balance_estimate < posting_fee + t.max_fee:
        return Wft.INSUFFICIENT_GAS_COVER
    return Wft.WELL_FORMED


def worst_case_debit(t: Transaction) -> int:
    """Most numeraire `t` can remove from its sender's balance."""
    a = t.action
    spend = a.amount if isinstance(a, Transfer) else a.amount_in if isinstance(a, SwapBuy) else 0
    return spend + t.max_fee


def token_totals(s: State) -> dict:
    """Supply per token: ``"numeraire"`` plus one ``("asset", pool)`` entry per pool."""
    totals: dict = {"numeraire": 0}
    for key, value in s.items():
        if key.kind is KeyKind.ACCOUNT_BALANCE:
            totals["numeraire"] += value
        elif key.kind is KeyKind.POOL_RESERVE:
            if key.index == NUMERAIRE:
                totals["numeraire"] += value
            else:
                totals[("asset", key.ident)] = totals.get(("asset", key.ident), 0) + value
        else:
            totals[("asset", key.ident)] = totals.get(("asset", key.ident), 0) + value
    return totals
