"""Scenario files: a versioned JSON document describing one simulation run.

See ``docs/scenario-schema.md`` for the field reference. Validation errors
name the offending field with a dotted path.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

from .checkpoint import Gate, gate_from_dict
from .committee import ByzantineStrategy, strategy_from_config
from .ledger import (AvailabilityPolicy, FinalityMode, Instant, Probabilistic,
                     parse_policy as parse_da_policy)
from .ordering import OrderingPolicy, parse_policy as parse_ordering
from .txn import (KNOWN_BUGS, Action, CostTable, Malformed, NoOp, Semantics, SwapBuy,
                  SwapSell, Transaction, Transfer)
from .vmstate import Key, State

SCHEMA_VERSION = 1
BUNDLED = ("honest-baseline", "sandwich-attack", "withholding", "byzantine-dd", "zero-day-replay")


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _req(d: dict, key: str, path: str):
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected an object")
    if key not in d:
        raise ScenarioError(f"{path}.{key}" if path else key, "required field missing")
    return d[key]


def _int(v, path, lo=None, hi=None) -> int:
    if not isinstance(v, int) or isinstance(v, bool):
        raise ScenarioError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ScenarioError(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ScenarioError(path, f"must be <= {hi}, got {v}")
    return v


def _num(v, path, lo=None, hi=None) -> float:
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    if lo is not None and v < lo:
        raise ScenarioError(path, f"must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ScenarioError(path, f"must be <= {hi}, got {v}")
    return v


def _check_keys(d: dict, allowed: set, path: str):
    if not isinstance(d, dict):
        raise ScenarioError(path or "<root>", "expected an object")
    extra = set(d) - allowed
    if extra:
        where = f"{path}.{sorted(extra)[0]}" if path else sorted(extra)[0]
        raise ScenarioError(where, "unknown field")


@dataclass(frozen=True)
class Coupled:
    validators: int = 100


@dataclass(frozen=True)
class Optimistic:
    window: int = 20
    validators: int = 1
    cheat_batches: frozenset = frozenset()


@dataclass(frozen=True)
class ByzantineGroup:
    count: int
    strategy: ByzantineStrategy


@dataclass(frozen=True)
class DdDr:
    T: int = 100
    C: int = 25
    byzantine: tuple[ByzantineGroup, ...] = ()
    penalty: Fraction = Fraction(1)
    stake: int = 100
    dd_ticks: int = 1
    dr_ticks: int = 3

    @property
    def B(self) -> int:
        return sum(g.count for g in self.byzantine)


@dataclass(frozen=True)
class Withhold:
    txn: int
    release_tick: int | None = None


@dataclass(frozen=True)
class Sandwich:
    account: int
    victims: tuple[int, ...]
    front_amount: int
    epsilon: int = 1
    lag: int = 0
    exit_fraction: Fraction = Fraction(1)


@dataclass(frozen=True)
class PlannedCheckpoint:
    at_tick: int
    gate: Gate


@dataclass
class Scenario:
    name: str
    seed: int
    ticks: int
    genesis: State
    workload: list[Transaction]
    log_mode: FinalityMode = field(default_factory=Instant)
    ordering: OrderingPolicy = None
    batch_size: int = 8
    strategy: Coupled | Optimistic | DdDr = field(default_factory=Coupled)
    da_mode: str = "inline"
    da_policy: AvailabilityPolicy = None
    withhold: tuple[Withhold, ...] = ()
    checkpoint_gap: int = 1000
    checkpoint_plan: tuple[PlannedCheckpoint, ...] = ()
    gc: bool = True
    sandwich: Sandwich | None = None
    strict_wft: bool = False
    posting_fee: int = 0
    semantics: Semantics = field(default_factory=Semantics)
    replay_patched: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        return _parse(d)

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError("<file>", f"invalid JSON: {exc}") from None
        return _parse(data)

    def with_overrides(self, **sections) -> Scenario:
        """Re-parse with top-level sections of the raw document replaced."""
        raw = copy.deepcopy(self.raw)
        raw.update(copy.deepcopy(sections))
        return _parse(raw)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("l2finality") / "scenarios" / f"{name}.json"))


def load_bundled(name: str) -> Scenario:
    if name not in BUNDLED:
        raise ValueError(f"no bundled scenario {name!r}; choose from {', '.join(BUNDLED)}")
    return Scenario.load(bundled_path(name))


_TOP = {"schema_version", "name", "seed", "ticks", "genesis", "workload", "log", "ordering",
        "strategy", "data_availability", "checkpoints", "adversary", "wft", "gas_costs",
        "planted_bug", "replay", "description"}


def _parse(d: dict) -> Scenario:
    _check_keys(d, _TOP, "")
    version = _req(d, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    seed = _int(_req(d, "seed", ""), "seed", 0, 2**64 - 1)
    ticks = _int(_req(d, "ticks", ""), "ticks", 1)
    genesis = _parse_genesis(_req(d, "genesis", ""))
    workload = _parse_workload(_req(d, "workload", ""))

    sc = Scenario(name=str(d.get("name", "unnamed")), seed=seed, ticks=ticks, genesis=genesis,
                  workload=workload, raw=copy.deepcopy(d))
    sc.log_mode = _parse_log(d.get("log", {"mode": "instant"}))
    o = d.get("ordering", {})
    _check_keys(o, {"policy", "batch_size"}, "ordering")
    try:
        sc.ordering = parse_ordering(o.get("policy", "arrival"))
    except ValueError as exc:
        raise ScenarioError("ordering.policy", str(exc)) from None
    sc.batch_size = _int(o.get("batch_size", 8), "ordering.batch_size", 1)
    sc.strategy = _parse_strategy(d.get("strategy", {"kind": "coupled"}))

    da = d.get("data_availability", {})
    _check_keys(da, {"mode", "policy", "withhold"}, "data_availability")
    sc.da_mode = da.get("mode", "inline")
    if sc.da_mode not in ("inline", "cas"):
        raise ScenarioError("data_availability.mode", "must be 'inline' or 'cas'")
    try:
        sc.da_policy = parse_da_policy(da.get("policy", "wait"))
    except ValueError as exc:
        raise ScenarioError("data_availability.policy", str(exc)) from None
    wh = []
    for i, w in enumerate(da.get("withhold", [])):
        p = f"data_availability.withhold[{i}]"
        _check_keys(w, {"txn", "release_tick"}, p)
        rel = w.get("release_tick")
        wh.append(Withhold(_int(_req(w, "txn", p), f"{p}.txn", 0),
                           None if rel is None else _int(rel, f"{p}.release_tick", 0)))
    sc.withhold = tuple(wh)
    if wh and sc.da_mode != "cas":
        raise ScenarioError("data_availability.withhold", "withholding needs mode 'cas'")
    if isinstance(sc.strategy, Coupled) and sc.da_mode != "inline":
        raise ScenarioError("data_availability.mode", "coupled execution keeps callData inline")

    cp = d.get("checkpoints", {})
    _check_keys(cp, {"min_gap", "plan", "gc"}, "checkpoints")
    sc.checkpoint_gap = _int(cp.get("min_gap", 1000), "checkpoints.min_gap", 1)
    sc.gc = bool(cp.get("gc", True))
    plan = []
    for i, item in enumerate(cp.get("plan", [])):
        p = f"checkpoints.plan[{i}]"
        _check_keys(item, {"at_tick", "gate"}, p)
        try:
            gate = gate_from_dict(_req(item, "gate", p))
        except (ValueError, KeyError, TypeError) as exc:
            raise ScenarioError(f"{p}.gate", str(exc)) from None
        plan.append(PlannedCheckpoint(_int(_req(item, "at_tick", p), f"{p}.at_tick", 1), gate))
    sc.checkpoint_plan = tuple(sorted(plan, key=lambda c: c.at_tick))

    adv = d.get("adversary", {})
    _check_keys(adv, {"sandwich"}, "adversary")
    if "sandwich" in adv:
        sc.sandwich = _parse_sandwich(adv["sandwich"], workload)

    wft = d.get("wft", {})
    _check_keys(wft, {"strict", "posting_fee"}, "wft")
    sc.strict_wft = bool(wft.get("strict", False))
    sc.posting_fee = _int(wft.get("posting_fee", 0), "wft.posting_fee", 0)

    try:
        costs = CostTable.from_config(d.get("gas_costs"))
    except (ValueError, TypeError) as exc:
        raise ScenarioError("gas_costs", str(exc)) from None
    bug = d.get("planted_bug")
    if bug is not None and bug not in KNOWN_BUGS:
        raise ScenarioError("planted_bug", f"unknown bug {bug!r}; known: {sorted(KNOWN_BUGS)}")
    sc.semantics = Semantics(costs, frozenset([bug] if bug else []))
    rp = d.get("replay", {})
    _check_keys(rp, {"patched"}, "replay")
    sc.replay_patched = bool(rp.get("patched", False))
    return sc


def _parse_genesis(g: dict) -> State:
    _check_keys(g, {"accounts", "pools", "holdings"}, "genesis")
    entries = {}
    accounts = g.get("accounts", {})
    if not isinstance(accounts, dict):
        raise ScenarioError("genesis.accounts", "expected an object of account -> balance")
    for a, bal in accounts.items():
        try:
            acct = int(a)
        except ValueError:
            raise ScenarioError(f"genesis.accounts.{a}", "account ids are integers") from None
        entries[Key.account(acct)] = _int(bal, f"genesis.accounts.{a}", 0)
    for i, pool in enumerate(g.get("pools", [])):
        p = f"genesis.pools[{i}]"
        _check_keys(pool, {"id", "numeraire", "asset"}, p)
        pid = _int(_req(pool, "id", p), f"{p}.id", 0)
        entries[Key.reserve(pid, 0)] = _int(_req(pool, "numeraire", p), f"{p}.numeraire", 1)
        entries[Key.reserve(pid, 1)] = _int(_req(pool, "asset", p), f"{p}.asset", 1)
    for i, h in enumerate(g.get("holdings", [])):
        p = f"genesis.holdings[{i}]"
        _check_keys(h, {"pool", "account", "amount"}, p)
        entries[Key.slot(_int(_req(h, "pool", p), f"{p}.pool", 0),
                         _int(_req(h, "account", p), f"{p}.account", 0))] = \
            _int(_req(h, "amount", p), f"{p}.amount", 0)
    return State(entries)


def parse_action(a, path: str) -> Action:
    if not isinstance(a, dict) or len(a) != 1:
        raise ScenarioError(path, "action is an object with exactly one kind")
    (kind, body), = a.items()
    if kind == "noop":
        return NoOp()
    if kind == "malformed":
        try:
            return Malformed(bytes.fromhex(body))
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{path}.malformed", str(exc)) from None
    if kind == "transfer":
        _check_keys(body, {"to", "amount"}, f"{path}.transfer")
        return Transfer(_int(_req(body, "to", f"{path}.transfer"), f"{path}.transfer.to", 0),
                        _int(_req(body, "amount", f"{path}.transfer"), f"{path}.transfer.amount", 0))
    if kind in ("swap_buy", "swap_sell"):
        p = f"{path}.{kind}"
        _check_keys(body, {"pool", "amount_in"}, p)
        cls = SwapBuy if kind == "swap_buy" else SwapSell
        return cls(_int(_req(body, "pool", p), f"{p}.pool", 0),
                   _int(_req(body, "amount_in", p), f"{p}.amount_in", 0))
    raise ScenarioError(path, f"unknown action kind {kind!r}")


def _parse_txn(t: dict, path: str) -> Transaction:
    _check_keys(t, {"id", "sender", "action", "gas_limit", "gas_price", "arrival", "signed"}, path)
    return Transaction(
        _int(_req(t, "id", path), f"{path}.id", 0),
        _int(_req(t, "sender", path), f"{path}.sender", 0),
        parse_action(_req(t, "action", path), f"{path}.action"),
        _int(_req(t, "gas_limit", path), f"{path}.gas_limit", 1),
        _int(_req(t, "gas_price", path), f"{path}.gas_price", 0),
        bool(t.get("signed", True)),
        _int(_req(t, "arrival", path), f"{path}.arrival", 1),
    )


def _parse_workload(w: dict) -> list[Transaction]:
    _check_keys(w, {"transactions", "generate"}, "workload")
    txns = [_parse_txn(t, f"workload.transactions[{i}]") for i, t in enumerate(w.get("transactions", []))]
    if "generate" in w:
        txns += _generate(w["generate"], {t.txn_id for t in txns})
    seen = set()
    for i, t in enumerate(txns):
        if t.txn_id in seen:
            raise ScenarioError(f"workload.transactions[{i}].id", f"duplicate txn id {t.txn_id}")
        seen.add(t.txn_id)
    return sorted(txns, key=lambda t: (t.arrival_time, t.txn_id))


def _generate(g: dict, taken: set) -> list[Transaction]:
    """Seeded random workload; uses its own seed so the run seed never changes it."""
    p = "workload.generate"
    _check_keys(g, {"seed", "count", "accounts", "first_id", "start_tick", "per_tick", "max_amount",
                    "gas_limit", "gas_price", "pool", "swap_share"}, p)
    rng = random.Random(f"workload:{_int(g.get('seed', 0), f'{p}.seed', 0)}")
    count = _int(_req(g, "count", p), f"{p}.count", 0)
    accounts = g.get("accounts")
    if not isinstance(accounts, list) or len(accounts) < 2:
        raise ScenarioError(f"{p}.accounts", "need a list of at least two account ids")
    first = _int(g.get("first_id", 1000), f"{p}.first_id", 0)
    start = _int(g.get("start_tick", 1), f"{p}.start_tick", 1)
    per_tick = _int(g.get("per_tick", 2), f"{p}.per_tick", 1)
    max_amount = _int(g.get("max_amount", 100), f"{p}.max_amount", 1)
    gas_limit = _int(g.get("gas_limit", 200), f"{p}.gas_limit", 1)
    lo, hi = g.get("gas_price", [1, 1])
    pool = g.get("pool")
    swap_share = _num(g.get("swap_share", 0.0), f"{p}.swap_share", 0, 1)
    out = []
    for i in range(count):
        tid = first + i
        if tid in taken:
            raise ScenarioError(f"{p}.first_id", f"generated id {tid} collides with a listed txn")
        sender = rng.choice(accounts)
        if pool is not None and rng.random() < swap_share:
            cls = rng.choice([SwapBuy, SwapSell])
            action = cls(pool, rng.randint(1, max_amount))
        else:
            action = Transfer(rng.choice([a for a in accounts if a != sender]), rng.randint(1, max_amount))
        out.append(Transaction(tid, sender, action, gas_limit, rng.randint(lo, hi), True,
                               start + i // per_tick))
    return out


def _parse_log(lg: dict) -> FinalityMode:
    _check_keys(lg, {"mode", "depth", "reorg_prob"}, "log")
    mode = lg.get("mode", "instant")
    if mode == "instant":
        return Instant()
    if mode == "probabilistic":
        depth = _int(lg.get("depth", 6), "log.depth", 1)
        prob = _num(lg.get("reorg_prob", 0.0), "log.reorg_prob", 0)
        if prob >= 1:
            raise ScenarioError("log.reorg_prob", "must be < 1")
        return Probabilistic(depth, float(prob))
    raise ScenarioError("log.mode", f"unknown mode {mode!r} (instant | probabilistic)")


def _parse_strategy(s: dict) -> Coupled | Optimistic | DdDr:
    kind = _req(s, "kind", "strategy")
    if kind == "coupled":
        _check_keys(s, {"kind", "validators"}, "strategy")
        return Coupled(_int(s.get("validators", 100), "strategy.validators", 1))
    if kind == "optimistic":
        _check_keys(s, {"kind", "window", "validators", "cheat_batches"}, "strategy")
        return Optimistic(_int(s.get("window", 20), "strategy.window", 1),
                          _int(s.get("validators", 1), "strategy.validators", 0),
                          frozenset(_int(b, "strategy.cheat_batches[]", 1) for b in s.get("cheat_batches", [])))
    if kind == "dddr":
        _check_keys(s, {"kind", "T", "C", "byzantine", "penalty", "stake", "dd_ticks", "dr_ticks"}, "strategy")
        T = _int(s.get("T", 100), "strategy.T", 1)
        C = _int(s.get("C", 25), "strategy.C", 1, T)
        groups = []
        for i, g in enumerate(s.get("byzantine", [])):
            p = f"strategy.byzantine[{i}]"
            _check_keys(g, {"count", "strategy", "p"}, p)
            try:
                strat = strategy_from_config(_req(g, "strategy", p), g.get("p"))
            except ValueError as exc:
                raise ScenarioError(f"{p}.strategy", str(exc)) from None
            groups.append(ByzantineGroup(_int(_req(g, "count", p), f"{p}.count", 0), strat))
        dd = DdDr(T, C, tuple(groups), Fraction(str(_num(s.get("penalty", 1), "strategy.penalty", 0, 1))),
                  _int(s.get("stake", 100), "strategy.stake", 1),
                  _int(s.get("dd_ticks", 1), "strategy.dd_ticks", 0),
                  _int(s.get("dr_ticks", 3), "strategy.dr_ticks", 0))
        if dd.B > T:
            raise ScenarioError("strategy.byzantine", f"{dd.B} byzantine nodes exceed T={T}")
        return dd
    raise ScenarioError("strategy.kind", f"unknown strategy {kind!r} (coupled | optimistic | dddr)")


def _parse_sandwich(sw: dict, workload: list[Transaction]) -> Sandwich:
    p = "adversary.sandwich"
    _check_keys(sw, {"account", "victims", "front_amount", "epsilon", "lag", "exit_fraction"}, p)
    victims = tuple(_int(v, f"{p}.victims[]", 0) for v in _req(sw, "victims", p))
    by_id = {t.txn_id: t for t in workload}
    for v in victims:
        if v not in by_id:
            raise ScenarioError(f"{p}.victims", f"victim {v} is not in the workload")
        if not isinstance(by_id[v].action, (SwapBuy, SwapSell)):
            raise ScenarioError(f"{p}.victims", f"victim {v} is not a swap")
    return Sandwich(_int(_req(sw, "account", p), f"{p}.account", 0), victims,
                    _int(_req(sw, "front_amount", p), f"{p}.front_amount", 1),
                    _int(sw.get("epsilon", 1), f"{p}.epsilon", 0),
                    _int(sw.get("lag", 0), f"{p}.lag", 0),
                    Fraction(str(_num(sw.get("exit_fraction", 1), f"{p}.exit_fraction", 0, 1))))
