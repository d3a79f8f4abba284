"""Deterministic discrete-event engine tying the modules into scenario runs.

Each tick runs, in order: reorg adversary, due log appends, arrivals (with the
sandwich adversary watching them), scheduling and the OrderCommit append,
log-finality scan, the state pipeline (data resolution, execution and the
configured state-finality strategy), checkpoint plan and garbage collection.

Ground truth is carried forward even when a committee or an unchallenged
executor commits a wrong digest; such events are counted as safety failures.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .checkpoint import (CheckpointRegistry, PrematureCheckpointError, UnfinalizedCandidateError,
                         garbage_collect)
from .committee import (InfeasibleCommitteeError, Node, NodePool, ReportStore,
                        Reverted, optimistic_assert, run_dd, run_dr, sample_committee, slash)
from .ledger import (AbortedTxn, AvailabilityStore, DisputableAssertion, Ledger,
                     OrderCommit, Stalled, StateCommit, resolve_unavailable)
from .ordering import Mempool, Trace, attacker_profit, inject_sandwich, schedule
from .scenario import Coupled, DdDr, Optimistic, Scenario
from .txn import Transaction, check_wft, encode_transaction, worst_case_debit
from .vmstate import Key, State, StateCommitment, commit


class InvariantViolation(AssertionError):
    pass


@dataclass
class TxnRecord:
    txn_id: int
    sender: int
    arrival: int
    wft: str = "well_formed"
    status: str = "pending"
    batch: int | None = None
    log_final: int | None = None
    order_final: int | None = None
    state_final: int | None = None
    checkpoint_final: int | None = None
    replication: int = 0

    FIELDS = ("txn_id", "sender", "arrival", "wft", "status", "batch", "log_final",
              "order_final", "state_final", "checkpoint_final", "replication")


COUNTERS = ("safety_failures", "slashes", "honest_slashes", "ambiguous_dr", "dr_rounds",
            "order_finality_violations", "liveness_stall_ticks", "flipped_outcomes",
            "attacker_profit", "gas_underpaid", "reorgs", "reorged_entries", "wft_rejected",
            "premature_checkpoints", "checkpoints_finalized", "gc_entries", "gc_bytes",
            "pool_shrinkage", "committee_shrunk", "executor_slashed", "challenger_rewards")


@dataclass
class Metrics:
    txns: dict[int, TxnRecord] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=lambda: dict.fromkeys(COUNTERS, 0))
    head_batch: int = 0
    head_commitment: str = ""
    replay_commitment: str | None = None

    def bump(self, name: str, by: int = 1):
        self.counters[name] += by

    def rows(self) -> list[TxnRecord]:
        return [self.txns[k] for k in sorted(self.txns)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TxnRecord.FIELDS)
        for r in self.rows():
            w.writerow(["" if getattr(r, f) is None else getattr(r, f) for f in TxnRecord.FIELDS])
        return buf.getvalue()

    def mean_latency(self, shade: str) -> float | None:
        vals = [getattr(r, shade) - r.arrival for r in self.txns.values() if getattr(r, shade) is not None]
        return sum(vals) / len(vals) if vals else None

    def replication_factor(self) -> float:
        vals = [r.replication for r in self.txns.values() if r.replication]
        return sum(vals) / len(vals) if vals else 0.0

    def summary(self) -> dict:
        shades = ("log_final", "order_final", "state_final", "checkpoint_final")
        return {
            "counters": dict(self.counters),
            "head_batch": self.head_batch,
            "head_commitment": self.head_commitment,
            "replay_commitment": self.replay_commitment,
            "mean_latency": {s: self.mean_latency(s) for s in shades},
            "reached": {s: sum(getattr(r, s) is not None for r in self.txns.values()) for s in shades},
            "replication_factor": self.replication_factor(),
            "transactions": len(self.txns),
        }


def validate_metrics(m: Metrics):
    """Finality chain: log <= order <= state <= checkpoint, wherever reached."""
    bad = []
    for r in m.rows():
        chain = [r.log_final, r.order_final, r.state_final, r.checkpoint_final]
        reached = [x for x in chain if x is not None]
        gaps = any(chain[i] is None and chain[i + 1] is not None for i in range(3))
        if gaps or reached != sorted(reached):
            bad.append(r.txn_id)
    if bad:
        raise InvariantViolation(f"finality ordering broken for txns {bad[:10]}")


@dataclass
class Batch:
    batch_id: int
    txns: list[Transaction]
    position: int
    ordered_at: int
    log_final: int | None = None
    waited: int = 0
    skipped: list[int] = field(default_factory=list)
    executed: bool = False
    state_position: int | None = None
    state_final: int | None = None


@dataclass
class RunResult:
    scenario: Scenario
    metrics: Metrics
    ledger: Ledger
    store: AvailabilityStore
    checkpoints: CheckpointRegistry
    trace: Trace
    batch_states: dict[int, State]
    statuses: dict
    pool: NodePool | None = None

    @property
    def head_state(self) -> State:
        return self.batch_states[self.metrics.head_batch]

    def head_order(self) -> list[int]:
        """Ids of the transactions executed up to the head batch, in execution order."""
        head = self.metrics.head_batch
        return [t.txn_id for t, _ in self.trace.steps if self.metrics.txns[t.txn_id].batch <= head]

    def ledger_dump(self) -> str:
        return self.ledger.dump()

    def calldata_dump(self) -> str:
        return "".join(f"{d.hex()}\t{p.hex()}\n" for d, p in self.store.available_payloads())


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.m = Metrics()
        self.ledger = Ledger(scenario.log_mode)
        self.store = AvailabilityStore()
        self.mempool = Mempool()
        self.registry = CheckpointRegistry(self.ledger, scenario.genesis, scenario.checkpoint_gap)
        self.trace = Trace(scenario.genesis)
        self.semantics = scenario.semantics
        self.batches: list[Batch] = []
        self.by_id: dict[int, Batch] = {}
        self.batch_states: dict[int, State] = {0: scenario.genesis}
        self.exec_state = scenario.genesis
        self.statuses = {}
        self.next_batch_id = 1
        self.pipeline = 0
        self.scanned = 0
        self.appends: list = []
        self._seq = 0
        self.determined: set[int] = set()
        self.refs: dict = {}
        self.pending_debits: dict[int, dict[int, int]] = {}
        self.withhold = {w.txn: w for w in scenario.withhold}
        self.arrivals: dict[int, list[Transaction]] = {}
        for t in scenario.workload:
            self.arrivals.setdefault(t.arrival_time, []).append(t)
        self.next_txn_id = max((t.txn_id for t in scenario.workload), default=0) + 1
        self._rngs: dict[str, random.Random] = {}
        self.report_store = ReportStore()
        self.pool = self._build_pool() if isinstance(scenario.strategy, DdDr) else None

    def _build_pool(self) -> NodePool:
        st: DdDr = self.sc.strategy
        strats = [g.strategy for g in st.byzantine for _ in range(g.count)]
        bad = sorted(self.rng("pool").sample(range(st.T), len(strats)))
        nodes = [Node(i, True, st.stake) for i in range(st.T)]
        for i, s in zip(bad, strats):
            nodes[i] = Node(i, False, st.stake, strategy=s)
        return NodePool(nodes)

    def rng(self, label: str) -> random.Random:
        """Per-subsystem stream derived from the run seed and a fixed label."""
        if label not in self._rngs:
            self._rngs[label] = random.Random(f"{self.sc.seed}:{label}")
        return self._rngs[label]

    # -- helpers --------------------------------------------------------------

    def _append(self, kind, tick: int) -> int:
        pos = self.ledger.append(kind, tick)
        if isinstance(kind, (StateCommit, DisputableAssertion)):
            self.determined.add(kind.batch_id)
            if isinstance(kind, StateCommit):
                self.by_id[kind.batch_id].state_position = pos
        return pos

    def _schedule_append(self, due: int, kind):
        heapq.heappush(self.appends, (due, self._seq, kind))
        self._seq += 1

    def _finalized_state(self) -> State:
        b = 0
        for batch in self.batches:
            if batch.state_final is None:
                break
            b = batch.batch_id
        return self.batch_states[b]

    # -- tick phases ----------------------------------------------------------

    def _reorg(self, tick: int):
        mode = self.sc.log_mode
        if not getattr(mode, "reorg_prob", 0):
            return
        dropped = self.ledger.adversary_reorg(mode.depth, self.rng("reorg"))
        if not dropped:
            return
        self.m.bump("reorgs")
        self.m.bump("reorged_entries", len(dropped))
        relocated = {}
        for e in dropped:
            k = e.kind
            if isinstance(k, OrderCommit):
                batch = self.by_id.pop(k.batch_id)
                self.batches.remove(batch)
                for t in batch.txns:
                    rec = self.m.txns[t.txn_id]
                    rec.batch = None
                    self.mempool.add(t)
            elif isinstance(k, StateCommit) and k.batch_id in self.by_id:
                self.by_id[k.batch_id].state_position = None
        for e in dropped:
            k = e.kind
            if isinstance(k, OrderCommit):
                continue
            if isinstance(k, (StateCommit, DisputableAssertion)) and k.batch_id not in self.by_id:
                continue
            relocated[e.position] = self._append(k, tick)
        self.registry.relocate(relocated)

    def _admit(self, t: Transaction, tick: int):
        rec = self.m.txns[t.txn_id] = TxnRecord(t.txn_id, t.sender, t.arrival_time)
        pending = self.pending_debits.setdefault(t.sender, {})
        estimate = max(self._finalized_state().get(Key.account(t.sender)) - sum(pending.values()), 0)
        verdict = check_wft(t, estimate, self.sc.posting_fee, self.sc.strict_wft)
        if not verdict.ok:
            rec.wft = verdict.value
            rec.status = "rejected"
            self.m.bump("wft_rejected")
            return
        pending[t.txn_id] = worst_case_debit(t)
        self.mempool.add(t)

    def _arrivals(self, tick: int):
        queue = list(self.arrivals.pop(tick, []))
        sw = self.sc.sandwich
        i = 0
        while i < len(queue):
            t = queue[i]
            i += 1
            self._admit(t, tick)
            if sw and t.txn_id in sw.victims and t.txn_id in self.mempool:
                front_id, back_id = self.next_txn_id, self.next_txn_id + 1
                self.next_txn_id += 2
                plan = inject_sandwich(sw.account, t, self.exec_state, front_amount=sw.front_amount,
                                       epsilon=sw.epsilon, front_id=front_id, back_id=back_id,
                                       arrival_time=tick + sw.lag, exit_fraction=sw.exit_fraction)
                for adv in (plan.front, plan.back):
                    if sw.lag == 0:
                        queue.append(adv)
                    else:
                        self.arrivals.setdefault(tick + sw.lag, []).append(adv)

    def _order(self, tick: int):
        batch_txns = schedule(self.sc.ordering, self.mempool, self.sc.batch_size)
        if not batch_txns:
            return
        self.mempool.remove(t.txn_id for t in batch_txns)
        refs = tuple(self.store.store(encode_transaction(t), self.sc.da_mode, t.txn_id in self.withhold)
                     for t in batch_txns)
        bid = self.next_batch_id
        self.next_batch_id += 1
        pos = self._append(OrderCommit(bid, tuple(t.txn_id for t in batch_txns), refs), tick)
        batch = Batch(bid, batch_txns, pos, tick)
        self.batches.append(batch)
        self.by_id[bid] = batch
        for t, ref in zip(batch_txns, refs):
            self.m.txns[t.txn_id].batch = bid
            self.refs[t.txn_id] = ref
        if isinstance(self.sc.strategy, Coupled):
            self._execute(batch)
            self._append(StateCommit(bid, commit(self.exec_state)), tick)
            for t in batch.txns:
                self.m.txns[t.txn_id].replication = self.sc.strategy.validators

    def _releases(self, tick: int):
        for w in self.sc.withhold:
            if w.release_tick == tick and w.txn in self.refs:
                self.store.release(self.refs[w.txn].digest)

    def _scan(self, tick: int):
        while self.scanned < self.ledger.final_through:
            self.scanned += 1
            e = self.ledger.entry(self.scanned)
            k = e.kind
            if isinstance(k, OrderCommit):
                batch = self.by_id[k.batch_id]
                batch.log_final = tick
                for tid in k.txn_ids:
                    self.m.txns[tid].log_final = tick
            elif isinstance(k, StateCommit):
                batch = self.by_id[k.batch_id]
                if batch.state_final is not None:
                    continue
                batch.state_final = tick
                for t in batch.txns:
                    rec = self.m.txns[t.txn_id]
                    if isinstance(self.sc.strategy, Coupled):
                        rec.order_final = tick
                    if t.txn_id not in batch.skipped:
                        rec.state_final = tick
                    self.pending_debits.get(t.sender, {}).pop(t.txn_id, None)

    def _execute(self, batch: Batch):
        skip = set(batch.skipped)
        for t in batch.txns:
            if t.txn_id in skip:
                continue
            out = self.semantics(t, self.exec_state)
            self.trace.record(t, out)
            self.statuses[t.txn_id] = out.status
            self.m.txns[t.txn_id].status = out.status.value
            if out.gas_underpaid:
                self.m.bump("gas_underpaid")
            self.exec_state = out.new_state
        batch.executed = True
        self.batch_states[batch.batch_id] = self.exec_state

    def _resolve_data(self, batch: Batch, tick: int) -> bool:
        missing = [t for t in batch.txns
                   if t.txn_id not in batch.skipped and not self.store.is_available(self.refs[t.txn_id])]
        if not missing:
            return True
        decision = resolve_unavailable(self.sc.da_policy, batch.waited)
        if isinstance(decision, AbortedTxn):
            for t in missing:
                batch.skipped.append(t.txn_id)
                self.m.txns[t.txn_id].status = "implicit_abort"
                self.m.bump("order_finality_violations")
                self.pending_debits.get(t.sender, {}).pop(t.txn_id, None)
            return True
        batch.waited = decision.ticks
        if isinstance(decision, Stalled):
            self.m.bump("liveness_stall_ticks")
        return False

    def _pipeline(self, tick: int):
        if isinstance(self.sc.strategy, Coupled):
            return
        while self.pipeline < len(self.batches):
            batch = self.batches[self.pipeline]
            if batch.log_final is None or not self._resolve_data(batch, tick):
                return
            for t in batch.txns:
                if t.txn_id not in batch.skipped:
                    self.m.txns[t.txn_id].order_final = tick
            self._execute(batch)
            truth = commit(self.exec_state)
            if isinstance(self.sc.strategy, DdDr):
                self._dddr(batch, truth, tick)
            else:
                self._optimistic(batch, truth, tick)
            self.pipeline += 1

    def _dddr(self, batch: Batch, truth: StateCommitment, tick: int):
        st: DdDr = self.sc.strategy
        live = len(self.pool.unslashed())
        C = min(st.C, live)
        if C < st.C:
            self.m.bump("committee_shrunk")
        try:
            committee = sample_committee(self.pool, C, self.rng("committee"))
        except InfeasibleCommitteeError:
            raise InvariantViolation("every node has been slashed") from None
        strategies = self.pool.strategies
        dd = run_dd(committee, batch.txns, None, strategies, rng=self.rng("byzantine"), truth=truth,
                    store=self.report_store, batch_id=batch.batch_id)
        executions = len(committee)
        skipped = tuple(batch.skipped)
        if dd.agreed is not None:
            if dd.safety_failure:
                self.m.bump("safety_failures")
            self._schedule_append(tick + st.dd_ticks, StateCommit(batch.batch_id, dd.agreed, skipped))
        else:
            dr = run_dr(self.pool, batch.txns, None, strategies, rng=self.rng("byzantine"), truth=truth)
            executions += len(dr.reports)
            self.m.bump("dr_rounds")
            if dr.ambiguous:
                self.m.bump("ambiguous_dr")
            if dr.safety_failure:
                self.m.bump("safety_failures")
            events = slash(dd.reports, dr, self.pool, st.penalty)
            self.m.bump("slashes", len(events))
            self.m.bump("honest_slashes", sum(e.honest for e in events))
            self.m.bump("pool_shrinkage", len(events))
            self._schedule_append(tick + st.dd_ticks + st.dr_ticks,
                                  StateCommit(batch.batch_id, dr.commitment, skipped))
        for t in batch.txns:
            self.m.txns[t.txn_id].replication = executions

    def _optimistic(self, batch: Batch, truth: StateCommitment, tick: int):
        st: Optimistic = self.sc.strategy
        cheat = batch.batch_id in st.cheat_batches
        claimed = StateCommitment(bytes(b ^ 0xFF for b in truth.digest)) if cheat else truth
        skipped = tuple(batch.skipped)
        self._append(DisputableAssertion(batch.batch_id, claimed, tick + st.window, skipped), tick)
        res = optimistic_assert(tick, st.window, st.validators, cheat, self.rng("optimistic"))
        if isinstance(res, Reverted):
            self.m.bump("executor_slashed")
            self.m.bump("challenger_rewards")
            ct = res.challenge_tick
            self._schedule_append(ct, DisputableAssertion(batch.batch_id, truth, ct + st.window, skipped))
            self._schedule_append(ct + st.window, StateCommit(batch.batch_id, truth, skipped))
        else:
            if res.safety_failure:
                self.m.bump("safety_failures")
            self._schedule_append(res.tick, StateCommit(batch.batch_id, claimed, skipped))
        for t in batch.txns:
            self.m.txns[t.txn_id].replication = 1 + st.validators

    def _due_appends(self, tick: int):
        while self.appends and self.appends[0][0] <= tick:
            _, _, kind = heapq.heappop(self.appends)
            self._append(kind, tick)

    def _checkpoints(self, tick: int):
        for plan in self.sc.checkpoint_plan:
            if plan.at_tick != tick:
                continue
            latest = None
            for b in self.batches:
                if b.state_final is None:
                    break
                latest = b
            try:
                if latest is None:
                    raise UnfinalizedCandidateError("no state-final batch yet")
                self.registry.declare_checkpoint(latest.position, plan.gate,
                                                 self.batch_states[latest.batch_id], tick, True)
            except (PrematureCheckpointError, UnfinalizedCandidateError):
                self.m.bump("premature_checkpoints")
        self._scan(tick)
        for cp in self.registry.advance(tick):
            self.m.bump("checkpoints_finalized")
            for b in self.batches:
                if b.position <= cp.named_position:
                    for t in b.txns:
                        rec = self.m.txns[t.txn_id]
                        if rec.checkpoint_final is None and rec.state_final is not None:
                            rec.checkpoint_final = tick
            if self.sc.gc:
                report = garbage_collect(self.ledger, self.store, cp)
                self.m.bump("gc_entries", report.entries)
                self.m.bump("gc_bytes", report.bytes)

    def step(self, tick: int):
        self._reorg(tick)
        self._due_appends(tick)
        self._arrivals(tick)
        self._order(tick)
        self._releases(tick)
        self._scan(tick)
        self._pipeline(tick)
        self._due_appends(tick)
        self._scan(tick)
        self._checkpoints(tick)

    def run(self) -> RunResult:
        for tick in range(1, self.sc.ticks + 1):
            self.step(tick)
        head = 0
        for b in self.batches:
            if b.batch_id not in self.determined:
                break
            head = b.batch_id
        self.m.head_batch = head
        self.m.head_commitment = commit(self.batch_states[head]).hex()
        if self.sc.sandwich:
            self.m.counters["attacker_profit"] = attacker_profit(self.trace, self.sc.sandwich.account)
        result = RunResult(self.sc, self.m, self.ledger, self.store, self.registry, self.trace,
                           self.batch_states, self.statuses, self.pool)
        if self.sc.replay_patched:
            rep = replay_from_checkpoint(result, patched=True)
            self.m.counters["flipped_outcomes"] = rep.flipped
            self.m.replay_commitment = rep.commitment.hex()
        validate_metrics(self.m)
        return result


def run(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()


def replay_from_checkpoint(result: RunResult, patched: bool = False, checkpoint=None):
    """Replay the run's committed order from its latest finalized checkpoint."""
    from .checkpoint import recover_replay, replay_suffix

    cp = checkpoint or result.checkpoints.latest
    suffix = replay_suffix(result.ledger, result.store, cp, through_batch=result.metrics.head_batch)
    sem = result.scenario.semantics.patched() if patched else result.scenario.semantics
    return recover_replay(cp, suffix, sem, result.statuses)


STRATEGY_PRESETS = {
    "coupled": {"kind": "coupled", "validators": 100},
    "optimistic": {"kind": "optimistic", "window": 20, "validators": 1},
    "dddr": {"kind": "dddr", "T": 100, "C": 25},
}


def compare(scenario: Scenario, strategies: Sequence[dict | str]) -> list[tuple[str, RunResult]]:
    """Run the same workload under each strategy."""
    out = []
    for s in strategies:
        cfg = STRATEGY_PRESETS[s] if isinstance(s, str) else s
        variant = scenario.with_overrides(strategy=cfg)
        if cfg["kind"] == "coupled" and variant.da_mode != "inline":
            variant = variant.with_overrides(strategy=cfg, data_availability={"mode": "inline"})
        label = s if isinstance(s, str) else cfg["kind"]
        out.append((label, run(variant)))
    return out


def format_compare(rows: list[tuple[str, RunResult]]) -> str:
    head = f"{'strategy':<12}{'log':>8}{'order':>8}{'state':>8}{'ckpt':>8}{'repl':>8}{'unsafe':>8}  head"
    lines = [head]
    for label, r in rows:
        m = r.metrics

        def lat(s):
            v = m.mean_latency(s)
            return "-" if v is None else f"{v:.1f}"

        lines.append(f"{label:<12}{lat('log_final'):>8}{lat('order_final'):>8}{lat('state_final'):>8}"
                     f"{lat('checkpoint_final'):>8}{m.replication_factor():>8.1f}"
                     f"{m.counters['safety_failures']:>8}  {m.head_commitment[:16]}")
    return "\n".join(lines) + "\n"


def write_outputs(result: RunResult, outdir: str | Path) -> list[Path]:
    """Metrics CSV, summary JSON, ledger dump, callData dump and checkpoint exports."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.csv": result.metrics.to_csv(),
        "summary.json": json.dumps({"scenario": result.scenario.name, "seed": result.scenario.seed,
                                    **result.metrics.summary()}, indent=2, sort_keys=True) + "\n",
        "ledger.tsv": result.ledger_dump(),
        "calldata.tsv": result.calldata_dump(),
    }
    for cp in result.checkpoints.finalized:
        files[f"checkpoint-{cp.checkpoint_id}.tsv"] = cp.export()
    written = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        written.append(p)
    return written
