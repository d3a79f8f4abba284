import itertools
import random

import pytest

from l2finality.committee import (AlwaysWrong, AcceptedAt, CheatWithProb, ColludingWrong,
                                  CommitteeReport, Copycat, EquivocationError,
                                  InfeasibleCommitteeError, Node, NodePool, NoResolutionError,
                                  ReportStore, Reverted, optimistic_assert, run_dd, run_dr,
                                  sample_committee, slash, strategy_from_config, true_commitment)
from l2finality.params import all_faulty_probability
from l2finality.txn import Transaction, Transfer
from l2finality.vmstate import Key, State, StateCommitment, commit

import oracles

TRUTH = commit(State({Key.account(1): 5}))
WRONG = StateCommitment(b"\xee" * 32)


def test_sample_whole_pool_and_errors():
    pool = NodePool.build(10, 3)
    assert sample_committee(pool, 10, random.Random(0)) == tuple(range(10))
    with pytest.raises(InfeasibleCommitteeError):
        sample_committee(pool, 11, random.Random(0))
    pool[0].slashed = True
    assert 0 not in sample_committee(pool, 9, random.Random(0))


def test_single_member_byzantine_rate():
    pool = NodePool.build(20, 5)
    rng = random.Random("c1")
    n = 20_000
    bad = sum(not pool[sample_committee(pool, 1, rng)[0]].honest for _ in range(n))
    assert oracles.within_sigma(bad, n, 5 / 20)


def test_all_byzantine_frequency_small():
    pool = NodePool.build(20, 10)
    rng = random.Random("hyper-small")
    n = 50_000
    hits = sum(all(i < 10 for i in sample_committee(pool, 4, rng)) for _ in range(n))
    assert oracles.within_sigma(hits, n, float(all_faulty_probability(20, 10, 4)))


def test_dd_all_honest_and_one_wrong():
    assert run_dd([1, 2, 3], [], State(), {}, truth=TRUTH).agreed == TRUTH
    out = run_dd([1, 2, 3], [], State(), {2: AlwaysWrong()}, truth=TRUTH)
    assert out.discrepancy and not out.safety_failure


def test_dd_all_colluding_is_safety_failure():
    out = run_dd([1, 2, 3], [], State(), {i: ColludingWrong() for i in (1, 2, 3)}, truth=TRUTH)
    assert out.agreed is not None and out.agreed != TRUTH and out.safety_failure


def test_dd_computes_truth_when_not_given():
    s = State({Key.account(1): 100})
    batch = [Transaction(1, 1, Transfer(2, 5), 30, 1)]
    assert run_dd([1, 2], batch, s, {}).agreed == true_commitment(batch, s)


STRATEGY_CHOICES = [None, AlwaysWrong(), AlwaysWrong(WRONG), ColludingWrong(), Copycat(),
                    Copycat(WRONG), CheatWithProb(0.0), CheatWithProb(0.5), CheatWithProb(1.0)]


def test_dd_soundness_exhaustive_small_committees():
    rng = random.Random("exhaustive")
    checked = 0
    for C in range(1, 6):
        members = list(range(C))
        for combo in itertools.product(STRATEGY_CHOICES, repeat=C):
            if all(s is not None for s in combo):
                continue
            strategies = {m: s for m, s in zip(members, combo) if s is not None}
            out = run_dd(members, [], State(), strategies, rng=rng, truth=TRUTH)
            assert not out.safety_failure
            assert out.agreed in (None, TRUTH)
            checked += 1
    assert checked == sum(9 ** c - 8 ** c for c in range(1, 6))


def test_copycat_piggybacking():
    C = 5
    honest_plus_copycats = {m: Copycat(WRONG) for m in range(1, C)}
    assert run_dd(range(C), [], State(), honest_plus_copycats, truth=TRUTH).agreed == TRUTH
    all_copycats = {m: Copycat(WRONG) for m in range(C)}
    out = run_dd(range(C), [], State(), all_copycats, truth=TRUTH)
    assert out.agreed == WRONG and out.safety_failure


def test_copycat_copies_first_direct_report_in_id_order():
    strategies = {0: Copycat(), 1: AlwaysWrong(WRONG), 3: Copycat()}
    reports = run_dd([0, 1, 2, 3], [], State(), strategies, truth=TRUTH).reports
    assert [r.claimed for r in reports] == [WRONG, WRONG, TRUTH, WRONG]


def test_report_store_rejects_equivocation():
    store = ReportStore()
    store.submit(1, CommitteeReport(4, TRUTH))
    store.submit(2, CommitteeReport(4, WRONG))
    with pytest.raises(EquivocationError):
        store.submit(1, CommitteeReport(4, WRONG))
    with pytest.raises(EquivocationError):
        run_dd([4], [], State(), {}, truth=TRUTH, store=store, batch_id=1)


def test_dr_outcomes():
    honest_majority = NodePool.build(11, 5, ColludingWrong())
    assert run_dr(honest_majority, [], State(), truth=TRUTH).commitment == TRUTH
    assert run_dr(NodePool.build(5, 0), [], State(), truth=TRUTH).commitment == TRUTH
    all_bad = NodePool.build(5, 5, ColludingWrong())
    res = run_dr(all_bad, [], State(), truth=TRUTH)
    assert res.safety_failure and not res.ambiguous
    dead = NodePool([Node(0, slashed=True)])
    with pytest.raises(NoResolutionError):
        run_dr(dead, [], State(), truth=TRUTH)


def test_dr_tie_breaks_to_lowest_digest_and_flags():
    pool = NodePool.build(4, 2, AlwaysWrong(WRONG))
    res = run_dr(pool, [], State(), truth=TRUTH)
    assert res.ambiguous
    assert res.commitment == min(TRUTH, WRONG, key=lambda c: c.digest)


def test_slash_rules():
    pool = NodePool.build(10, 3, AlwaysWrong(WRONG))
    dd = run_dd([0, 1, 5, 6], [], State(), pool.strategies, truth=TRUTH)
    dr = run_dr(pool, [], State(), truth=TRUTH)
    events = slash(dd.reports, dr, pool)
    assert {e.node_id for e in events} == {0, 1}
    assert all(pool[e.node_id].slashed and pool[e.node_id].stake == 0 for e in events)
    # completeness: no unslashed reporter disagrees with DR
    assert all(pool[r.node_id].slashed or r.claimed == dr.commitment for r in dd.reports)
    honest_dd = run_dd([5, 6], [], State(), pool.strategies, truth=TRUTH)
    assert slash(honest_dd.reports, dr, pool) == []


def test_slash_honest_minority_when_dr_is_wrong():
    pool = NodePool.build(10, 8, ColludingWrong())
    dd = run_dd([7, 8, 9], [], State(), pool.strategies, truth=TRUTH)
    dr = run_dr(pool, [], State(), truth=TRUTH)
    assert dr.safety_failure
    events = slash(dd.reports, dr, pool, penalty=0.5)
    assert {e.node_id for e in events} == {8, 9}
    assert all(e.honest and e.amount == 50 for e in events)


def test_optimistic_assert():
    rng = random.Random(0)
    assert optimistic_assert(10, 5, 3, False, rng) == AcceptedAt(15)
    for _ in range(500):
        res = optimistic_assert(10, 5, 1, True, rng)
        assert isinstance(res, Reverted) and 11 <= res.challenge_tick <= 15
    wrong = optimistic_assert(10, 5, 0, True, rng)
    assert wrong == AcceptedAt(15, safety_failure=True)
    with pytest.raises(ValueError):
        optimistic_assert(10, 0, 1, True, rng)


def test_strategy_config_and_pool_validation():
    assert strategy_from_config("colluding") == ColludingWrong()
    assert strategy_from_config("cheat_prob", 0.3) == CheatWithProb(0.3)
    for bad in (("cheat_prob", None), ("liar", None)):
        with pytest.raises(ValueError):
            strategy_from_config(*bad)
    with pytest.raises(ValueError):
        CheatWithProb(1.5)
    with pytest.raises(ValueError):
        NodePool([Node(0, honest=False)])
    with pytest.raises(ValueError):
        NodePool([Node(0), Node(0)])
