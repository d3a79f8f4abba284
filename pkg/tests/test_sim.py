import json

import pytest

from l2finality.scenario import BUNDLED, load_bundled
from l2finality.sim import (InvariantViolation, Metrics, TxnRecord, compare, format_compare,
                            replay_from_checkpoint, run, validate_metrics, write_outputs)


@pytest.fixture(scope="module")
def results():
    return {name: run(load_bundled(name)) for name in BUNDLED}


def test_same_seed_same_bytes():
    sc = load_bundled("byzantine-dd")
    a, b = run(sc), run(sc)
    assert a.metrics.to_csv() == b.metrics.to_csv()
    assert a.ledger_dump() == b.ledger_dump()
    assert a.metrics.summary() == b.metrics.summary()


def test_seed_changes_random_order():
    sc = load_bundled("honest-baseline").with_overrides(ordering={"policy": "random:5", "batch_size": 4})
    other = sc.with_overrides(seed=8, ordering={"policy": "random:6", "batch_size": 4})
    assert run(sc).head_order() != run(other).head_order()


@pytest.mark.parametrize("name", BUNDLED)
def test_finality_chain_holds(results, name):
    validate_metrics(results[name].metrics)
    assert results[name].checkpoints.latest.checkpoint_id > 0


def test_validate_metrics_catches_out_of_order():
    m = Metrics()
    m.txns[1] = TxnRecord(1, 1, 1, log_final=5, order_final=4)
    with pytest.raises(InvariantViolation):
        validate_metrics(m)
    m.txns[1] = TxnRecord(1, 1, 1, log_final=5, state_final=6)
    with pytest.raises(InvariantViolation):
        validate_metrics(m)


def test_coupled_order_and_state_final_together(results):
    for r in results["sandwich-attack"].metrics.rows():
        if r.state_final is not None:
            assert r.order_final == r.state_final


def test_dddr_honest_replication_equals_committee(results):
    m = results["honest-baseline"].metrics
    reps = {r.replication for r in m.rows() if r.state_final is not None}
    assert reps == {25}


def test_optimistic_latency_at_least_window():
    sc = load_bundled("honest-baseline").with_overrides(
        strategy={"kind": "optimistic", "window": 7, "validators": 1})
    m = run(sc).metrics
    finals = [r for r in m.rows() if r.state_final is not None]
    assert finals
    assert all(r.state_final - r.order_final >= 7 for r in finals)


def test_strategies_agree_on_honest_workload():
    rows = compare(load_bundled("honest-baseline"), ["coupled", "optimistic", "dddr"])
    common = set.intersection(*(set(r.batch_states) for _, r in rows))
    assert len(common) > 5
    for b in common:
        assert len({rows_r.batch_states[b] for _, rows_r in rows}) == 1
    for _, r in rows:
        assert r.metrics.counters["safety_failures"] == 0
        final = replay_from_checkpoint(r)
        assert final.commitment.hex() == r.metrics.head_commitment
    assert format_compare(rows).splitlines()[0].startswith("strategy")


def test_write_outputs(tmp_path, results):
    r = results["honest-baseline"]
    names = {p.name for p in write_outputs(r, tmp_path)}
    assert {"metrics.csv", "summary.json", "ledger.tsv", "calldata.tsv"} <= names
    assert any(n.startswith("checkpoint-") for n in names)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["head_commitment"] == r.metrics.head_commitment
    assert (tmp_path / "metrics.csv").read_text().splitlines()[0].startswith("txn_id,")


def test_sandwich_scenario_profits_with_contiguous_bundle(results):
    r = results["sandwich-attack"]
    order = [t.txn_id for t, _ in r.trace.steps]
    i = order.index(1)
    assert r.metrics.counters["attacker_profit"] > 0
    front, back = order[i - 1], order[i + 1]
    assert all(r.metrics.txns[t].sender == 9 for t in (front, back))


def test_withholding_stalls_under_wait(results):
    c = results["withholding"].metrics.counters
    assert c["liveness_stall_ticks"] > 0 and c["order_finality_violations"] == 0


def test_zero_day_flips(results):
    assert results["zero-day-replay"].metrics.counters["flipped_outcomes"] > 0
