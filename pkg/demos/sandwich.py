"""
A gas-price sandwich around a large pool buy, and why arrival order defeats it
"""

from l2finality import load_bundled, run

sc = load_bundled("sandwich-attack")

## Gas-price ordering: front-run one unit above the victim, unwind one unit below
result = run(sc)
order = [t.txn_id for t, _ in result.trace.steps]
i = order.index(1)
print("executed around the victim:", order[i - 1:i + 2])
print("attacker profit:", result.metrics.counters["attacker_profit"])

## Arrival ordering with the adversary one tick late
adv = sc.raw["adversary"]["sandwich"]
late = run(sc.with_overrides(ordering={"policy": "arrival", "batch_size": 8},
                             adversary={"sandwich": {**adv, "lag": 1}}))
print("late adversary under arrival order:", late.metrics.counters["attacker_profit"])

## Profit as the victim's buy grows
for size in (10_000, 30_000, 60_000, 120_000):
    workload = {**sc.raw["workload"]}
    workload["transactions"] = [{**workload["transactions"][0],
                                 "action": {"swap_buy": {"pool": 1, "amount_in": size}}}]
    r = run(sc.with_overrides(workload=workload))
    print(f"victim buy {size:>7}: profit {r.metrics.counters['attacker_profit']}")
