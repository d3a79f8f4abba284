"""
Withheld callData: stall the chain or break order finality
"""

from l2finality import load_bundled, run

sc = load_bundled("withholding")
withhold = sc.raw["data_availability"]["withhold"]

## Same ordered log, two policies, with and without the withheld payload
for policy in ("wait", "timeout:3"):
    for hidden in (True, False):
        da = {"mode": "cas", "policy": policy, "withhold": withhold if hidden else []}
        m = run(sc.with_overrides(data_availability=da)).metrics
        c = m.counters
        print(f"{policy:<10} withheld={hidden!s:<5} stall ticks {c['liveness_stall_ticks']:>3}  "
              f"order-finality violations {c['order_finality_violations']}  head {m.head_commitment[:12]}")
