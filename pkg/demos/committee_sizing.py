"""
Sizing a discrepancy-detection committee against a Byzantine pool
"""

import random

from l2finality.committee import NodePool, sample_committee
from l2finality.params import committee_table, format_table, min_committee_size

## Expected years before an all-faulty committee, 49 of 100 nodes faulty, 1000 draws an hour
rows = committee_table(100, 49, range(20, 31), 1000)
print(format_table(rows))

## Each extra member multiplies the odds by (T - C) / (B - C)
print("C=25 -> C=26 ratio:", rows[6].W / rows[5].W)

## Smallest committee for a 1000-year target, with and without 9 bribable nodes
print("C for 1000 years:", min_committee_size(100, 49, 0, 1000, 1000))
print("same target, 40 Byzantine + 9 rational:", min_committee_size(100, 40, 9, 1000, 1000))

## Empirical check on a small pool: all-faulty committees of 4 from 10 of 20
pool = NodePool.build(20, 10)
rng = random.Random(0)
n = 200_000
hits = sum(all(i < 10 for i in sample_committee(pool, 4, rng)) for _ in range(n))
print(f"observed {hits / n:.4f}, exact {210 / 4845:.4f}")
