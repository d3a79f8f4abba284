"""
Recovering from an execution bug by replaying from a checkpoint
"""

from l2finality import load_bundled, replay_from_checkpoint, run

result = run(load_bundled("zero-day-replay"))
print("checkpoint:", result.checkpoints.latest.checkpoint_id,
      "at log position", result.checkpoints.latest.named_position)
print("head as executed:", result.metrics.head_commitment[:16])

## Same order, same semantics: the head is reproduced exactly
same = replay_from_checkpoint(result)
print("identity replay: ", same.commitment.hex()[:16])

## Same order, bug fixed: the exploit chain now aborts
fixed = replay_from_checkpoint(result, patched=True)
print("patched replay:  ", fixed.commitment.hex()[:16], f"({fixed.flipped} outcomes flipped)")
for txn_id in (1, 2, 3, 4):
    print(f"  txn {txn_id}: {result.statuses[txn_id].value} -> {fixed.statuses[txn_id].value}")
