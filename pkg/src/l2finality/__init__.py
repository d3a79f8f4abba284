"""Four shades of finality for layer-2 ledgers, as a deterministic simulator.

Modules, bottom up:

- ``vmstate``: key/value state, canonical serialization and commitments
- ``txn``: transactions, gas, the constant-product pool and WFT admission
- ``ledger``: the append-only log, log-finality modes and callData storage
- ``ordering``: mempool scheduling policies and the sandwich adversary
- ``params``: exact committee-security arithmetic
- ``committee``: DD/DR committees, slashing and the optimistic window
- ``checkpoint``: checkpoint gates, garbage collection and replay recovery
- ``scenario`` / ``sim``: scenario files and the discrete-tick engine
"""

from .params import (CommitteeParams, all_faulty_odds, all_faulty_probability, committee_table,
                     expected_time, min_committee_size)
from .scenario import BUNDLED, SCHEMA_VERSION, Scenario, ScenarioError, load_bundled
from .sim import InvariantViolation, Metrics, RunResult, compare, replay_from_checkpoint, run
from .vmstate import Key, State, StateCommitment, commit

__version__ = "0.1.0"

__all__ = [
    "BUNDLED", "SCHEMA_VERSION", "CommitteeParams", "InvariantViolation", "Key", "Metrics",
    "RunResult", "Scenario", "ScenarioError", "State", "StateCommitment", "all_faulty_odds",
    "all_faulty_probability", "commit", "committee_table", "compare", "expected_time",
    "load_bundled", "min_committee_size", "replay_from_checkpoint", "run",
]
