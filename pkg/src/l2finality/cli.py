"""Command-line front end.

Exit codes: 0 clean run, 2 configuration or usage error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import random
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .checkpoint import Checkpoint, UnrecoverableError, recover_replay, replay_suffix, verify_chain_freshness
from .ledger import AvailabilityStore, Ledger
from .params import InfeasibleError, committee_table, format_table, min_committee_size, table_csv
from .scenario import BUNDLED, SCHEMA_VERSION, Scenario, ScenarioError, bundled_path
from .sim import STRATEGY_PRESETS, InvariantViolation, compare, format_compare, run, write_outputs
from .txn import DEFAULT_COSTS, Semantics
from .vmstate import StateCommitment

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _c_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        values = list(range(int(lo), int(hi) + 1)) if sep else [int(lo)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO..HI, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"empty committee range {text!r}")
    return values


def _scenario_path(text: str) -> Path:
    """A file path, or the name of a bundled scenario."""
    if text in BUNDLED:
        return bundled_path(text)
    return Path(text)


def _readable(path: Path, what: str):
    if not path.is_file():
        raise ScenarioError("", f"{what} {path} does not exist or is not a file")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="l2finality", description="Layer-2 finality simulator and committee calculator.")
    p.add_argument("--version", action="version",
                   version=f"l2finality {__version__} (scenario schema_version {SCHEMA_VERSION})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario and write metrics")
    r.add_argument("--scenario", required=True, help=f"scenario file or bundled name ({', '.join(BUNDLED)})")
    r.add_argument("--out-dir", required=True, help="directory for metrics.csv, summary.json and dumps")

    pr = sub.add_parser("params", help="committee security table over a range of committee sizes")
    pr.add_argument("--T", type=int, required=True, help="pool size")
    pr.add_argument("--B", type=int, required=True, help="Byzantine nodes")
    pr.add_argument("--C", type=_c_range, default=None, help="committee size N or range LO..HI")
    pr.add_argument("--rate", type=Fraction, default=Fraction(1000), help="committee selections per hour")
    pr.add_argument("--R", type=int, default=0, help="rational (bribable) nodes")
    pr.add_argument("--target-years", type=Fraction, default=None,
                    help="also report the smallest C meeting this expected time")
    pr.add_argument("--csv", type=Path, default=None, help="also write the table as CSV here")

    rp = sub.add_parser("replay", help="recover the head state from a checkpoint export")
    rp.add_argument("--ledger", type=Path, required=True, help="ledger.tsv from a run")
    rp.add_argument("--calldata", type=Path, default=None, help="calldata.tsv from a run (CAS mode)")
    rp.add_argument("--checkpoint", type=Path, required=True, help="checkpoint-<id>.tsv export")
    rp.add_argument("--scenario", default=None, help="scenario supplying gas costs and planted bugs")
    rp.add_argument("--patched", action="store_true", help="replay with every planted bug fixed")

    c = sub.add_parser("compare", help="run one workload under several finality strategies")
    c.add_argument("--scenario", required=True, help="scenario file or bundled name")
    c.add_argument("--strategies", default="coupled,optimistic,dddr",
                   help=f"comma list from {', '.join(STRATEGY_PRESETS)}")

    f = sub.add_parser("freshness", help="M-of-N observer check against a forked head")
    f.add_argument("--population", type=int, required=True)
    f.add_argument("--compromised", type=int, required=True)
    f.add_argument("--N", type=int, required=True, help="observers queried")
    f.add_argument("--M", type=int, required=True, help="agreeing observers required")
    f.add_argument("--trials", type=int, default=10000)
    f.add_argument("--seed", type=int, default=0)
    return p


def _cmd_run(a) -> int:
    path = _scenario_path(a.scenario)
    _readable(path, "scenario")
    result = run(Scenario.load(path))
    written = write_outputs(result, a.out_dir)
    m = result.metrics
    print(f"scenario {result.scenario.name}: head batch {m.head_batch}, commitment {m.head_commitment}")
    for k, v in m.counters.items():
        if v:
            print(f"  {k}: {v}")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_params(a) -> int:
    C_values = a.C or list(range(1, a.B + 2))
    rows = committee_table(a.T, a.B, C_values, a.rate, a.R)
    sys.stdout.write(format_table(rows))
    if a.target_years is not None:
        try:
            C = min_committee_size(a.T, a.B, a.R, a.rate, a.target_years)
            print(f"smallest C for {float(a.target_years):g} years: {C}")
        except InfeasibleError as exc:
            print(f"target unreachable: {exc}")
    if a.csv:
        a.csv.write_text(table_csv(rows))
    return EXIT_OK


def _load_store(path: Path | None) -> AvailabilityStore:
    store = AvailabilityStore()
    if path is None:
        return store
    for line in path.read_text().splitlines():
        if line.strip():
            digest, payload = line.split("\t")
            ref = store.store(bytes.fromhex(payload), "cas")
            if ref.digest.hex() != digest:
                raise ScenarioError("", f"callData line {digest[:16]} fails its digest")
    return store


def _cmd_replay(a) -> int:
    for path, what in ((a.ledger, "ledger"), (a.checkpoint, "checkpoint")):
        _readable(path, what)
    if a.calldata is not None:
        _readable(a.calldata, "calldata")
    ledger = Ledger.load(a.ledger.read_text())
    store = _load_store(a.calldata)
    cp = Checkpoint.load(a.checkpoint.read_text())
    if a.scenario:
        path = _scenario_path(a.scenario)
        _readable(path, "scenario")
        semantics = Scenario.load(path).semantics
    else:
        semantics = Semantics(DEFAULT_COSTS)
    try:
        suffix = replay_suffix(ledger, store, cp)
    except UnrecoverableError as exc:
        print(f"replay impossible: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    original = recover_replay(cp, suffix, semantics)
    result = original
    if a.patched:
        result = recover_replay(cp, suffix, semantics.patched(), original.statuses)
    print(f"replayed {len(suffix)} transactions from checkpoint {cp.checkpoint_id}")
    print(f"head commitment {result.commitment.hex()}")
    if a.patched:
        print(f"flipped outcomes {result.flipped}")
    return EXIT_OK


def _cmd_compare(a) -> int:
    path = _scenario_path(a.scenario)
    _readable(path, "scenario")
    names = [s.strip() for s in a.strategies.split(",") if s.strip()]
    unknown = [s for s in names if s not in STRATEGY_PRESETS]
    if unknown:
        raise ScenarioError("strategies", f"unknown strategy {unknown[0]!r}")
    sys.stdout.write(format_compare(compare(Scenario.load(path), names)))
    return EXIT_OK


def _cmd_freshness(a) -> int:
    if not 0 <= a.compromised <= a.population:
        raise ScenarioError("compromised", "must lie between 0 and the population size")
    if not 1 <= a.M <= a.N <= a.population:
        raise ScenarioError("N", "need 1 <= M <= N <= population")
    rng = random.Random(f"{a.seed}:freshness")
    flags = [True] * a.compromised + [False] * (a.population - a.compromised)
    true_head, fork_head = StateCommitment(b"\x01" * 32), StateCommitment(b"\x02" * 32)
    tally = {"true": 0, "fork": 0, "ambiguous": 0}
    for _ in range(a.trials):
        got = verify_chain_freshness(flags, a.N, a.M, rng, true_head=true_head, fork_head=fork_head)
        tally["ambiguous" if got is None else "true" if got == true_head else "fork"] += 1
    for k, v in tally.items():
        print(f"{k:<10}{v:>10}{v / a.trials:>10.4f}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "params": _cmd_params, "replay": _cmd_replay,
             "compare": _cmd_compare, "freshness": _cmd_freshness}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
