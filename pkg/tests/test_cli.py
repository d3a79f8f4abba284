import json
import re
import subprocess
import sys

import pytest

from l2finality.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_params_table_values(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "params", "--T", "100", "--B", "49", "--C", "25..30",
                           "--csv", str(tmp_path / "t.csv"))
    assert code == 0
    years = {int(m.group(1)): float(m.group(2).replace(",", ""))
             for m in re.finditer(r"^\s*(\d+)\s+\S+\s+\S+\s+([\d,\.]+)\s*$", out, re.M)}
    assert abs(years[25] - 437) <= 1
    assert abs(years[26] / 1368 - 1) <= 0.01
    assert abs(years[30] / 177_740 - 1) <= 0.01
    assert (tmp_path / "t.csv").read_text().startswith("C,W,hours,years")


def test_params_target_years(capsys):
    code, out, _ = run_cli(capsys, "params", "--T", "100", "--B", "49", "--C", "25",
                           "--target-years", "1000")
    assert code == 0 and "smallest C for 1000 years: 26" in out


def test_run_and_replay_roundtrip(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "run", "--scenario", "honest-baseline", "--out-dir", str(tmp_path))
    assert code == 0 and (tmp_path / "metrics.csv").exists()
    head = json.loads((tmp_path / "summary.json").read_text())["head_commitment"]
    cps = sorted(tmp_path.glob("checkpoint-*.tsv"))
    code, out, _ = run_cli(capsys, "replay", "--ledger", str(tmp_path / "ledger.tsv"),
                           "--calldata", str(tmp_path / "calldata.tsv"), "--checkpoint", str(cps[-1]),
                           "--scenario", "honest-baseline")
    assert code == 0
    assert f"head commitment {head}" in out


def test_patched_replay_flips(capsys, tmp_path):
    assert run_cli(capsys, "run", "--scenario", "zero-day-replay", "--out-dir", str(tmp_path))[0] == 0
    cp = sorted(tmp_path.glob("checkpoint-*.tsv"))[-1]
    base = ["replay", "--ledger", str(tmp_path / "ledger.tsv"), "--calldata", str(tmp_path / "calldata.tsv"),
            "--checkpoint", str(cp), "--scenario", "zero-day-replay"]
    _, plain, _ = run_cli(capsys, *base)
    code, patched, _ = run_cli(capsys, *base, "--patched")
    assert code == 0
    flips = int(re.search(r"flipped outcomes (\d+)", patched).group(1))
    assert flips > 0
    head = lambda text: re.search(r"head commitment (\w+)", text).group(1)
    assert head(plain) != head(patched)


def test_usage_and_config_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["params", "--T", "10", "--B", "3", "--bogus"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "seed": 1}))
    code, _, err = run_cli(capsys, "run", "--scenario", str(bad), "--out-dir", str(tmp_path / "o"))
    assert code == 2 and "ticks" in err
    code, _, _ = run_cli(capsys, "run", "--scenario", str(tmp_path / "missing.json"), "--out-dir", str(tmp_path))
    assert code == 2
    code, _, _ = run_cli(capsys, "compare", "--scenario", "honest-baseline", "--strategies", "pbft")
    assert code == 2


def test_version_mentions_schema():
    out = subprocess.run([sys.executable, "-m", "l2finality", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "schema_version 1" in out.stdout


def test_freshness_and_compare(capsys):
    code, out, _ = run_cli(capsys, "freshness", "--population", "100", "--compromised", "0",
                           "--N", "9", "--M", "5", "--trials", "200")
    assert code == 0 and re.search(r"^true\s+200\s", out, re.M)
    code, out, _ = run_cli(capsys, "compare", "--scenario", "honest-baseline", "--strategies", "coupled,dddr")
    assert code == 0 and len(out.splitlines()) == 3
