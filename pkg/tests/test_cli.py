import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from keyforge import cli
from keyforge.asymptotic import binary_entropy

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(tmp_path, verb, cfg, *extra, name="out.csv"):
    out = tmp_path / name
    code = cli.main([verb, "--config", str(cfg), "--out", str(out), *extra])
    return code, out.read_text() if out.exists() else ""


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_asymptotic_fw_and_gr(tmp_path):
    code, text = run(tmp_path, "asymptotic", CONFIGS / "bb84_asymptotic.yaml")
    assert code == 0
    assert text.splitlines()[0] == ",".join(cli.HEADER)
    fw, gr = rows(text)
    assert fw["method"] == "frank_wolfe" and gr["method"] == "gauss_radau"
    target = 1 - 2 * binary_entropy(0.05)
    assert float(fw["certified_lower_bound"]) == pytest.approx(target, abs=1e-3)
    assert float(gr["clamped_rate"]) == pytest.approx(float(fw["clamped_rate"]), abs=2e-3)
    assert fw["runtime_seconds"] == ""


def test_output_is_deterministic(tmp_path):
    _, a = run(tmp_path, "asymptotic", CONFIGS / "bb84_asymptotic.yaml", name="a.csv")
    _, b = run(tmp_path, "asymptotic", CONFIGS / "bb84_asymptotic.yaml", name="b.csv")
    assert a == b


def test_timing_flag(tmp_path):
    cfg = write(tmp_path, "scenario:\n  protocol: bb84\n  qber: 0.02\n")
    _, text = run(tmp_path, "asymptotic", cfg, "--timing")
    assert float(rows(text)[0]["runtime_seconds"]) > 0


def test_json_output(tmp_path):
    cfg = write(tmp_path, "scenario:\n  protocol: bb84\n  qber: 0.02\n")
    code, text = run(tmp_path, "asymptotic", cfg, "--json", name="out.json")
    assert code == 0
    rec = json.loads(text)[0]
    assert list(rec) == list(cli.HEADER)
    assert rec["status"] == "ok"


def test_bad_povm_exits_2(tmp_path, capsys):
    code, _ = run(tmp_path, "asymptotic", CONFIGS / "bad_povm.yaml")
    assert code == 2
    err = capsys.readouterr().err
    assert "scenario.povms_a[0][1]" in err
    assert "bogus" in err


def test_missing_file_exits_2(tmp_path):
    assert cli.main(["asymptotic", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_missing_section_exits_2(tmp_path):
    cfg = write(tmp_path, "scenario:\n  protocol: bb84\n  qber: 0.02\n")
    assert cli.main(["decoy", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_finite_too_few_rounds(tmp_path):
    code, text = run(tmp_path, "finite", CONFIGS / "finite_small.yaml")
    assert code == 3
    (row,) = rows(text)
    assert row["status"] == "TooFewRounds"
    assert row["certified_lower_bound"] == ""


def test_finite_eur(tmp_path):
    cfg = write(
        tmp_path,
        "scenario:\n  protocol: bb84\n  qber: 0.0\nfinite:\n  framework: eur\n  n: 1000000\n  m_test: 10000\n",
    )
    code, text = run(tmp_path, "finite", cfg)
    assert code == 0
    assert float(rows(text)[0]["clamped_rate"]) == pytest.approx(0.78691, abs=1e-5)


def test_finite_eat_with_given_rate(tmp_path):
    cfg = write(tmp_path, "finite:\n  framework: eat\n  n: 100000000\n  h: 0.8\n  q_z: 0.02\n")
    code, text = run(tmp_path, "finite", cfg)
    assert code == 0
    assert 0 < float(rows(text)[0]["clamped_rate"]) < 0.8


def test_decoy(tmp_path):
    code, text = run(tmp_path, "decoy", CONFIGS / "decoy.yaml")
    assert code == 0
    row = rows(text)[0]
    assert float(row["clamped_rate"]) > 0
    assert float(row["certificate_residual"]) <= cli.RESIDUAL_LIMIT


def test_decoy_dark_channel(tmp_path):
    cfg = write(tmp_path, "decoy:\n  intensities: [0.5, 0.1]\n  gains: [0, 0]\n  error_gains: [0, 0]\n")
    code, text = run(tmp_path, "decoy", cfg)
    assert code == 0
    assert float(rows(text)[0]["clamped_rate"]) == 0.0


def test_sweep_monotone_and_parallel_identical(tmp_path):
    code, serial = run(tmp_path, "sweep", CONFIGS / "bb84_finite_sweep.yaml", "--jobs", "1", name="s.csv")
    assert code == 0
    _, parallel = run(tmp_path, "sweep", CONFIGS / "bb84_finite_sweep.yaml", "--jobs", "3", name="p.csv")
    assert serial == parallel
    data = rows(serial)
    assert len(data) == 25
    rates = [float(r["clamped_rate"]) for r in data]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    params = [float(r["parameter"]) for r in data]
    assert params == sorted(params)


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "decoy:\n  intensities: [0.5, 0.1]\n  gains: [0, 0]\n  error_gains: [0, 0]\n")
    proc = subprocess.run(
        [sys.executable, "-m", "keyforge", "decoy", "--config", str(cfg)],
        capture_output=True,
        text=True,
        env={**os.environ},
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0].startswith("parameter,method")
