import csv
import io
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from migrasim.config import ConfigError, ScenarioConfig, parse_config, serialize_config
from migrasim.harness import CSV_COLUMNS, SweepSpec, best_mf, mean_ci, migc_isolation_run, run_cli, run_sweep
from migrasim.harness.cli import TIMING_COLUMNS
from migrasim.harness.sweep import SweepError

SMALL = ["--ses", "60", "--steps", "15", "--side", "600", "--range", "120"]


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def _run(capsys, *argv):
    code = run_cli(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_single_run_single_lp(capsys):
    code, out, _ = _run(capsys, *SMALL, "--runs", "1", "--lps", "1")
    rows = _rows(out)
    assert code == 0 and len(rows) == 1
    assert list(rows[0]) == CSV_COLUMNS
    assert rows[0]["rcc"] == "0" and float(rows[0]["lcr"]) == 1.0


def test_five_runs_and_summary(capsys):
    code, out, _ = _run(capsys, *SMALL, "--runs", "5", "--lps", "2", "--seed", "10")
    rows = _rows(out)
    assert code == 0 and len(rows) == 6
    assert [r["seed"] for r in rows[:5]] == ["10", "11", "12", "13", "14"]
    assert rows[5]["run_id"] == "summary"
    mean, half = mean_ci([float(r["lcr"]) for r in rows[:5]])
    assert rows[5]["lcr"] == f"{mean:.6g}±{half:.6g}"


def test_ci_half_width():
    mean, half = mean_ci([10, 12, 14, 16, 18])
    assert mean == 14
    assert half == pytest.approx(2.131847 * 3.162278 / 5**0.5, abs=1e-5)
    assert round(half, 3) == 3.015
    assert mean_ci([4.0]) == (4.0, 0.0)


def test_csv_deterministic_apart_from_timing(capsys):
    argv = [*SMALL, "--lps", "2", "--gaia", "on", "--mf", "1.1", "--runs", "2"]
    a = _rows(_run(capsys, *argv)[1])
    b = _rows(_run(capsys, *argv)[1])
    strip = lambda rows: [{k: v for k, v in r.items() if k not in TIMING_COLUMNS and r["run_id"] != "summary"} for r in rows]
    assert strip(a) == strip(b)


def test_trace_digest_flag(capsys):
    code, out, _ = _run(capsys, *SMALL, "--trace-digest", "--runs", "2")
    lines = [line for line in out.splitlines() if line.startswith("run ")]
    assert code == 0 and len(lines) == 2
    assert lines[0].startswith("run 0 seed 1 digest ")


def test_exit_codes(capsys, tmp_path):
    assert _run(capsys, "--lps", "0")[0] == 1
    assert _run(capsys, "--gaia", "maybe")[0] == 1
    assert _run(capsys, "--config", str(tmp_path / "missing.cfg"))[0] == 1
    assert _run(capsys, "--migration-size", "8")[0] == 1
    assert _run(capsys, "--transport", "tcp")[0] == 1
    roster = tmp_path / "roster.txt"
    roster.write_text("0 127.0.0.1 1\n1 127.0.0.1 2\n2 127.0.0.1 3\n")
    # roster size mismatch is a runtime failure
    assert _run(capsys, *SMALL, "--transport", "tcp", "--roster", str(roster), "--lps", "2")[0] == 2


def test_no_partial_csv_on_failure(capsys, tmp_path):
    out = tmp_path / "out.csv"
    roster = tmp_path / "roster.txt"
    roster.write_text("0 127.0.0.1 1\n")
    code, _, _ = _run(capsys, *SMALL, "--lps", "2", "--transport", "tcp", "--roster", str(roster), "--out", str(out))
    assert code == 2 and not out.exists()
    assert list(tmp_path.iterdir()) == [roster]
    assert _run(capsys, *SMALL, "--out", str(out))[0] == 0
    assert len(_rows(out.read_text())) == 1


def test_config_file(capsys, tmp_path):
    path = tmp_path / "s.cfg"
    path.write_text("# small\nses = 60\nsteps = 15\nside = 600\nlps = 3\ngaia = on\n")
    code, out, _ = _run(capsys, "--config", str(path), "--lps", "2")
    row = _rows(out)[0]
    assert code == 0 and row["lps"] == "2" and row["gaia"] == "on" and row["ses"] == "60"
    with pytest.raises(ConfigError):
        parse_config("bogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config("lps = two\n")


_configs = st.builds(
    ScenarioConfig,
    seed=st.integers(0, 2**31),
    lps=st.integers(1, 64),
    ses=st.integers(1, 10**6),
    side=st.one_of(st.none(), st.floats(1, 1e6, allow_nan=False)),
    speed=st.floats(0, 100, allow_nan=False),
    pi=st.floats(0, 1),
    gaia=st.booleans(),
    heuristic=st.sampled_from([1, 2, 3]),
    mf=st.floats(0.01, 50, allow_nan=False),
    band=st.one_of(st.none(), st.integers(0, 100)),
    transport=st.sampled_from(["local", "tcp"]),
    roster=st.one_of(st.none(), st.text("abc/._", min_size=1, max_size=12)),
    payload_delivery=st.booleans(),
)


@settings(max_examples=200, deadline=None)
@given(_configs)
def test_config_round_trip(cfg):
    text = serialize_config(cfg)
    assert parse_config(text) == cfg
    assert serialize_config(parse_config(text)) == text


def test_sweep_points():
    base = ScenarioConfig(ses=40, steps=10, side=500)
    assert len(SweepSpec(base, {"mf": [1.1, 1.5, 2.0]}).points()) == 3
    assert SweepSpec(base, {}).points() == [base]
    assert len(SweepSpec(base, {"mf": [1, 2], "speed": [1, 2, 3]}).points()) == 6
    with pytest.raises(SweepError):
        SweepSpec(base, {"mf": list(range(10)), "speed": list(range(10))}, cap=50).points()
    with pytest.raises(SweepError):
        SweepSpec(base, {"seed": [1, 2]}).points()


def test_best_mf_is_argmin_of_modeled_cost():
    base = ScenarioConfig(ses=200, lps=2, steps=40, side=1400, gaia=True, runs=2)
    rows = run_sweep(SweepSpec(base, {"mf": [1.1, 1.5, 2.0]}, baseline=True))
    assert len(rows) == 3
    mf, tec = best_mf(rows)
    assert tec == min(r["tec"] for r in rows)
    assert mf == next(r["config"].mf for r in rows if r["tec"] == tec)
    for r in rows:
        assert r["delta_lcr"] == pytest.approx(r["lcr"] - r["baseline_lcr"])
    with pytest.raises(SweepError):
        best_mf([])


def test_migc_isolation():
    base = ScenarioConfig(ses=300, lps=2, steps=80, side=1200, mf=1.2, payload_delivery=False)
    with pytest.raises(ConfigError):
        migc_isolation_run(replace(base, payload_delivery=True))
    small = migc_isolation_run(replace(base, migration_size=32))
    big = migc_isolation_run(replace(base, migration_size=81920))
    assert small.ledger_off.rcc_bytes == 0 and small.ledger_off.mig_bytes == 0
    assert small.ledger_on.rcc_bytes == 0
    assert small.ledger_off.rcc_count > 0
    assert small.ledger_on.mig_count == big.ledger_on.mig_count > 0
    assert big.bytes_per_migration >= 81920
    # same trace, same envelope overhead: the state part of each envelope grows 2560x
    overhead = small.bytes_per_migration - 32
    assert big.bytes_per_migration - small.bytes_per_migration == 81920 - 32
    assert (big.bytes_per_migration - overhead) / 32 == 2560
    assert small.migc_estimate == small.wct_on - small.wct_off
