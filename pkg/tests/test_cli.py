import csv
import io
from pathlib import Path

import pytest

import epcmig
from epcmig.cli import main
from epcmig.expect import ExpectedRecord, compare_expected, parse_tolerance

SCN = Path(epcmig.__file__).parent / "data" / "scenarios"


def _scn(tmp_path, text, name="s.scn"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_emits_sorted_csv(tmp_path, capsys):
    path = _scn(tmp_path, "scenario.kind = spgw, hss\nscenario.virt = container\n")
    assert main(["run", path, "--profile", "openroadm"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["scenario_id"] for r in rows] == ["openroadm-hss-container-small-short-vpn",
                                                 "openroadm-spgw-container-small-short-vpn"]
    assert rows[0]["migration_s"] == "32.000000"
    assert rows[1]["srt_s"] == "2.000000"


def test_run_writes_csv_and_traces(tmp_path, capsys):
    path = _scn(tmp_path, "scenario.kind = mme\nscenario.virt = container\n")
    out = tmp_path / "out.csv"
    tdir = tmp_path / "traces"
    assert main(["run", path, "--profile", "openroadm", "--csv", str(out), "--trace", "--trace-dir", str(tdir)]) == 0
    assert out.read_text().startswith("scenario_id,")
    wire = tdir / "openroadm-mme-container-small-short-vpn.wire.tsv"
    assert "INIT" in wire.read_text()
    assert (tdir / "openroadm-mme-container-small-short-vpn.events.txt").stat().st_size > 0


def test_run_is_byte_reproducible(tmp_path):
    path = _scn(tmp_path, "scenario.kind = spgw\nscenario.virt = container, vm\nscenario.length_km = 25\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", path, "--profile", "cloudlab", "--csv", str(a)]) == 0
    assert main(["run", path, "--profile", "cloudlab", "--csv", str(b), "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_empty_set_gives_header_only(tmp_path, capsys):
    path = _scn(tmp_path, "scenario.kind =\nscenario.virt = vm\n")
    assert main(["run", path, "--profile", "openroadm"]) == 0
    assert capsys.readouterr().out.count("\n") == 1


def test_grid_has_36_rows(capsys):
    assert main(["run", str(SCN / "grid.scn"), "--profile", "openroadm", "--workers", "2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 37


def test_check_against_profile_expectations(capsys):
    assert main(["check", str(SCN / "grid.scn"), "--profile", "openroadm"]) == 0
    out = capsys.readouterr()
    assert "PASS\topenroadm-hss-container-small-short-vpn\tmigration_s" in out.out
    assert "FAIL" not in out.out
    assert "expectations met" in out.err


def test_check_failing_expectation_exits_nonzero(tmp_path, capsys):
    path = _scn(tmp_path, "scenario.kind = hss\nscenario.virt = container\n")
    exp = _scn(tmp_path, "openroadm-hss-container-small-short-vpn.migration_s = 40 ±5% | deliberately wrong\n",
               "e.expected")
    assert main(["check", path, "--profile", "openroadm", "--expected", exp]) == 1
    assert "FAIL(8)" in capsys.readouterr().out


def test_check_strict_on_unrun_scenario(tmp_path, capsys):
    path = _scn(tmp_path, "scenario.kind = hss\nscenario.virt = container\n")
    exp = _scn(tmp_path, "openroadm-mme-vm-small-short-vpn.migration_s = 1 | x\n", "e.expected")
    assert main(["check", path, "--profile", "openroadm", "--expected", exp]) == 1
    assert "not run" in capsys.readouterr().err


def test_failing_scenario_is_isolated(capsys):
    assert main(["run", str(SCN / "mme-no-repair.scn")]) == 1
    err = capsys.readouterr().err
    assert "RepairUnsupported" in err


def test_utility_off_scenario_runs(capsys):
    assert main(["run", str(SCN / "spgw-utility-off.scn")]) == 0
    row = next(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert row["scenario_id"].endswith("-noutil")
    assert float(row["srt_s"]) > 2


def test_config_errors_exit_2(tmp_path, capsys):
    path = _scn(tmp_path, "scenario.kind = hss\nscenario.virt = vm\nscenario.overlay = gre\n")
    assert main(["run", path, "--profile", "openroadm"]) == 2
    assert "scenario.overlay" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.scn"), "--profile", "openroadm"]) == 2
    assert main(["run", path, "--profile", "nowhere"]) == 2


def test_dump_and_inspect_blob(tmp_path, capsys):
    out = tmp_path / "mme.blob"
    assert main(["dump-blob", str(out), "--kind", "mme"]) == 0
    assert "42000000 bytes logical" in capsys.readouterr().out
    assert main(["inspect-blob", str(out)]) == 0
    text = capsys.readouterr().out
    for tag in ("PSTREE", "PAGES", "SK-SCTP"):
        assert tag in text
    data = bytearray(out.read_bytes())
    data[-1] ^= 0xFF
    out.write_bytes(bytes(data))
    assert main(["inspect-blob", str(out)]) == 2


def test_list_profiles(capsys):
    assert main(["list-profiles"]) == 0
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert {"openroadm", "cloudlab"} <= set(names)


def test_compare_expected_examples():
    v, tol, _ = parse_tolerance("32 ±5%")
    rec = ExpectedRecord("s", "migration_s", v, tol)
    assert compare_expected({"scenario_id": "s", "migration_s": 32.0}, rec).passed
    c = compare_expected({"scenario_id": "s", "migration_s": 40.0}, rec)
    assert not c.passed and c.delta == 8.0
    with pytest.raises(KeyError):
        compare_expected({"scenario_id": "t", "migration_s": 32.0}, rec)
    with pytest.raises(Exception):
        ExpectedRecord("s", "m", 1.0, -1.0)
