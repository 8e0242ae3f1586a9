import json

import numpy as np
import pytest

from hdgch.cli import CHECK_ERROR, USAGE_ERROR, build_parser, emit_csv, \
    emit_snapshot, main, parse_config
from hdgch.experiments import CONVERGENCE_CSV_HEADER


def test_defaults_mirror_reference_setup():
    args = build_parser().parse_args(["convergence"])
    assert args.alpha == 10.0
    assert args.tau_c == 10.0
    assert args.scheme == "centered"
    assert args.k == 0
    assert args.dt_rule == "table"
    assert args.preconditioner == "none"


def test_empty_argv_is_usage_error():
    with pytest.raises(SystemExit) as err:
        parse_config([])
    assert err.value.code == USAGE_ERROR


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as err:
        parse_config(["convergence", "--frobnicate", "1"])
    assert err.value.code == USAGE_ERROR


def test_levels_parsing():
    from hdgch.cli import _parse_levels
    assert _parse_levels("3..5") == [3, 4, 5]
    assert _parse_levels("2,4,6") == [2, 4, 6]


def test_emit_csv_empty_table(tmp_path):
    path = tmp_path / "empty.csv"
    emit_csv("a,b,c", [], path)
    assert path.read_text() == "a,b,c\n"


def test_emit_csv_formats_and_determinism(tmp_path):
    rows = [{"a": 1, "b": 0.000123456789, "c": float("nan")}]
    p1, p2 = tmp_path / "x1.csv", tmp_path / "x2.csv"
    emit_csv("a,b,c", rows, p1)
    emit_csv("a,b,c", rows, p2)
    assert p1.read_bytes() == p2.read_bytes()
    line = p1.read_text().splitlines()[1]
    assert line == "1,1.23457e-04,"


def test_emit_snapshot_constant_grid(tmp_path):
    grid = np.ones((8, 8))
    path = tmp_path / "snap.vtk"
    emit_snapshot(grid, path, t=0.25)
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "t=0.25" in text[1]
    assert "DIMENSIONS 8 8 1" in text[4]
    data = np.array([float(v) for ln in text[10:] for v in ln.split()])
    assert data.size == 64
    assert np.abs(data - 1.0).max() == 0.0


def test_project_command_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "proj"
    rc = main(["project", "--k", "0", "--levels", "2..3",
               "--out", str(out)])
    assert rc == 0
    csv = (out / "projection.csv").read_text().splitlines()
    assert csv[0] == ("level,h,error_u,rate_u,error_q,rate_q,"
                      "error_phi,rate_phi,error_p,rate_p")
    assert len(csv) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "project"
    assert manifest["config"]["k"] == 0


def test_convergence_command_rerun_reproduces_bytes(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    argv = ["convergence", "--k", "0", "--levels", "2..3", "--T", "0.1",
            "--dt", "0.01", "--dt-rule", "fixed"]
    assert main(argv + ["--out", str(out1)]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert main(manifest["argv"][:-2] + ["--out", str(out2)]) == 0
    assert (out1 / "convergence.csv").read_bytes() == \
        (out2 / "convergence.csv").read_bytes()
    header = (out1 / "convergence.csv").read_text().splitlines()[0]
    assert header == CONVERGENCE_CSV_HEADER


def test_simulate_command_smoke(tmp_path):
    out = tmp_path / "sim"
    rc = main(["simulate", "--case", "cross", "--level", "3",
               "--T", "0.002", "--dt", "0.001", "--snap-times", "0,0.002",
               "--lattice", "16", "--out", str(out)])
    assert rc == 0
    assert (out / "diagnostics.csv").exists()
    assert (out / "snapshot_00000000.vtk").exists()
    assert (out / "snapshot_00000002.vtk").exists()
    assert (out / "snapshot_00000002.csv").exists()
    diag = (out / "diagnostics.csv").read_text().splitlines()
    assert diag[0] == "step,t,mass,energy,newton_iters,minres_iters"
    assert len(diag) == 4


def test_simulate_h_flag_selects_level(tmp_path):
    from hdgch.cli import _sim_level
    args = build_parser().parse_args(["simulate", "--h", "0.02"])
    assert _sim_level(args) == 6
    args = build_parser().parse_args(["simulate", "--level", "4"])
    assert _sim_level(args) == 4


def test_check_flag_failure_exit_code(tmp_path):
    # a single-level run cannot demonstrate the required rates
    out = tmp_path / "chk"
    rc = main(["project", "--k", "0", "--levels", "2..2", "--check",
               "--out", str(out)])
    assert rc == CHECK_ERROR
