"""Command-line behavior: output files, manifests, exit codes, formats.

Runs the entry point in-process (argv -> return code) so file effects and
exit codes can be asserted hermetically; one test drives the installed
console script end to end through a real process.  Contract highlights
exercised here: grids emit CSV plus a JSON sidecar with entropy and all
eight k <= 3 densities; every run with --manifest leaves a record whose
only run-to-run difference is wall time; validation problems exit 2
without a manifest write, solver non-convergence exits 3 while still
writing outputs and the manifest.
"""

import json
import shutil
import subprocess

import numpy as np
import pytest

from permutons.cli import main


def run(tmp_path, *argv):
    return main([str(a) for a in argv])


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def test_star12_outputs_and_manifest(tmp_path):
    out = tmp_path / "grid.csv"
    man = tmp_path / "run.json"
    code = main(["star12", "--rho", "0.5", "--grid", "32",
                 "--out", str(out), "--manifest", str(man)])
    assert code == 0
    assert load(out).splitlines()[0] == "m=32"
    side = json.loads(load(str(out) + ".json"))
    assert side["m"] == 32
    # rho = 1/2 is the uniform permuton: entropy exactly zero, not -0.0
    assert side["entropy"] == 0 and str(side["entropy"]) == "0"
    assert set(side["densities"]) == {"12", "21", "123", "132", "213",
                                      "231", "312", "321"}
    assert side["densities"]["12"] == 0.5
    record = json.loads(load(man))
    assert record["exit_code"] == 0
    assert record["subcommand"] == "star12"
    assert record["scalars"]["r"] == 0
    assert "numpy" in record["versions"]


def test_manifest_identical_modulo_wall_time(tmp_path):
    out = tmp_path / "sweep.csv"
    man = tmp_path / "run.json"
    outs, mans = [], []
    for _ in (1, 2):
        code = main(["sweep-ab", "--na", "3", "--nb", "2", "--trials", "500",
                     "--seed", "11", "--out", str(out), "--manifest", str(man)])
        assert code == 0
        outs.append(load(out))
        mans.append(json.loads(load(man)))
    assert outs[0] == outs[1]
    for m in mans:
        assert m.pop("wall_time_s") >= 0.0
    assert mans[0] == mans[1]


def test_argument_errors_exit_2(tmp_path):
    man = tmp_path / "m.json"
    g = tmp_path / "g.csv"
    main(["star12", "--rho", "0.4", "--grid", "8", "--out", str(g)])
    assert main(["density", "--in", str(g), "--tau", "99",
                 "--manifest", str(man)]) == 2
    assert not man.exists()  # validation failures leave no manifest
    assert main(["star12", "--r", "1.0", "--rho", "0.5"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["ldp", "--rho", "0.4", "--eps", "0.05", "--n", "9999"]) == 2


def test_missing_input_file_exits_2(tmp_path):
    assert main(["entropy", "--in", str(tmp_path / "absent.csv")]) == 2


def test_solver_divergence_exits_3_with_diagnostics(tmp_path):
    out = tmp_path / "sol.json"
    man = tmp_path / "m.json"
    code = main(["solve-star", "--terms", "1,0;2,0", "--targets", "0.5,0.2",
                 "--out", str(out), "--manifest", str(man)])
    assert code == 3
    diag = json.loads(load(out))
    assert diag["converged"] is False
    assert diag["residual"] > 0.0
    assert len(diag["alpha"]) == 2
    record = json.loads(load(man))
    assert record["exit_code"] == 3
    assert record["scalars"]["converged"] is False


def test_solver_success_json(tmp_path):
    out = tmp_path / "sol.json"
    code = main(["solve-star", "--terms", "1,0;2,0",
                 "--targets", "0.5,0.53", "--out", str(out)])
    assert code == 0
    sol = json.loads(load(out))
    assert sol["converged"] is True
    assert np.abs(np.array(sol["densities"]) - (0.5, 0.53)).max() <= 1e-9
    assert sol["entropy"] == pytest.approx(-0.85295297934253811, abs=1e-8)


def test_optimize_writes_grid_and_sidecar(tmp_path):
    out = tmp_path / "opt.csv"
    pgm = tmp_path / "opt.pgm"
    code = main(["optimize", "--constraints", "12=0.4", "--grid", "16",
                 "--out", str(out), "--pgm", str(pgm)])
    assert code == 0
    side = json.loads(load(str(out) + ".json"))
    assert side["densities"]["12"] == pytest.approx(0.4, abs=1e-4)
    header = load(pgm).splitlines()
    assert header[0] == "P2"
    assert header[1] == "16 16"
    assert header[2] == "255"
    body = [int(v) for row in header[3:] for v in row.split()]
    assert len(body) == 256 and max(body) == 255


def test_density_exact_and_mc(tmp_path, capsys):
    g = tmp_path / "g.csv"
    main(["star12", "--r", "-2.0", "--grid", "16", "--out", str(g)])
    capsys.readouterr()
    assert main(["density", "--in", str(g), "--tau", "12"]) == 0
    exact = capsys.readouterr().out.splitlines()
    assert exact[1] == "stderr = 0" and exact[2] == "trials = 0"
    value = float(exact[0].split("=")[1])
    assert main(["density", "--in", str(g), "--tau", "12", "--mc",
                 "--trials", "2e4", "--seed", "3"]) == 0
    mc = capsys.readouterr().out.splitlines()
    mc_value = float(mc[0].split("=")[1])
    mc_err = float(mc[1].split("=")[1])
    assert mc[2] == "trials = 20000"
    assert abs(mc_value - value) <= 4 * mc_err


def test_entropy_refinement_lines(tmp_path, capsys):
    g = tmp_path / "g.csv"
    main(["star12", "--r", "-3.0", "--grid", "32", "--out", str(g)])
    capsys.readouterr()
    assert main(["entropy", "--in", str(g), "--levels", "8,16,32"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "m = 32"
    vals = [float(l.split("=")[-1]) for l in lines[2:]]
    assert len(vals) == 3 and vals[0] >= vals[1] >= vals[2]


def test_heatflow_reports_entropy_gain(tmp_path, capsys):
    g = tmp_path / "g.csv"
    main(["star12", "--r", "-4.0", "--grid", "32", "--out", str(g)])
    capsys.readouterr()
    out = tmp_path / "flow.csv"
    assert main(["heatflow", "--in", str(g), "--t", "0.1",
                 "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    before = float(lines[0].split("=")[1])
    after = float(lines[1].split("=")[1])
    assert after > before
    assert json.loads(load(str(out) + ".json"))["entropy"] == \
        pytest.approx(after, abs=1e-12)


def test_insertion_extract_then_reconstruct(tmp_path, capsys):
    g = tmp_path / "g.csv"
    main(["star12", "--r", "-2.0", "--grid", "32", "--out", str(g)])
    capsys.readouterr()
    fam = tmp_path / "fam.csv"
    assert main(["insertion", "--in", str(g), "--out", str(fam)]) == 0
    ent_line = capsys.readouterr().out.splitlines()[0]
    assert ent_line.startswith("insertion_entropy = ")
    assert load(fam).splitlines()[0] == "mt=32,my=32"
    rec = tmp_path / "rec.csv"
    assert main(["insertion", "--in", str(fam), "--grid", "16",
                 "--out", str(rec)]) == 0
    corr = float(capsys.readouterr().out.splitlines()[0].split("=")[1])
    assert corr < 1e-2
    assert load(rec).splitlines()[0] == "m=16"
    # reconstruction without a target resolution is a usage error
    assert main(["insertion", "--in", str(fam)]) == 2


def test_region_csv(tmp_path):
    out = tmp_path / "region.csv"
    assert main(["region", "--model", "123-321", "--samples", "5",
                 "--out", str(out)]) == 0
    lines = load(out).splitlines()
    assert lines[0] == "label,t,x,y"
    assert lines[1] == "F1,0,0,1"
    labels = {l.split(",")[0] for l in lines[1:]}
    assert labels == {"F1", "F2", "C", "D", "E"}
    out2 = tmp_path / "star.csv"
    assert main(["region", "--model", "star23", "--samples", "3",
                 "--out", str(out2)]) == 0
    assert {l.split(",")[0] for l in load(out2).splitlines()[1:]} == {
        "star23-lower", "star23-upper"}


def test_sweep_csv_header_and_shape(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep-ab", "--na", "4", "--nb", "3", "--trials", "200",
                 "--seed", "5", "--out", str(out)]) == 0
    lines = load(out).splitlines()
    assert lines[0] == "a,b,rho12,rho123"
    assert len(lines) == 1 + 12


def test_sample_is_seeded(tmp_path, capsys):
    g = tmp_path / "g.csv"
    main(["star12", "--r", "2.0", "--grid", "16", "--out", str(g)])
    capsys.readouterr()
    assert main(["sample", "--in", str(g), "--n", "30", "--seed", "9"]) == 0
    first = capsys.readouterr().out.strip()
    assert main(["sample", "--in", str(g), "--n", "30", "--seed", "9"]) == 0
    second = capsys.readouterr().out.strip()
    assert first == second
    vals = sorted(int(v) for v in first.split())
    assert vals == list(range(1, 31))


def test_ldp_text_and_json(tmp_path, capsys):
    assert main(["ldp", "--rho", "0.4", "--eps", "0.05", "--n", "50,100"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("n=50: estimate = ")
    out = tmp_path / "ldp.json"
    assert main(["ldp", "--rho", "0.4", "--eps", "0.05", "--n", "50",
                 "--json", "--out", str(out)]) == 0
    data = json.loads(load(out))
    assert data["estimates"][0] == pytest.approx(-0.037457156522116293,
                                                 abs=1e-12)


def test_pde_check(tmp_path, capsys):
    g = tmp_path / "g.csv"
    main(["star12", "--r", "-2.0", "--grid", "64", "--out", str(g)])
    capsys.readouterr()
    assert main(["pde-check", "--in", str(g), "--model", "12"]) == 0
    lines = capsys.readouterr().out.splitlines()
    alpha = float(lines[0].split("=")[1])
    rms = float(lines[1].split("=")[1])
    assert alpha == pytest.approx(-2.0, abs=1e-2)
    assert rms <= 1e-3


def test_dimple_output(capsys):
    assert main(["dimple"]) == 0
    lines = capsys.readouterr().out.splitlines()
    s = float(lines[0].split("=")[1])
    r = float(lines[1].split("=")[1])
    assert (s, r) == pytest.approx((0.653, 0.278), abs=1e-3)


def test_console_script_round_trip(tmp_path):
    exe = shutil.which("permutons")
    assert exe, "console script should be on PATH after installation"
    out = tmp_path / "g.csv"
    proc = subprocess.run(
        [exe, "star12", "--rho", "0.3", "--grid", "16", "--out", str(out),
         "--threads", "1"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert "entropy = " in proc.stdout
    assert load(out).splitlines()[0] == "m=16"
