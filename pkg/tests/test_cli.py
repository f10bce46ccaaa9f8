import subprocess
import sys

import pytest

from esopt import flatten as fl
from esopt.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main


def run(*argv):
    return main([str(a) for a in argv])


def test_models_lists_bundled(capsys):
    assert run("models") == EXIT_OK
    out = capsys.readouterr().out
    for name in ("mini-ies", "building-dr", "dh-network", "orc"):
        assert name in out


def test_build_writes_summary_and_document(tmp_path):
    assert run("build", "--model", "mini-ies", "--out", tmp_path) == EXIT_OK
    assert (tmp_path / "summary.txt").read_text().strip()
    assert (tmp_path / "system.json").read_text().lstrip().startswith("{")


def test_flatten_linearized_is_pure_milp(tmp_path):
    assert run("flatten", "--model", "mini-ies", "--discretize", "--linearize", "auto",
               "--out", tmp_path) == EXIT_OK
    text = (tmp_path / "mini-ies.lp").read_text()
    m = fl.parse_lp(text)
    assert m.is_linear and not m.nonlinear_constraints and m.integer_variables


def test_flatten_with_grid_file_and_listing(tmp_path):
    assert run("build", "--out", tmp_path) == EXIT_OK
    grids = tmp_path / "grids.txt"
    assert run("flatten", "--linearize", grids, "--method", "mc", "--out", tmp_path / "mc") == EXIT_OK
    assert (tmp_path / "mc" / "mini-ies.lp").exists()
    assert run("flatten", "--model", "orc", "--linearize", "none", "--format", "expr-listing",
               "--out", tmp_path) == EXIT_OK
    assert (tmp_path / "orc.txt").read_text().startswith("\\ expr-listing")


def test_solve_then_check(tmp_path):
    assert run("solve", "--out", tmp_path) == EXIT_OK
    sol = tmp_path / "solution.txt"
    assert sol.read_text().startswith("# status optimal")
    assert run("check", "--solution", sol, "--nonlinear", "--out", tmp_path / "nl") == EXIT_OK
    report = (tmp_path / "nl" / "feasibility.txt").read_text()
    assert report.startswith("max violation") and "row B.investment" in report
    assert run("check", "--solution", sol, "--no-nonlinear", "--out", tmp_path / "lin") == EXIT_OK


def test_check_reports_violation(tmp_path):
    assert run("solve", "--out", tmp_path) == EXIT_OK
    lines = (tmp_path / "solution.txt").read_text().splitlines()
    # push a design value far outside its bounds
    i = next(i for i, line in enumerate(lines) if line.startswith("B.E_nom "))
    lines[i] = "B.E_nom 1e7"
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(lines) + "\n")
    code = run("check", "--solution", bad, "--no-nonlinear", "--out", tmp_path / "r")
    assert code == EXIT_INFEASIBLE
    assert "VIOLATED" in (tmp_path / "r" / "feasibility.txt").read_text()


def test_pareto_csv(tmp_path):
    assert run("pareto", "--points", 3, "--out", tmp_path) == EXIT_OK
    rows = (tmp_path / "pareto.csv").read_text().splitlines()
    assert rows[0].startswith("objective_a,objective_b") and len(rows) >= 3


def test_cluster_keep_max(tmp_path):
    assert run("cluster", "--k", 11, "--keep-max", "--drop-zero", "--out", tmp_path) == EXIT_OK
    rows = (tmp_path / "clusters.csv").read_text().splitlines()
    assert len(rows) == 12
    assert rows[0] == "cluster,T_amb,Q_dem,weight"
    assert abs(sum(float(r.split(",")[-1]) for r in rows[1:]) - 1) <= 1e-12


def test_cluster_from_csv(tmp_path):
    data = tmp_path / "days.csv"
    data.write_text("T_amb,Q_dem\n" + "".join(f"{t},{max(0, 15 - t)}\n" for t in range(-5, 25)))
    assert run("cluster", "--data", data, "--k", 3, "--out", tmp_path) == EXIT_OK
    assert run("cluster", "--data", data, "--k", 3, "--keep-max", "nope") == EXIT_CONFIG


def test_config_errors(tmp_path, capsys):
    assert run("flatten", "--linearize", tmp_path / "missing.txt") == EXIT_CONFIG
    assert run("solve", "--linearize", "none") == EXIT_CONFIG
    assert run("cluster", "--k", 0) == EXIT_CONFIG
    assert run("solve", "--model", "unknown") == EXIT_CONFIG
    assert run("solve", "--objective", "nothing") == EXIT_CONFIG
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus = 1\n")
    assert run("solve", "--config", cfg) == EXIT_CONFIG


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# mini run\nk = 4\nseed = 3\n")
    assert run("cluster", "--config", cfg, "--out", tmp_path / "a") == EXIT_OK
    assert len((tmp_path / "a" / "clusters.csv").read_text().splitlines()) == 5
    assert run("cluster", "--config", cfg, "--k", 2, "--out", tmp_path / "b") == EXIT_OK
    assert len((tmp_path / "b" / "clusters.csv").read_text().splitlines()) == 3


def test_quiet_prints_only_paths(tmp_path, capsys):
    assert run("solve", "--quiet", "--out", tmp_path) == EXIT_OK
    cap = capsys.readouterr()
    assert cap.out.splitlines() == [str(tmp_path / "solution.txt")]
    assert cap.err == ""


@pytest.mark.parametrize("argv", [
    ("flatten",), ("solve",), ("cluster", "--k", "5", "--seed", "7"), ("pareto", "--points", "3")])
def test_reruns_are_byte_identical(tmp_path, argv):
    assert run(*argv, "--out", tmp_path / "1") == EXIT_OK
    assert run(*argv, "--out", tmp_path / "2") == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "1").iterdir())
    assert files
    for name in files:
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "esopt.cli", "flatten", "--linearize", "x.txt"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == EXIT_CONFIG
    assert "does not exist" in proc.stderr


def test_check_rejects_solution_from_other_encoding(tmp_path, capsys):
    assert run("solve", "--method", "mc", "--out", tmp_path) == EXIT_OK
    sol = tmp_path / "solution.txt"
    assert run("check", "--solution", sol, "--out", tmp_path / "cc") == EXIT_CONFIG
    assert "--method" in capsys.readouterr().err
    assert run("check", "--solution", sol, "--method", "mc", "--out", tmp_path / "mc") == EXIT_OK
