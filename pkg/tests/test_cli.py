import subprocess
import sys

import pytest

from sasadmm.cli import build_parser, main
from sasadmm.harness import read_csv


def _body(path):
    """CSV data lines with the time_s column removed."""
    out = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            out.append(line)
            continue
        cells = line.split(",")
        out.append(",".join(cells[:1] + cells[2:]))
    return out


def test_certify_inside_the_region(capsys):
    assert main(["certify", "--tau", "0.9", "--s", "1.09", "--beta", "1", "--trials", "100"]) == 0
    out = capsys.readouterr().out
    assert "100 passed" in out


def test_certify_outside_the_region(capsys):
    assert main(["certify", "--tau", "0", "--s", "2", "--beta", "1"]) == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "polynomial" in out and "-1" in out


def test_solve_quadratic_example(tmp_path):
    out = tmp_path / "r.csv"
    code = main(["solve", "--problem", "quadratic", "--budget-iters", "2000", "--tau", "0.9",
                 "--s", "1.09", "--seed", "7", "--out", str(out)])
    assert code == 0
    rows, cfg = read_csv(out)
    assert rows[-1].iter == 2000 and rows[-1].opt_err <= 1e-6
    assert cfg["seed"] == "7" and cfg["problem"] == "quadratic"


def test_same_arguments_give_identical_csvs(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        argv = ["solve", "--dims", "10", "40", "--estimator", "svrg", "--budget-iters", "30",
                "--seed", "3", "--out", str(p)]
        assert main(argv) == 0
    assert _body(paths[0]) == _body(paths[1])


@pytest.mark.parametrize("command", ["solve", "certify", "bench", "gen"])
def test_help_lists_every_flag_with_its_default(command):
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    text = " ".join(sub.format_help().split())
    for act in sub._actions:
        if act.dest == "help":
            continue
        assert act.option_strings[-1] in text
        if not act.required:
            assert f"(default: {act.default})" in text, act.dest


def test_unknown_flag_is_a_config_error(capsys):
    assert main(["solve", "--frobnicate"]) == 2


def test_bad_values_are_config_errors(tmp_path):
    assert main(["solve", "--problem", "quadratic", "--beta", "-1", "--budget-iters", "1"]) == 2
    assert main(["solve", "--problem", "quadratic", "--tau", "0", "--s", "2"]) == 2
    assert main(["solve", "--problem", "quadratic", "--dims", "2", "3"]) == 2


def test_config_file_values_sit_below_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# quadratic run\nproblem = quadratic\nbudget-iters = 7\nseed = 4\n")
    out = tmp_path / "r.csv"
    assert main(["solve", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
    rows, echo = read_csv(out)
    assert rows[-1].iter == 7 and echo["seed"] == "9" and echo["problem"] == "quadratic"
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert main(["solve", "--config", str(bad)]) == 2


def test_missing_files_are_io_errors(tmp_path):
    assert main(["solve", "--data", str(tmp_path / "nope.libsvm")]) == 4
    assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == 4


def test_malformed_libsvm_is_an_io_error(tmp_path, capsys):
    path = tmp_path / "bad.libsvm"
    path.write_text("+1 1:0.5\n-1 2:oops\n")
    assert main(["solve", "--data", str(path), "--budget-iters", "1"]) == 4
    assert "line 2" in capsys.readouterr().err


def test_gen_then_solve(tmp_path):
    data = tmp_path / "d.libsvm"
    argv = ["gen", "--features", "8", "--samples", "40", "--seed", "1", "--out", str(data)]
    assert main(argv) == 0
    out = tmp_path / "r.csv"
    assert main(["solve", "--data", str(data), "--budget-iters", "20", "--out", str(out)]) == 0
    rows, _ = read_csv(out)
    assert rows[-1].iter == 20


def test_bench_writes_one_csv_per_cell(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("problem = quadratic\nbudget-iters = 5\ntau = 0.0, 0.9\n")
    out_dir = tmp_path / "out"
    assert main(["bench", "--config", str(cfg), "--out-dir", str(out_dir)]) == 0
    files = sorted(p.name for p in out_dir.iterdir())
    assert files == ["cell000.csv", "cell001.csv"]
    assert read_csv(out_dir / "cell001.csv")[1]["tau"] == "0.9"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sasadmm", "certify", "--trials", "3"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "3 passed" in res.stdout


@pytest.mark.parametrize("method", ["sas", "as-admm"])
def test_solve_methods_on_the_alm_problem(method):
    code = main(["solve", "--problem", "alm", "--method", method, "--budget-iters", "3"])
    assert code == 2


def test_alm_problem_solves(capsys):
    assert main(["solve", "--problem", "alm", "--s", "1.5", "--budget-iters", "200",
                 "--deterministic"]) == 0
    assert "alm:" in capsys.readouterr().out
