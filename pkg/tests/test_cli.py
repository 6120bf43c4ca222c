import csv
import subprocess
import sys

import numpy as np
import pytest

from aisimpute import cli
from aisimpute.data import load_factors
from aisimpute.solver import SolverDivergence, SolverTrace


@pytest.fixture(scope="module")
def matrix_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("m") / "data"
    assert cli.main(["synth-matrix", "--m", "80", "--seed", "1", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def tensor_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("t") / "data"
    assert cli.main(["synth-tensor", "--m", "80", "--seed", "1", "--out", str(d)]) == 0
    return d


def test_unknown_flag_is_usage_error(capsys):
    assert_exit(["complete-matrix", "--bogus"], 1)
    assert "usage:" in capsys.readouterr().err


def assert_exit(argv, code):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == code


def test_missing_subcommand():
    assert_exit([], 1)


def test_version(capsys):
    assert_exit(["--version"], 0)
    assert capsys.readouterr().out.strip() == cli.__version__


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "aisimpute", "synth-matrix", "--m", "5",
                          "--out", "x"], capture_output=True, text=True)
    assert out.returncode == 1
    assert "error" in out.stderr


def test_matrix_pipeline(matrix_dir, tmp_path, capsys):
    trace, out = tmp_path / "trace.csv", tmp_path / "f.txt"
    code = cli.main(["complete-matrix", "--data", str(matrix_dir), "--lambda", "2.0", "--post",
                     "--trace", str(trace), "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0
    assert "solver: nmse=" in text and "post: nmse=" in text
    with open(trace, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iter", "seconds", "objective", "rank", "lambda_t", "restart",
                             "valid_metric"]
    iters = [int(r["iter"]) for r in rows]
    assert iters == sorted(set(iters)) and iters[0] == 1
    assert all(np.isfinite(float(r["valid_metric"])) for r in rows)
    assert len(SolverTrace.from_csv(trace)) == len(rows)
    assert load_factors(out).shape == (80, 80)
    assert cli.main(["eval", "--data", str(matrix_dir), "--factors", str(out)]) == 0
    post_line = [l for l in text.splitlines() if l.startswith("post:")][0]
    assert capsys.readouterr().out.strip() == post_line[len("post: "):]


def test_matrix_auto_lambda(matrix_dir, capsys):
    assert cli.main(["complete-matrix", "--data", str(matrix_dir), "--post"]) == 0
    assert "selected lambda=" in capsys.readouterr().out


@pytest.mark.parametrize("solver", ["soft-impute", "apg-exact"])
def test_matrix_other_solvers(matrix_dir, solver, capsys):
    assert cli.main(["complete-matrix", "--data", str(matrix_dir), "--lambda", "2.0",
                     "--solver", solver, "--tol", "1e-6", "--max-iter", "2000"]) == 0


@pytest.mark.parametrize("reg", ["tnn:6", "lsp:1.0", "capped:3.0"])
def test_matrix_nonconvex(matrix_dir, reg):
    assert cli.main(["complete-matrix", "--data", str(matrix_dir), "--lambda", "2.0",
                     "--reg", reg]) == 0


def test_logistic_reports_accuracy(tmp_path, capsys):
    rng = np.random.default_rng(0)
    M = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 30))
    keys = rng.permutation(1200)
    for name, part in (("train", keys[:500]), ("test", keys[500:])):
        with open(tmp_path / (name + ".txt"), "w") as fh:
            fh.write("# dims: 40 30\n")
            for k in np.sort(part):
                i, j = divmod(int(k), 30)
                fh.write("%d %d %d\n" % (i + 1, j + 1, 1 if M[i, j] >= 0 else -1))
    code = cli.main(["complete-matrix", "--train", str(tmp_path / "train.txt"),
                     "--test", str(tmp_path / "test.txt"), "--loss", "logistic",
                     "--lambda", "1.0", "--post"])
    assert code == 0
    assert "solver: accuracy=" in capsys.readouterr().out


def test_tensor_pipeline(tensor_dir, tmp_path, capsys):
    out = tmp_path / "f.txt"
    code = cli.main(["complete-tensor", "--data", str(tensor_dir), "--lambda", "3.0", "--post",
                     "--out", str(out)])
    assert code == 0
    assert "ranks=3,3,0" in capsys.readouterr().out
    assert load_factors(out).ranks[:2] == (3, 3)
    assert cli.main(["eval", "--data", str(tensor_dir), "--factors", str(out)]) == 0


def test_tensor_rejects_soft_impute(tensor_dir):
    assert cli.main(["complete-tensor", "--data", str(tensor_dir), "--lambda", "3.0",
                     "--solver", "soft-impute"]) == 1


def test_tensor_scale_length_checked(tensor_dir):
    assert cli.main(["complete-tensor", "--data", str(tensor_dir), "--lambda", "3.0",
                     "--lambda-scale", "1,1"]) == 1


def test_apg_exact_refused_above_cap(tmp_path, capsys):
    (tmp_path / "train.txt").write_text("# dims: 2001 2001\n1 1 1.0\n2 2 1.0\n")
    (tmp_path / "test.txt").write_text("# dims: 2001 2001\n3 3 1.0\n")
    code = cli.main(["complete-matrix", "--train", str(tmp_path / "train.txt"),
                     "--test", str(tmp_path / "test.txt"), "--solver", "apg-exact",
                     "--lambda", "1.0"])
    assert code == 2
    assert "cap" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["complete-matrix", "--data", "/nonexistent/dir", "--lambda", "1"],
    ["complete-matrix", "--lambda", "1"],
    ["eval", "--data", "/nonexistent", "--factors", "f"],
])
def test_input_errors_exit_1(argv):
    assert cli.main(argv) == 1


def test_bad_config_exit_1(matrix_dir):
    assert cli.main(["complete-matrix", "--data", str(matrix_dir), "--lambda", "1",
                     "--nu", "1.5"]) == 1
    assert cli.main(["complete-matrix", "--data", str(matrix_dir), "--lambda", "1",
                     "--reg", "tnn"]) == 1
    assert_exit(["complete-matrix", "--data", str(matrix_dir), "--lambda", "-1"], 1)
    assert_exit(["complete-matrix", "--data", str(matrix_dir), "--reg", "tnn:0"], 1)


def test_wrong_data_kind_exit_1(matrix_dir, tensor_dir):
    assert cli.main(["complete-tensor", "--data", str(matrix_dir), "--lambda", "1"]) == 1
    assert cli.main(["complete-matrix", "--data", str(tensor_dir), "--lambda", "1"]) == 1


def test_divergence_exit_2(matrix_dir, monkeypatch):
    def diverge(*args, **kwargs):
        raise SolverDivergence("objective became nan at iteration 3")

    monkeypatch.setattr(cli, "ais_impute", diverge)
    assert cli.main(["complete-matrix", "--data", str(matrix_dir), "--lambda", "1"]) == 2
