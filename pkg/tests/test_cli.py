import json

import numpy as np
import pytest

from tensorcomp import cli
from tensorcomp.io_formats import read_cp, read_factors, read_observations, read_tensor
from tensorcomp.solvers import SolverConfig, solve_as_matrix
from tensorcomp.workbench import generalization_error


@pytest.fixture
def data_files(tmp_path):
    truth = tmp_path / "x.ten"
    obs = tmp_path / "d.obs"
    assert cli.main(["synth", "--shape", "8,8,8", "--ranks", "2,2,2", "--seed", "3", "--out", str(truth)]) == 0
    assert cli.main(["mask", "--tensor", str(truth), "--fraction", "0.6", "--seed", "4", "--out", str(obs)]) == 0
    return truth, obs


def test_synth_and_mask(data_files):
    truth, obs = data_files
    X = read_tensor(truth)
    assert X.shape == (8, 8, 8)
    observed = read_observations(obs)
    assert observed.size == 308
    np.testing.assert_array_equal(observed.values, X.values[observed.linear_indices])


def test_mask_with_noise(data_files, tmp_path):
    truth, _ = data_files
    noisy = tmp_path / "n.obs"
    assert cli.main(["mask", "--tensor", str(truth), "--fraction", "0.6", "--seed", "4",
                     "--noise", "0.1", "--out", str(noisy)]) == 0
    X = read_tensor(truth)
    observed = read_observations(noisy)
    assert not np.array_equal(observed.values, X.values[observed.linear_indices])


def test_complete_then_eval(data_files, tmp_path, capsys):
    truth, obs = data_files
    out = tmp_path / "xhat.ten"
    code = cli.main(["complete", "--obs", str(obs), "--method", "constraint", "--tol", "1e-4",
                     "--max-iter", "5000", "--out", str(out), "--components", str(tmp_path / "z.fac")])
    assert code == 0
    diag = json.loads(out.with_suffix(".json").read_text())
    assert diag["converged"] is True and diag["final_gap"] < 1e-4
    assert (tmp_path / "z.fac").exists()
    capsys.readouterr()

    assert cli.main(["eval", "--estimate", str(out), "--truth", str(truth), "--obs", str(obs)]) == 0
    error = float(capsys.readouterr().out.strip().splitlines()[-1])
    assert error < 1e-2
    assert error == generalization_error(read_tensor(out), read_tensor(truth), read_observations(obs))


def test_matrix_cli_matches_library(data_files, tmp_path):
    _, obs = data_files
    out = tmp_path / "m.ten"
    code = cli.main(["complete", "--obs", str(obs), "--method", "matrix", "--mode", "3",
                     "--max-iter", "40", "--out", str(out)])
    observed = read_observations(obs)
    sol = solve_as_matrix(observed, observed.shape, 2, SolverConfig(max_iter=40))
    assert code == (0 if sol.diagnostics.converged else 2)
    np.testing.assert_array_equal(read_tensor(out).data, sol.X_hat.data)


def test_max_iter_exit_code(data_files, tmp_path):
    _, obs = data_files
    code = cli.main(["complete", "--obs", str(obs), "--method", "mixture", "--max-iter", "3",
                     "--tol", "1e-9", "--out", str(tmp_path / "x.ten")])
    assert code == 2


@pytest.mark.parametrize("mode", ["0", "4"])
def test_invalid_mode_names_the_flag(data_files, tmp_path, capsys, mode):
    _, obs = data_files
    code = cli.main(["complete", "--obs", str(obs), "--method", "matrix", "--mode", mode,
                     "--out", str(tmp_path / "x.ten")])
    assert code == 1
    assert "--mode" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["synth", "--shape", "4,4"]) == 1
    assert cli.main(["synth", "--shape", "4,x", "--ranks", "1,1", "--out", str(tmp_path / "x.ten")]) == 1
    assert "--shape" in capsys.readouterr().err
    assert cli.main(["complete", "--obs", "d.obs", "--method", "tucker"]) == 1
    assert cli.main(["synth", "--shape", "4,4", "--ranks", "1,1"]) == 1


def test_bad_inputs_exit_1(tmp_path):
    bad = tmp_path / "bad.obs"
    bad.write_text("obs v1\n2 2\n1 1 1.0\n1 1 2.0\n")
    assert cli.main(["complete", "--obs", str(bad), "--method", "constraint", "--out", str(tmp_path / "x.ten")]) == 1
    assert cli.main(["complete", "--obs", str(tmp_path / "missing.obs"), "--method", "constraint",
                     "--out", str(tmp_path / "x.ten")]) == 1
    assert cli.main(["synth", "--shape", "4,4", "--ranks", "5,1", "--out", str(tmp_path / "x.ten")]) == 1
    assert cli.main(["complete", "--obs", str(bad), "--method", "constraint", "--lambda", "-1",
                     "--out", str(tmp_path / "x.ten")]) == 1


def test_complete_is_reproducible(data_files, tmp_path):
    _, obs = data_files
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.ten"
        cli.main(["complete", "--obs", str(obs), "--method", "constraint", "--gamma", "1,1,1",
                  "--max-iter", "30", "--omit-timing", "--out", str(out)])
        outputs.append((out.read_bytes(), out.with_suffix(".json").read_bytes()))
    assert outputs[0] == outputs[1]


def test_factors(data_files, tmp_path, capsys):
    _, obs = data_files
    out, tucker, core = tmp_path / "cp.fac", tmp_path / "tucker.fac", tmp_path / "core.ten"
    code = cli.main(["factors", "--obs", str(obs), "--n-components", "2", "--tol", "1e-4",
                     "--max-iter", "5000", "--out", str(out), "--tucker", str(tucker), "--core", str(core)])
    assert code == 0
    cp = read_cp(out)
    assert cp.shape == (8, 8, 8) and cp.n_components == 2
    assert read_tensor(core).shape == (2, 2, 2)
    factors, weights = read_factors(tucker)
    assert weights is None and [A.shape for A in factors] == [(8, 2)] * 3
    assert "Tucker ranks (2, 2, 2)" in capsys.readouterr().out


def test_sweep_csv_is_reproducible(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert cli.main(["sweep", "--shape", "6,6,6", "--ranks", "2,2,2", "--ranks", "1,1,1",
                         "--methods", "constraint,matrix", "--fractions", "0.5:0.7:0.2", "--nrep", "2",
                         "--max-iter", "20", "--no-progress", "--omit-timing", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0].startswith("method,ranks,sum_ranks,fraction")
    # 4 labels x 2 rank tuples x 2 fractions
    assert len(lines) == 1 + 16


def test_sweep_to_stdout(capsys):
    assert cli.main(["sweep", "--shape", "5,5,5", "--ranks", "1,1,1", "--fractions", "0.6",
                     "--nrep", "1", "--max-iter", "10", "--no-progress"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[1].startswith("constraint,1x1x1,3,0.59999999999999998")
