import argparse
import csv
import json

import numpy as np
import pytest

from run_experiments import (
    ANDREW_TOL,
    CSV_HEADERS,
    COVARIANCE_TOL,
    SELFTEST_SIZES,
    ExperimentConfig,
    ExperimentResult,
    andrew_threshold,
    build_parser,
    main,
    match_eigenvalues,
    parse_grid,
    run_andrew,
    run_covariance,
    run_householder_demo,
    selftest,
    write_csv,
)


SMALL_SIZES = {"qr-residual": 5, "eigh-residual": 8, "qr-duality": 5, "eigh-duality": 5}


def test_parse_grid():
    assert parse_grid("0:1:3") == [0.0, 0.5, 1.0]
    assert parse_grid("0.25:0.25:1") == [0.25]
    for text in ("0:1", "a:b:c", "0:1:0"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_grid(text)


def test_andrew_threshold():
    assert andrew_threshold(0.0, 1e-7) == ANDREW_TOL
    assert andrew_threshold(1.0, 1e-7) == ANDREW_TOL
    assert andrew_threshold(1e-8, 1e-7) == pytest.approx(ANDREW_TOL + 1e-6)
    # between the block tolerance and well separated only reported
    assert andrew_threshold(1e-4, 1e-7) is None


def test_match_eigenvalues_ignores_column_order():
    analytic = np.array([[1.0, 2.0, 3.0], [0.1, 0.2, 0.3]])
    computed = analytic[:, [2, 0, 1]] + 1e-12
    errors = match_eigenvalues(computed, analytic)
    assert errors.shape == analytic.shape
    np.testing.assert_allclose(errors, 1e-12, rtol=1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("unknown", 3)
    with pytest.raises(ValueError):
        ExperimentConfig("andrew", 0)
    with pytest.raises(ValueError):
        ExperimentConfig("andrew", 4, block_tol=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig("covariance", 2, t_grid=[])
    with pytest.raises(ValueError):
        ExperimentConfig("andrew", 4, deltas=[float("nan")])
    with pytest.raises(ValueError):
        ExperimentConfig("andrew", 4, deltas=[])


def test_run_andrew_small_sweep(capsys):
    result = run_andrew(ExperimentConfig("andrew", 5, deltas=[0.0, 1.0, 0.1]))
    assert result.passed, result.failures
    assert len(result.rows) == 3 * 4 * 5
    assert result.stats["max_checked_error"] <= ANDREW_TOL
    assert "delta" in capsys.readouterr().out


def test_run_covariance():
    result = run_covariance(ExperimentConfig("covariance", 2, t_grid=[0.2, 0.6, 1.0]))
    assert result.passed, result.failures
    assert all(row[2] <= COVARIANCE_TOL for row in result.rows)
    assert {row[1] for row in result.rows} == {"csda-vs-utp", "direct-vs-nullspace"}
    with pytest.raises(ValueError):
        run_covariance(ExperimentConfig("covariance", 1))


def test_run_householder_demo():
    result = run_householder_demo(ExperimentConfig("householder-demo", 3))
    assert result.passed, result.failures
    by_route = {(row[0], row[1]): row for row in result.rows}
    assert by_route[("pathological", "householder")][2] >= 1.0
    assert by_route[("pathological", "pushforward")][2] == 0.0


def test_selftest_small():
    result = selftest(ExperimentConfig("selftest", 3, seed=7), sizes=SMALL_SIZES)
    assert result.passed, result.failures
    assert [row[0] for row in result.rows] == list(SMALL_SIZES)
    assert all(row[3] for row in result.rows)


def test_write_csv_precision(tmp_path):
    result = ExperimentResult("covariance", rows=[(0.1, "csda-vs-utp", 1.0 / 3.0)])
    path = tmp_path / "nested" / "out.csv"
    write_csv(result, str(path))
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == CSV_HEADERS["covariance"]
    assert rows[1] == ["0.10000000000000001", "csda-vs-utp", "0.33333333333333331"]


def test_main_writes_results(tmp_path, capsys):
    out = tmp_path / "andrew.csv"
    summary = tmp_path / "summary.json"
    code = main(["andrew", "--degree", "5", "--delta", "0", "--delta", "1",
                 "--out", str(out), "--summary", str(summary)])
    assert code == 0
    with open(out) as f:
        header = next(csv.reader(f))
    assert header == CSV_HEADERS["andrew"]
    with open(summary) as f:
        data = json.load(f)
    assert data["passed"] is True
    assert data["config"]["deltas"] == [0.0, 1.0]
    assert "Results saved to:" in capsys.readouterr().out


def test_main_rejects_bad_config(tmp_path):
    assert main(["andrew", "--degree", "0", "--out", str(tmp_path / "x.csv")]) == 2
    with pytest.raises(SystemExit):
        main(["covariance", "--t-grid", "0:1"])
    with pytest.raises(SystemExit):
        main(["nonexistent"])


def test_parser_defaults():
    args = build_parser().parse_args(["covariance"])
    assert args.degree == 2
    assert len(args.t_grid) == 19
    assert args.out == "covariance_results.csv"
    args = build_parser().parse_args(["householder-demo"])
    assert args.out == "householder_demo_results.csv"
    assert build_parser().parse_args(["selftest"]).degree == 6


def test_covariance_threshold_is_absolute():
    # the default grid has covariance coefficients well above 1
    result = run_covariance(ExperimentConfig("covariance", 2))
    assert result.passed, result.failures
    assert len(result.rows) == 2 * 19
    assert max(row[2] for row in result.rows) <= COVARIANCE_TOL


def test_selftest_covers_full_size_ranges():
    result = selftest(ExperimentConfig("selftest", 6, seed=1),
                      sizes={"qr-residual": SELFTEST_SIZES["qr-residual"],
                             "eigh-residual": SELFTEST_SIZES["eigh-residual"]})
    assert result.passed, result.failures
    assert [row[1] for row in result.rows] == [200, 200]


@pytest.mark.parametrize("argv", [
    ["selftest", "--seed", "3", "--degree", "3"],
    ["covariance"],
])
def test_csv_rerun_is_bit_identical(tmp_path, argv):
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    assert main(argv + ["--out", str(first)]) == 0
    assert main(argv + ["--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
