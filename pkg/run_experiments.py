"""
Numerical experiments for the Taylor-arithmetic QR and eigenvalue code.

Subcommands:
    andrew            eigenvalue reconstruction on the 4 x 4 splitting system
    covariance        covariance Taylor coefficients vs complex step and vs the QR route
    householder-demo  textbook Householder QR in Taylor arithmetic vs qr_pushforward
    selftest          seeded residual and duality suites

Each run writes a CSV (17 significant digits) and prints a summary. The exit
code is 0 iff every acceptance threshold passed.

Usage:
    python run_experiments.py andrew --degree 5 --delta 0 --delta 1e-3
    python run_experiments.py covariance --t-grid 0.1:1:19 --out cov.csv
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from utpm import SkeletalProjector, UtpMatrix, coeff_norms, diagonal, hadamard, trace_pair
from qr_ad import householder_qr, qr_pullback, qr_pushforward, qr_tangent
from eigh_ad import BLOCK_TOL, eigh_pullback, eigh_pushforward, eigh_tangent
from oracles import andrew_system, csda_derivative, residual_eigh, residual_qr
from covariance import CovarianceInstance, cov_direct, cov_nullspace


EXPERIMENTS = ("andrew", "covariance", "householder-demo", "selftest")

DEFAULT_DEGREES = {"andrew": 5, "covariance": 2, "householder-demo": 3, "selftest": 6}

DEFAULT_T_GRID = (0.1, 1.0, 19)

# 0 plus 1e-16, 1e-15, ..., 1
DEFAULT_DELTAS = [0.0] + [float(v) for v in np.logspace(-16, 0, 17)]

ANDREW_TOL = 1e-9
ANDREW_DELTA_SLOPE = 100.0
ANDREW_WELL_SEPARATED = 1e-2

# absolute, on every compared coefficient
COVARIANCE_TOL = 1e-12

HOUSEHOLDER_AGREEMENT_TOL = 1e-10
STRUCTURE_TOL = 1e-12

SELFTEST_SIZES = {"qr-residual": 200, "eigh-residual": 200, "qr-duality": 100, "eigh-duality": 100}
SELFTEST_RESIDUAL_TOL = 1e-10
SELFTEST_DUALITY_TOL = 1e-9
SELFTEST_QR_MAX_ROWS = 8
SELFTEST_QR_MAX_DEGREE = 6
SELFTEST_EIGH_MAX_SIZE = 6
SELFTEST_EIGH_MAX_DEGREE = 5
SELFTEST_DUALITY_MAX_DEGREE = 4

CSV_HEADERS = {
    "andrew": ["delta", "eigenvalue_index", "coefficient_degree", "abs_error"],
    "covariance": ["t", "comparison", "max_abs_diff"],
    "householder-demo": ["case", "route", "max_lower_r", "max_factorization_residual"],
    "selftest": ["suite", "instances", "max_error", "passed"],
}


@dataclass
class ExperimentConfig:
    experiment: str
    degree: int
    deltas: List[float] = field(default_factory=lambda: list(DEFAULT_DELTAS))
    t_grid: List[float] = field(default_factory=lambda: np.linspace(*DEFAULT_T_GRID).tolist())
    block_tol: float = BLOCK_TOL
    out: Optional[str] = None
    seed: int = 0
    summary: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"Unknown experiment {self.experiment!r}, expected one of {EXPERIMENTS}")
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        if not self.block_tol > 0:
            raise ValueError(f"block tolerance must be positive, got {self.block_tol}")
        if not all(np.isfinite(self.deltas)) or not all(np.isfinite(self.t_grid)):
            raise ValueError("delta and t values must be finite")
        if not self.deltas:
            raise ValueError("delta sweep is empty")
        if not self.t_grid:
            raise ValueError("t grid is empty")


@dataclass
class ExperimentResult:
    experiment: str
    rows: List[Tuple] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    stats: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def header(self) -> List[str]:
        return CSV_HEADERS[self.experiment]


def parse_grid(text: str) -> List[float]:
    """'lo:hi:n' -> n evenly spaced points from lo to hi."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected lo:hi:n, got {text!r}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"Grid needs at least one point, got n={n}")
    return np.linspace(lo, hi, n).tolist()


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(result: ExperimentResult, path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(result.header)
        for row in result.rows:
            writer.writerow([_format(v) for v in row])


def match_eigenvalues(computed: np.ndarray, analytic: np.ndarray) -> np.ndarray:
    """
    Absolute errors after pairing computed and analytic eigenvalue curves.

    Both arrays are (D, N) Taylor coefficients. Curves are paired by an
    optimal assignment on the max coefficient difference, so reordering
    inside a block of equal eigenvalues is not counted as an error. Column j
    of the result belongs to analytic curve j.
    """
    cost = np.max(np.abs(computed[:, :, np.newaxis] - analytic[:, np.newaxis, :]), axis=0)
    rows, cols = linear_sum_assignment(cost)
    errors = np.zeros_like(analytic)
    errors[:, cols] = np.abs(computed[:, rows] - analytic[:, cols])
    return errors


def andrew_threshold(delta: float, block_tol: float) -> Optional[float]:
    """Acceptance bound for one delta, None when the point is only reported."""
    delta = abs(delta)
    if delta == 0.0 or delta >= ANDREW_WELL_SEPARATED:
        return ANDREW_TOL
    if delta < block_tol:
        return ANDREW_TOL + ANDREW_DELTA_SLOPE * delta
    return None


def run_andrew(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("andrew")
    D = config.degree
    worst_checked = 0.0
    for delta in config.deltas:
        try:
            system = andrew_system(delta, D)
            factors = eigh_pushforward(system.a, tol=config.block_tol)
            errors = match_eigenvalues(factors.eigenvalues, diagonal(system.lam))
        except (ValueError, np.linalg.LinAlgError) as e:
            print(f"Error: delta={delta:.3e}: {e}")
            result.failures.append(f"delta={delta:.3e}: {e}")
            continue

        for i in range(errors.shape[1]):
            for d in range(D):
                result.rows.append((float(delta), i + 1, d, float(errors[d, i])))

        threshold = andrew_threshold(delta, config.block_tol)
        worst = float(np.max(errors))
        levels = len(factors.blocks)
        if threshold is None:
            print(f"  delta={delta:9.2e}  max error {worst:.3e}  levels {levels}  (reported only)")
            continue
        worst_checked = max(worst_checked, worst)
        status = "ok" if worst <= threshold else "FAIL"
        print(f"  delta={delta:9.2e}  max error {worst:.3e}  levels {levels}  bound {threshold:.1e}  {status}")
        if worst > threshold:
            result.failures.append(f"delta={delta:.3e}: max error {worst:.3e} > {threshold:.3e}")
    result.stats["max_checked_error"] = worst_checked
    return result


def run_covariance(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("covariance")
    if config.degree < 2:
        raise ValueError(f"covariance needs degree >= 2 for first derivatives, got {config.degree}")
    worst = {"csda-vs-utp": 0.0, "direct-vs-nullspace": 0.0}
    for t in config.t_grid:
        try:
            instance = CovarianceInstance.along_ray(t)
            j1, j2 = instance.utp(config.degree)
            c_direct = cov_direct(j1, j2)
            c_null = cov_nullspace(j1, j2)
            csda = csda_derivative(instance.covariance_map(), instance.x, instance.xdot)
        except (ValueError, np.linalg.LinAlgError) as e:
            print(f"Error: t={t:.4f}: {e}")
            result.failures.append(f"t={t:.4f}: {e}")
            continue

        diffs = {
            "csda-vs-utp": float(np.max(np.abs(c_direct.coeff(1) - csda))),
            "direct-vs-nullspace": float(np.max(coeff_norms(c_direct - c_null))),
        }
        for kind, diff in diffs.items():
            result.rows.append((float(t), kind, diff))
            worst[kind] = max(worst[kind], diff)
            if diff > COVARIANCE_TOL:
                result.failures.append(f"t={t:.4f} {kind}: {diff:.3e} > {COVARIANCE_TOL:.1e}")
        print(f"  t={t:.4f}  csda-vs-utp {diffs['csda-vs-utp']:.3e}  "
              f"direct-vs-nullspace {diffs['direct-vs-nullspace']:.3e}")
    result.stats.update({f"max_{kind}": value for kind, value in worst.items()})
    return result


def pathological_qr_input(degree: int) -> UtpMatrix:
    """[[1], [0]] + T [[0], [1]]: the Householder branch sees sigma_0 = 0."""
    coeffs = np.zeros((degree, 2, 1))
    coeffs[0, 0, 0] = 1.0
    if degree > 1:
        coeffs[1, 1, 0] = 1.0
    return UtpMatrix(coeffs)


def random_qr_instance(rng: np.random.Generator, degree: int, rows: int, cols: int) -> UtpMatrix:
    """Random M x N polynomial with singular values of A_0 in [1, 2]."""
    u, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    v, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
    s = np.zeros((rows, cols))
    s[np.arange(cols), np.arange(cols)] = 1.0 + rng.random(cols)
    coeffs = rng.standard_normal((degree, rows, cols))
    coeffs[0] = u @ s @ v.T
    return UtpMatrix(coeffs)


def random_symmetric_instance(rng: np.random.Generator, degree: int, n: int,
                              repeated: bool = False) -> UtpMatrix:
    """
    Random symmetric polynomial whose A_0 eigenvalues are at least 0.5 apart,
    or, with repeated=True, whose two smallest eigenvalues coincide and are
    split by A_1 with a gap of at least 1.
    """
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.cumsum(0.5 + rng.random(n))
    coeffs = rng.standard_normal((degree, n, n))
    coeffs = 0.5 * (coeffs + np.transpose(coeffs, (0, 2, 1)))
    if repeated and n > 1:
        w[1] = w[0]
        if degree > 1:
            m = q.T @ coeffs[1] @ q
            m[:2, :2] = np.diag([0.0, 1.0 + rng.random()])
            coeffs[1] = q @ m @ q.T
    coeffs[0] = q @ np.diag(w) @ q.T
    return UtpMatrix(0.5 * (coeffs + np.transpose(coeffs, (0, 2, 1))))


def _factorization_residual(a: UtpMatrix, q: UtpMatrix, r: UtpMatrix) -> float:
    return float(np.max(coeff_norms(q @ r - a)))


def _lower_part(r: UtpMatrix) -> float:
    return float(np.max(coeff_norms(hadamard(SkeletalProjector.lower_strict(*r.shape), r))))


def run_householder_demo(config: ExperimentConfig) -> ExperimentResult:
    result = ExperimentResult("householder-demo")
    rng = np.random.default_rng(config.seed)
    D = max(config.degree, 2)
    cases = {
        "pathological": pathological_qr_input(D),
        "generic": random_qr_instance(rng, D, 4, 3),
        "constant": UtpMatrix.constant(random_qr_instance(rng, 1, 4, 3).coeff(0), D),
    }
    for case, a in cases.items():
        # Factor each case both ways
        routes = {"householder": householder_qr(a), "pushforward": qr_pushforward(a)}
        for route, factors in routes.items():
            lower = _lower_part(factors.r)
            residual = _factorization_residual(a, factors.q, factors.r)
            result.rows.append((case, route, lower, residual))
            print(f"  {case:<13} {route:<12} max |P_L o R| {lower:.3e}  max |QR - A| {residual:.3e}")

        # Householder branches on sigma_0 = 0 and loses P_L o R = 0
        if case == "pathological":
            if _lower_part(routes["householder"].r) <= STRUCTURE_TOL:
                result.failures.append("pathological: Householder route did not show the P_L o R defect")
            else:
                print("  → Householder in Taylor arithmetic leaves R_1 not upper triangular")
            if _lower_part(routes["pushforward"].r) > STRUCTURE_TOL:
                result.failures.append("pathological: qr_pushforward violates P_L o R = 0")
        else:
            # Away from sigma_0 = 0 both routes agree
            q_h, r_h = routes["householder"].economy()
            q_p, r_p = routes["pushforward"].economy()
            gap = max(float(np.max(coeff_norms(q_h - q_p))), float(np.max(coeff_norms(r_h - r_p))))
            print(f"  {case:<13} routes differ by {gap:.3e}")
            result.stats[f"{case}_route_gap"] = gap
            if gap > HOUSEHOLDER_AGREEMENT_TOL:
                result.failures.append(f"{case}: routes differ by {gap:.3e}")
            if case == "constant":
                higher = max(float(np.max(np.abs(f.q.coeffs[1:]))) for f in routes.values())
                higher = max(higher, max(float(np.max(np.abs(f.r.coeffs[1:]))) for f in routes.values()))
                if higher > STRUCTURE_TOL:
                    result.failures.append(f"constant: nonzero higher coefficients ({higher:.3e})")
    return result


def qr_duality_gap(rng: np.random.Generator, degree: int, rows: int, cols: int) -> float:
    """
    |<Abar, Adot> - <Qbar, Qdot> - <Rbar, Rdot>| over all coefficients, with
    Abar from qr_pullback and (Qdot, Rdot) from qr_tangent.
    """
    a = random_qr_instance(rng, degree, rows, cols)
    factors = qr_pushforward(a)
    adot = UtpMatrix(rng.standard_normal((degree, rows, cols)))
    qbar = UtpMatrix(rng.standard_normal((degree, rows, rows)))
    upper = 1.0 - SkeletalProjector.lower_strict(rows, cols).mask
    rbar = UtpMatrix(rng.standard_normal((degree, rows, cols)) * upper)
    abar = qr_pullback(a, factors.q, factors.r, UtpMatrix.zeros(degree, rows, cols), qbar, rbar)
    qdot, rdot = qr_tangent(factors.q, factors.r, adot)
    lhs = trace_pair(abar, adot)
    rhs = trace_pair(qbar, qdot) + trace_pair(rbar, rdot)
    return float(np.max(np.abs((lhs - rhs).coeffs)))


def eigh_duality_gap(rng: np.random.Generator, degree: int, n: int) -> float:
    """
    |<Abar, Adot> - <Lambar, Lamdot> - <Qbar, Qdot>| with a dense Lambar.
    """
    a = random_symmetric_instance(rng, degree, n)
    factors = eigh_pushforward(a)
    adot = random_symmetric_instance(rng, degree, n)
    qbar = UtpMatrix(rng.standard_normal((degree, n, n)))
    lambar = UtpMatrix(rng.standard_normal((degree, n, n)))
    abar = eigh_pullback(a, factors.q, factors.lam, UtpMatrix.zeros(degree, n, n), qbar, lambar)
    lamdot, qdot = eigh_tangent(factors.q, factors.lam, adot)
    lhs = trace_pair(abar, adot)
    rhs = trace_pair(lambar, lamdot) + trace_pair(qbar, qdot)
    return float(np.max(np.abs((lhs - rhs).coeffs)))


def selftest(config: ExperimentConfig, sizes: Optional[Dict[str, int]] = None) -> ExperimentResult:
    """
    Seeded residual and duality suites. Every instance draws its own degree
    and size; config.degree caps the degree.
    """
    result = ExperimentResult("selftest")
    rng = np.random.default_rng(config.seed)
    sizes = dict(SELFTEST_SIZES if sizes is None else sizes)

    def degree(cap: int) -> int:
        return int(rng.integers(1, min(config.degree, cap) + 1))

    def run_suite(name: str, tol: float, trial):
        worst = 0.0
        count = sizes.get(name, 0)
        for k in range(count):
            try:
                worst = max(worst, trial(k))
            except (ValueError, np.linalg.LinAlgError) as e:
                result.failures.append(f"{name} #{k}: {e}")
                print(f"Error: {name} #{k}: {e}")
        passed = worst <= tol
        if not passed:
            result.failures.append(f"{name}: max error {worst:.3e} > {tol:.1e}")
        result.rows.append((name, count, worst, passed))
        result.stats[name] = worst
        print(f"  {name:<14} {count:4d} instances  max error {worst:.3e}  {'ok' if passed else 'FAIL'}")

    def qr_residual(k: int) -> float:
        # M x N with N <= M <= 8
        rows = int(rng.integers(1, SELFTEST_QR_MAX_ROWS + 1))
        cols = int(rng.integers(1, rows + 1))
        d = degree(SELFTEST_QR_MAX_DEGREE)
        a = random_qr_instance(rng, d, rows, cols)
        factors = qr_pushforward(a)
        return residual_qr(a, factors.q, factors.r).max()

    def eigh_residual(k: int) -> float:
        # every fourth instance starts from a repeated eigenvalue
        n = int(rng.integers(1, SELFTEST_EIGH_MAX_SIZE + 1))
        d = degree(SELFTEST_EIGH_MAX_DEGREE)
        a = random_symmetric_instance(rng, d, n, repeated=(k % 4 == 0))
        factors = eigh_pushforward(a)
        return residual_eigh(a, factors.q, factors.lam).max()

    def qr_duality(k: int) -> float:
        cols = int(rng.integers(1, 4))
        return qr_duality_gap(rng, degree(SELFTEST_DUALITY_MAX_DEGREE), cols + int(rng.integers(0, 3)), cols)

    def eigh_duality(k: int) -> float:
        return eigh_duality_gap(rng, degree(SELFTEST_DUALITY_MAX_DEGREE), int(rng.integers(2, 5)))

    # Forward residuals first, then the pullback/tangent pairings
    run_suite("qr-residual", SELFTEST_RESIDUAL_TOL, qr_residual)
    run_suite("eigh-residual", SELFTEST_RESIDUAL_TOL, eigh_residual)
    run_suite("qr-duality", SELFTEST_DUALITY_TOL, qr_duality)
    run_suite("eigh-duality", SELFTEST_DUALITY_TOL, eigh_duality)
    return result


RUNNERS = {
    "andrew": run_andrew,
    "covariance": run_covariance,
    "householder-demo": run_householder_demo,
    "selftest": selftest,
}

TITLES = {
    "andrew": "EIGENVALUE SPLITTING SWEEP",
    "covariance": "COVARIANCE TAYLOR COEFFICIENT CONSISTENCY",
    "householder-demo": "HOUSEHOLDER QR IN TAYLOR ARITHMETIC",
    "selftest": "RESIDUAL AND DUALITY SELF-TEST",
}


def print_config(config: ExperimentConfig):
    print("\n" + "=" * 80)
    print(TITLES[config.experiment])
    print("=" * 80)
    print(f"  Degree:          {config.degree}")
    if config.experiment == "andrew":
        print(f"  Deltas:          {len(config.deltas)} values in [{min(config.deltas):.1e}, {max(config.deltas):.1e}]")
        print(f"  Block tolerance: {config.block_tol:.1e}")
    if config.experiment == "covariance":
        print(f"  t grid:          {len(config.t_grid)} points in [{config.t_grid[0]}, {config.t_grid[-1]}]")
    if config.experiment in ("householder-demo", "selftest"):
        print(f"  Seed:            {config.seed}")
    print()


def print_summary(result: ExperimentResult):
    print(f"\n{'=' * 80}")
    print("SUMMARY")
    print(f"{'=' * 80}")
    print(f"  Rows written:    {len(result.rows)}")
    for key, value in result.stats.items():
        print(f"  {key}: {value:.3e}")
    if result.passed:
        print("  All acceptance thresholds passed")
    else:
        print(f"  {len(result.failures)} failure(s):")
        for failure in result.failures:
            print(f"    - {failure}")


def _add_common_arguments(parser: argparse.ArgumentParser, experiment: str):
    parser.add_argument(
        '--degree',
        type=int,
        default=DEFAULT_DEGREES[experiment],
        help=f'Number of Taylor coefficients D (default: {DEFAULT_DEGREES[experiment]})'
    )
    parser.add_argument(
        '--out',
        type=str,
        default=f'{experiment.replace("-", "_")}_results.csv',
        help='Path to save the CSV rows (default: <experiment>_results.csv)'
    )
    parser.add_argument(
        '--seed',
        type=int,
        default=0,
        help='Seed for random instances (default: 0)'
    )
    parser.add_argument(
        '--summary',
        type=str,
        help='Path to save the run summary JSON (optional)'
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Reproduce the Taylor-arithmetic QR and eigenvalue experiments'
    )
    subparsers = parser.add_subparsers(dest='experiment', required=True)

    andrew = subparsers.add_parser('andrew', help='Eigenvalue reconstruction on the 4x4 splitting system')
    _add_common_arguments(andrew, 'andrew')
    andrew.add_argument(
        '--delta',
        type=float,
        action='append',
        help='Eigenvalue separation delta, repeatable (default: 0 and 1e-16 ... 1)'
    )
    andrew.add_argument(
        '--block-tol',
        type=float,
        default=BLOCK_TOL,
        help=f'Eigenvalues closer than this share a block (default: {BLOCK_TOL})'
    )

    covariance = subparsers.add_parser('covariance', help='Covariance matrix consistency checks')
    _add_common_arguments(covariance, 'covariance')
    covariance.add_argument(
        '--t-grid',
        type=parse_grid,
        default=np.linspace(*DEFAULT_T_GRID).tolist(),
        help='Sweep x = t(3,1) over lo:hi:n (default: 0.1:1:19)'
    )

    demo = subparsers.add_parser('householder-demo', help='Householder QR vs qr_pushforward')
    _add_common_arguments(demo, 'householder-demo')

    test = subparsers.add_parser('selftest', help='Seeded residual and duality suites')
    _add_common_arguments(test, 'selftest')
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    kwargs = {
        "experiment": args.experiment,
        "degree": args.degree,
        "out": args.out,
        "seed": args.seed,
        "summary": args.summary,
    }
    if getattr(args, 'delta', None):
        kwargs["deltas"] = list(args.delta)
    if getattr(args, 'block_tol', None) is not None:
        kwargs["block_tol"] = args.block_tol
    if getattr(args, 't_grid', None):
        kwargs["t_grid"] = list(args.t_grid)
    return ExperimentConfig(**kwargs)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
    except ValueError as e:
        print(f"Error: {e}")
        return 2

    print_config(config)
    try:
        result = RUNNERS[config.experiment](config)
    except (ValueError, np.linalg.LinAlgError) as e:
        print(f"Error: {e}")
        return 1
    print_summary(result)

    if config.out:
        write_csv(result, config.out)
        print(f"\nResults saved to: {config.out}")
    if config.summary:
        summary = {
            "config": asdict(config),
            "passed": result.passed,
            "rows": len(result.rows),
            "stats": result.stats,
            "failures": result.failures,
        }
        with open(config.summary, 'w') as f:
            json.dump(summary, f, indent=2)
        print(f"Summary saved to: {config.summary}")
    return 0 if result.passed else 1


if __name__ == '__main__':
    sys.exit(main())
