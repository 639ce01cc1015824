"""
Independent reference computations the derivative code is checked against.

- complex-step and central-difference directional derivatives
- a small dense complex matrix type for the complex-step route
- the 4 x 4 test system with analytically known eigenvalue curves
- defining-equation residuals of QR and symmetric eigendecomposition factors
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Sequence

import numpy as np
from scipy import linalg

from utp_scalar import UtpScalar, cos, sin
from utpm import SkeletalProjector, UtpMatrix, coeff_norms, diag_matrix, hadamard


CSDA_EPS = 1e-20
FD_STEP = 1e-5
SOLVE_SINGULAR_RTOL = 1e-13

# orthonormality of the test system's Q(0) is verified to this level
ANDREW_ORTHO_TOL = 1e-12


@dataclass(frozen=True)
class ComplexMatrix:
    """Dense complex matrix stored as separate real and imaginary parts."""
    real: np.ndarray
    imag: np.ndarray

    def __post_init__(self):
        real = np.atleast_2d(np.asarray(self.real, dtype=float))
        imag = np.atleast_2d(np.asarray(self.imag, dtype=float))
        if real.shape != imag.shape or real.ndim != 2:
            raise ValueError(f"Real/imaginary shapes differ or are not 2-D: {real.shape} vs {imag.shape}")
        if not (np.all(np.isfinite(real)) and np.all(np.isfinite(imag))):
            raise ValueError("ComplexMatrix entries must be finite")
        object.__setattr__(self, "real", real)
        object.__setattr__(self, "imag", imag)

    @classmethod
    def from_array(cls, z) -> "ComplexMatrix":
        z = np.atleast_2d(np.asarray(z))
        return cls(np.real(z), np.imag(z))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "ComplexMatrix":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "ComplexMatrix":
        return cls(np.eye(n), np.zeros((n, n)))

    @classmethod
    def block(cls, rows: Sequence[Sequence["ComplexMatrix"]]) -> "ComplexMatrix":
        return cls(
            np.block([[m.real for m in row] for row in rows]),
            np.block([[m.imag for m in row] for row in rows]),
        )

    @property
    def shape(self):
        return self.real.shape

    @property
    def value(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @property
    def T(self) -> "ComplexMatrix":
        """Plain (non-conjugating) transpose."""
        return ComplexMatrix(self.real.T, self.imag.T)

    def __getitem__(self, key) -> "ComplexMatrix":
        return ComplexMatrix(self.real[key], self.imag[key])

    def __add__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        return ComplexMatrix(self.real + other.real, self.imag + other.imag)

    def __sub__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        return ComplexMatrix(self.real - other.real, self.imag - other.imag)

    def __matmul__(self, other: "ComplexMatrix") -> "ComplexMatrix":
        return ComplexMatrix(
            self.real @ other.real - self.imag @ other.imag,
            self.real @ other.imag + self.imag @ other.real,
        )

    def solve(self, rhs: "ComplexMatrix") -> "ComplexMatrix":
        """Solve self @ X = rhs through an LU factorization."""
        lu, piv = linalg.lu_factor(self.value, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if np.min(pivots) <= SOLVE_SINGULAR_RTOL * max(1.0, np.linalg.norm(self.value, np.inf)):
            raise np.linalg.LinAlgError(f"Singular matrix (min |u_ii| = {np.min(pivots):.3e})")
        return ComplexMatrix.from_array(linalg.lu_solve((lu, piv), rhs.value, check_finite=False))


def _as_array(y) -> np.ndarray:
    if isinstance(y, ComplexMatrix):
        return y.value
    return np.asarray(y)


def csda_derivative(f: Callable, x, xdot, eps: float = CSDA_EPS) -> np.ndarray:
    """
    Complex-step directional derivative Im(f(x + i eps xdot)) / eps.

    f must be analytic and written without conjugation or abs() so that it
    accepts complex input.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    try:
        y = f(x + 1j * eps * xdot)
    except TypeError as exc:
        raise TypeError(f"Function cannot be evaluated on complex input: {exc}") from exc
    return np.imag(_as_array(y)) / eps


def fd_directional(f: Callable, x, xdot, h: float = FD_STEP) -> np.ndarray:
    """Central difference (f(x + h xdot) - f(x - h xdot)) / (2h)."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    forward = np.real(_as_array(f(x + h * xdot)))
    backward = np.real(_as_array(f(x - h * xdot)))
    return (forward - backward) / (2.0 * h)


class AndrewSystem(NamedTuple):
    a: UtpMatrix
    lam: UtpMatrix
    q: UtpMatrix


def andrew_system(delta: float, degree: int) -> AndrewSystem:
    """
    Build [A]_D = [Q][Lambda][Q]^T for the 4 x 4 test curve x(t) = 1 + t.

    Lambda(t) has a pair of eigenvalues that agree up to the cubic term when
    delta = 0 and separate at order zero when delta != 0. The returned lam
    holds Taylor coefficients (see andrew_derivatives for the derivative
    convention).
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    delta = float(delta)
    x = UtpScalar.variable(1.0, 1.0, degree)
    c, s = cos(x), sin(x)
    q = UtpMatrix.from_scalars([
        [c, 1.0, s, -1.0],
        [-s, -1.0, c, -1.0],
        [1.0, -s, 1.0, c],
        [-1.0, c, 1.0, s],
    ]) * (1.0 / math.sqrt(3.0))
    q0 = q.coeff(0)
    ortho = np.linalg.norm(q0.T @ q0 - np.eye(4), np.inf)
    if ortho > ANDREW_ORTHO_TOL:
        raise np.linalg.LinAlgError(f"Test system Q(0) is not orthogonal (residual {ortho:.3e})")

    eigenvalues = [
        x ** 2 - x + 0.5,
        4.0 * x ** 2 - 3.0 * x,
        delta * (-0.5 * x ** 3 + 2.0 * x ** 2 - 1.5 * x + 1.0) + (x ** 3 + x ** 2 - 1.0),
        3.0 * x - 1.0,
    ]
    lam = diag_matrix(np.stack([ev.coeffs for ev in eigenvalues], axis=1))
    return AndrewSystem(q @ lam @ q.T, lam, q)


def andrew_derivatives(delta: float, degree: int) -> np.ndarray:
    """
    Eigenvalue derivatives d^k lambda / dt^k at t = 0, shape (degree, 4).

    Entry k equals k! times Taylor coefficient k of the test system.
    """
    table = np.zeros((max(degree, 4), 4))
    table[0] = [0.5, 1.0, 1.0 + delta, 2.0]
    table[1] = [1.0, 5.0, 5.0 + delta, 3.0]
    table[2] = [2.0, 8.0, 8.0 + delta, 0.0]
    table[3] = [0.0, 0.0, 6.0 - 3.0 * delta, 0.0]
    return table[:degree]


class Residuals:
    """Per-coefficient infinity norms of each defining-equation residual."""

    def __init__(self, components: Dict[str, np.ndarray]):
        self.components = components

    def __getitem__(self, name: str) -> np.ndarray:
        return self.components[name]

    def max(self) -> float:
        return max(float(np.max(values)) for values in self.components.values())

    def to_dict(self) -> Dict[str, list]:
        return {name: values.tolist() for name, values in self.components.items()}


def residual_qr(a: UtpMatrix, q: UtpMatrix, r: UtpMatrix) -> Residuals:
    """Residuals of QR - A, Q^T Q - I and P_L o R."""
    M, N = a.shape
    identity = UtpMatrix.identity(a.degree, q.cols)
    return Residuals({
        "factorization": coeff_norms(q @ r - a),
        "orthogonality": coeff_norms(q.T @ q - identity),
        "triangularity": coeff_norms(hadamard(SkeletalProjector.lower_strict(M, N), r)),
    })


def residual_eigh(a: UtpMatrix, q: UtpMatrix, lam: UtpMatrix) -> Residuals:
    """Residuals of Q^T A Q - Lambda, Q^T Q - I and (P_L + P_R) o Lambda."""
    N = a.rows
    identity = UtpMatrix.identity(a.degree, N)
    off = hadamard(SkeletalProjector.lower_strict(N, N), lam) + hadamard(SkeletalProjector.upper_strict(N, N), lam)
    return Residuals({
        "factorization": coeff_norms(q.T @ a @ q - lam),
        "orthogonality": coeff_norms(q.T @ q - identity),
        "off_diagonal": coeff_norms(off),
    })
