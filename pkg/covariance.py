"""
Covariance matrix of a constrained least-squares estimate and its Taylor
coefficients, computed two ways:

    cov_direct:     C = (I, 0) [[J1^T J1, J2^T], [J2, 0]]^{-1} (I, 0)^T
    cov_nullspace:  C = Q2^T (Q2 J1^T J1 Q2^T)^{-1} Q2,  Q2 from the QR of J2^T

Both agree in exact arithmetic, so comparing their Taylor coefficients checks
the QR pushforward end to end. covariance_dense evaluates the first form on
plain (real or complex) matrices for the complex-step oracle.
"""

from dataclasses import dataclass
from typing import Callable, List, Tuple, Union

import numpy as np
from scipy import linalg

from utp_scalar import UtpScalar, cos, exp, log, sin
from utpm import UtpMatrix, submatrix, symmetrize, write_submatrix
from qr_ad import qr_pushforward
from eigh_ad import eigh_pushforward
from oracles import ComplexMatrix


KKT_SINGULAR_RTOL = 1e-12

OED_CRITERIA = ("trace", "max-eigenvalue")

Entry = Union[UtpScalar, float, complex]


def j1_entries(x1: Entry, x2: Entry) -> List[List[Entry]]:
    """Residual Jacobian J1(x), 4 x 2."""
    return [
        [sin(x1) * x2, cos(x2)],
        [exp(x1), x1 * x2],
        [x1 * log(x2), log(1.0 + exp(cos(x1)))],
        [x2 + x1, x1 * (x2 + cos(x1))],
    ]


def j2_entries(x1: Entry, x2: Entry) -> List[List[Entry]]:
    """Constraint Jacobian J2(x), 1 x 2."""
    return [[x1 * log(x2 + 3.0 * sin(x1 * x2)), x2 * exp(sin(x1) + cos(x1 * x2))]]


@dataclass(frozen=True)
class CovarianceInstance:
    """J1, J2 evaluated along the line x + T xdot."""
    x: Tuple[float, float]
    xdot: Tuple[float, float]

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        xdot = tuple(float(v) for v in self.xdot)
        if len(x) != 2 or len(xdot) != 2:
            raise ValueError(f"x and xdot must be 2-vectors, got {x}, {xdot}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xdot", xdot)
        j1, j2 = self.dense()
        j1, j2 = j1.real, j2.real
        if np.linalg.matrix_rank(j2) != j2.shape[0]:
            raise np.linalg.LinAlgError(f"J2 is rank deficient at x = {x}")
        if np.linalg.matrix_rank(np.vstack([j1, j2])) != j1.shape[1]:
            raise np.linalg.LinAlgError(f"(J1; J2) is rank deficient at x = {x}")

    @classmethod
    def along_ray(cls, t: float) -> "CovarianceInstance":
        """x = t (3, 1), xdot = (5, 7)."""
        return cls((3.0 * t, t), (5.0, 7.0))

    def utp(self, degree: int = 2) -> Tuple[UtpMatrix, UtpMatrix]:
        x1 = UtpScalar.variable(self.x[0], self.xdot[0], degree)
        x2 = UtpScalar.variable(self.x[1], self.xdot[1], degree)
        return UtpMatrix.from_scalars(j1_entries(x1, x2)), UtpMatrix.from_scalars(j2_entries(x1, x2))

    def dense(self, x=None) -> Tuple[ComplexMatrix, ComplexMatrix]:
        """J1, J2 at x (default self.x); x may be complex."""
        x1, x2 = self.x if x is None else x
        return (
            ComplexMatrix.from_array(np.array(j1_entries(x1, x2))),
            ComplexMatrix.from_array(np.array(j2_entries(x1, x2))),
        )

    def covariance_map(self) -> Callable[[np.ndarray], ComplexMatrix]:
        """x -> C(x) through covariance_dense, usable with csda_derivative."""
        return lambda x: covariance_dense(*self.dense(x))


def _check_jacobians(j1: UtpMatrix, j2: UtpMatrix, what: str):
    if j1.degree != j2.degree:
        raise ValueError(f"{what}: degree mismatch {j1.degree} vs {j2.degree}")
    if j1.cols != j2.cols:
        raise ValueError(f"{what}: J1 has {j1.cols} columns, J2 has {j2.cols}")
    if j2.rows > j2.cols:
        raise ValueError(f"{what}: more constraints than parameters ({j2.shape})")


def _lift_inverse(m: UtpMatrix, solve0: Callable[[np.ndarray], np.ndarray]) -> UtpMatrix:
    """
    Inverse of a square matrix polynomial from a solver for its leading
    coefficient: B_0 = M_0^{-1}, B_d = -M_0^{-1} sum_{k=1}^{d} M_k B_{d-k}.
    """
    M = m.coeffs
    n = m.rows
    B = np.zeros_like(M)
    B[0] = solve0(np.eye(n))
    for d in range(1, m.degree):
        acc = np.zeros((n, n))
        for k in range(1, d + 1):
            acc += M[k] @ B[d - k]
        B[d] = -solve0(acc)
    return UtpMatrix(B)


def lu_inverse(m: UtpMatrix) -> UtpMatrix:
    m0 = m.coeff(0)
    lu, piv = linalg.lu_factor(m0, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if np.min(pivots) <= KKT_SINGULAR_RTOL * max(1.0, np.linalg.norm(m0, np.inf)):
        raise np.linalg.LinAlgError(f"Singular leading coefficient (min |u_ii| = {np.min(pivots):.3e})")
    return _lift_inverse(m, lambda rhs: linalg.lu_solve((lu, piv), rhs, check_finite=False))


def cholesky_inverse(m: UtpMatrix) -> UtpMatrix:
    """Inverse of a symmetric positive definite matrix polynomial."""
    m = symmetrize(m)
    # raises LinAlgError if M_0 is not positive definite
    factor = linalg.cho_factor(m.coeff(0), check_finite=False)
    return symmetrize(_lift_inverse(m, lambda rhs: linalg.cho_solve(factor, rhs, check_finite=False)))


def kkt_matrix(j1: UtpMatrix, j2: UtpMatrix) -> UtpMatrix:
    """[[J1^T J1, J2^T], [J2, 0]]."""
    Np, Nr = j1.cols, j2.rows
    n = Np + Nr
    kkt = UtpMatrix.zeros(j1.degree, n, n)
    kkt = write_submatrix(kkt, slice(0, Np), slice(0, Np), j1.T @ j1)
    kkt = write_submatrix(kkt, slice(0, Np), slice(Np, n), j2.T)
    return write_submatrix(kkt, slice(Np, n), slice(0, Np), j2)


def cov_direct(j1: UtpMatrix, j2: UtpMatrix) -> UtpMatrix:
    """
    Covariance from the inverse of the KKT matrix.

    Raises:
        ValueError: incompatible shapes or degrees
        LinAlgError: singular leading KKT coefficient
    """
    _check_jacobians(j1, j2, "cov_direct")
    Np = j1.cols
    inverse = lu_inverse(kkt_matrix(j1, j2))
    return submatrix(inverse, slice(0, Np), slice(0, Np))


def cov_nullspace(j1: UtpMatrix, j2: UtpMatrix) -> UtpMatrix:
    """
    Covariance through a nullspace basis of J2 taken from the QR of J2^T.

    Raises:
        ValueError: incompatible shapes or degrees
        LinAlgError: J2 or the reduced matrix Q2 J1^T J1 Q2^T is rank deficient
    """
    _check_jacobians(j1, j2, "cov_nullspace")
    Np, Nr = j1.cols, j2.rows
    if Np == Nr:
        return UtpMatrix.zeros(j1.degree, Np, Np)
    factors = qr_pushforward(j2.T)
    q2t = submatrix(factors.q, slice(0, Np), slice(Nr, Np))
    reduced = q2t.T @ j1.T @ j1 @ q2t
    return symmetrize(q2t @ cholesky_inverse(reduced) @ q2t.T)


def covariance_dense(j1: ComplexMatrix, j2: ComplexMatrix) -> ComplexMatrix:
    """KKT route on plain matrices. Transposes do not conjugate."""
    Np, Nr = j1.shape[1], j2.shape[0]
    kkt = ComplexMatrix.block([
        [j1.T @ j1, j2.T],
        [j2, ComplexMatrix.zeros(Nr, Nr)],
    ])
    rhs = ComplexMatrix.block([[ComplexMatrix.identity(Np)], [ComplexMatrix.zeros(Nr, Np)]])
    return kkt.solve(rhs)[:Np, :]


def oed_objective(c: UtpMatrix, criterion: str = "trace") -> UtpScalar:
    """
    Design criterion of a covariance polynomial in Taylor arithmetic.

    'trace' is the A-criterion, 'max-eigenvalue' the E-criterion. The largest
    eigenvalue is taken from eigh_pushforward, so ties in C_0 are resolved by
    the higher coefficients.
    """
    if c.rows != c.cols:
        raise ValueError(f"oed_objective needs a square covariance, got {c.shape}")
    if criterion == "trace":
        return UtpScalar(np.trace(c.coeffs, axis1=1, axis2=2))
    if criterion == "max-eigenvalue":
        return UtpScalar(eigh_pushforward(symmetrize(c)).eigenvalues[:, -1])
    raise ValueError(f"Unknown criterion {criterion!r}, expected one of {OED_CRITERIA}")
