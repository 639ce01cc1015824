"""
QR decomposition in Taylor arithmetic.

qr_pushforward lifts a classical QR factorization of A_0 coefficient by
coefficient (sequential Hensel lifting, one degree per step) so that

    0 = QR - A,   0 = Q^T Q - I,   0 = P_L o R

hold to degree D. Q is square (M x M) and R is M x N with a zero bottom block;
QrFactors.economy() gives the M x N / N x N view.

qr_pullback is the matching reverse-mode rule, evaluated in truncated Taylor
arithmetic. householder_demo / householder_qr transcribe the textbook
Householder algorithm into Taylor arithmetic to show how branching on the
zeroth coefficient breaks it.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from utp_scalar import UtpScalar, sqrt
from utpm import (
    SkeletalProjector,
    UtpMatrix,
    hadamard,
    pinv_tall,
    scale,
    submatrix,
    write_submatrix,
)
from oracles import residual_qr


# smallest |R_0[i, i]| allowed, relative to ||A_0||_inf
QR_RANK_RTOL = 1e-10

# consistency check of (A, Q, R) before pulling back
PULLBACK_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class QrFactors:
    q: UtpMatrix
    r: UtpMatrix

    @property
    def degree(self) -> int:
        return self.q.degree

    def economy(self) -> Tuple[UtpMatrix, UtpMatrix]:
        """First N columns of Q and top N x N block of R."""
        M, N = self.r.shape
        return (
            submatrix(self.q, slice(0, M), slice(0, N)),
            submatrix(self.r, slice(0, N), slice(0, N)),
        )


def sign_fixed_qr(a0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Full QR of a real M x N matrix with nonnegative diagonal of R_{:N,:N}.

    Columns of Q and rows of R are flipped together, so Q R is unchanged.
    """
    a0 = np.asarray(a0, dtype=float)
    q0, r0 = linalg.qr(a0, mode="full")
    N = min(a0.shape)
    signs = np.sign(np.diag(r0[:N, :N]))
    signs[signs == 0] = 1.0
    q0[:, :N] *= signs
    r0[:N, :] *= signs[:, np.newaxis]
    return q0, np.triu(r0)


def _qr_lift_step(Q: np.ndarray, R: np.ndarray, a_d: np.ndarray, d: int,
                  r0_top_inv: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    dF, S and X for degree d, given coefficients 0..d-1 of Q and R.

    Q_d = Q_0 (S + X) and R_d = Q_0^T dF - (S + X) R_0.
    """
    M, N = R.shape[1], R.shape[2]
    dF = a_d.copy()
    S = np.zeros((M, M))
    for k in range(1, d):
        dF -= Q[d - k] @ R[k]
        S -= 0.5 * Q[d - k].T @ Q[k]
    S = 0.5 * (S + S.T)
    X = np.zeros((M, M))
    lower = SkeletalProjector.lower_strict(M, N).mask
    X[:, :N] = lower * (Q[0].T @ dF @ r0_top_inv - S[:, :N])
    X = X - X.T
    return dF, S, X


def qr_pushforward(a: UtpMatrix) -> QrFactors:
    """
    Compute [Q]_D, [R]_D = qr([A]_D) by sequential lifting.

    Args:
        a: M x N matrix polynomial, M >= N, with A_0 of full column rank

    Returns:
        QrFactors with square Q; the degree-0 slice is sign_fixed_qr(A_0)

    Raises:
        ValueError: M < N
        LinAlgError: A_0 is (numerically) rank deficient
    """
    M, N = a.shape
    if M < N:
        raise ValueError(f"qr_pushforward needs M >= N, got {a.shape}")
    A = a.coeffs
    D = a.degree

    q0, r0 = sign_fixed_qr(A[0])
    min_diag = np.min(np.abs(np.diag(r0[:N, :N])))
    if min_diag <= QR_RANK_RTOL * np.linalg.norm(A[0], np.inf):
        raise np.linalg.LinAlgError(
            f"qr_pushforward: A_0 is rank deficient (min |R_0[i,i]| = {min_diag:.3e})"
        )
    r0_top_inv = linalg.solve_triangular(r0[:N, :N], np.eye(N), lower=False)
    upper = 1.0 - SkeletalProjector.lower_strict(M, N).mask

    Q = np.zeros((D, M, M))
    R = np.zeros((D, M, N))
    Q[0], R[0] = q0, r0
    for d in range(1, D):
        dF, S, X = _qr_lift_step(Q, R, A[d], d, r0_top_inv)
        R[d] = upper * (q0.T @ dF - (S + X) @ r0)
        Q[d] = q0 @ (S + X)
    return QrFactors(UtpMatrix(Q), UtpMatrix(R))


def _check_pullback_shapes(a: UtpMatrix, q: UtpMatrix, r: UtpMatrix,
                           abar: UtpMatrix, qbar: UtpMatrix, rbar: UtpMatrix):
    M, N = a.shape
    expected = {
        "q": (q, (M, M)), "r": (r, (M, N)), "abar": (abar, (M, N)),
        "qbar": (qbar, (M, M)), "rbar": (rbar, (M, N)),
    }
    for name, (value, shape) in expected.items():
        if value.shape != shape:
            raise ValueError(f"qr_pullback: {name} has shape {value.shape}, expected {shape}")
        if value.degree != a.degree:
            raise ValueError(f"qr_pullback: {name} has degree {value.degree}, expected {a.degree}")


def qr_pullback(a: UtpMatrix, q: UtpMatrix, r: UtpMatrix, abar: UtpMatrix,
                qbar: UtpMatrix, rbar: UtpMatrix, check: bool = True,
                tol: float = PULLBACK_RESIDUAL_TOL) -> UtpMatrix:
    """
    Pull the adjoints (Qbar, Rbar) back onto A and accumulate into abar.

        abar + Q (Rbar + (P_L o (R Rbar^T - Rbar R^T + Q^T Qbar - Qbar^T Q))) R^{+T})

    Args:
        a, q, r: value polynomials satisfying the defining equations
        abar: accumulator, returned updated (a new value; the argument is untouched)
        qbar, rbar: output adjoints
        check: verify the defining equations of (a, q, r) first
        tol: residual tolerance relative to max(1, ||A_0||_inf)

    Raises:
        ValueError: shape or degree mismatch
        LinAlgError: inconsistent (a, q, r) or singular top block of R_0
    """
    _check_pullback_shapes(a, q, r, abar, qbar, rbar)
    if check:
        worst = residual_qr(a, q, r).max()
        limit = tol * max(1.0, np.linalg.norm(a.coeffs[0], np.inf))
        if worst > limit:
            raise np.linalg.LinAlgError(
                f"qr_pullback: (A, Q, R) violate the defining equations (residual {worst:.3e} > {limit:.3e})"
            )
    M = a.rows
    inner = r @ rbar.T - rbar @ r.T + q.T @ qbar - qbar.T @ q
    lower = hadamard(SkeletalProjector.lower_strict(M, M), inner)
    return abar + q @ (rbar + lower @ pinv_tall(r).T)


def qr_tangent(q: UtpMatrix, r: UtpMatrix, adot: UtpMatrix) -> Tuple[UtpMatrix, UtpMatrix]:
    """
    Directional derivative (Qdot, Rdot) of the factors along adot.

    Solves the linearized defining equations in Taylor arithmetic with the
    trailing-block gauge of Q^T Qdot set to zero, the same gauge qr_pushforward
    uses for its first coefficient.
    """
    M = q.rows
    c = q.T @ adot
    lower = hadamard(SkeletalProjector.lower_strict(M, M), c @ pinv_tall(r))
    omega = lower - lower.T
    return q @ omega, c - omega @ r


def householder_demo(x: Sequence[UtpScalar]) -> Tuple[List[UtpScalar], UtpScalar]:
    """
    Textbook Householder vector evaluated in Taylor arithmetic.

    The branches look at zeroth coefficients only, the way an operator
    overloading tool keeps control flow fixed. For x = e_1 + e_2 T this returns
    beta = 0 although the curve x(T) is not a multiple of e_1.

    Returns:
        (v, beta) with v[0] == 1 and reflector I - beta v v^T
    """
    D = x[0].degree
    zero = UtpScalar.constant(0.0, D)
    one = UtpScalar.constant(1.0, D)
    x1 = x[0]
    sigma = zero
    for xi in x[1:]:
        sigma = sigma + xi * xi
    v = [one] + list(x[1:])
    if sigma.coeffs[0] == 0.0:
        return v, zero

    mu = sqrt(x1 * x1 + sigma)
    if x1.coeffs[0] <= 0.0:
        v1 = x1 - mu
    else:
        v1 = -sigma / (x1 + mu)
    beta = 2.0 * v1 * v1 / (sigma + v1 * v1)
    v = [one] + [vi / v1 for vi in x[1:]]
    return v, beta


def householder_qr(a: UtpMatrix) -> QrFactors:
    """QR by successive Householder reflections, all arithmetic in Taylor arithmetic."""
    M, N = a.shape
    D = a.degree
    r = a
    q = UtpMatrix.identity(D, M)
    for j in range(min(M, N)):
        v, beta = householder_demo([r.entry(i, j) for i in range(j, M)])
        vcol = UtpMatrix.from_scalars([[vi] for vi in v])
        reflector = UtpMatrix.identity(D, M - j) - scale(vcol @ vcol.T, beta)
        rows = slice(j, M)
        r = write_submatrix(r, rows, slice(j, N), reflector @ submatrix(r, rows, slice(j, N)))
        q = write_submatrix(q, slice(0, M), rows, submatrix(q, slice(0, M), rows) @ reflector)
    return QrFactors(q, r)
