"""
Symmetric eigenvalue decomposition in Taylor arithmetic.

eigh_pushforward handles repeated eigenvalues: every level of the recursion
runs the single-step lifting eigh1 on the diagonal blocks of equal
eigenvalues left over from the level before, until every block is a
singleton. Within a block the eigenvectors are only determined once the
coefficients that split the block have been seen, so the rotation found at a
deeper level is multiplied onto Q.

eigh_pullback and eigh_tangent are the reverse and forward rules for the
distinct-eigenvalue case.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import linalg

from utpm import (
    BlockVector,
    SkeletalProjector,
    UtpMatrix,
    coeff_norms,
    diagonal,
    elementwise_mul,
    elementwise_reciprocal,
    extend,
    hadamard,
    madd,
    shift,
    submatrix,
    symmetrize,
    truncate,
    window,
)
from oracles import residual_eigh


# eigenvalues closer than this are treated as one block
BLOCK_TOL = 1e-7

# max |A - A^T| relative to max(1, |A|) accepted as symmetric input
SYMMETRY_RTOL = 1e-12

# eigh_pullback refuses eigenvalue gaps below this
PULLBACK_GAP_TOL = 1e-7

# Q^T Q - I accepted by qlift
QLIFT_ORTHO_TOL = 1e-8

PULLBACK_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class EighFactors:
    """
    lam: diagonal matrix polynomial of eigenvalues, ascending in lam_0
    q: orthogonal eigenvector polynomial
    blocks: block vectors for levels 1, 2, ..., last one all singletons
            unless the degree ran out first
    """
    lam: UtpMatrix
    q: UtpMatrix
    blocks: List[BlockVector]

    @property
    def degree(self) -> int:
        return self.q.degree

    @property
    def eigenvalues(self) -> np.ndarray:
        """(D, N) Taylor coefficients of the eigenvalue curves."""
        return diagonal(self.lam)

    @property
    def final_blocks(self) -> BlockVector:
        return self.blocks[-1]


def _check_symmetric(a: UtpMatrix, what: str) -> UtpMatrix:
    if a.rows != a.cols:
        raise ValueError(f"{what}: expected a square matrix, got {a.shape}")
    A = a.coeffs
    asym = np.max(np.abs(A - np.transpose(A, (0, 2, 1))))
    if asym > SYMMETRY_RTOL * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"{what}: input is not symmetric (max |A - A^T| = {asym:.3e})")
    return symmetrize(a)


def canonical_eigh(a0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix.

    Each eigenvector is flipped so that its largest-magnitude entry is
    positive. Within a repeated eigenvalue the basis is whatever LAPACK returns.
    """
    w, v = linalg.eigh(a0)
    pivots = v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])]
    v = v * np.where(pivots < 0.0, -1.0, 1.0)
    return w, v


def detect_blocks(lam0: np.ndarray, tol: float = BLOCK_TOL, level: int = 1) -> BlockVector:
    """
    Group sorted eigenvalues into blocks of (numerically) equal values.

    Consecutive eigenvalues whose gap is below tol share a block, so a block
    can chain several close values.
    """
    lam0 = np.asarray(lam0, dtype=float)
    if lam0.ndim != 1 or lam0.size < 1:
        raise ValueError(f"detect_blocks expects a non-empty vector, got shape {lam0.shape}")
    if np.any(np.diff(lam0) < -tol):
        raise ValueError("detect_blocks expects eigenvalues in ascending order")
    boundaries = [1]
    for i, gap in enumerate(np.diff(lam0)):
        if gap >= tol:
            boundaries.append(i + 2)
    boundaries.append(lam0.size + 1)
    return BlockVector(tuple(boundaries), level)


def _known_triple_product(Q: np.ndarray, A: np.ndarray, d: int) -> np.ndarray:
    """Coefficient d of Q^T A Q with Q_d and A_d left out."""
    out = np.zeros(A.shape[1:])
    for i in range(d):
        for j in range(d):
            k = d - i - j
            if 0 <= k < d:
                out += Q[i].T @ A[k] @ Q[j]
    return out


def eigh1(a: UtpMatrix, tol: float = BLOCK_TOL,
          level: int = 1) -> Tuple[UtpMatrix, UtpMatrix, BlockVector]:
    """
    One level of eigenvalue lifting.

    Diagonalizes A_0 and lifts Q and Lambda so that Q^T A Q = Lambda holds to
    degree D, with Lambda block diagonal on the blocks of equal eigenvalues
    of A_0 rather than diagonal.

    Returns:
        (lam, q, blocks), blocks tagged with the given level
    """
    a = _check_symmetric(a, "eigh1")
    A = a.coeffs
    D, N = a.degree, a.rows

    w, q0 = canonical_eigh(A[0])
    blocks = detect_blocks(w, tol, level)
    inside = blocks.block_mask()
    # gaps[i, j] = lambda_j - lambda_i, nonzero off the blocks
    gaps = w[np.newaxis, :] - w[:, np.newaxis]
    H = np.where(inside, 0.0, 1.0 / np.where(inside, 1.0, gaps))

    lam0 = np.diag(w)
    Q = np.zeros((D, N, N))
    L = np.zeros((D, N, N))
    Q[0], L[0] = q0, lam0
    for d in range(1, D):
        S = np.zeros((N, N))
        for k in range(1, d):
            S -= 0.5 * Q[d - k].T @ Q[k]
        S = 0.5 * (S + S.T)
        K = _known_triple_product(Q, A, d) + q0.T @ A[d] @ q0 + S @ lam0 + lam0 @ S
        K = 0.5 * (K + K.T)
        Q[d] = q0 @ (S + H * K)
        L[d] = np.where(inside, K, 0.0)
    return UtpMatrix(L), UtpMatrix(Q), blocks


def qlift(q: UtpMatrix, degree: int, tol: float = QLIFT_ORTHO_TOL) -> UtpMatrix:
    """
    Extend an orthonormal polynomial to a higher degree keeping Q^T Q = I.

    Q_k = -1/2 Q_0 sum_{i=1}^{k-1} Q_i^T Q_{k-i} for the new coefficients.
    Lifting twice to the same degree changes nothing.
    """
    if degree < q.degree:
        raise ValueError(f"qlift: target degree {degree} below current degree {q.degree}")
    ortho = np.max(coeff_norms(q.T @ q - UtpMatrix.identity(q.degree, q.cols)))
    if ortho > tol:
        raise ValueError(f"qlift: input is not orthonormal (residual {ortho:.3e})")
    Q = np.zeros((degree,) + q.shape)
    Q[:q.degree] = q.coeffs
    for k in range(q.degree, degree):
        acc = np.zeros((q.cols, q.cols))
        for i in range(1, k):
            acc += Q[i].T @ Q[k - i]
        Q[k] = -0.5 * Q[0] @ acc
    return UtpMatrix(Q)


def eigh_pushforward(a: UtpMatrix, tol: float = BLOCK_TOL) -> EighFactors:
    """
    Compute [Q]_D, [Lambda]_D = eigh([A]_D) for symmetric A, allowing repeated
    eigenvalues in A_0 (and in later coefficients).

    Level d diagonalizes, block by block, coefficients d, ..., D-1 of the
    current Lambda. The loop stops once a level leaves only singleton blocks
    or the degree runs out.

    Raises:
        ValueError: non-square or non-symmetric input
    """
    a = _check_symmetric(a, "eigh_pushforward")
    D, N = a.degree, a.rows

    lam = a
    q = UtpMatrix.identity(D, N)
    current = BlockVector.single(N, 0)
    history: List[BlockVector] = []
    for d in range(D):
        # Diagonalize coefficients d..D-1 inside each current block
        lam_hat = np.zeros((D - d, N, N))
        rotation = np.zeros((D, N, N))
        parts = []
        for s in current.slices():
            block = window(submatrix(lam, s, s), d, D)
            size = s.stop - s.start
            if size == 1:
                lam_hat[:, s, s] = block.coeffs
                rotation[0, s, s] = 1.0
                parts.append(BlockVector.single(1, d + 1))
                continue
            # Split the block on its level-d coefficient
            l_s, q_s, b_s = eigh1(block, tol, level=d + 1)
            lam_hat[:, s, s] = l_s.coeffs
            rotation[:, s, s] = qlift(q_s, D).coeffs
            parts.append(b_s)

        # Merge the lifted blocks back into Lambda and Q
        following = BlockVector.concatenate(parts, d + 1)
        if d == 0:
            lam = UtpMatrix(lam_hat)
        else:
            lam = madd(extend(truncate(lam, d), D), shift(UtpMatrix(lam_hat), d))
        q = q @ UtpMatrix(rotation)
        history.append(following)
        current = following
        # Only singletons left
        if current.is_trivial:
            break
    return EighFactors(lam, q, history)


def _inverse_gaps(lam: UtpMatrix, gap_tol: float) -> UtpMatrix:
    """H_ij = 1 / (lambda_j - lambda_i) off the diagonal, in Taylor arithmetic."""
    w = diagonal(lam)
    N = w.shape[1]
    w0 = w[0]
    off = ~np.eye(N, dtype=bool)
    if N > 1:
        min_gap = np.min(np.abs(w0[np.newaxis, :] - w0[:, np.newaxis])[off])
        if min_gap < gap_tol:
            raise np.linalg.LinAlgError(
                f"repeated eigenvalues (min gap {min_gap:.3e} < {gap_tol:.1e}); "
                "the distinct-eigenvalue rule does not apply"
            )
    gaps = UtpMatrix(w[:, np.newaxis, :] - w[:, :, np.newaxis])
    return elementwise_reciprocal(gaps, off)


def eigh_pullback(a: UtpMatrix, q: UtpMatrix, lam: UtpMatrix, abar: UtpMatrix,
                  qbar: UtpMatrix, lambar: UtpMatrix, gap_tol: float = PULLBACK_GAP_TOL,
                  check: bool = True, tol: float = PULLBACK_RESIDUAL_TOL) -> UtpMatrix:
    """
    Pull (Qbar, Lambar) back onto A and accumulate into abar.

        abar + Q (P_D o Lambar + H o (Q^T Qbar)) Q^T

    Off-diagonal entries of Lambar are ignored. Only valid for distinct eigenvalues of A_0.

    Raises:
        ValueError: shape or degree mismatch
        LinAlgError: eigenvalues of lam_0 closer than gap_tol, or (a, q, lam)
                     inconsistent when check is set
    """
    N = a.rows
    for name, value in {"a": a, "q": q, "lam": lam, "abar": abar, "qbar": qbar, "lambar": lambar}.items():
        if value.shape != (N, N):
            raise ValueError(f"eigh_pullback: {name} has shape {value.shape}, expected {(N, N)}")
        if value.degree != a.degree:
            raise ValueError(f"eigh_pullback: {name} has degree {value.degree}, expected {a.degree}")
    H = _inverse_gaps(lam, gap_tol)
    if check:
        worst = residual_eigh(a, q, lam).max()
        limit = tol * max(1.0, np.linalg.norm(a.coeffs[0], np.inf))
        if worst > limit:
            raise np.linalg.LinAlgError(
                f"eigh_pullback: (A, Q, Lambda) violate the defining equations (residual {worst:.3e} > {limit:.3e})"
            )
    # Lamdot is diagonal
    lambar = hadamard(SkeletalProjector.diagonal(N, N), lambar)
    return abar + q @ (lambar + elementwise_mul(H, q.T @ qbar)) @ q.T


def eigh_tangent(q: UtpMatrix, lam: UtpMatrix, adot: UtpMatrix,
                 gap_tol: float = PULLBACK_GAP_TOL) -> Tuple[UtpMatrix, UtpMatrix]:
    """
    Directional derivative (Lamdot, Qdot) along a symmetric direction adot.

        Lamdot = P_D o (Q^T Adot Q),   Qdot = Q (H o (Q^T Adot Q))
    """
    N = q.rows
    H = _inverse_gaps(lam, gap_tol)
    K = q.T @ adot @ q
    return hadamard(SkeletalProjector.diagonal(N, N), K), q @ elementwise_mul(H, K)
