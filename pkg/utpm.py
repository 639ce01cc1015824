"""
Truncated matrix polynomials and the linear-algebra vocabulary built on them.

A UtpMatrix stores D coefficient matrices A_0, ..., A_{D-1} of shape M x N as a
single (D, M, N) array. Products are truncated convolutions, so every
operation here is exact up to degree D. Adjoint ("bar") quantities use the
same type; what makes them adjoints is how the pullback functions treat them.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from utp_scalar import UtpScalar


# |r_ii| below this fraction of max(1, ||R_0||_inf) counts as singular
SINGULAR_RTOL = 1e-12

# tolerance for "this block should be zero" input checks
STRUCTURE_RTOL = 1e-12

PROJECTOR_KINDS = ("lower_strict", "upper_strict", "diagonal", "block_complement", "block")


class UtpMatrix:
    """Degree-D truncated matrix polynomial. Immutable after construction."""

    __slots__ = ("_coeffs",)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        arr = np.array(coeffs, dtype=float)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"UtpMatrix coefficients must have shape (D, M, N), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("UtpMatrix needs at least one coefficient (D >= 1)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("UtpMatrix coefficients must be finite")
        arr.setflags(write=False)
        self._coeffs = arr

    @classmethod
    def zeros(cls, degree: int, rows: int, cols: int) -> "UtpMatrix":
        return cls(np.zeros((degree, rows, cols)))

    @classmethod
    def identity(cls, degree: int, n: int) -> "UtpMatrix":
        coeffs = np.zeros((degree, n, n))
        coeffs[0] = np.eye(n)
        return cls(coeffs)

    @classmethod
    def constant(cls, matrix, degree: int) -> "UtpMatrix":
        matrix = np.asarray(matrix, dtype=float)
        coeffs = np.zeros((degree,) + matrix.shape)
        coeffs[0] = matrix
        return cls(coeffs)

    @classmethod
    def from_scalars(cls, rows: Sequence[Sequence[Union[UtpScalar, float]]]) -> "UtpMatrix":
        """
        Assemble a matrix polynomial from a grid of UtpScalar entries.

        Plain numbers are promoted to constant polynomials. All UtpScalar
        entries must share one degree.
        """
        degrees = {e.degree for row in rows for e in row if isinstance(e, UtpScalar)}
        if len(degrees) != 1:
            raise ValueError(f"Entries must share exactly one degree, got {sorted(degrees)}")
        D = degrees.pop()
        M, N = len(rows), len(rows[0])
        coeffs = np.zeros((D, M, N))
        for i, row in enumerate(rows):
            if len(row) != N:
                raise ValueError("Ragged entry grid")
            for j, entry in enumerate(row):
                if isinstance(entry, UtpScalar):
                    coeffs[:, i, j] = entry.coeffs
                else:
                    coeffs[0, i, j] = float(entry)
        return cls(coeffs)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def degree(self) -> int:
        return self._coeffs.shape[0]

    @property
    def rows(self) -> int:
        return self._coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self._coeffs.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._coeffs.shape[1], self._coeffs.shape[2]

    @property
    def T(self) -> "UtpMatrix":
        return mtranspose(self)

    def coeff(self, d: int) -> np.ndarray:
        return self._coeffs[d]

    def entry(self, i: int, j: int) -> UtpScalar:
        return UtpScalar(self._coeffs[:, i, j])

    def __repr__(self) -> str:
        return f"UtpMatrix(degree={self.degree}, shape={self.shape})"

    def __add__(self, other):
        if not isinstance(other, UtpMatrix):
            return NotImplemented
        return madd(self, other)

    def __sub__(self, other):
        if not isinstance(other, UtpMatrix):
            return NotImplemented
        return msub(self, other)

    def __neg__(self):
        return UtpMatrix(-self._coeffs)

    def __mul__(self, other):
        if isinstance(other, UtpMatrix):
            return NotImplemented
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if not isinstance(other, UtpMatrix):
            return NotImplemented
        return mmul(self, other)


@dataclass(frozen=True)
class BlockVector:
    """
    Block boundaries of eigenvalue multiplicities at a given level.

    Boundaries are 1-based and strictly increasing: b_1 = 1, b_{Nb+1} = N+1,
    and block k covers the 1-based indices b_k, ..., b_{k+1}-1.
    """
    boundaries: Tuple[int, ...]
    level: int = 0

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if len(b) < 2 or b[0] != 1:
            raise ValueError(f"Block boundaries must start at 1 and have length >= 2, got {b}")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError(f"Block boundaries must be strictly increasing, got {b}")
        if self.level < 0:
            raise ValueError(f"Level must be nonnegative, got {self.level}")

    @classmethod
    def single(cls, n: int, level: int = 0) -> "BlockVector":
        return cls((1, n + 1), level)

    @classmethod
    def singletons(cls, n: int, level: int = 0) -> "BlockVector":
        return cls(tuple(range(1, n + 2)), level)

    @property
    def n(self) -> int:
        return self.boundaries[-1] - 1

    @property
    def num_blocks(self) -> int:
        return len(self.boundaries) - 1

    @property
    def sizes(self) -> List[int]:
        return [hi - lo for lo, hi in zip(self.boundaries, self.boundaries[1:])]

    @property
    def is_trivial(self) -> bool:
        """True when every block is a singleton."""
        return all(size == 1 for size in self.sizes)

    def slices(self) -> List[slice]:
        """0-based slices, one per block."""
        return [slice(lo - 1, hi - 1) for lo, hi in zip(self.boundaries, self.boundaries[1:])]

    def block_mask(self) -> np.ndarray:
        mask = np.zeros((self.n, self.n), dtype=bool)
        for s in self.slices():
            mask[s, s] = True
        return mask

    @classmethod
    def concatenate(cls, parts: Sequence["BlockVector"], level: int) -> "BlockVector":
        """Join the block vectors of consecutive sub-ranges into one."""
        boundaries = [1]
        offset = 0
        for part in parts:
            boundaries.extend(offset + b for b in part.boundaries[1:])
            offset += part.n
        return cls(tuple(boundaries), level)


@dataclass(frozen=True)
class SkeletalProjector:
    """0/1 mask applied by elementwise product (see hadamard)."""
    kind: str
    rows: int
    cols: int
    blocks: Optional[BlockVector] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in PROJECTOR_KINDS:
            raise ValueError(f"Unknown projector kind {self.kind!r}, expected one of {PROJECTOR_KINDS}")
        if self.kind in ("block", "block_complement"):
            if self.blocks is None:
                raise ValueError(f"Projector {self.kind!r} needs a BlockVector")
            if self.rows != self.blocks.n or self.cols != self.blocks.n:
                raise ValueError(
                    f"Block projector shape {self.rows}x{self.cols} does not match N={self.blocks.n}"
                )

    @classmethod
    def lower_strict(cls, rows: int, cols: int) -> "SkeletalProjector":
        return cls("lower_strict", rows, cols)

    @classmethod
    def upper_strict(cls, rows: int, cols: int) -> "SkeletalProjector":
        return cls("upper_strict", rows, cols)

    @classmethod
    def diagonal(cls, rows: int, cols: int) -> "SkeletalProjector":
        return cls("diagonal", rows, cols)

    @classmethod
    def block(cls, blocks: BlockVector) -> "SkeletalProjector":
        return cls("block", blocks.n, blocks.n, blocks)

    @classmethod
    def block_complement(cls, blocks: BlockVector) -> "SkeletalProjector":
        return cls("block_complement", blocks.n, blocks.n, blocks)

    @property
    def mask(self) -> np.ndarray:
        i, j = np.indices((self.rows, self.cols))
        if self.kind == "lower_strict":
            return (j < i).astype(float)
        if self.kind == "upper_strict":
            return (i < j).astype(float)
        if self.kind == "diagonal":
            return (i == j).astype(float)
        inside = self.blocks.block_mask()
        if self.kind == "block":
            return inside.astype(float)
        return (~inside).astype(float)


def _check_same(a: UtpMatrix, b: UtpMatrix, what: str):
    if a.degree != b.degree:
        raise ValueError(f"{what}: degree mismatch {a.degree} vs {b.degree}")
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def madd(a: UtpMatrix, b: UtpMatrix) -> UtpMatrix:
    _check_same(a, b, "madd")
    return UtpMatrix(a.coeffs + b.coeffs)


def msub(a: UtpMatrix, b: UtpMatrix) -> UtpMatrix:
    _check_same(a, b, "msub")
    return UtpMatrix(a.coeffs - b.coeffs)


def scale(a: UtpMatrix, s: Union[float, UtpScalar]) -> UtpMatrix:
    """Multiply by a real number or, in Taylor arithmetic, by a scalar polynomial."""
    if isinstance(s, UtpScalar):
        if s.degree != a.degree:
            raise ValueError(f"scale: degree mismatch {a.degree} vs {s.degree}")
        D = a.degree
        out = np.zeros_like(a.coeffs)
        for d in range(D):
            for k in range(d + 1):
                out[d] += s.coeffs[k] * a.coeffs[d - k]
        return UtpMatrix(out)
    if not np.isscalar(s) or not np.isrealobj(s):
        raise ValueError(f"scale: expected a real number or UtpScalar, got {type(s).__name__}")
    return UtpMatrix(a.coeffs * float(s))


def mmul(a: UtpMatrix, b: UtpMatrix) -> UtpMatrix:
    """Truncated product C_d = sum_{k=0}^{d} A_k B_{d-k}."""
    if a.degree != b.degree:
        raise ValueError(f"mmul: degree mismatch {a.degree} vs {b.degree}")
    if a.cols != b.rows:
        raise ValueError(f"mmul: inner dimensions differ {a.shape} @ {b.shape}")
    A, B = a.coeffs, b.coeffs
    out = np.zeros((a.degree, a.rows, b.cols))
    for d in range(a.degree):
        for k in range(d + 1):
            out[d] += A[k] @ B[d - k]
    return UtpMatrix(out)


def mtranspose(a: UtpMatrix) -> UtpMatrix:
    return UtpMatrix(np.transpose(a.coeffs, (0, 2, 1)))


def hadamard(p: SkeletalProjector, a: UtpMatrix) -> UtpMatrix:
    """Mask every coefficient elementwise with the projector."""
    if (p.rows, p.cols) != a.shape:
        raise ValueError(f"hadamard: projector {p.rows}x{p.cols} does not match {a.shape}")
    return UtpMatrix(a.coeffs * p.mask)


def elementwise_mul(a: UtpMatrix, b: UtpMatrix) -> UtpMatrix:
    """Entrywise product in Taylor arithmetic (each entry a truncated convolution)."""
    _check_same(a, b, "elementwise_mul")
    A, B = a.coeffs, b.coeffs
    out = np.zeros_like(A)
    for d in range(a.degree):
        for k in range(d + 1):
            out[d] += A[k] * B[d - k]
    return UtpMatrix(out)


def elementwise_reciprocal(a: UtpMatrix, mask: Optional[np.ndarray] = None) -> UtpMatrix:
    """
    Entrywise 1/a in Taylor arithmetic on the entries selected by mask.

    Entries outside the mask are set to zero. Selected entries need a nonzero
    leading coefficient.
    """
    E = a.coeffs
    if mask is None:
        mask = np.ones(a.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if np.any(E[0][mask] == 0.0):
        raise ZeroDivisionError("elementwise_reciprocal: zero leading coefficient inside the mask")
    e0 = np.where(mask, E[0], 1.0)
    out = np.zeros_like(E)
    out[0] = np.where(mask, 1.0 / e0, 0.0)
    for d in range(1, a.degree):
        acc = np.zeros(a.shape)
        for k in range(1, d + 1):
            acc += E[k] * out[d - k]
        out[d] = np.where(mask, -acc / e0, 0.0)
    return UtpMatrix(out)


def _singular_threshold(matrix: np.ndarray) -> float:
    return SINGULAR_RTOL * max(1.0, np.linalg.norm(matrix, np.inf))


def tri_inverse(r: UtpMatrix) -> UtpMatrix:
    """
    Inverse of an upper triangular matrix polynomial.

    B_0 = R_0^{-1}, B_d = -B_0 sum_{k=1}^{d} R_k B_{d-k}.

    Raises:
        ValueError: r is not square or a coefficient is not upper triangular
        LinAlgError: R_0 has a diagonal entry below the singularity threshold
    """
    if r.rows != r.cols:
        raise ValueError(f"tri_inverse needs a square polynomial, got {r.shape}")
    n = r.rows
    R = r.coeffs
    lower = hadamard(SkeletalProjector.lower_strict(n, n), r).coeffs
    for d in range(r.degree):
        if np.max(np.abs(lower[d]), initial=0.0) > STRUCTURE_RTOL * max(1.0, np.linalg.norm(R[d], np.inf)):
            raise ValueError(f"tri_inverse: coefficient {d} is not upper triangular")
    R = np.triu(R)
    diag = np.abs(np.diag(R[0]))
    if np.min(diag) < _singular_threshold(R[0]):
        raise np.linalg.LinAlgError(
            f"tri_inverse: singular leading coefficient (min |r_ii| = {np.min(diag):.3e})"
        )
    B = np.zeros_like(R)
    B[0] = linalg.solve_triangular(R[0], np.eye(n), lower=False)
    for d in range(1, r.degree):
        acc = np.zeros((n, n))
        for k in range(1, d + 1):
            acc += R[k] @ B[d - k]
        B[d] = -B[0] @ acc
    return UtpMatrix(B)


def pinv_tall(r: UtpMatrix) -> UtpMatrix:
    """
    Moore-Penrose pseudoinverse (R_{:N,:}^{-1}, 0) of a tall stacked triangular R.

    Returns an N x M polynomial with pinv_tall(r) @ r equal to the identity.
    """
    M, N = r.shape
    if M < N:
        raise ValueError(f"pinv_tall needs M >= N, got {r.shape}")
    bottom = r.coeffs[:, N:, :]
    for d in range(r.degree):
        if bottom[d].size and np.max(np.abs(bottom[d])) > STRUCTURE_RTOL * max(1.0, np.linalg.norm(r.coeffs[d], np.inf)):
            raise ValueError(f"pinv_tall: rows below N are nonzero in coefficient {d}")
    top_inv = tri_inverse(submatrix(r, slice(0, N), slice(0, N)))
    out = np.zeros((r.degree, N, M))
    out[:, :, :N] = top_inv.coeffs
    return UtpMatrix(out)


def window(a: UtpMatrix, lo: int, hi: int) -> UtpMatrix:
    """Coefficients lo, ..., hi-1 of a as a polynomial of degree hi-lo."""
    if not 0 <= lo < hi <= a.degree:
        raise ValueError(f"window [{lo}, {hi}) out of range for degree {a.degree}")
    return UtpMatrix(a.coeffs[lo:hi])


def truncate(a: UtpMatrix, degree: int) -> UtpMatrix:
    return window(a, 0, degree)


def extend(a: UtpMatrix, degree: int) -> UtpMatrix:
    """Zero-pad a to a higher degree."""
    if degree < a.degree:
        raise ValueError(f"extend: target degree {degree} below current degree {a.degree}")
    out = np.zeros((degree,) + a.shape)
    out[:a.degree] = a.coeffs
    return UtpMatrix(out)


def shift(a: UtpMatrix, k: int) -> UtpMatrix:
    """T^k * a, of degree a.degree + k."""
    if k < 0:
        raise ValueError(f"shift: k must be nonnegative, got {k}")
    out = np.zeros((a.degree + k,) + a.shape)
    out[k:] = a.coeffs
    return UtpMatrix(out)


def _check_slice(s: slice, n: int, what: str) -> slice:
    if not isinstance(s, slice) or s.step not in (None, 1):
        raise ValueError(f"{what}: expected a unit-step slice, got {s!r}")
    start = 0 if s.start is None else s.start
    stop = n if s.stop is None else s.stop
    if not 0 <= start < stop <= n:
        raise ValueError(f"{what}: slice {start}:{stop} out of bounds for size {n}")
    return slice(start, stop)


def submatrix(a: UtpMatrix, rows: slice, cols: slice) -> UtpMatrix:
    rows = _check_slice(rows, a.rows, "submatrix rows")
    cols = _check_slice(cols, a.cols, "submatrix cols")
    return UtpMatrix(a.coeffs[:, rows, cols])


def write_submatrix(a: UtpMatrix, rows: slice, cols: slice, block: UtpMatrix) -> UtpMatrix:
    """Copy of a with the given block replaced."""
    rows = _check_slice(rows, a.rows, "write_submatrix rows")
    cols = _check_slice(cols, a.cols, "write_submatrix cols")
    target = (rows.stop - rows.start, cols.stop - cols.start)
    if block.shape != target or block.degree != a.degree:
        raise ValueError(
            f"write_submatrix: block {block.shape} (degree {block.degree}) does not fit "
            f"{target} (degree {a.degree})"
        )
    out = a.coeffs.copy()
    out[:, rows, cols] = block.coeffs
    return UtpMatrix(out)


def trace_pair(x: UtpMatrix, y: UtpMatrix) -> UtpScalar:
    """The pairing tr(X^T Y) evaluated in Taylor arithmetic."""
    _check_same(x, y, "trace_pair")
    pairs = np.einsum("aij,bij->ab", x.coeffs, y.coeffs)
    D = x.degree
    out = np.zeros(D)
    for d in range(D):
        out[d] = sum(pairs[k, d - k] for k in range(d + 1))
    return UtpScalar(out)


def diagonal(a: UtpMatrix) -> np.ndarray:
    """Diagonal coefficient vectors as a (D, min(M, N)) array."""
    return np.diagonal(a.coeffs, axis1=1, axis2=2).copy()


def diag_matrix(vectors: np.ndarray) -> UtpMatrix:
    """Diagonal matrix polynomial from (D, N) coefficient vectors."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    D, N = vectors.shape
    out = np.zeros((D, N, N))
    idx = np.arange(N)
    out[:, idx, idx] = vectors
    return UtpMatrix(out)


def coeff_norms(a: UtpMatrix) -> np.ndarray:
    """Infinity norm of every coefficient."""
    return np.array([np.linalg.norm(c, np.inf) for c in a.coeffs])


def symmetrize(a: UtpMatrix) -> UtpMatrix:
    return UtpMatrix(0.5 * (a.coeffs + np.transpose(a.coeffs, (0, 2, 1))))
