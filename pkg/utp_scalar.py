"""
Truncated univariate Taylor polynomial (UTP) arithmetic over real scalars.

A UtpScalar holds the D coefficients x_0, ..., x_{D-1} of
x(T) = x_0 + x_1 T + ... + x_{D-1} T^{D-1} modulo T^D. Arithmetic and the
elementary functions propagate all D coefficients with the usual recurrences.

The module-level sin/cos/exp/log/sqrt functions accept UtpScalar values as
well as plain real or complex numbers and numpy arrays, so a formula written
once can be evaluated in Taylor arithmetic, in real arithmetic, or with a
complex step.
"""

from typing import Sequence, Union

import numpy as np


Number = Union[int, float]

ELEMENTARY_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class UtpScalar:
    """Degree-D truncated scalar polynomial. Immutable after construction."""

    __slots__ = ("_coeffs",)
    __array_priority__ = 1000

    def __init__(self, coeffs: Sequence[float]):
        arr = np.array(coeffs, dtype=float).reshape(-1)
        if arr.size < 1:
            raise ValueError("UtpScalar needs at least one coefficient (D >= 1)")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"UtpScalar coefficients must be finite, got {arr}")
        arr.setflags(write=False)
        self._coeffs = arr

    @classmethod
    def constant(cls, value: Number, degree: int) -> "UtpScalar":
        coeffs = np.zeros(degree)
        coeffs[0] = value
        return cls(coeffs)

    @classmethod
    def variable(cls, value: Number, direction: Number, degree: int) -> "UtpScalar":
        """The curve value + direction*T truncated at degree D."""
        coeffs = np.zeros(degree)
        coeffs[0] = value
        if degree > 1:
            coeffs[1] = direction
        return cls(coeffs)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def degree(self) -> int:
        return self._coeffs.size

    def __len__(self) -> int:
        return self.degree

    def __repr__(self) -> str:
        return f"UtpScalar({self._coeffs.tolist()})"

    def _coerce(self, other) -> "UtpScalar":
        if isinstance(other, UtpScalar):
            if other.degree != self.degree:
                raise ValueError(
                    f"Degree mismatch: {self.degree} vs {other.degree}"
                )
            return other
        if np.isscalar(other) and np.isrealobj(other):
            return UtpScalar.constant(float(other), self.degree)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return UtpScalar(self._coeffs - other.coeffs)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return UtpScalar(other.coeffs - self._coeffs)

    def __neg__(self):
        return UtpScalar(-self._coeffs)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return div(self, other)

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return div(other, self)

    def __pow__(self, exponent: int):
        if not isinstance(exponent, (int, np.integer)):
            raise ValueError(f"Only integer powers are supported, got {exponent!r}")
        if exponent < 0:
            return div(UtpScalar.constant(1.0, self.degree), self ** (-exponent))
        result = UtpScalar.constant(1.0, self.degree)
        base = self
        # square-and-multiply
        while exponent:
            if exponent & 1:
                result = mul(result, base)
            exponent >>= 1
            if exponent:
                base = mul(base, base)
        return result

    def __eq__(self, other):
        if not isinstance(other, UtpScalar):
            return NotImplemented
        return self.degree == other.degree and np.array_equal(self._coeffs, other.coeffs)

    def __hash__(self):
        return hash(self._coeffs.tobytes())


def _check_degrees(a: UtpScalar, b: UtpScalar):
    if a.degree != b.degree:
        raise ValueError(f"Degree mismatch: {a.degree} vs {b.degree}")


def add(a: UtpScalar, b: UtpScalar) -> UtpScalar:
    """c_d = a_d + b_d."""
    _check_degrees(a, b)
    return UtpScalar(a.coeffs + b.coeffs)


def mul(a: UtpScalar, b: UtpScalar) -> UtpScalar:
    """Truncated convolution c_d = sum_{k<=d} a_k b_{d-k}."""
    _check_degrees(a, b)
    D = a.degree
    return UtpScalar(np.convolve(a.coeffs, b.coeffs)[:D])


def div(a: UtpScalar, b: UtpScalar) -> UtpScalar:
    """
    Solve c * b = a coefficient by coefficient.

    c_d = (a_d - sum_{k=1}^{d} b_k c_{d-k}) / b_0
    """
    _check_degrees(a, b)
    x, y = a.coeffs, b.coeffs
    if y[0] == 0.0:
        raise ZeroDivisionError("Division by a polynomial with zero leading coefficient")
    D = a.degree
    c = np.zeros(D)
    for d in range(D):
        c[d] = (x[d] - np.dot(y[1:d + 1], c[d - 1::-1][:d])) / y[0]
    return UtpScalar(c)


def _exp(x: np.ndarray) -> np.ndarray:
    D = x.size
    y = np.zeros(D)
    y[0] = np.exp(x[0])
    k = np.arange(D)
    for d in range(1, D):
        y[d] = np.dot(k[1:d + 1] * x[1:d + 1], y[d - 1::-1][:d]) / d
    return y


def _log(x: np.ndarray) -> np.ndarray:
    if x[0] <= 0.0:
        raise ValueError(f"log needs a positive leading coefficient, got {x[0]}")
    D = x.size
    y = np.zeros(D)
    y[0] = np.log(x[0])
    k = np.arange(D)
    for d in range(1, D):
        # d y_d x_0 = d x_d - sum_{k=1}^{d-1} k y_k x_{d-k}
        acc = np.dot(k[1:d] * y[1:d], x[d - 1:0:-1])
        y[d] = (x[d] - acc / d) / x[0]
    return y


def _sqrt(x: np.ndarray) -> np.ndarray:
    if x[0] <= 0.0:
        raise ValueError(f"sqrt needs a positive leading coefficient, got {x[0]}")
    D = x.size
    y = np.zeros(D)
    y[0] = np.sqrt(x[0])
    for d in range(1, D):
        acc = np.dot(y[1:d], y[d - 1:0:-1])
        y[d] = (x[d] - acc) / (2.0 * y[0])
    return y


def _sincos(x: np.ndarray):
    D = x.size
    s = np.zeros(D)
    c = np.zeros(D)
    s[0] = np.sin(x[0])
    c[0] = np.cos(x[0])
    k = np.arange(D)
    for d in range(1, D):
        kx = k[1:d + 1] * x[1:d + 1]
        s[d] = np.dot(kx, c[d - 1::-1][:d]) / d
        c[d] = -np.dot(kx, s[d - 1::-1][:d]) / d
    return s, c


def elem(fn: str, a: UtpScalar) -> UtpScalar:
    """
    Apply an elementary function in Taylor arithmetic.

    Args:
        fn: One of 'sin', 'cos', 'exp', 'log', 'sqrt'
        a: Argument polynomial

    Returns:
        The Taylor coefficients of fn(a(t)) at t=0, truncated at a.degree
    """
    x = a.coeffs
    if fn == "sin":
        return UtpScalar(_sincos(x)[0])
    if fn == "cos":
        return UtpScalar(_sincos(x)[1])
    if fn == "exp":
        return UtpScalar(_exp(x))
    if fn == "log":
        return UtpScalar(_log(x))
    if fn == "sqrt":
        return UtpScalar(_sqrt(x))
    raise ValueError(f"Unknown elementary function {fn!r}, expected one of {ELEMENTARY_FUNCTIONS}")


def _dispatch(fn: str, x):
    if isinstance(x, UtpScalar):
        return elem(fn, x)
    return getattr(np, fn)(x)


def sin(x):
    return _dispatch("sin", x)


def cos(x):
    return _dispatch("cos", x)


def exp(x):
    return _dispatch("exp", x)


def log(x):
    return _dispatch("log", x)


def sqrt(x):
    return _dispatch("sqrt", x)
