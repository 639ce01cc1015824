import numpy as np
import pytest

from utp_scalar import UtpScalar
from utpm import SkeletalProjector, UtpMatrix, coeff_norms, trace_pair
from oracles import fd_directional, residual_qr
from qr_ad import (
    _qr_lift_step,
    householder_demo,
    householder_qr,
    qr_pullback,
    qr_pushforward,
    qr_tangent,
    sign_fixed_qr,
)


def well_conditioned(rng, degree, rows, cols):
    u, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    v, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
    s = np.zeros((rows, cols))
    s[np.arange(cols), np.arange(cols)] = 1.0 + rng.random(cols)
    coeffs = rng.standard_normal((degree, rows, cols))
    coeffs[0] = u @ s @ v.T
    return UtpMatrix(coeffs)


def evaluate(a: UtpMatrix, t):
    return sum(c * t ** d for d, c in enumerate(a.coeffs))


def test_sign_fixed_qr(rng):
    a0 = rng.standard_normal((5, 3))
    q0, r0 = sign_fixed_qr(a0)
    assert q0.shape == (5, 5) and r0.shape == (5, 3)
    assert np.all(np.diag(r0) >= 0.0)
    np.testing.assert_allclose(q0 @ r0, a0, atol=1e-13)
    np.testing.assert_allclose(q0.T @ q0, np.eye(5), atol=1e-13)


def test_identity_input():
    factors = qr_pushforward(UtpMatrix.identity(1, 3))
    np.testing.assert_allclose(factors.q.coeff(0), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(factors.r.coeff(0), np.eye(3), atol=1e-15)


def test_constant_curve_has_zero_higher_coefficients(rng):
    a = UtpMatrix.constant(rng.standard_normal((4, 2)), 3)
    factors = qr_pushforward(a)
    assert np.all(factors.q.coeffs[1:] == 0.0)
    assert np.all(factors.r.coeffs[1:] == 0.0)


def test_defining_equations_hold(rng):
    for _ in range(200):
        rows = int(rng.integers(1, 9))
        cols = int(rng.integers(1, rows + 1))
        D = int(rng.integers(1, 7))
        a = well_conditioned(rng, D, rows, cols)
        factors = qr_pushforward(a)
        residuals = residual_qr(a, factors.q, factors.r)
        assert residuals.max() <= 1e-10 * max(1.0, np.linalg.norm(a.coeff(0), np.inf))
        assert np.all(residuals["triangularity"] == 0.0)
        assert np.all(np.diag(factors.r.coeff(0)[:cols]) > 0.0)


def test_lift_step_structure_is_exact(rng):
    for _ in range(30):
        rows = int(rng.integers(1, 7))
        cols = int(rng.integers(1, rows + 1))
        D = int(rng.integers(2, 6))
        a = well_conditioned(rng, D, rows, cols)
        factors = qr_pushforward(a)
        r0 = factors.r.coeff(0)
        r0_top_inv = np.linalg.inv(r0[:cols, :cols])
        for d in range(1, D):
            _, S, X = _qr_lift_step(factors.q.coeffs, factors.r.coeffs, a.coeff(d), d, r0_top_inv)
            np.testing.assert_array_equal(X, -X.T)
            np.testing.assert_array_equal(S, S.T)
            # Q_d = Q_0 (S + X) as returned by the pushforward
            np.testing.assert_allclose(factors.q.coeff(d), factors.q.coeff(0) @ (S + X), atol=1e-10)


def test_coefficients_match_finite_differences(rng):
    for _ in range(20):
        cols = int(rng.integers(1, 4))
        rows = cols + int(rng.integers(0, 3))
        b = well_conditioned(rng, 2, rows, cols)
        q_econ, r_econ = qr_pushforward(b).economy()

        def thin_b(t):
            q0, r0 = sign_fixed_qr(evaluate(b, t))
            return np.concatenate([q0[:, :cols].ravel(), r0[:cols].ravel()])

        first = fd_directional(thin_b, 0.0, 1.0)
        np.testing.assert_allclose(first, np.concatenate([q_econ.coeff(1).ravel(), r_econ.coeff(1).ravel()]),
                                   atol=1e-6)

    a = well_conditioned(rng, 3, 4, 3)
    q_econ, r_econ = qr_pushforward(a).economy()

    def thin(t):
        q0, r0 = sign_fixed_qr(evaluate(a, t))
        return np.concatenate([q0[:, :3].ravel(), r0[:3].ravel()])

    h = 1e-4
    second = (thin(h) - 2.0 * thin(0.0) + thin(-h)) / h ** 2
    np.testing.assert_allclose(0.5 * second, np.concatenate([q_econ.coeff(2).ravel(), r_econ.coeff(2).ravel()]),
                               atol=1e-6)


def test_economy_shapes(rng):
    factors = qr_pushforward(well_conditioned(rng, 2, 5, 2))
    q, r = factors.economy()
    assert q.shape == (5, 2) and r.shape == (2, 2)
    assert factors.degree == 2
    assert np.max(coeff_norms(q.T @ q - UtpMatrix.identity(2, 2))) <= 1e-12


def test_pushforward_errors():
    with pytest.raises(ValueError):
        qr_pushforward(UtpMatrix.zeros(2, 2, 3))
    rank_deficient = UtpMatrix.constant([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]], 2)
    with pytest.raises(np.linalg.LinAlgError):
        qr_pushforward(rank_deficient)


def test_tangent_matches_first_coefficient(rng):
    a = well_conditioned(rng, 2, 5, 3)
    factors = qr_pushforward(a)
    q0 = UtpMatrix(factors.q.coeffs[:1])
    r0 = UtpMatrix(factors.r.coeffs[:1])
    qdot, rdot = qr_tangent(q0, r0, UtpMatrix(a.coeffs[1:2]))
    np.testing.assert_allclose(qdot.coeff(0), factors.q.coeff(1), atol=1e-12)
    np.testing.assert_allclose(rdot.coeff(0), factors.r.coeff(1), atol=1e-12)


def test_pullback_zero_adjoint_leaves_accumulator(rng):
    a = well_conditioned(rng, 3, 4, 2)
    factors = qr_pushforward(a)
    abar = UtpMatrix(rng.standard_normal((3, 4, 2)))
    out = qr_pullback(a, factors.q, factors.r, abar, UtpMatrix.zeros(3, 4, 4), UtpMatrix.zeros(3, 4, 2))
    np.testing.assert_allclose(out.coeffs, abar.coeffs, atol=1e-15)


def test_pullback_identity_case():
    eye = UtpMatrix.identity(2, 3)
    out = qr_pullback(eye, eye, eye, UtpMatrix.zeros(2, 3, 3), UtpMatrix.zeros(2, 3, 3), eye)
    np.testing.assert_allclose(out.coeffs, eye.coeffs, atol=1e-15)


def test_pullback_is_adjoint_of_tangent(rng):
    for _ in range(100):
        cols = int(rng.integers(1, 4))
        rows = cols + int(rng.integers(0, 3))
        D = int(rng.integers(1, 5))
        a = well_conditioned(rng, D, rows, cols)
        factors = qr_pushforward(a)
        adot = UtpMatrix(rng.standard_normal((D, rows, cols)))
        qbar = UtpMatrix(rng.standard_normal((D, rows, rows)))
        upper = 1.0 - SkeletalProjector.lower_strict(rows, cols).mask
        rbar = UtpMatrix(rng.standard_normal((D, rows, cols)) * upper)

        abar = qr_pullback(a, factors.q, factors.r, UtpMatrix.zeros(D, rows, cols), qbar, rbar)
        qdot, rdot = qr_tangent(factors.q, factors.r, adot)
        lhs = trace_pair(abar, adot)
        rhs = trace_pair(qbar, qdot) + trace_pair(rbar, rdot)
        np.testing.assert_allclose(lhs.coeffs, rhs.coeffs, atol=1e-9)


def test_pullback_rejects_inconsistent_factors(rng):
    a = well_conditioned(rng, 2, 3, 2)
    factors = qr_pushforward(a)
    bent = UtpMatrix(factors.q.coeffs + 1e-3)
    with pytest.raises(np.linalg.LinAlgError):
        qr_pullback(a, bent, factors.r, UtpMatrix.zeros(2, 3, 2), UtpMatrix.zeros(2, 3, 3), UtpMatrix.zeros(2, 3, 2))
    # unchecked call goes through
    qr_pullback(a, bent, factors.r, UtpMatrix.zeros(2, 3, 2), UtpMatrix.zeros(2, 3, 3), UtpMatrix.zeros(2, 3, 2),
                check=False)


def test_pullback_shape_errors(rng):
    a = well_conditioned(rng, 2, 3, 2)
    factors = qr_pushforward(a)
    with pytest.raises(ValueError):
        qr_pullback(a, factors.q, factors.r, UtpMatrix.zeros(2, 3, 2), UtpMatrix.zeros(2, 3, 2), UtpMatrix.zeros(2, 3, 2))
    with pytest.raises(ValueError):
        qr_pullback(a, factors.q, factors.r, UtpMatrix.zeros(3, 3, 2), UtpMatrix.zeros(2, 3, 3), UtpMatrix.zeros(2, 3, 2))


def test_householder_demo_zero_branch():
    D = 2
    x = [UtpScalar([1.0, 0.0]), UtpScalar([0.0, 1.0])]
    v, beta = householder_demo(x)
    assert np.all(beta.coeffs == 0.0)
    assert v[0] == UtpScalar.constant(1.0, D)

    _, beta = householder_demo([UtpScalar.constant(1.0, D), UtpScalar.constant(0.0, D)])
    assert np.all(beta.coeffs == 0.0)


def test_householder_demo_constant_vector():
    v, beta = householder_demo([UtpScalar.constant(3.0, 2), UtpScalar.constant(4.0, 2)])
    np.testing.assert_allclose(beta.coeffs, [0.4, 0.0])
    np.testing.assert_allclose([vi.coeffs[0] for vi in v], [1.0, -2.0])
    reflector = np.eye(2) - 0.4 * np.outer([1.0, -2.0], [1.0, -2.0])
    np.testing.assert_allclose(reflector @ [3.0, 4.0], [5.0, 0.0], atol=1e-14)


def test_householder_qr_breaks_on_pathological_input():
    coeffs = np.zeros((2, 2, 1))
    coeffs[0, 0, 0] = 1.0
    coeffs[1, 1, 0] = 1.0
    a = UtpMatrix(coeffs)
    householder = householder_qr(a)
    assert householder.r.coeff(1)[1, 0] == 1.0
    assert residual_qr(a, householder.q, householder.r)["triangularity"][1] == 1.0

    lifted = qr_pushforward(a)
    assert np.all(residual_qr(a, lifted.q, lifted.r)["triangularity"] == 0.0)
    assert residual_qr(a, lifted.q, lifted.r).max() <= 1e-14


def test_householder_qr_agrees_on_generic_input(rng):
    a = well_conditioned(rng, 3, 4, 3)
    q_h, r_h = householder_qr(a).economy()
    q_p, r_p = qr_pushforward(a).economy()
    assert np.max(coeff_norms(q_h - q_p)) <= 1e-10
    assert np.max(coeff_norms(r_h - r_p)) <= 1e-10
