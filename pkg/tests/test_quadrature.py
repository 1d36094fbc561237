import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from hypolab.errors import ValidationError
from hypolab.model import make_even_power_potential, make_harmonic_potential
from hypolab.quadrature import (
    QuadratureRule,
    expectation,
    gauss_hermite_rule,
    hermite_values,
    position_rule,
    position_space,
    stieltjes_basis,
    total_degree_indices,
    velocity_rule,
)

QUARTIC = make_even_power_potential(4, 1)
HARMONIC = make_harmonic_potential(1)


def _quad_inner(f, pot, lim=6.0):
    val, _ = integrate.quad(lambda x: f(x) * math.exp(-pot.evaluate(np.array([[x]]))[0]), -lim, lim,
                            epsabs=1e-12, epsrel=1e-12, limit=400)
    return val


def test_gauss_hermite_single_node():
    r = gauss_hermite_rule(1, 1.0)
    np.testing.assert_allclose(r.nodes, [0.0])
    np.testing.assert_allclose(r.weights, [1.0])


def test_gauss_hermite_moments():
    assert gauss_hermite_rule(5, 2.0).integrate(gauss_hermite_rule(5, 2.0).nodes ** 2) == pytest.approx(0.5, abs=1e-14)
    r = gauss_hermite_rule(5, 1.0)
    assert r.integrate(r.nodes**4) == pytest.approx(3.0, abs=1e-13)


@given(n=st.integers(1, 40), beta=st.floats(0.05, 20))
@settings(max_examples=50, deadline=None)
def test_gauss_hermite_probability_rule(n, beta):
    r = gauss_hermite_rule(n, beta)
    assert np.all(r.weights > 0)
    assert r.weights.sum() == pytest.approx(1.0, abs=1e-12)
    # even moments (2k-1)!! / beta^k up to the exact degree
    for k in range(0, n):
        expected = special.factorial2(2 * k - 1) / beta**k if k else 1.0
        assert r.integrate(r.nodes ** (2 * k)) == pytest.approx(expected, rel=1e-10)


def test_rule_rejects_nonpositive_weight():
    from hypolab.errors import NumericalError

    with pytest.raises(NumericalError):
        QuadratureRule(np.zeros(2), np.array([1.0, 0.0]), "bad", 1)


@pytest.mark.parametrize("n", [5, 20, 40])
def test_quartic_rule_moments(n):
    r = position_rule(QUARTIC, n)
    assert r.exact_degree == 2 * n - 1
    assert np.all(r.weights > 0) and r.weights.sum() == pytest.approx(1.0, abs=1e-12)
    for k in range(0, n):
        exact = special.gamma((2 * k + 1) / 4) / special.gamma(0.25)
        assert r.integrate(r.nodes ** (2 * k)) == pytest.approx(exact, rel=1e-9)
        assert abs(r.integrate(r.nodes ** (2 * k + 1) if 2 * k + 1 < 2 * n else 0 * r.nodes)) < 1e-9 * max(exact, 1)


def test_harmonic_basis_is_hermite():
    rule = position_rule(HARMONIC, 10)
    basis = stieltjes_basis(HARMONIC, rule, 3)
    x = np.linspace(-3, 3, 13)
    v = basis.values(x)
    np.testing.assert_allclose(v[0], 1.0, atol=1e-13)
    np.testing.assert_allclose(v[1], x, atol=1e-12)
    np.testing.assert_allclose(v[2], (x**2 - 1) / math.sqrt(2), atol=1e-12)


def test_hermite_values_beta():
    w = np.linspace(-2, 2, 9)
    beta = 2.5
    v = hermite_values(4, w, beta)
    s = math.sqrt(beta) * w
    np.testing.assert_allclose(v[3], (s**3 - 3 * s) / math.sqrt(6), atol=1e-12)


def test_quartic_gram_independent_quadrature():
    rule = position_rule(QUARTIC, 2 * 8 + 3)
    basis = stieltjes_basis(QUARTIC, rule, 8)
    G = np.empty((8, 8))
    for i in range(8):
        for j in range(i, 8):
            G[i, j] = G[j, i] = _quad_inner(lambda x: basis.values(x)[i] * basis.values(x)[j], QUARTIC)
    assert np.max(np.abs(G - np.eye(8))) <= 1e-10
    np.testing.assert_allclose(basis.values(np.array([0.3, -1.7]))[0], 1.0, atol=1e-13)


def test_insufficient_quadrature_rejected():
    rule = position_rule(QUARTIC, 6)
    with pytest.raises(ValidationError):
        stieltjes_basis(QUARTIC, rule, 8)


@pytest.mark.parametrize("pot", [HARMONIC, QUARTIC, make_even_power_potential(6, 1)], ids=lambda p: p.name)
@pytest.mark.parametrize("n", [4, 16, 32])
def test_position_space_orthonormal_and_consistent(pot, n):
    sp = position_space(pot, n)
    assert np.max(np.abs(sp.gram() - np.eye(n))) <= 1e-10
    # recurrence evaluation agrees with stored node values
    np.testing.assert_allclose(sp.evaluate(sp.rule.nodes), sp.values, atol=1e-12, rtol=0)


@pytest.mark.parametrize("pot", [HARMONIC, QUARTIC], ids=lambda p: p.name)
def test_integration_by_parts(pot):
    # <phi_k', phi_j> + <phi_k, phi_j'> = <phi' phi_k, phi_j>
    n = 12
    sp = position_space(pot, n)
    D = sp.derivative_matrices()[0]
    dphi = pot.gradient(sp.rule.nodes)[:, 0]
    M = (sp.values * sp.rule.weights * dphi) @ sp.values.T
    assert np.max(np.abs(D + D.T - M)) <= 1e-9


def test_derivative_matrix_independent_oracle():
    n = 6
    sp = position_space(QUARTIC, n)
    D = sp.derivative_matrices()[0]
    basis = sp.basis_1d
    for j, k in [(0, 1), (1, 2), (0, 3), (2, 5), (4, 5)]:
        val = _quad_inner(lambda x: basis.derivatives(x)[k] * basis.values(x)[j], QUARTIC)
        assert D[j, k] == pytest.approx(val, abs=1e-10)


def test_total_degree_indices():
    for d in (1, 2, 3):
        for m in range(5):
            idx = total_degree_indices(d, m)
            assert len(idx) == math.comb(m + d, d)
            assert len(set(idx)) == len(idx)
            assert idx[0] == (0,) * d
            assert [sum(i) for i in idx] == sorted(sum(i) for i in idx)


@pytest.mark.parametrize("pot", [make_harmonic_potential(2), make_even_power_potential(4, 2)], ids=lambda p: p.name)
def test_two_dimensional_spaces(pot):
    sp = position_space(pot, 5)
    assert sp.size == math.comb(4 + 2, 2)
    assert np.max(np.abs(sp.gram() - np.eye(sp.size))) <= 1e-10
    np.testing.assert_allclose(sp.evaluate(np.array([[0.3, -0.4]]))[0], 1.0, atol=1e-10)


def test_expectation_closed_forms():
    assert expectation(HARMONIC, 2.0, lambda x, w: x[:, 0] ** 2 + w[:, 0] ** 2) == pytest.approx(1.5, abs=1e-12)
    q = expectation(QUARTIC, 1.0, lambda x, w: x[:, 0] ** 2)
    assert q == pytest.approx(special.gamma(0.75) / special.gamma(0.25), rel=1e-12)
    for d in (2, 3):
        pot = make_even_power_potential(4, d)
        val = expectation(pot, 1.0, lambda x, w: np.sum(x * x, axis=1))
        assert val == pytest.approx(special.gamma((d + 2) / 4) / special.gamma(d / 4), rel=1e-8)


def test_velocity_rule_tensor():
    r = velocity_rule(4, 2.0, 2)
    assert r.nodes.shape == (16, 2)
    assert r.weights.sum() == pytest.approx(1.0)
    assert r.integrate(r.nodes[:, 0] ** 2 * r.nodes[:, 1] ** 2) == pytest.approx(0.25)
