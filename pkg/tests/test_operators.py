import math

import numpy as np
import pytest
from scipy import integrate

from conftest import harmonic_ops, quartic_ops
from hypolab.errors import ValidationError
from hypolab.model import ModelParams, make_even_power_potential, make_harmonic_potential
from hypolab.operators import apply_A2P, apply_AP, assemble, build_B, build_G, dense, dump_coo, load_coo


def _ops(pot_name, alpha, beta, n, d=1):
    pot = make_harmonic_potential(d) if pot_name == "harmonic" else make_even_power_potential(int(pot_name[-1]), d)
    return assemble(ModelParams(alpha, beta, d), pot, n, n)


CASES = [("harmonic", 1, 8), ("harmonic", 1, 32), ("power4", 1, 16), ("power4", 1, 32), ("power6", 1, 16),
         ("harmonic", 2, 6), ("power4", 2, 6), ("harmonic", 3, 4)]


@pytest.mark.parametrize("name,d,n", CASES)
def test_structure_of_shipped_potentials(name, d, n):
    ops = _ops(name, 1.3, 0.7, n, d)
    A, S, L = dense(ops.A), dense(ops.S), dense(ops.L)
    scale = np.max(np.abs(A))
    assert np.max(np.abs(A + A.T)) <= 1e-12 * scale
    assert np.array_equal(S, S.T)
    assert np.max(np.abs(L @ ops.one)) <= 1e-12 * scale
    assert np.max(np.abs(ops.one @ L)) <= 1e-12 * scale


def test_S_is_diagonal_ou_spectrum():
    ops = harmonic_ops(2.0, 1.0, 8)
    S = dense(ops.S)
    assert np.count_nonzero(S - np.diag(np.diag(S))) == 0
    expected = np.tile(-2.0 * np.arange(8), 8)
    np.testing.assert_array_equal(np.diag(S), expected)


def test_transport_entries():
    # A x = -w and A w = x for harmonic, beta = 1
    ops = harmonic_ops(1.0, 1.0, 8)
    A = dense(ops.A)
    x, w = ops.flat(1, 0), ops.flat(0, 1)
    assert A[w, x] == pytest.approx(-1.0, abs=1e-14)
    assert A[x, w] == pytest.approx(1.0, abs=1e-14)


def test_velocity_coupling_is_nearest_neighbour():
    ops = quartic_ops(1.0, 1.0, 12)
    A = dense(ops.A)
    rows, cols = np.nonzero(A)
    dw = np.abs(ops.w_degree[rows] - ops.w_degree[cols])
    assert np.all(dw == 1)


def test_dissipativity():
    ops = quartic_ops(0.8, 1.0, 16)
    L = dense(ops.L)
    f = np.random.default_rng(3).standard_normal((1000, ops.dim))
    q = np.einsum("ij,jk,ik->i", f, L, f)
    assert np.all(q <= 1e-12 * np.sum(f * f, axis=1))
    # only the velocity part is dissipated
    s = np.einsum("ij,jk,ik->i", f, dense(ops.S), f)
    np.testing.assert_allclose(q, s, rtol=1e-10)


@pytest.mark.parametrize("factory", [harmonic_ops, quartic_ops], ids=["harmonic", "quartic"])
def test_truncations_are_nested(factory):
    small, big = factory(1.0, 1.0, 12), factory(1.0, 1.0, 16)
    idx = np.array([big.flat(ix, iw) for ix in range(12) for iw in range(12)])
    np.testing.assert_allclose(dense(big.L)[np.ix_(idx, idx)], dense(small.L), atol=1e-10)


def test_AP_and_A2P_closed_forms():
    ops = harmonic_ops(1.0, 1.0, 10)
    c = ops.coefficients
    x = c(lambda X, W: X[:, 0])
    np.testing.assert_allclose(apply_AP(ops, x), c(lambda X, W: -W[:, 0]), atol=1e-12)
    np.testing.assert_allclose(apply_A2P(ops, x), c(lambda X, W: -X[:, 0]), atol=1e-12)
    x2 = c(lambda X, W: X[:, 0] ** 2)
    np.testing.assert_allclose(apply_A2P(ops, x2), c(lambda X, W: 2 * W[:, 0] ** 2 - 2 * X[:, 0] ** 2), atol=1e-11)
    # AP annihilates velocity-only functions
    np.testing.assert_allclose(apply_AP(ops, c(lambda X, W: W[:, 0] ** 3)), 0, atol=1e-12)


def test_G_is_the_position_ou_operator():
    ops = assemble(ModelParams(1.0, 1.0), make_harmonic_potential(1), 12, 4)
    G = build_G(ops)
    assert np.max(np.abs(G - G.T)) <= 1e-12
    np.testing.assert_allclose(np.sort(-np.linalg.eigvalsh(G)), np.arange(1, 12), atol=1e-10)


def test_G_scales_with_temperature():
    ops = assemble(ModelParams(1.0, 2.0), make_harmonic_potential(1), 8, 4)
    np.testing.assert_allclose(np.sort(-np.linalg.eigvalsh(build_G(ops))), np.arange(1, 8) / 2, atol=1e-10)


@pytest.mark.parametrize("factory", [harmonic_ops, quartic_ops], ids=["harmonic", "quartic"])
def test_B_properties(factory):
    ops = factory(1.0, 1.0, 10)
    B = build_B(ops)
    P = dense(ops.P)
    rng = np.random.default_rng(0)
    f = P @ rng.standard_normal(ops.dim)
    assert np.linalg.norm(B @ f) <= 1e-12 * np.linalg.norm(f)
    assert np.linalg.norm(B, 2) <= 0.5 + 1e-12
    np.testing.assert_allclose(P @ B, B, atol=1e-12)


def test_coo_round_trip(tmp_path):
    ops = quartic_ops(1.0, 1.0, 6)
    paths = dump_coo(ops, tmp_path)
    assert {p.name for p in paths} >= {"L.coo", "A.coo", "G.coo"}
    np.testing.assert_array_equal(load_coo(tmp_path / "L.coo"), dense(ops.L))
    np.testing.assert_array_equal(load_coo(tmp_path / "G.coo"), dense(ops.G))


def test_assemble_rejects_bad_input():
    with pytest.raises(ValidationError):
        assemble(ModelParams(1, 1), make_harmonic_potential(1), 1, 4)
    with pytest.raises(ValidationError):
        assemble(ModelParams(1, 1, 2), make_harmonic_potential(1), 4, 4)
    with pytest.raises(ValidationError):
        assemble(ModelParams(1, 1, 4), make_harmonic_potential(4), 4, 4)
    with pytest.raises(ValidationError, match="cap"):
        assemble(ModelParams(1, 1), make_harmonic_potential(1), 300, 300)


def test_coefficients_evaluate_round_trip():
    ops = quartic_ops(1.0, 1.0, 12)
    g = lambda X, W: X[:, 0] ** 3 * W[:, 0] - 2 * W[:, 0] ** 2 + X[:, 0]
    c = ops.coefficients(g)
    x = np.array([[0.3], [-1.1]])
    w = np.array([[0.7], [2.0]])
    np.testing.assert_allclose(ops.evaluate(c, x, w), g(x, w), atol=1e-10)


# independent oracle: <L f, g> for polynomials by adaptive quadrature in x and
# Gauss-Hermite in w, against the assembled Galerkin matrix


def _generator_inner(pot, alpha, beta, f, g):
    """``<L f, g>`` with ``L f = w f_x - phi'/beta f_w - alpha w f_w + alpha/beta f_ww``."""
    t, wt = np.polynomial.hermite_e.hermegauss(30)
    wv = t / math.sqrt(beta)
    wt = wt / wt.sum()

    def integrand(x):
        rho = math.exp(-pot.evaluate(np.array([[x]]))[0])
        dphi = pot.gradient(np.array([[x]]))[0, 0]
        fx, fw, fww, f0 = f(x, wv)
        lf = wv * fx - dphi / beta * fw - alpha * wv * fw + alpha / beta * fww
        return rho * np.sum(wt * lf * g(x, wv))

    return integrate.quad(integrand, -8, 8, epsabs=1e-13, epsrel=1e-12, limit=400)[0]


POLYS = {
    # value of (f_x, f_w, f_ww, f)
    "x^2 w": lambda x, w: (2 * x * w, x**2 + 0 * w, 0 * w, x**2 * w),
    "x w^2": lambda x, w: (w**2, 2 * x * w, 2 * x + 0 * w, x * w**2),
    "w^3": lambda x, w: (0 * w, 3 * w**2, 6 * w, w**3),
    "x^3": lambda x, w: (3 * x**2 + 0 * w, 0 * w, 0 * w, x**3 + 0 * w),
}
TESTS = {"x w": lambda x, w: x * w, "x^2": lambda x, w: x**2 + 0 * w, "w^2 x^2": lambda x, w: w**2 * x**2,
         "x^2 w^3": lambda x, w: x**2 * w**3}


@pytest.mark.parametrize("pot", [make_harmonic_potential(1), make_even_power_potential(4, 1)], ids=lambda p: p.name)
def test_generator_against_quadrature_oracle(pot):
    alpha, beta = 0.7, 1.4
    ops = assemble(ModelParams(alpha, beta), pot, 16, 8)
    L = dense(ops.L)
    for fname, f in POLYS.items():
        cf = ops.coefficients(lambda X, W, f=f: f(X[:, 0], W[:, 0])[3])
        for gname, g in TESTS.items():
            cg = ops.coefficients(lambda X, W, g=g: g(X[:, 0], W[:, 0]))
            expected = _generator_inner(pot, alpha, beta, f, g)
            assert cg @ L @ cf == pytest.approx(expected, abs=1e-9), (fname, gname)
