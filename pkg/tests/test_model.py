import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, special

from hypolab.errors import NumericalError, ValidationError
from hypolab.model import (
    ModelParams,
    check_c3,
    make_even_power_potential,
    make_harmonic_potential,
    potential_from_id,
    register_potential,
)
from hypolab.quadrature import position_rule

SHIPPED = [
    make_harmonic_potential(1), make_harmonic_potential(2), make_harmonic_potential(3),
    make_even_power_potential(4, 1), make_even_power_potential(6, 1),
    make_even_power_potential(4, 2), make_even_power_potential(4, 3),
]


@pytest.mark.parametrize("alpha,beta", [(0, 1), (-1, 1), (1, 0), (1, -2), (float("nan"), 1), (1, float("inf"))])
def test_params_reject_nonpositive(alpha, beta):
    with pytest.raises(ValidationError):
        ModelParams(alpha, beta)


def test_params_dimension_rules():
    with pytest.raises(ValidationError):
        ModelParams(1, 1, 0)
    ModelParams(1, 1, 5)  # Monte Carlo accepts any d
    with pytest.raises(ValidationError):
        ModelParams(1, 1, 4).require_discretizable()
    ModelParams(1, 1, 3).require_discretizable()


def test_harmonic_values():
    pot = make_harmonic_potential(1)
    assert pot.evaluate(np.array([[0.0]]))[0] == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
    assert pot.evaluate(np.array([[0.0]]))[0] == pytest.approx(0.9189385332, abs=1e-10)
    assert pot.gradient(np.array([[2.0]]))[0, 0] == pytest.approx(2.0)
    assert pot.hessian(np.array([[2.0]]))[0, 0, 0] == pytest.approx(1.0)
    assert pot.poincare_constant == 1.0
    # normalization against the Gauss-Hermite rule of numpy
    t, w = np.polynomial.hermite_e.hermegauss(40)
    mass = np.sum(w * np.exp(-pot.evaluate(t[:, None]) + t**2 / 2))
    assert mass == pytest.approx(1.0, abs=1e-13)


def test_quartic_values():
    pot = make_even_power_potential(4, 1)
    z4, _ = integrate.quad(lambda x: math.exp(-x**4), -8, 8, epsabs=0, epsrel=1e-13, limit=200)
    assert z4 == pytest.approx(special.gamma(0.25) / 2, rel=1e-12)
    assert pot.normalization_constant == pytest.approx(z4, rel=1e-10)
    assert pot.gradient(np.array([[1.0]]))[0, 0] == pytest.approx(4.0)
    assert pot.hessian(np.array([[1.0]]))[0, 0, 0] == pytest.approx(12.0)
    assert pot.poincare_constant is None


def test_quartic_growth_constant():
    # max of 12 x^2 / (1 + 4 |x|^3): stationary at x^3 = 1/2, value 4 * 2^(-2/3)
    pot = make_even_power_potential(4, 1)
    grid = np.linspace(0, 100, 2_000_001)
    oracle = np.max(12 * grid**2 / (1 + 4 * grid**3))
    assert pot.hessian_growth_constant == pytest.approx(4 * 2 ** (-2 / 3), rel=1e-9)
    assert pot.hessian_growth_constant >= oracle * (1 - 1e-12)


@pytest.mark.parametrize("p,d", [(4, 1), (6, 1), (4, 2), (4, 3), (6, 2)])
def test_power_normalization_closed_form(p, d):
    # total mass of exp(-|x|^p) in R^d: surface area of the sphere times Gamma(d/p)/p
    pot = make_even_power_potential(p, d)
    z = 2 * math.pi ** (d / 2) / special.gamma(d / 2) * special.gamma(d / p) / p
    assert pot.normalization_constant == pytest.approx(z, rel=1e-10)


def test_check_c3_harmonic():
    rep = check_c3(make_harmonic_potential(1), 10.0, 1001)
    assert rep.max_ratio == pytest.approx(1.0)
    assert rep.argmax == (0.0,)
    assert rep.holds


@pytest.mark.parametrize("pot", SHIPPED, ids=lambda p: f"{p.name}-d{p.d}")
def test_check_c3_shipped(pot):
    assert check_c3(pot, 10.0, 1001).holds


def test_check_c3_detects_supergrowth():
    base = make_harmonic_potential(1)

    def hess(x):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return np.exp(x**2)[:, :, None]

    bad = replace(base, name="super", hessian=hess)
    assert not check_c3(bad, 5.0, 1001).holds


def test_check_c3_names_nonfinite_point():
    base = make_harmonic_potential(1)

    def ev(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return np.where(x > 3, np.nan, x**2 / 2)

    bad = replace(base, name="holey", evaluate=ev)
    with pytest.raises(NumericalError, match="x="):
        check_c3(bad, 5.0, 101)


@pytest.mark.parametrize("pot", SHIPPED, ids=lambda p: f"{p.name}-d{p.d}")
def test_finite_differences(pot):
    rng = np.random.default_rng(1)
    x = rng.uniform(-5, 5, (100, pot.d))
    h = 1e-5
    g = pot.gradient(x)
    H = pot.hessian(x)
    for i in range(pot.d):
        e = np.zeros(pot.d)
        e[i] = h
        fd = (pot.evaluate(x + e) - pot.evaluate(x - e)) / (2 * h)
        np.testing.assert_allclose(fd, g[:, i], rtol=1e-6, atol=1e-6 * np.max(np.abs(g)))
        fdg = (pot.gradient(x + e) - pot.gradient(x - e)) / (2 * h)
        np.testing.assert_allclose(fdg, H[:, :, i], rtol=1e-6, atol=1e-6 * np.max(np.abs(H)))


@pytest.mark.parametrize("pot", [p for p in SHIPPED if p.d == 1], ids=lambda p: p.name)
def test_mass_and_lower_bound_on_rule(pot):
    rule = position_rule(pot, 40)  # exact for degree 79
    mass = np.sum(rule.weights)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert np.all(pot.evaluate(rule.nodes) >= pot.lower_bound - 1e-12)


def test_registry():
    register_potential("shifted-harmonic", lambda d: replace(make_harmonic_potential(d), name="shifted-harmonic"))
    assert potential_from_id("shifted-harmonic").name == "shifted-harmonic"
    assert potential_from_id("power:4", 2).d == 2
    with pytest.raises(ValidationError):
        potential_from_id("nope")
    with pytest.raises(ValidationError):
        register_potential("harmonic", make_harmonic_potential)
    with pytest.raises(ValidationError):
        make_even_power_potential(3, 1)
