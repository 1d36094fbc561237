import math

import numpy as np
import pytest
from scipy import linalg

from conftest import harmonic_ops, quartic_ops
from hypolab.hypo import (
    HypoConstants,
    certify,
    check_H1,
    check_H2,
    check_H3,
    check_H4,
    estimate_poincare,
    hypo_report,
    sample_h4_inequalities,
)
from hypolab.operators import dense


def _schrodinger_gap(h):
    # -u'' + (4x^6 - 6x^2) u on [-5, 5] with Dirichlet ends: the ground state is
    # exp(-x^4/2) with energy 0, the first excited energy is the Poincare constant
    x = np.arange(-5 + h, 5, h)
    diag = 2 / h**2 + 4 * x**6 - 6 * x**2
    off = -np.ones(x.size - 1) / h**2
    return linalg.eigh_tridiagonal(diag, off, select="i", select_range=(0, 1), eigvals_only=True)


def test_quartic_poincare_against_finite_differences():
    e1, e2 = _schrodinger_gap(2e-3), _schrodinger_gap(1e-3)
    # second-order scheme: Richardson extrapolation of both levels
    ground = (4 * e2[0] - e1[0]) / 3
    excited = (4 * e2[1] - e1[1]) / 3
    assert abs(ground) < 1e-7
    est = estimate_poincare(quartic_ops(1.0, 1.0, 32))["lambda_numeric"]
    assert est == pytest.approx(excited - ground, rel=1e-7)


def test_poincare_is_monotone_in_truncation():
    vals = [estimate_poincare(quartic_ops(1.0, 1.0, n))["lambda_numeric"] for n in (8, 12, 16, 24)]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("alpha,beta", [(0.5, 1.0), (2.0, 0.5), (1.0, 2.0)])
def test_harmonic_conditions(alpha, beta):
    ops = harmonic_ops(alpha, beta, 12)
    assert check_H1(ops)["holds"]
    assert check_H1(ops, "P_S")["holds"]
    assert check_H2(ops)["lambda_m_numeric"] == pytest.approx(alpha, abs=1e-12)
    consts = certify(ops)
    h3 = check_H3(ops, consts)
    assert h3["lambda_M_numeric"] == pytest.approx(1 / beta, rel=1e-8)
    assert h3["identity_residual"] < 1e-10
    assert h3["holds"]


def test_signed_intertwining():
    # S acts as -alpha on velocity degree one, so P A S = -alpha P A
    for ops in (harmonic_ops(1.5, 1.0, 12), quartic_ops(0.7, 1.3, 12)):
        h4 = check_H4(ops)
        assert h4["intertwining_holds"]
        assert h4["c3_numeric"] == pytest.approx(-ops.params.alpha, rel=1e-12)
        assert h4["c1_numeric"] == pytest.approx(ops.params.alpha / 2, rel=1e-12)
        assert h4["plus_alpha_residual"] == pytest.approx(2 * ops.params.alpha * h4["pa_max"], rel=1e-12)


@pytest.mark.parametrize("n", [6, 8, 16, 24])
def test_harmonic_c2_closed_form(n):
    # singular values of A^2 P (I - G)^{-1} on Hermite level k are sqrt(3k^2 - 2k)/(k + 1)
    # up to the truncation edge k = n - 1 (derived from the OU ladder structure)
    m = n - 1
    expected = math.sqrt(3 * m * m - 2 * m) / (m + 1)
    assert check_H4(harmonic_ops(1.0, 1.0, n))["c2_numeric"] == pytest.approx(expected, rel=1e-10)


def test_c2_bounds_the_direct_operator_norm():
    for ops in (harmonic_ops(1.0, 1.0, 10), quartic_ops(1.0, 1.0, 10)):
        h4 = check_H4(ops)
        I_P = np.eye(ops.dim) - dense(ops.P)
        direct = np.linalg.norm(ops.B @ dense(ops.A) @ I_P, 2)
        assert direct <= h4["c2_numeric"] * (1 + 1e-10)


@pytest.mark.parametrize("factory", [harmonic_ops, quartic_ops], ids=["harmonic", "quartic"])
def test_sampled_h4_inequalities(factory):
    ops = factory(1.0, 1.0, 10)
    out = sample_h4_inequalities(ops, certify(ops), n_samples=1000)
    assert out["bs_violations"] == 0 and out["ba_violations"] == 0
    assert 0 < out["bs_ratio"] <= 0.5


def test_sampled_h4_detects_too_small_constant():
    ops = harmonic_ops(1.0, 1.0, 10)
    c = certify(ops)
    weak = HypoConstants(c.lambda_m, c.lambda_M, c.c1 / 10, c.c2 / 10, c.poincare_lambda)
    out = sample_h4_inequalities(ops, weak, n_samples=200)
    assert out["bs_violations"] > 0 and out["ba_violations"] > 0


def test_certify_methods_and_warnings():
    c = certify(harmonic_ops(1.0, 1.0, 12))
    assert c.methods["poincare_lambda"] == "analytic" and c.methods["c2"] == "numeric"
    assert c.warnings == ()
    assert c.c5 == pytest.approx(c.c1 + c.c2)
    q = certify(quartic_ops(1.0, 1.0, 16))
    assert q.methods["poincare_lambda"] == "numeric"
    forced = certify(quartic_ops(1.0, 1.0, 16), poincare=10.0, c_hyp=2.0)
    assert forced.c2 == 2.0 and forced.methods["c2"] == "override"
    assert any("Poincare" in w for w in forced.warnings)


def test_certify_flags_disagreeing_analytic_constant():
    ops = harmonic_ops(1.0, 1.0, 12)
    warns = certify(ops, poincare=2.0).warnings
    assert any("Poincare" in w for w in warns)
    assert any(w.startswith("lambda_M") for w in warns)


def test_report_for_harmonic():
    rows = hypo_report(harmonic_ops(1.0, 1.0, 10))
    assert [r["condition"] for r in rows] == ["H1", "H2", "H3", "H4"]
    assert all(r["holds"] for r in rows)
