"""Explicit exponential decay rate from the hypocoercivity constants.

Given the Poincare constant ``Lambda``, inverse temperature ``beta``, the
auxiliary constant ``c_hyp`` (the ``c2`` of the H4 bound), damping ``alpha``
and a free parameter ``upsilon > 0``, :func:`build_ledger` evaluates the full
chain of constants leading to the bound

    ||T_t g - mean(g)|| <= nu1 exp(-nu2 t) ||g - mean(g)||,
    nu1 = 1 + upsilon,
    nu2 = (nu1 - 1)/nu1 * alpha / (n1 + n2 alpha + n3 alpha^2).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class RateLedger:
    Lambda: float
    beta: float
    c_hyp: float
    alpha: float
    upsilon: float
    delta: float
    r_of_alpha: float
    s: float
    a1: float
    a2: float
    a3: float
    eps_bar: float
    eps_bar_sup: float
    alpha_star: float
    eps_bar_max: float
    epsilon: float
    n1: float
    n2: float
    n3: float
    kappa: float
    kappa1: float
    kappa2: float
    nu1: float
    nu2: float

    def to_dict(self) -> dict:
        return asdict(self)

    def envelope(self, t, which: str = "nu") -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if which == "nu":
            return self.nu1 * np.exp(-self.nu2 * t)
        return self.kappa1 * np.exp(-self.kappa2 * t)


def _check(stage: str, value: float) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite value at stage {stage!r}")
    return value


def _coefficients(Lambda: float, beta: float, c_hyp: float) -> tuple[float, float, float, float]:
    # r(alpha) + s = a1 + a2 alpha + a3 alpha^2 with C0 = 1 + c_hyp, k = (beta + Lambda)/(2 Lambda)
    s = 0.5 * Lambda / (beta + Lambda)
    k = (beta + Lambda) / (2.0 * Lambda)
    c0 = 1.0 + c_hyp
    return c0 + k * c0 * c0 + s, 0.5 + k * c0, 0.25 * k, s


def build_ledger(Lambda: float, beta: float, c_hyp: float, alpha: float, upsilon: float = 1.0) -> RateLedger:
    """Evaluate the constant chain for one parameter tuple."""
    for name, v in (("Lambda", Lambda), ("beta", beta), ("alpha", alpha), ("upsilon", upsilon)):
        if not (math.isfinite(v) and v > 0):
            raise ValidationError(f"{name} must be a finite positive real, got {v!r}")
    if not (math.isfinite(c_hyp) and c_hyp >= 0):
        raise ValidationError(f"c_hyp must be a finite non-negative real, got {c_hyp!r}")

    a1, a2, a3, s = _coefficients(Lambda, beta, c_hyp)
    c5_term = 1.0 + c_hyp + 0.5 * alpha
    delta = _check("delta", Lambda / (beta + Lambda) / c5_term)
    r = _check("r", c5_term * (1.0 + (beta + Lambda) / (2.0 * Lambda) * c5_term))
    eps_bar = _check("eps_bar", alpha / (r + s))
    sup = _check("eps_bar_sup", 1.0 / (a2 + 2.0 * math.sqrt(a1 * a3)))
    eps_bar_max = max(1.0, sup)
    frac = upsilon / (1.0 + upsilon)
    epsilon = _check("epsilon", frac * eps_bar / eps_bar_max)
    if not 0.0 < epsilon < 1.0:
        raise NumericalError(f"epsilon={epsilon!r} outside (0, 1)")
    n1, n2, n3 = (2.0 * eps_bar_max / s * a for a in (a1, a2, a3))
    kappa = _check("kappa", frac * 2.0 * alpha / (n1 + n2 * alpha + n3 * alpha * alpha))
    kappa1 = _check("kappa1", math.sqrt((1.0 + epsilon) / (1.0 - epsilon)))
    kappa2 = kappa / (1.0 + epsilon)
    return RateLedger(
        Lambda=Lambda, beta=beta, c_hyp=c_hyp, alpha=alpha, upsilon=upsilon,
        delta=delta, r_of_alpha=r, s=s, a1=a1, a2=a2, a3=a3,
        eps_bar=eps_bar, eps_bar_sup=sup, alpha_star=math.sqrt(a1 / a3), eps_bar_max=eps_bar_max,
        epsilon=epsilon, n1=n1, n2=n2, n3=n3, kappa=kappa, kappa1=kappa1, kappa2=kappa2,
        nu1=1.0 + upsilon, nu2=0.5 * kappa,
    )


def nu2_curve(Lambda: float, beta: float, c_hyp: float, upsilon: float,
              alphas: Iterable[float]) -> list[tuple[float, float]]:
    """``(alpha, nu2)`` along a grid of damping values."""
    alphas = [float(a) for a in alphas]
    if any(not (a > 0) for a in alphas):
        raise ValidationError("alphas must be strictly positive")
    return [(a, build_ledger(Lambda, beta, c_hyp, a, upsilon).nu2) for a in alphas]


def optimal_alpha(ledger: RateLedger) -> float:
    """Maximizer ``sqrt(n1/n3)`` of ``nu2`` over ``alpha``."""
    return math.sqrt(ledger.n1 / ledger.n3)


def entropy(f: np.ndarray, B: np.ndarray, epsilon: float) -> float:
    """Modified entropy ``||f||^2/2 + epsilon (Bf, f)``."""
    f = np.asarray(f, dtype=float)
    return float(0.5 * f @ f + epsilon * f @ (B @ f))


def entropy_bounds_check(epsilon: float, f: np.ndarray, B: np.ndarray) -> dict:
    """Check ``(1-eps)/2 ||f||^2 <= H_eps[f] <= (1+eps)/2 ||f||^2``."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    h = entropy(f, B, epsilon)
    n2 = float(np.dot(f, f))
    slack = -1e-12 * n2
    ok = (h - 0.5 * (1 - epsilon) * n2 >= slack) and (0.5 * (1 + epsilon) * n2 - h >= slack)
    return {"H_eps": h, "within_bounds": bool(ok)}


def dissipation_lower_bound(ledger: RateLedger, f_micro_sq: float, f_macro_sq: float) -> float:
    """``(alpha - eps r) ||(I-P)f||^2 + eps s ||Pf||^2``."""
    e = ledger.epsilon
    return (ledger.alpha - e * ledger.r_of_alpha) * f_micro_sq + e * ledger.s * f_macro_sq


def sweep_table(Lambda: float, beta: float, c_hyp: float, upsilon: float,
                alphas: Sequence[float]) -> list[dict]:
    """Rows ``alpha, nu2, kappa, epsilon, eps_bar`` for CSV output."""
    rows = []
    for a in alphas:
        lg = build_ledger(Lambda, beta, c_hyp, float(a), upsilon)
        rows.append({"alpha": lg.alpha, "nu2": lg.nu2, "kappa": lg.kappa, "epsilon": lg.epsilon,
                     "eps_bar": lg.eps_bar})
    return rows
