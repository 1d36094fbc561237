"""Quadrature rules and orthonormal polynomial bases for the two marginals.

The invariant measure factorizes as ``exp(-phi) dx`` in position times the
Gaussian ``nu_beta`` (covariance ``1/beta``) in velocity.  Velocity functions
are expanded in normalized Hermite polynomials; position functions in
polynomials orthonormal for ``exp(-phi) dx``, generated by the Stieltjes
procedure on a Gauss rule of that measure.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from .errors import NumericalError, ValidationError
from .model import Potential

GRAM_TOL = 1e-8


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule for a probability measure.

    ``exact_degree`` is the highest polynomial degree integrated exactly, or
    ``None`` when the rule is a fine discretization without a degree guarantee.
    """

    nodes: np.ndarray
    weights: np.ndarray
    measure_id: str
    exact_degree: Optional[int]

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise NumericalError(f"{self.measure_id}: non-positive quadrature weight")

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(values, self.weights, axes=([-1], [0]))


def gauss_hermite_rule(n: int, beta: float = 1.0) -> QuadratureRule:
    """``n``-point Gauss rule for the centred Gaussian with variance ``1/beta``."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    x, w = hermegauss(n)
    w = w / math.sqrt(2.0 * math.pi)
    w = w / w.sum()
    return QuadratureRule(x / math.sqrt(beta), w, f"gauss(beta={beta:g})", 2 * n - 1)


def stieltjes(nodes: np.ndarray, weights: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Discretized Stieltjes procedure.

    Returns ``(a, b)`` of length ``n`` for the orthonormal recurrence
    ``sqrt(b[k+1]) p[k+1] = (x - a[k]) p[k] - sqrt(b[k]) p[k-1]``
    with ``b[0]`` the total mass and ``p[0] = 1/sqrt(b[0])``.
    """
    if n > len(nodes):
        raise ValidationError(f"discrete measure with {len(nodes)} nodes supports at most {len(nodes)} terms")
    a = np.zeros(n)
    b = np.zeros(n)
    b[0] = weights.sum()
    p_prev = np.zeros_like(nodes)
    p = np.full_like(nodes, 1.0 / math.sqrt(b[0]))
    for k in range(n):
        a[k] = np.sum(weights * nodes * p * p)
        if k == n - 1:
            break
        q = (nodes - a[k]) * p - (math.sqrt(b[k]) if k else 0.0) * p_prev
        b[k + 1] = np.sum(weights * q * q)
        if not (b[k + 1] > 0):
            raise NumericalError(f"Stieltjes breakdown at degree {k + 1}")
        p_prev, p = p, q / math.sqrt(b[k + 1])
    return a, b


def gauss_from_recurrence(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Golub-Welsch: nodes and weights of the ``len(a)``-point Gauss rule."""
    off = np.sqrt(b[1:])
    x, v = linalg.eigh_tridiagonal(a, off)
    w = b[0] * v[0] ** 2
    return x, w


def _support_half_width(pot: Potential, degree: int) -> float:
    # half width L beyond which x^degree exp(-phi) is below e^-80 of its peak
    xs = np.linspace(-60.0, 60.0, 24_001)
    with np.errstate(all="ignore"):
        logw = -(pot.evaluate(xs[:, None]) - pot.lower_bound) + degree * np.log(np.abs(xs) + 1e-300)
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    keep = np.nonzero(logw >= logw.max() - 80.0)[0]
    if keep.size == 0 or keep[0] == 0 or keep[-1] == xs.size - 1:
        raise NumericalError(f"potential {pot.name!r} does not confine within |x| <= 60")
    return float(max(abs(xs[keep[0]]), abs(xs[keep[-1]])) + 0.5)


def position_rule(pot: Potential, n: int) -> QuadratureRule:
    """``n``-point Gauss rule for ``exp(-phi) dx`` in one dimension.

    The Gaussian case uses Gauss-Hermite directly.  Otherwise the recurrence of
    the measure is computed by Stieltjes on a fine Gauss-Legendre
    discretization of the confining interval and converted by Golub-Welsch.
    """
    if pot.d != 1:
        raise ValidationError("position_rule is one-dimensional; use position_space for d > 1")
    if pot.name == "harmonic":
        r = gauss_hermite_rule(n, 1.0)
        return QuadratureRule(r.nodes, r.weights, "position:harmonic", r.exact_degree)
    half = _support_half_width(pot, 2 * n)
    k = max(800, 8 * n)
    t, wl = leggauss(k)
    x = half * t
    with np.errstate(under="ignore"):
        w = half * wl * np.exp(-pot.evaluate(x[:, None]))
    if not np.all(np.isfinite(w)):
        raise NumericalError(f"non-finite density for potential {pot.name!r}")
    a, b = stieltjes(x, w, n)
    nodes, weights = gauss_from_recurrence(a, b)
    mass = weights.sum()
    if abs(mass - 1.0) > 1e-8:
        raise NumericalError(f"exp(-phi) dx has mass {mass:.12g}, expected 1")
    return QuadratureRule(nodes, weights / mass, f"position:{pot.name}", 2 * n - 1)


@dataclass(frozen=True)
class OrthonormalBasis:
    """Orthonormal polynomials ``p_0..p_{N-1}`` given by their recurrence."""

    a: np.ndarray
    b: np.ndarray
    measure_id: str = ""

    @property
    def size(self) -> int:
        return len(self.a)

    def values(self, x) -> np.ndarray:
        """Array of shape ``(N,) + x.shape`` with ``p_k(x)``."""
        x = np.asarray(x, dtype=float)
        out = np.empty((self.size,) + x.shape)
        out[0] = 1.0 / math.sqrt(self.b[0])
        if self.size > 1:
            out[1] = (x - self.a[0]) * out[0] / math.sqrt(self.b[1])
        for k in range(1, self.size - 1):
            out[k + 1] = ((x - self.a[k]) * out[k] - math.sqrt(self.b[k]) * out[k - 1]) / math.sqrt(self.b[k + 1])
        return out

    def derivatives(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.values(x)
        dp = np.zeros_like(p)
        if self.size > 1:
            dp[1] = p[0] / math.sqrt(self.b[1])
        for k in range(1, self.size - 1):
            dp[k + 1] = (p[k] + (x - self.a[k]) * dp[k] - math.sqrt(self.b[k]) * dp[k - 1]) / math.sqrt(self.b[k + 1])
        return dp

    def evaluate(self, k: int, x) -> np.ndarray:
        return self.values(x)[k]

    def recurrence_table(self) -> list[tuple[int, float, float]]:
        return [(k, float(self.a[k]), float(self.b[k])) for k in range(self.size)]


def gram_matrix(basis: OrthonormalBasis, quad: QuadratureRule) -> np.ndarray:
    v = basis.values(quad.nodes)
    return (v * quad.weights) @ v.T


def stieltjes_basis(pot: Potential, quad: QuadratureRule, n: int) -> OrthonormalBasis:
    """Orthonormal basis of degree ``0..n-1`` for ``L2(exp(-phi) dx)``."""
    if pot.d != 1:
        raise ValidationError("stieltjes_basis is one-dimensional; tensorize for d > 1")
    if quad.exact_degree is not None and quad.exact_degree < 2 * n + 2:
        raise ValidationError(
            f"quadrature exact to degree {quad.exact_degree}, need >= {2 * n + 2} for N={n}")
    a, b = stieltjes(np.ravel(quad.nodes), quad.weights, n)
    basis = OrthonormalBasis(a, b, quad.measure_id)
    dev = np.max(np.abs(gram_matrix(basis, quad) - np.eye(n)))
    if dev > GRAM_TOL:
        raise NumericalError(
            f"orthogonality lost (max |Gram - I| = {dev:.2e}); use a larger quadrature or smaller N")
    return basis


def hermite_values(n: int, w, beta: float = 1.0) -> np.ndarray:
    """Normalized Hermite functions ``He_k(sqrt(beta) w) / sqrt(k!)`` for ``k < n``."""
    w = np.asarray(w, dtype=float)
    return OrthonormalBasis(np.zeros(n), np.concatenate([[1.0], np.arange(1, n) / beta])).values(w)


def total_degree_indices(d: int, max_degree: int) -> list[tuple[int, ...]]:
    """Multi-indices with total degree ``<= max_degree`` in graded order."""
    out = []
    for deg in range(max_degree + 1):
        level = [m for m in itertools.product(range(deg + 1), repeat=d) if sum(m) == deg]
        out.extend(sorted(level, reverse=True))
    return out


def _tensor_rule(rules: Sequence[QuadratureRule]) -> tuple[np.ndarray, np.ndarray]:
    grids = np.meshgrid(*[np.ravel(r.nodes) for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r.weights for r in rules], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


@dataclass(frozen=True)
class PositionSpace:
    """Orthonormal polynomial space in position with its cubature.

    Basis functions are ``coef @ prod_i basis_1d[i](x_i)`` over
    ``multi_indices``; ``coef`` is the identity for product measures.
    """

    d: int
    multi_indices: list
    basis_1d: OrthonormalBasis
    coef: np.ndarray
    rule: QuadratureRule
    values: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.multi_indices)

    def _raw(self, x: np.ndarray, deriv: bool):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.d == 1 and x.shape[-1] != 1:
            x = x.reshape(-1, 1)
        v1 = [self.basis_1d.values(x[:, i]) for i in range(self.d)]
        mi = np.array(self.multi_indices)
        vals = np.ones((len(mi), len(x)))
        for i in range(self.d):
            vals *= v1[i][mi[:, i]]
        if not deriv:
            return self.coef @ vals
        d1 = [self.basis_1d.derivatives(x[:, i]) for i in range(self.d)]
        grads = np.empty((self.d, len(mi), len(x)))
        for i in range(self.d):
            g = np.ones((len(mi), len(x)))
            for j in range(self.d):
                g *= (d1[j] if j == i else v1[j])[mi[:, j]]
            grads[i] = self.coef @ g
        return grads

    def evaluate(self, x) -> np.ndarray:
        """Basis values, shape ``(size, m)`` for ``m`` points."""
        return self._raw(x, False)

    def gradient(self, x) -> np.ndarray:
        """Basis gradients, shape ``(d, size, m)``."""
        return self._raw(x, True)

    def gram(self) -> np.ndarray:
        return (self.values * self.rule.weights) @ self.values.T

    def derivative_matrices(self) -> np.ndarray:
        """``D[i, j, k] = <d_i phi_k, phi_j>``."""
        return np.einsum("jq,ikq,q->ijk", self.values, self.grads, self.rule.weights)

    def stiffness(self) -> np.ndarray:
        """``K[j, k] = <grad phi_k, grad phi_j>``, the negative Galerkin matrix of the
        weighted Laplacian ``lap - grad phi . grad``."""
        return np.einsum("ijq,ikq,q->jk", self.grads, self.grads, self.rule.weights)

    def coefficients(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Orthogonal projection of a position function onto the space."""
        return (self.values * self.rule.weights) @ fn(self.rule.nodes)


def _box_rule(pot: Potential, degree: int, per_axis: int) -> QuadratureRule:
    # tensor Gauss-Legendre on the confining box, weighted by exp(-phi)
    radial = _radial_potential(pot)
    half = _support_half_width(radial, degree)
    t, wl = leggauss(per_axis)
    r1 = QuadratureRule(half * t, half * wl, "legendre", None)
    nodes, w = _tensor_rule([r1] * pot.d)
    with np.errstate(under="ignore"):
        w = w * np.exp(-pot.evaluate(nodes))
    live = w > 0
    nodes, w = nodes[live], w[live]
    mass = w.sum()
    if abs(mass - 1.0) > 1e-8:
        raise NumericalError(f"exp(-phi) dx has mass {mass:.12g} on the cubature, expected 1")
    return QuadratureRule(nodes, w, f"position:{pot.name}", None)


def _radial_potential(pot: Potential) -> Potential:
    # 1D restriction along the first axis, used only to size the cubature box
    from dataclasses import replace

    def ev(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        pts = np.zeros((x.size, pot.d))
        pts[:, 0] = x
        return pot.evaluate(pts)

    return replace(pot, d=1, evaluate=ev, lower_bound=float(pot.lower_bound))


def position_space(pot: Potential, n: int) -> PositionSpace:
    """Orthonormal position space of total degree ``< n``.

    One dimension: Stieltjes basis on a ``2n+3``-point Gauss rule.  Product
    measures in ``d > 1``: tensor products of the 1D factor's basis.  Other
    measures in ``d > 1``: tensor Hermite polynomials orthonormalized by
    Cholesky against a Gauss-Legendre cubature on the confining box.
    """
    if n < 1:
        raise ValidationError(f"N_x must be >= 1, got {n}")
    mi = total_degree_indices(pot.d, n - 1)
    nq = 2 * n + 3
    if pot.d == 1:
        rule = position_rule(pot, nq)
        basis = stieltjes_basis(pot, rule, n)
        coef = np.eye(n)
        rule = QuadratureRule(rule.nodes.reshape(-1, 1), rule.weights, rule.measure_id, rule.exact_degree)
    elif pot.factor_1d is not None:
        r1 = position_rule(pot.factor_1d, nq)
        basis = stieltjes_basis(pot.factor_1d, r1, n)
        nodes, w = _tensor_rule([r1] * pot.d)
        rule = QuadratureRule(nodes, w, f"position:{pot.name}", r1.exact_degree)
        coef = np.eye(len(mi))
    else:
        per_axis = {2: 64, 3: 36}.get(pot.d, 24)
        rule = _box_rule(pot, 2 * n, per_axis)
        second = float(np.sum(rule.weights * np.sum(rule.nodes ** 2, axis=-1))) / pot.d
        basis = OrthonormalBasis(np.zeros(n), np.concatenate([[1.0], second * np.arange(1, n)]), "hermite")
        coef = np.eye(len(mi))
        for _ in range(2):
            tmp = PositionSpace(pot.d, mi, basis, coef, rule, np.empty(0), np.empty(0))
            v = tmp.evaluate(rule.nodes)
            g = (v * rule.weights) @ v.T
            chol = linalg.cholesky(g, lower=True)
            coef = linalg.solve_triangular(chol, coef, lower=True)
    tmp = PositionSpace(pot.d, mi, basis, coef, rule, np.empty(0), np.empty(0))
    vals = tmp.evaluate(rule.nodes)
    grads = tmp.gradient(rule.nodes)
    space = PositionSpace(pot.d, mi, basis, coef, rule, vals, grads)
    dev = np.max(np.abs(space.gram() - np.eye(space.size)))
    if dev > GRAM_TOL:
        raise NumericalError(f"position basis not orthonormal (max |Gram - I| = {dev:.2e})")
    return space


def velocity_rule(n: int, beta: float, d: int) -> QuadratureRule:
    r = gauss_hermite_rule(n, beta)
    if d == 1:
        return QuadratureRule(r.nodes.reshape(-1, 1), r.weights, r.measure_id, r.exact_degree)
    nodes, w = _tensor_rule([r] * d)
    return QuadratureRule(nodes, w, r.measure_id, r.exact_degree)


def expectation(pot: Potential, beta: float, g: Callable, n_pos: int = 40, n_vel: int | None = None) -> float:
    """``int g(x, w) d mu`` by tensor quadrature of the two marginals."""
    if pot.d == 1:
        rx = position_rule(pot, n_pos)
        xs = rx.nodes.reshape(-1, 1)
        wx = rx.weights
    elif pot.factor_1d is not None:
        r1 = position_rule(pot.factor_1d, n_pos)
        xs, wx = _tensor_rule([r1] * pot.d)
    else:
        rule = _box_rule(pot, 12, {2: 96, 3: 48}.get(pot.d, 16))
        xs, wx = rule.nodes, rule.weights
    n_vel = n_vel or {1: 20, 2: 12}.get(pot.d, 8)
    rv = velocity_rule(n_vel, beta, pot.d)
    nv = len(rv.weights)
    chunk = max(1, (1 << 20) // nv)
    total = 0.0
    for lo in range(0, len(wx), chunk):
        xc, wc = xs[lo:lo + chunk], wx[lo:lo + chunk]
        X = np.repeat(xc, nv, axis=0)
        W = np.tile(rv.nodes, (len(wc), 1))
        vals = np.asarray(g(X, W), dtype=float).reshape(len(wc), nv)
        total += float(wc @ vals @ rv.weights)
    return total
