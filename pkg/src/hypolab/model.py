"""Physical parameters and admissible potentials.

A potential carries its value, gradient and Hessian together with the data
needed by the rate theorem: the Poincare constant of ``exp(-phi) dx`` and the
Hessian growth constant ``c`` in ``|hess phi| <= c (1 + |grad phi|)``.

All callables act on arrays whose last axis has length ``d``; ``evaluate``
drops that axis, ``gradient`` keeps it and ``hessian`` appends another.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .errors import NumericalError, ValidationError

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelParams:
    """Damping ``alpha``, inverse temperature ``beta`` and dimension ``d``."""

    alpha: float
    beta: float
    d: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValidationError(f"alpha must be a finite positive real, got {self.alpha!r}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValidationError(f"beta must be a finite positive real, got {self.beta!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError(f"d must be a positive integer, got {self.d!r}")

    def require_discretizable(self):
        if self.d > 3:
            raise ValidationError(f"the Galerkin pipeline supports d in {{1, 2, 3}}, got d={self.d}")


@dataclass(frozen=True)
class Potential:
    name: str
    d: int
    evaluate: ArrayFn
    gradient: ArrayFn
    hessian: ArrayFn
    normalization_constant: float
    lower_bound: float
    hessian_growth_constant: float
    poincare_constant: Optional[float] = None
    # 1D factor when exp(-phi) is a product measure over coordinates
    factor_1d: Optional["Potential"] = field(default=None, repr=False)
    # polynomial degree of grad phi, None when not polynomial
    gradient_degree: Optional[int] = None

    def with_poincare(self, value: float) -> "Potential":
        from dataclasses import replace

        return replace(self, poincare_constant=float(value))


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise ValidationError(f"points must have trailing dimension {d}, got shape {x.shape}")
    return x


def make_harmonic_potential(d: int = 1) -> Potential:
    """Normalized quadratic potential ``|x|^2/2 + (d/2) log(2 pi)``.

    ``exp(-phi) dx`` is the standard Gaussian, whose Poincare constant is 1.
    """
    if d < 1:
        raise ValidationError(f"d must be >= 1, got {d}")
    shift = 0.5 * d * math.log(2.0 * math.pi)

    def evaluate(x):
        x = _as_points(x, d)
        return 0.5 * np.sum(x * x, axis=-1) + shift

    def gradient(x):
        return _as_points(x, d).copy()

    def hessian(x):
        x = _as_points(x, d)
        return np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()

    factor = make_harmonic_potential(1) if d > 1 else None
    return Potential(
        name="harmonic",
        d=d,
        evaluate=evaluate,
        gradient=gradient,
        hessian=hessian,
        normalization_constant=(2.0 * math.pi) ** (0.5 * d),
        lower_bound=shift,
        hessian_growth_constant=1.0,
        poincare_constant=1.0,
        factor_1d=factor,
        gradient_degree=1,
    )


def _radial_mass(p: int, d: int) -> float:
    # integral of exp(-|x|^p) over R^d in polar coordinates
    sphere = 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)
    upper = 800.0 ** (1.0 / p) + 1.0
    val, _ = integrate.quad(lambda r: r ** (d - 1) * math.exp(-(r**p)), 0.0, upper,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return sphere * val


def _power_growth_constant(p: int) -> float:
    # |hess| / (1 + |grad|) is radial: p(p-1) r^(p-2) / (1 + p r^(p-1))
    def ratio(r):
        return p * (p - 1) * r ** (p - 2) / (1.0 + p * r ** (p - 1))

    r = np.linspace(0.0, 100.0, 200_001)
    vals = ratio(r)
    i = int(np.argmax(vals))
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, r.size - 1)]
    res = optimize.minimize_scalar(lambda t: -ratio(t), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14})
    return float(max(vals[i], -res.fun))


def make_even_power_potential(p: int, d: int = 1) -> Potential:
    """Normalized ``|x|^p + log Z_p`` for even ``p >= 4``.

    The Poincare constant is left unset; estimate it with
    :func:`hypolab.hypo.estimate_poincare`.
    """
    if int(p) != p or p < 4 or p % 2:
        raise ValidationError(f"p must be an even integer >= 4, got {p!r}")
    if d < 1:
        raise ValidationError(f"d must be >= 1, got {d}")
    p = int(p)
    z = _radial_mass(p, d)
    log_z = math.log(z)

    def evaluate(x):
        x = _as_points(x, d)
        return np.sum(x * x, axis=-1) ** (p // 2) + log_z

    def gradient(x):
        x = _as_points(x, d)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return p * r2 ** (p // 2 - 1) * x

    def hessian(x):
        x = _as_points(x, d)
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        outer = x[..., :, None] * x[..., None, :]
        return p * r2 ** (p // 2 - 1) * np.eye(d) + p * (p - 2) * r2 ** (p // 2 - 2) * outer

    return Potential(
        name=f"power:{p}",
        d=d,
        evaluate=evaluate,
        gradient=gradient,
        hessian=hessian,
        normalization_constant=z,
        lower_bound=log_z,
        hessian_growth_constant=_power_growth_constant(p),
        poincare_constant=None,
        gradient_degree=p - 1,
    )


@dataclass(frozen=True)
class C3Report:
    max_ratio: float
    holds: bool
    argmax: tuple


def _grid(extent: float, n_points: int, d: int) -> np.ndarray:
    per_axis = max(2, int(math.ceil(n_points ** (1.0 / d))))
    axis = np.linspace(-extent, extent, per_axis)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def check_c3(pot: Potential, grid_extent: float = 10.0, n_points: int = 1001) -> C3Report:
    """Spot-check the Hessian growth bound on a grid.

    Evaluates ``|hess phi| / (1 + |grad phi|)`` (spectral norm) on a uniform
    grid with ``n_points`` points (per axis ``n_points ** (1/d)``) and compares
    the maximum with ``pot.hessian_growth_constant``.
    """
    if n_points < 2:
        raise ValidationError("n_points must be >= 2")
    pts = _grid(grid_extent, n_points, pot.d)
    with np.errstate(all="ignore"):
        val = pot.evaluate(pts)
        grad = pot.gradient(pts)
        hess = pot.hessian(pts)
    bad = ~np.isfinite(val) | ~np.all(np.isfinite(grad), axis=-1) | ~np.all(
        np.isfinite(hess.reshape(len(pts), -1)), axis=-1)
    if np.any(bad):
        where = pts[np.argmax(bad)]
        raise NumericalError(f"potential {pot.name!r} is not finite at x={where.tolist()}")
    hnorm = np.linalg.norm(hess, ord=2, axis=(-2, -1))
    ratio = hnorm / (1.0 + np.linalg.norm(grad, axis=-1))
    i = int(np.argmax(ratio))
    m = float(ratio[i])
    return C3Report(max_ratio=m, holds=m <= pot.hessian_growth_constant * (1 + 1e-9),
                    argmax=tuple(pts[i].tolist()))


_REGISTRY: dict[str, Callable[..., Potential]] = {}


def register_potential(name: str, factory: Callable[..., Potential]) -> None:
    """Register a custom potential factory ``factory(d) -> Potential`` under ``name``."""
    if name in ("harmonic",) or name.startswith("power:"):
        raise ValidationError(f"{name!r} is a reserved potential id")
    _REGISTRY[name] = factory


def potential_from_id(ident: str, d: int = 1) -> Potential:
    """Resolve a string id such as ``"harmonic"`` or ``"power:4"``."""
    if ident == "harmonic":
        return make_harmonic_potential(d)
    if ident.startswith("power:"):
        try:
            p = int(ident.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad potential id {ident!r}") from None
        return make_even_power_potential(p, d)
    if ident in _REGISTRY:
        return _REGISTRY[ident](d)
    raise ValidationError(f"unknown potential id {ident!r}")
