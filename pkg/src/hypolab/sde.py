"""Monte Carlo simulation of Langevin dynamics and its overdamped limit.

Drift convention: the force on the velocity is ``-grad Phi / beta``, so that
``exp(-Phi) dx`` times the Gaussian of variance ``1/beta`` is invariant.

Random streams are split by block.  Paths are processed in blocks of
``BLOCK_SIZE``; block ``b`` draws from
``Generator(PCG64(SeedSequence(seed, spawn_key=(b,))))`` and blocks are
reduced in index order, so results depend only on ``(seed, n_paths)`` and the
configuration, never on how blocks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import optimize

from .errors import NumericalError, ValidationError
from .model import ModelParams, Potential
from .quadrature import expectation
from .ratebound import nu2_curve

BLOCK_SIZE = 10_000
SCHEMES = ("baoab", "euler-maruyama")
Observable = Callable[[np.ndarray, Optional[np.ndarray]], np.ndarray]
Sampler = Callable[[np.random.Generator, int], tuple]


@dataclass(frozen=True)
class PointLaw:
    x0: tuple
    w0: tuple = ()


EQUILIBRIUM = "equilibrium"


@dataclass
class SdeConfig:
    params: ModelParams
    pot: Potential
    scheme: str = "baoab"
    dt: float = 0.01
    n_paths: int = 10_000
    horizon: float = 10.0
    seed: int = 0
    initial_law: Union[str, PointLaw, Sampler] = EQUILIBRIUM
    n_records: int = 101

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationError("dt must be a positive real")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValidationError("horizon must be a positive real")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValidationError("n_paths must be an integer >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed must fit in 64 bits")
        if self.n_records < 2:
            raise ValidationError("n_records must be at least 2")
        if self.pot.d != self.params.d:
            raise ValidationError(f"potential dimension {self.pot.d} != params.d {self.params.d}")
        if self.scheme == "euler-maruyama" and self.dt * self.params.alpha >= 0.5:
            raise ValidationError(f"euler-maruyama needs dt*alpha < 0.5 (got {self.dt * self.params.alpha:.3g})")
        if isinstance(self.initial_law, str) and self.initial_law != EQUILIBRIUM:
            raise ValidationError(f"unknown initial law {self.initial_law!r}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def record_steps(self) -> np.ndarray:
        return np.unique(np.round(np.linspace(0, self.n_steps, self.n_records)).astype(int))

    @property
    def times(self) -> np.ndarray:
        return self.record_steps * self.dt


@dataclass
class ObservableTrace:
    times: np.ndarray
    means: np.ndarray
    std_errors: np.ndarray
    target: float
    observable_id: str = ""
    block_means: Optional[np.ndarray] = field(default=None, repr=False)

    def rows(self) -> list[dict]:
        return [{"t": float(t), "mean": float(m), "std_error": float(s), "target": self.target}
                for t, m, s in zip(self.times, self.means, self.std_errors)]


# observables -----------------------------------------------------------------

def _needs_w(name):
    def fail(*_):
        raise ValidationError(f"observable {name!r} needs velocities, unavailable in the overdamped model")
    return fail


OBSERVABLES: dict[str, Observable] = {
    "1": lambda x, w: np.ones(x.shape[0]),
    "x": lambda x, w: x[:, 0],
    "x^2": lambda x, w: x[:, 0] ** 2,
    "|x|^2": lambda x, w: np.sum(x * x, axis=1),
    "w": lambda x, w: _needs_w("w")() if w is None else w[:, 0],
    "w^2": lambda x, w: _needs_w("w^2")() if w is None else w[:, 0] ** 2,
    "x+w": lambda x, w: _needs_w("x+w")() if w is None else x[:, 0] + w[:, 0],
}


def observable_from_id(name: str) -> Observable:
    """Observable callable ``g(x, w)`` for a registered id such as ``"x^2"``."""
    try:
        return OBSERVABLES[name]
    except KeyError:
        raise ValidationError(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}") from None


def _resolve(observables) -> list[tuple[str, Observable]]:
    out = []
    for i, g in enumerate(observables):
        out.append((g, observable_from_id(g)) if isinstance(g, str) else (f"g{i}", g))
    return out


# equilibrium sampling --------------------------------------------------------

@dataclass(frozen=True)
class _Envelope:
    sigma: float
    log_m: float


_ENVELOPES: dict[tuple, _Envelope] = {}


def _gaussian_envelope(pot: Potential) -> _Envelope:
    """Gaussian proposal ``N(0, sigma^2 I)`` with ``exp(-Phi) <= M q`` everywhere."""
    key = (pot.name, pot.d)
    if key in _ENVELOPES:
        return _ENVELOPES[key]
    d = pot.d
    var = expectation(pot, 1.0, lambda x, w: np.sum(x * x, axis=1) / d)
    sigma = math.sqrt(1.25 * var)

    def h(x):
        x = np.atleast_2d(x)
        return -pot.evaluate(x) + np.sum(x * x, axis=-1) / (2 * sigma**2)

    extent = 10.0 * sigma
    n = {1: 20001, 2: 401, 3: 81}.get(d, 21)
    axis = np.linspace(-extent, extent, n)
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    vals = h(grid)
    best = int(np.argmax(vals))
    res = optimize.minimize(lambda z: -h(z)[0], grid[best], method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14})
    log_m = max(float(vals[best]), float(-res.fun))
    edge = np.max(np.abs(grid), axis=1) >= extent * (1 - 1e-12)
    if not np.all(vals[edge] < log_m - 20.0):
        raise ValidationError(f"potential {pot.name!r} does not dominate a Gaussian envelope")
    env = _Envelope(sigma, log_m + 1e-9)
    _ENVELOPES[key] = env
    return env


def sample_position(pot: Potential, n: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws from ``exp(-Phi) dx``."""
    if pot.name == "harmonic":
        return rng.standard_normal((n, pot.d))
    env = _gaussian_envelope(pot)
    out = np.empty((0, pot.d))
    while out.shape[0] < n:
        m = max(2 * (n - out.shape[0]), 64)
        prop = env.sigma * rng.standard_normal((m, pot.d))
        log_ratio = -pot.evaluate(prop) + np.sum(prop * prop, axis=1) / (2 * env.sigma**2) - env.log_m
        u = rng.random(m)
        out = np.concatenate([out, prop[np.log(u) < log_ratio]])
    return out[:n]


def sample_equilibrium(pot: Potential, beta: float, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Exact draws ``(x, w)`` from ``exp(-Phi) dx`` times ``N(0, I/beta)``."""
    x = sample_position(pot, n, rng)
    w = rng.standard_normal((n, pot.d)) / math.sqrt(beta)
    return x, w


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Generator owned by path block ``block`` of a run with master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(block,))))


# integrators -----------------------------------------------------------------

def _initial(cfg: SdeConfig, n: int, rng: np.random.Generator, overdamped: bool):
    d = cfg.params.d
    law = cfg.initial_law
    if isinstance(law, PointLaw):
        x0 = np.asarray(law.x0, dtype=float).reshape(d)
        w0 = np.zeros(d) if overdamped or not law.w0 else np.asarray(law.w0, dtype=float).reshape(d)
        return np.tile(x0, (n, 1)), (None if overdamped else np.tile(w0, (n, 1)))
    if law == EQUILIBRIUM:
        if overdamped:
            return sample_position(cfg.pot, n, rng), None
        return sample_equilibrium(cfg.pot, cfg.params.beta, n, rng)
    x, w = law(rng, n)
    x = np.asarray(x, dtype=float).reshape(n, d)
    return x, (None if overdamped else np.asarray(w, dtype=float).reshape(n, d))


def _check_finite(x, w, block: int, t: float):
    bad = ~np.isfinite(x).all(axis=1)
    if w is not None:
        bad |= ~np.isfinite(w).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericalError(f"non-finite state in path {block * BLOCK_SIZE + i} at t={t:.6g}; reduce dt")


def _run_block(cfg: SdeConfig, obs, block: int, n: int, overdamped: bool):
    rng = block_generator(cfg.seed, block)
    x, w = _initial(cfg, n, rng, overdamped)
    a, beta, h = cfg.params.alpha, cfg.params.beta, cfg.dt
    grad = cfg.pot.gradient
    records = cfg.record_steps
    vals = np.empty((len(obs), len(records), n))

    def record(k):
        for j, (_, g) in enumerate(obs):
            vals[j, k] = np.asarray(g(x, w), dtype=float)

    r = 0
    if records[0] == 0:
        record(0)
        r = 1
    if overdamped:
        drift, noise = h / (a * beta), math.sqrt(2 * h / (a * beta))
    elif cfg.scheme == "baoab":
        c = math.exp(-a * h)
        ou = math.sqrt((1 - c * c) / beta)
        force = grad(x) / beta
    else:
        noise = math.sqrt(2 * a * h / beta)
    for step in range(1, cfg.n_steps + 1):
        if overdamped:
            x = x - drift * grad(x) + noise * rng.standard_normal(x.shape)
        elif cfg.scheme == "baoab":
            w = w - 0.5 * h * force
            x = x + 0.5 * h * w
            w = c * w + ou * rng.standard_normal(w.shape)
            x = x + 0.5 * h * w
            force = grad(x) / beta
            w = w - 0.5 * h * force
        else:
            xi = rng.standard_normal(w.shape)
            x, w = x + h * w, w - h * (a * w + grad(x) / beta) + noise * xi
        _check_finite(x, w, block, step * h)
        if r < len(records) and step == records[r]:
            record(r)
            r += 1
    return vals, x, w


def _simulate(cfg: SdeConfig, observables, overdamped: bool, return_final: bool):
    obs = _resolve(observables)
    n_blocks = -(-cfg.n_paths // BLOCK_SIZE)
    n_rec = len(cfg.record_steps)
    means = np.zeros((len(obs), n_rec))
    m2 = np.zeros((len(obs), n_rec))
    block_means = np.empty((len(obs), n_blocks, n_rec))
    count = 0
    finals_x, finals_w = [], []
    for b in range(n_blocks):
        nb = min(BLOCK_SIZE, cfg.n_paths - b * BLOCK_SIZE)
        # overflow is caught by the finite-state check, which names the path
        with np.errstate(over="ignore", invalid="ignore"):
            vals, x, w = _run_block(cfg, obs, b, nb, overdamped)
        bm = vals.mean(axis=2)
        bm2 = ((vals - bm[..., None]) ** 2).sum(axis=2)
        block_means[:, b] = bm
        # pairwise merge of running moments, always in block order
        tot = count + nb
        delta = bm - means
        means = means + delta * (nb / tot)
        m2 = m2 + bm2 + delta**2 * (count * nb / tot)
        count = tot
        if return_final:
            finals_x.append(x)
            finals_w.append(w)
    n = cfg.n_paths
    std = np.sqrt(m2 / (n - 1)) if n > 1 else np.zeros_like(m2)
    se = std / math.sqrt(n)
    beta = cfg.params.beta
    traces = []
    for j, (name, g) in enumerate(obs):
        if overdamped:
            target = expectation(cfg.pot, beta, lambda X, W, g=g: g(X, None))
        else:
            target = expectation(cfg.pot, beta, g)
        traces.append(ObservableTrace(cfg.times, means[j], se[j], target, name, block_means[j]))
    if not return_final:
        return traces
    fx = np.concatenate(finals_x)
    fw = None if overdamped else np.concatenate(finals_w)
    return traces, fx, fw


def simulate(cfg: SdeConfig, observables: Sequence[Union[str, Observable]], return_final: bool = False):
    """Estimate ``E[g(x_t, w_t)]`` on the record grid for each observable.

    Observables are ids understood by :func:`observable_from_id` or callables
    ``g(x, w)`` on arrays of shape ``(n, d)``.  With ``return_final`` the
    terminal states ``(x, w)`` are returned alongside the traces.
    """
    return _simulate(cfg, observables, overdamped=False, return_final=return_final)


def simulate_overdamped(cfg: SdeConfig, observables: Sequence[Union[str, Observable]], return_final: bool = False):
    """As :func:`simulate` for ``dx = -grad Phi/(alpha beta) dt + sqrt(2/(alpha beta)) dW``.

    Euler-Maruyama is used regardless of ``cfg.scheme``; observables receive
    ``w=None``.
    """
    return _simulate(cfg, observables, overdamped=True, return_final=return_final)


# rate fitting ----------------------------------------------------------------

def _fit_points(times, dev, floor):
    """Samples used for the log-linear fit of a decaying ``|mean - target|``.

    Points that dominate every later value are kept while above ``floor``.
    When these split into three or more separate runs (an oscillating decay)
    only the maximum of each run, i.e. the peaks, is kept.
    """
    env = np.maximum.accumulate(dev[::-1])[::-1]
    keep = np.nonzero((dev >= env) & (dev > floor))[0]
    if keep.size == 0:
        return keep
    runs = np.split(keep, np.nonzero(np.diff(keep) > 1)[0] + 1)
    if len(runs) >= 3:
        return np.array([r[np.argmax(dev[r])] for r in runs])
    return keep


def fit_observable_rate(times, means, std_errors, target: float, n_sigma: float = 5.0) -> float:
    """Exponential decay rate of ``|means - target|`` above ``n_sigma`` standard errors."""
    times = np.asarray(times, dtype=float)
    dev = np.abs(np.asarray(means, dtype=float) - target)
    floor = n_sigma * float(np.max(std_errors)) if np.size(std_errors) else 0.0
    idx = _fit_points(times, dev, floor)
    if idx.size < 2:
        return float("nan")
    return float(-np.polyfit(times[idx], np.log(dev[idx]), 1)[0])


def trace_rate(trace: ObservableTrace, n_sigma: float = 5.0) -> tuple[float, float]:
    """Fitted rate and its batch-means standard error.

    The error uses the per-block means; with a single block it is ``nan``.
    """
    rate = fit_observable_rate(trace.times, trace.means, trace.std_errors, trace.target, n_sigma)
    bm = trace.block_means
    if bm is None or bm.shape[0] < 2:
        return rate, float("nan")
    nb = bm.shape[0]
    block_se = np.std(bm, axis=0, ddof=1)
    rates = np.array([fit_observable_rate(trace.times, bm[b], block_se, trace.target, n_sigma) for b in range(nb)])
    rates = rates[np.isfinite(rates)]
    if rates.size < 2:
        return rate, float("nan")
    return rate, float(np.std(rates, ddof=1) / math.sqrt(rates.size))


def alpha_sweep(base_cfg: SdeConfig, alphas: Sequence[float], g: Union[str, Observable] = "x",
                Lambda: Optional[float] = None, c_hyp: Optional[float] = None, upsilon: float = 1.0,
                overdamped_horizon: Optional[float] = None, traces: Optional[list] = None) -> list[dict]:
    """Langevin and overdamped decay rates of ``g`` across friction values.

    ``Lambda`` and ``c_hyp`` feed the ``nu2`` column; they default to the
    potential's analytic Poincare constant and to the discrete constant
    certified on a 24 x 24 truncation.  If ``traces`` is a list, the
    ``(alpha, langevin, overdamped)`` traces are appended to it.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or any(not (a > 0) for a in alphas):
        raise ValidationError("alphas must be positive")
    beta = base_cfg.params.beta
    if Lambda is None or c_hyp is None:
        from .hypo import certify
        from .operators import assemble
        ops = assemble(replace(base_cfg.params, alpha=1.0), base_cfg.pot, 24, 24)
        consts = certify(ops, poincare=Lambda)
        Lambda = consts.poincare_lambda if Lambda is None else Lambda
        c_hyp = consts.c2 if c_hyp is None else c_hyp
    nu2 = nu2_curve(Lambda, beta, c_hyp, upsilon, alphas)
    rows = []
    for a, (_, n2) in zip(alphas, nu2):
        params = replace(base_cfg.params, alpha=a)
        cfg = replace(base_cfg, params=params)
        lang = simulate(cfg, [g])[0]
        r_l, se_l = trace_rate(lang)
        ocfg = replace(cfg, horizon=overdamped_horizon or cfg.horizon)
        over = simulate_overdamped(ocfg, [g])[0]
        r_o, se_o = trace_rate(over)
        if traces is not None:
            traces.append((a, lang, over))
        rows.append({"alpha": a, "fitted_rate_langevin": r_l, "rate_std_error_langevin": se_l,
                     "nu2": float(n2), "fitted_rate_overdamped": r_o, "rate_std_error_overdamped": se_o})
    return rows
