"""Galerkin matrices of the Langevin Kolmogorov operator.

The tensor basis is ``phi_k(x) psi_m(w)`` with ``phi`` orthonormal for
``exp(-phi) dx`` and ``psi`` normalized Hermite functions for ``nu_beta``.
Matrix entries follow the convention ``M[j, k] = <M e_k, e_j>`` so that a
coefficient vector ``c`` of ``f`` is mapped to the coefficients of ``M f``.

Operators::

    S = -alpha w . grad_w + (alpha / beta) lap_w      (symmetric, diagonal)
    A = -w . grad_x + (1 / beta) grad phi . grad_w    (antisymmetric)
    L = S - A

The position multiplication matrix of ``d_i phi`` is taken as ``D_i + D_i^T``
(integration by parts), which keeps ``A`` exactly antisymmetric.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
from scipy import linalg

from .errors import NumericalError, ValidationError
from .model import ModelParams, Potential
from .quadrature import PositionSpace, hermite_values, position_space, total_degree_indices, velocity_rule

DENSE_LIMIT = 2000
DEFAULT_DIM_CAP = 40_000

Matrix = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True)
class BasisIndex:
    x_degree: tuple
    w_degree: tuple
    flat: int


def dense(m: Matrix) -> np.ndarray:
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def _store(m) -> Matrix:
    if sp.issparse(m):
        return m.toarray() if m.shape[0] <= DENSE_LIMIT else m.tocsr()
    return m


def _velocity_matrices(w_index: list, beta: float, d: int):
    """Per-coordinate matrices of multiplication by ``w_i`` and of ``d/dw_i``."""
    lookup = {m: i for i, m in enumerate(w_index)}
    n = len(w_index)
    X, Dw = [], []
    for i in range(d):
        rows, cols, xv, dv = [], [], [], []
        for col, m in enumerate(w_index):
            if m[i] == 0:
                continue
            lower = m[:i] + (m[i] - 1,) + m[i + 1:]
            row = lookup[lower]
            # w psi_m has the psi_{m-1} component sqrt(m)/sqrt(beta); d/dw psi_m = sqrt(beta m) psi_{m-1}
            rows.append(row)
            cols.append(col)
            xv.append(np.sqrt(m[i] / beta))
            dv.append(np.sqrt(beta * m[i]))
        down = sp.csr_matrix((xv, (rows, cols)), shape=(n, n))
        X.append((down + down.T).tocsr())
        Dw.append(sp.csr_matrix((dv, (rows, cols)), shape=(n, n)))
    return X, Dw


@dataclass(frozen=True, eq=False)
class OperatorSet:
    params: ModelParams
    potential: Potential
    space: PositionSpace = field(repr=False)
    w_index: list = field(repr=False)
    S: Matrix = field(repr=False)
    A: Matrix = field(repr=False)
    L: Matrix = field(repr=False)
    P_S: Matrix = field(repr=False)
    P: Matrix = field(repr=False)
    AP: Matrix = field(repr=False)
    A2P: Matrix = field(repr=False)
    one: np.ndarray = field(repr=False)

    @property
    def n_x(self) -> int:
        return self.space.size

    @property
    def n_w(self) -> int:
        return len(self.w_index)

    @property
    def dim(self) -> int:
        return self.n_x * self.n_w

    def flat(self, ix: int, iw: int) -> int:
        return ix * self.n_w + iw

    def index(self, flat: int) -> BasisIndex:
        ix, iw = divmod(flat, self.n_w)
        return BasisIndex(tuple(self.space.multi_indices[ix]), tuple(self.w_index[iw]), flat)

    @cached_property
    def w_degree(self) -> np.ndarray:
        """Total velocity degree of every flat index."""
        deg = np.array([sum(m) for m in self.w_index])
        return np.tile(deg, self.n_x)

    @cached_property
    def macro(self) -> np.ndarray:
        """Flat indices spanning ``range(P)``: velocity degree 0, non-constant position."""
        return np.array([self.flat(ix, 0) for ix in range(1, self.n_x)], dtype=int)

    @cached_property
    def G(self) -> Matrix:
        return _store(sp.csr_matrix(self.P @ self.A2P) if sp.issparse(self.A2P) else self.P @ self.A2P)

    @cached_property
    def B(self) -> np.ndarray:
        return build_B(self)

    def coefficients(self, g: Callable, n_vel: int | None = None) -> np.ndarray:
        """Project ``g(x, w)`` (arrays of shape ``(m, d)``) onto the tensor basis."""
        d = self.params.d
        nv = n_vel or max(self.n_w_max + 8, 16)
        rv = velocity_rule(nv, self.params.beta, d)
        psi = _velocity_values(self.w_index, rv.nodes, self.params.beta)
        rx = self.space.rule
        X = np.repeat(rx.nodes, len(rv.weights), axis=0)
        W = np.tile(rv.nodes, (len(rx.weights), 1))
        vals = np.asarray(g(X, W), dtype=float).reshape(len(rx.weights), len(rv.weights))
        c = (self.space.values * rx.weights) @ vals @ (psi * rv.weights).T
        return c.reshape(-1)

    @property
    def n_w_max(self) -> int:
        return max(sum(m) for m in self.w_index) + 1

    def evaluate(self, c: np.ndarray, x, w) -> np.ndarray:
        """Evaluate the function with coefficients ``c`` at phase points ``(x, w)``."""
        d = self.params.d
        x = np.asarray(x, dtype=float).reshape(-1, d)
        w = np.asarray(w, dtype=float).reshape(-1, d)
        phi = self.space.evaluate(x)
        psi = _velocity_values(self.w_index, w, self.params.beta)
        C = np.asarray(c).reshape(self.n_x, self.n_w)
        return np.einsum("jq,jm,mq->q", phi, C, psi)


def _velocity_values(w_index: list, w: np.ndarray, beta: float) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    d = w.shape[-1]
    top = max(max(m) for m in w_index) + 1
    h = [hermite_values(top, w[:, i], beta) for i in range(d)]
    mi = np.array(w_index)
    out = np.ones((len(mi), len(w)))
    for i in range(d):
        out *= h[i][mi[:, i]]
    return out


def assemble(params: ModelParams, pot: Potential, n_x: int, n_w: int,
             dim_cap: int = DEFAULT_DIM_CAP) -> OperatorSet:
    """Assemble ``S, A, L, P_S, P, AP, A^2 P`` on an ``n_x`` by ``n_w`` truncation.

    For ``d > 1``, ``n_x`` and ``n_w`` bound the total degree (``< n``) of the
    position and velocity multi-indices.
    """
    params.require_discretizable()
    if pot.d != params.d:
        raise ValidationError(f"potential is {pot.d}-dimensional but d={params.d}")
    if n_x < 2 or n_w < 2:
        raise ValidationError(f"N_x and N_w must be >= 2, got {n_x}, {n_w}")
    w_index = total_degree_indices(params.d, n_w - 1)
    n_pos = len(total_degree_indices(params.d, n_x - 1))
    dim = n_pos * len(w_index)
    if dim > dim_cap:
        raise ValidationError(f"basis dimension {dim} exceeds the cap {dim_cap}")
    space = position_space(pot, n_x)
    alpha, beta, d = params.alpha, params.beta, params.d

    Dx = space.derivative_matrices()
    X, Dw = _velocity_matrices(w_index, beta, d)
    A = sp.csr_matrix((dim, dim))
    for i in range(d):
        D = sp.csr_matrix(Dx[i])
        M = sp.csr_matrix(Dx[i] + Dx[i].T)
        A = A - sp.kron(D, X[i]) + sp.kron(M, Dw[i]) / beta
    wdeg = np.array([sum(m) for m in w_index], dtype=float)
    S = sp.kron(sp.identity(n_pos), sp.diags(-alpha * wdeg)).tocsr()
    ps = np.tile((wdeg == 0).astype(float), n_pos)
    P_S = sp.diags(ps).tocsr()
    one = np.zeros(dim)
    one[0] = 1.0
    P = (P_S - sp.csr_matrix(np.outer(one, one)) if dim <= DENSE_LIMIT
         else P_S - sp.csr_matrix(([1.0], ([0], [0])), shape=(dim, dim))).tocsr()
    A = A.tocsr()
    A.eliminate_zeros()
    AP = (A @ P).tocsr()
    A2P = (A @ AP).tocsr()
    L = (S - A).tocsr()
    return OperatorSet(params, pot, space, w_index, _store(S), _store(A), _store(L), _store(P_S),
                       _store(P), _store(AP), _store(A2P), one)


def apply_AP(ops: OperatorSet, f: np.ndarray) -> np.ndarray:
    """``A P f``; for ``f`` with position part ``f_S`` this is ``-w . grad f_S``."""
    return ops.A @ (ops.P @ np.asarray(f, dtype=float))


def apply_A2P(ops: OperatorSet, f: np.ndarray) -> np.ndarray:
    return ops.A @ apply_AP(ops, f)


def build_G(ops: OperatorSet) -> np.ndarray:
    """``P A^2 P`` restricted to ``range(P)`` (the macroscopic subspace).

    Equals ``(1/beta)`` times the Galerkin matrix of ``lap - grad phi . grad``
    on non-constant position functions.
    """
    idx = ops.macro
    return dense(ops.G)[np.ix_(idx, idx)] if not sp.issparse(ops.G) else ops.G[idx][:, idx].toarray()


def build_B(ops: OperatorSet) -> np.ndarray:
    """``B = (I + (AP)^T AP)^{-1} (AP)^T`` as a dense matrix."""
    ap = dense(ops.AP)
    gram = np.eye(ops.dim) + ap.T @ ap
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"I + (AP)^T AP is not positive definite: {exc}") from exc
    return linalg.cho_solve(factor, ap.T)


def dump_coo(ops: OperatorSet, directory: Path, names=("S", "A", "L", "P_S", "P", "AP", "A2P", "G")) -> list[Path]:
    """Write ``row col value`` text files with 17 significant digits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name in names:
        m = sp.coo_matrix(getattr(ops, name))
        path = directory / f"{name}.coo"
        with path.open("w") as fh:
            fh.write(f"# {m.shape[0]} {m.shape[1]}\n")
            for r, c, v in zip(m.row, m.col, m.data):
                fh.write(f"{r} {c} {v:.17g}\n")
        out.append(path)
    return out


def load_coo(path: Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    n, m = (int(t) for t in lines[0].lstrip("# ").split())
    out = np.zeros((n, m))
    for line in lines[1:]:
        r, c, v = line.split()
        out[int(r), int(c)] = float(v)
    return out
