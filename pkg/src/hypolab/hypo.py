"""Discrete verification of the four hypocoercivity conditions.

Each check reads an assembled :class:`~hypolab.operators.OperatorSet` and
returns the numeric constant together with residuals.  :func:`certify`
collects the constants fed to the rate ledger, preferring analytic values
where the model supplies them and flagging disagreement with the numerics.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.sparse import linalg as splinalg

from .errors import NumericalError
from .operators import DENSE_LIMIT, OperatorSet, build_G, dense

AGREEMENT_TOL = 0.05


@dataclass(frozen=True)
class HypoConstants:
    lambda_m: float
    lambda_M: float
    c1: float
    c2: float
    poincare_lambda: float
    methods: dict = field(default_factory=dict)
    warnings: tuple = ()

    @property
    def c5(self) -> float:
        return self.c1 + self.c2

    @property
    def c3(self) -> float:
        return 2.0 * self.c1

    @property
    def c4(self) -> float:
        return self.c2

    def to_dict(self) -> dict:
        out = asdict(self)
        out["c5"] = self.c5
        out["warnings"] = list(self.warnings)
        return out


def _maxabs(m) -> float:
    m = dense(m) if not sp.issparse(m) else m
    return float(abs(m).max()) if m.shape[0] else 0.0


def _sym_eigvals(m: np.ndarray, k: int = 1) -> np.ndarray:
    """Smallest ``k`` eigenvalues of a symmetric matrix."""
    if m.shape[0] <= DENSE_LIMIT:
        return linalg.eigvalsh(m)[:k]
    try:
        vals = splinalg.eigsh(sp.csr_matrix(m), k=k, sigma=0.0, which="LM", return_eigenvectors=False)
    except (splinalg.ArpackNoConvergence, RuntimeError) as exc:
        raise NumericalError(f"shift-invert eigensolve did not converge: {exc}") from exc
    return np.sort(vals)


def check_H1(ops: OperatorSet, projection: str = "P") -> dict:
    """Residual of ``P A P = 0`` in the max norm."""
    Pm = ops.P if projection == "P" else ops.P_S
    res = _maxabs(Pm @ ops.A @ Pm)
    return {"residual": res, "holds": res <= 1e-12 * _maxabs(ops.A)}


def check_H2(ops: OperatorSet) -> dict:
    """Microscopic coercivity: smallest eigenvalue of ``-S`` off ``range(P_S)``."""
    comp = np.nonzero(ops.w_degree > 0)[0]
    S = dense(ops.S) if ops.dim <= DENSE_LIMIT else ops.S
    block = S[np.ix_(comp, comp)] if not sp.issparse(S) else S[comp][:, comp]
    if sp.issparse(block):
        # S is diagonal; the restricted spectrum is its diagonal
        lam = float(np.min(-block.diagonal()))
    else:
        lam = float(_sym_eigvals(-block)[0])
    return {"lambda_m_numeric": lam}


def estimate_poincare(ops: OperatorSet) -> dict:
    """``beta`` times the spectral gap of ``-G`` on ``range(P)``.

    This is the discrete Poincare constant of ``exp(-phi) dx``; Galerkin
    Rayleigh quotients make it non-increasing as ``N_x`` grows.
    """
    G = build_G(ops)
    if G.shape[0] <= DENSE_LIMIT:
        vals, vecs = linalg.eigh(-G)
        lam, vec = vals[0], vecs[:, 0]
    else:
        try:
            vals, vecs = splinalg.eigsh(sp.csr_matrix(-G), k=1, sigma=0.0, which="LM")
        except (splinalg.ArpackNoConvergence, RuntimeError) as exc:
            raise NumericalError(f"Poincare eigensolve did not converge: {exc}") from exc
        lam, vec = vals[0], vecs[:, 0]
    full = np.zeros(ops.dim)
    full[ops.macro] = vec
    return {"lambda_numeric": float(ops.params.beta * lam), "eigenvector": full}


def grad_norm_sq(ops: OperatorSet, f: np.ndarray) -> float:
    """``||grad f_S||^2`` in ``L2(exp(-phi) dx)`` by quadrature of basis gradients."""
    C = np.asarray(f).reshape(ops.n_x, ops.n_w)
    fs = C[:, 0]
    g = np.einsum("ikq,k->iq", ops.space.grads, fs)
    return float(np.sum(ops.space.rule.weights * np.sum(g * g, axis=0)))


def check_H3(ops: OperatorSet, consts: Optional[HypoConstants] = None, n_samples: int = 100,
             seed: int = 0) -> dict:
    """Macroscopic coercivity ``||APf||^2 >= lambda_M ||Pf||^2``.

    Also checks ``||APf||^2 = (1/beta) ||grad f_S||^2`` on random vectors of
    ``range(P)``.
    """
    ap = dense(ops.AP)[:, ops.macro]
    lam = float(_sym_eigvals(ap.T @ ap)[0])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        f = np.zeros(ops.dim)
        f[ops.macro] = rng.standard_normal(len(ops.macro))
        lhs = float(np.sum((ops.AP @ f) ** 2))
        rhs = grad_norm_sq(ops, f) / ops.params.beta
        worst = max(worst, abs(lhs - rhs) / max(rhs, 1e-300))
    out = {"lambda_M_numeric": lam, "identity_residual": worst}
    if consts is not None:
        out["holds"] = lam >= consts.lambda_M - 1e-8
    return out


def check_H4(ops: OperatorSet) -> dict:
    """Auxiliary-operator bounds.

    ``c1`` follows from the intertwining ``P A S = c3 P A`` with
    ``c1 = |c3|/2``.  Since ``S`` acts as ``-alpha`` on velocity-degree-one
    functions, ``c3 = -alpha``; ``intertwining_residual`` measures
    ``P A S + alpha P A`` and ``plus_alpha_residual`` the same identity with
    ``+alpha``.  ``c2`` is the largest singular value of
    ``A^2 P (I - G)^{-1}`` on ``range(P)``.
    """
    PA = dense(ops.P @ ops.A)
    PAS = dense(ops.P @ ops.A @ ops.S)
    denom = float(np.sum(PA * PA))
    c3 = float(np.sum(PAS * PA) / denom) if denom > 0 else 0.0
    alpha = ops.params.alpha
    scale = max(float(np.max(np.abs(PA))), 1e-300) if PA.size else 1.0
    resid = float(np.max(np.abs(PAS + alpha * PA))) if PA.size else 0.0
    resid_plus = float(np.max(np.abs(PAS - alpha * PA))) if PA.size else 0.0
    Gm = build_G(ops)
    k = np.eye(Gm.shape[0]) - Gm
    try:
        inv = linalg.solve(k, np.eye(k.shape[0]), assume_a="pos")
    except linalg.LinAlgError as exc:
        raise NumericalError(f"I - G is not positive definite on range(P): {exc}") from exc
    K = dense(ops.A2P)[:, ops.macro] @ inv
    c2 = float(linalg.svdvals(K)[0]) if K.size else 0.0
    return {
        "c1_numeric": 0.5 * abs(c3),
        "c2_numeric": c2,
        "c3_numeric": c3,
        "pa_max": scale,
        "intertwining_residual": resid,
        "intertwining_holds": resid <= 1e-10 * scale,
        "plus_alpha_residual": resid_plus,
    }


def sample_h4_inequalities(ops: OperatorSet, consts: HypoConstants, n_samples: int = 1000,
                           seed: int = 0) -> dict:
    """Worst sampled ratios ``||BSf||/||(I-P)f||`` and ``||BA(I-P)f||/||(I-P)f||``."""
    B = ops.B
    I_P = np.eye(ops.dim) - dense(ops.P)
    BS = B @ dense(ops.S)
    BAQ = B @ dense(ops.A) @ I_P
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((ops.dim, n_samples))
    q = np.linalg.norm(I_P @ F, axis=0)
    r1 = np.linalg.norm(BS @ F, axis=0) / q
    r2 = np.linalg.norm(BAQ @ F, axis=0) / q
    return {
        "bs_ratio": float(r1.max()),
        "ba_ratio": float(r2.max()),
        "bs_violations": int(np.sum(r1 > consts.c1 * (1 + 1e-10))),
        "ba_violations": int(np.sum(r2 > consts.c2 * (1 + 1e-10))),
    }


def certify(ops: OperatorSet, poincare: Optional[float] = None, c_hyp: Optional[float] = None) -> HypoConstants:
    """Certified constants for the rate ledger.

    Analytic values (``lambda_m = alpha``, ``lambda_M = Lambda/beta``,
    ``c1 = alpha/2``) are used when the Poincare constant is known; ``c2`` is
    the discrete operator norm unless ``c_hyp`` overrides it.  Numeric and
    analytic values differing by more than 5% produce a warning that flags
    truncation inadequacy.
    """
    p = ops.params
    warns = []
    methods = {}
    h2 = check_H2(ops)
    h4 = check_H4(ops)
    est = estimate_poincare(ops)["lambda_numeric"]
    known = poincare if poincare is not None else ops.potential.poincare_constant
    if known is not None:
        lam = float(known)
        methods["poincare_lambda"] = "analytic"
        if abs(est - lam) > AGREEMENT_TOL * lam:
            warns.append(f"numeric Poincare constant {est:.6g} differs from analytic {lam:.6g} by > 5%")
    else:
        lam = est
        methods["poincare_lambda"] = "numeric"
    lambda_M_num = check_H3(ops, n_samples=0)["lambda_M_numeric"]
    lambda_M = lam / p.beta
    methods.update(lambda_m="analytic", lambda_M=methods["poincare_lambda"], c1="analytic")
    for name, num, ana in (("lambda_m", h2["lambda_m_numeric"], p.alpha),
                           ("lambda_M", lambda_M_num, lambda_M),
                           ("c1", h4["c1_numeric"], 0.5 * p.alpha)):
        if abs(num - ana) > AGREEMENT_TOL * abs(ana):
            warns.append(f"{name}: numeric {num:.6g} vs analytic {ana:.6g} differ by > 5%")
    if c_hyp is None:
        c2 = h4["c2_numeric"]
        methods["c2"] = "numeric"
    else:
        c2 = float(c_hyp)
        methods["c2"] = "override"
    return HypoConstants(lambda_m=p.alpha, lambda_M=lambda_M, c1=0.5 * p.alpha, c2=c2,
                         poincare_lambda=lam, methods=methods, warnings=tuple(warns))


def hypo_report(ops: OperatorSet, consts: Optional[HypoConstants] = None) -> list[dict]:
    """One record per condition: ``condition, analytic, numeric, residual, holds``."""
    consts = consts or certify(ops)
    h1 = check_H1(ops)
    h2 = check_H2(ops)
    h3 = check_H3(ops, consts)
    h4 = check_H4(ops)
    bound = sample_h4_inequalities(ops, consts, n_samples=200) if ops.dim <= DENSE_LIMIT else None
    alpha = ops.params.alpha
    h4_holds = h4["intertwining_holds"] and (bound is None or (bound["bs_violations"] == 0 and bound["ba_violations"] == 0))
    return [
        {"condition": "H1", "analytic": 0.0, "numeric": h1["residual"], "residual": h1["residual"],
         "holds": bool(h1["holds"])},
        {"condition": "H2", "analytic": alpha, "numeric": h2["lambda_m_numeric"],
         "residual": abs(h2["lambda_m_numeric"] - alpha), "holds": bool(h2["lambda_m_numeric"] >= alpha * (1 - 1e-12))},
        {"condition": "H3",
         "analytic": consts.lambda_M if consts.methods.get("lambda_M") == "analytic" else None,
         "numeric": h3["lambda_M_numeric"], "residual": h3["identity_residual"], "holds": bool(h3["holds"])},
        {"condition": "H4", "analytic": {"c1": 0.5 * alpha, "c2": None},
         "numeric": {"c1": h4["c1_numeric"], "c2": h4["c2_numeric"]},
         "residual": h4["intertwining_residual"], "holds": bool(h4_holds)},
    ]
