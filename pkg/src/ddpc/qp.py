"""Condensed QP assembly for DeePC/GDPC and a dense operator-splitting solver.

The optimization problems are posed only in the Hankel combination vector g
(plus optional softening slacks); predicted inputs, outputs and the past
consistency slack are affine images of g and are eliminated before solving:

    minimize   0.5 g^T H g + f^T g
    subject to A_eq g = b_eq,  lb <= A_box g <= ub

The solver is ADMM over the stacked constraints (equality rows get a stiffer
penalty parameter) with Ruiz equilibration, followed by an active-set polish:
the KKT system restricted to the constraints the duals mark active is solved
directly with iterative refinement, which is what reaches 1e-8 KKT residuals.
The hot iteration loop lives in a compiled kernel when available (see
ddpc._kernel).

Large consistency penalties (lambda_sigma around 1e7) make the condensed
Hessian numerically singular, which defeats any diagonally scaled first-order
method. Condensation therefore records the penalty split H = h_base + W^T W;
the solver re-lifts s = W g as an internal slack block with an identity
Hessian and equality rows [W, -I], iterates on the well-conditioned lifted
system, and certifies the returned (g, duals) against the original KKT
conditions.
"""

from __future__ import annotations

import time
import warnings
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._kernel import BACKEND as KERNEL_BACKEND  # noqa: F401  (re-exported)
from ._kernel import admm_chunk
from .hankel import HankelSet, Projector
from .predictor import stack_input_weight, stack_output_weight

DEFAULT_TOL = 1e-8

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class CostWeights:
    """Stage weights and regularization strengths shared by all controllers."""

    q_mat: np.ndarray
    r_mat: np.ndarray
    alpha: float = 1.0
    lambda_g: float = 0.0
    lambda_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q_mat", np.atleast_2d(np.asarray(self.q_mat, dtype=float)))
        object.__setattr__(self, "r_mat", np.atleast_2d(np.asarray(self.r_mat, dtype=float)))
        if self.lambda_g < 0 or self.lambda_sigma < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.alpha < 1.0:
            raise ValueError("terminal scaling alpha must be >= 1")


@dataclass(frozen=True)
class BoxBounds:
    """Elementwise input/output boxes; entries may be +-inf."""

    u_lb: np.ndarray
    u_ub: np.ndarray
    y_lb: np.ndarray
    y_ub: np.ndarray

    def __post_init__(self):
        for name in ("u_lb", "u_ub", "y_lb", "y_ub"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if np.any(self.u_lb > self.u_ub) or np.any(self.y_lb > self.y_ub):
            raise ValueError("box lower bounds exceed upper bounds")

    @classmethod
    def unbounded(cls, n_u: int, n_y: int) -> "BoxBounds":
        return cls(
            np.full(n_u, -np.inf), np.full(n_u, np.inf),
            np.full(n_y, -np.inf), np.full(n_y, np.inf),
        )


@dataclass(frozen=True)
class CondensedQP:
    """Dense convex QP in the combination vector (plus optional slacks).

    n_g is the dimension of the Hankel combination block; the decision vector
    is longer only when output boxes have been softened. When (h_base,
    penalty_rows) are present they satisfy H = h_base + penalty_rows^T
    penalty_rows and let the solver avoid the numerically singular condensed
    Hessian.
    """

    H: np.ndarray
    f: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_box: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_g: int
    h_base: np.ndarray | None = None
    penalty_rows: np.ndarray | None = None

    def __post_init__(self):
        h = self.H
        scale = max(1.0, np.abs(h).max()) if h.size else 1.0
        if np.abs(h - h.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("Hessian is not symmetric")
        for name in ("H", "f", "a_eq", "b_eq", "a_box"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds contain NaN")
        if np.any(self.lb > self.ub):
            raise ValueError("lb exceeds ub")
        if (self.h_base is None) != (self.penalty_rows is None):
            raise ValueError("h_base and penalty_rows must be given together")

    @property
    def m(self) -> int:
        return self.n_g


@dataclass
class QpSolution:
    g_star: np.ndarray
    status: str
    kkt_residuals: tuple
    iterations: int
    solve_time: float
    nu: np.ndarray
    mu: np.ndarray
    objective: float
    tolerance: float


@dataclass
class SolverSettings:
    rho: float = 0.1
    eq_rho_scale: float = 1e3
    sigma: float = 1e-6
    relax: float = 1.6
    check_interval: int = 25
    polish_interval: int = 250
    scaling_iters: int = 10
    eps_pinf: float = 1e-6
    polish_refine: int = 2
    polish_cache_size: int = 40
    psd_tol: float = 1e-8
    adaptive_rho: bool = True
    max_rho_updates: int = 8
    rho_min: float = 1e-6
    rho_max: float = 1e6
    active_set_after: int = 500
    max_pivots: int = 200
    max_adds_per_pivot: int = 8


def _stack_refs(r_y, r_u, horizon: int):
    ry = np.tile(np.asarray(r_y, dtype=float).reshape(-1), horizon)
    ru = np.tile(np.asarray(r_u, dtype=float).reshape(-1), horizon)
    return ry, ru


def _tracking_blocks(h: HankelSet, proj: Projector, weights: CostWeights):
    """Base Hessian (without the sigma penalty), Psi and Omega stacks."""
    psi = stack_input_weight(weights.r_mat, h.horizon)
    omega = stack_output_weight(weights.q_mat, h.horizon, weights.alpha)
    base = (
        h.y_future.T @ omega @ h.y_future
        + h.u_future.T @ psi @ h.u_future
        + weights.lambda_g * proj.m_reg
    )
    base = 2.0 * base
    return 0.5 * (base + base.T), psi, omega


def _assemble(h: HankelSet, weights: CostWeights, h_base: np.ndarray):
    """Full Hessian plus the (h_base, penalty_rows) split when sigma is soft."""
    if weights.lambda_sigma > 0:
        w_rows = np.sqrt(2.0 * weights.lambda_sigma) * h.y_past
        full = h_base + w_rows.T @ w_rows
        return 0.5 * (full + full.T), h_base, w_rows
    return h_base, None, None


def _soften_y_rows(H, f, a_eq, b_eq, a_box, lb, ub, n_y_rows: int, weight: float, n_g: int,
                   h_base=None, penalty_rows=None):
    """Replace hard output boxes with a linear violation penalty.

    Appends one slack per output row: lb_y - s <= A_y g <= ub_y + s, s >= 0,
    penalized by weight * sum(s).
    """
    n_u_rows = a_box.shape[0] - n_y_rows
    m = H.shape[0]
    a_u, a_y = a_box[:n_u_rows], a_box[n_u_rows:]
    eye = np.eye(n_y_rows)
    zeros_col = np.zeros((m, n_y_rows))
    h_ext = np.block([[H, zeros_col], [zeros_col.T, np.zeros((n_y_rows, n_y_rows))]])
    f_ext = np.concatenate([f, weight * np.ones(n_y_rows)])
    a_eq_ext = np.hstack([a_eq, np.zeros((a_eq.shape[0], n_y_rows))])
    a_box_ext = np.vstack(
        [
            np.hstack([a_u, np.zeros((n_u_rows, n_y_rows))]),
            np.hstack([a_y, -eye]),
            np.hstack([a_y, eye]),
            np.hstack([np.zeros((n_y_rows, m)), eye]),
        ]
    )
    lb_ext = np.concatenate(
        [lb[:n_u_rows], np.full(n_y_rows, -np.inf), lb[n_u_rows:], np.zeros(n_y_rows)]
    )
    ub_ext = np.concatenate(
        [ub[:n_u_rows], ub[n_u_rows:], np.full(n_y_rows, np.inf), np.full(n_y_rows, np.inf)]
    )
    hb_ext = None
    pr_ext = None
    if h_base is not None:
        hb_ext = np.block([[h_base, zeros_col], [zeros_col.T, np.zeros((n_y_rows, n_y_rows))]])
        pr_ext = np.hstack([penalty_rows, np.zeros((penalty_rows.shape[0], n_y_rows))])
    return CondensedQP(h_ext, f_ext, a_eq_ext, b_eq, a_box_ext, lb_ext, ub_ext, n_g=n_g,
                       h_base=hb_ext, penalty_rows=pr_ext)


def condense_gdpc(
    h: HankelSet,
    proj: Projector,
    y_base,
    u_base,
    weights: CostWeights,
    bounds: BoxBounds,
    refs,
    soft_y_weight: float | None = None,
) -> CondensedQP:
    """Condense the base-plus-correction problem into the combination vector.

    Substitutes u = u_base + u_future g, y = y_base + y_future g and
    sigma = y_past g, leaving the equality u_past g = 0. With
    lambda_sigma = 0 the slack is pinned instead: y_past g = 0 becomes a hard
    equality (the noise-free simplification).
    """
    y_base = np.asarray(y_base, dtype=float).reshape(-1)
    u_base = np.asarray(u_base, dtype=float).reshape(-1)
    ry, ru = _stack_refs(refs[0], refs[1], h.horizon)
    if y_base.shape[0] != ry.shape[0] or u_base.shape[0] != ru.shape[0]:
        raise ValueError("base sequences do not match the horizon")
    h_track, psi, omega = _tracking_blocks(h, proj, weights)
    hess, h_base, w_rows = _assemble(h, weights, h_track)
    f = 2.0 * (h.y_future.T @ (omega @ (y_base - ry)) + h.u_future.T @ (psi @ (u_base - ru)))
    if weights.lambda_sigma > 0:
        a_eq = h.u_past
    else:
        a_eq = np.vstack([h.u_past, h.y_past])
    b_eq = np.zeros(a_eq.shape[0])
    a_box = np.vstack([h.u_future, h.y_future])
    lb = np.concatenate([np.tile(bounds.u_lb, h.horizon) - u_base, np.tile(bounds.y_lb, h.horizon) - y_base])
    ub = np.concatenate([np.tile(bounds.u_ub, h.horizon) - u_base, np.tile(bounds.y_ub, h.horizon) - y_base])
    if soft_y_weight is not None:
        return _soften_y_rows(hess, f, a_eq, b_eq, a_box, lb, ub, h.n_y * h.horizon,
                              soft_y_weight, h.t_cols, h_base, w_rows)
    return CondensedQP(hess, f, a_eq, b_eq, a_box, lb, ub, n_g=h.t_cols,
                       h_base=h_base, penalty_rows=w_rows)


def condense_deepc(
    h: HankelSet,
    proj: Projector,
    u_ini,
    y_ini,
    weights: CostWeights,
    bounds: BoxBounds,
    refs,
    soft_y_weight: float | None = None,
) -> CondensedQP:
    """Condense the direct data-driven problem into the combination vector.

    Substitutes u = u_future g, y = y_future g, sigma = y_past g - y_ini,
    with the hard equality u_past g = u_ini. With lambda_sigma = 0 the slack
    is pinned: y_past g = y_ini becomes a hard equality.
    """
    u_ini = np.asarray(u_ini, dtype=float).reshape(-1)
    y_ini = np.asarray(y_ini, dtype=float).reshape(-1)
    ry, ru = _stack_refs(refs[0], refs[1], h.horizon)
    h_track, psi, omega = _tracking_blocks(h, proj, weights)
    hess, h_base, w_rows = _assemble(h, weights, h_track)
    f = -2.0 * (h.y_future.T @ (omega @ ry) + h.u_future.T @ (psi @ ru))
    if weights.lambda_sigma > 0:
        f = f - 2.0 * weights.lambda_sigma * (h.y_past.T @ y_ini)
        a_eq = h.u_past
        b_eq = u_ini.copy()
    else:
        a_eq = np.vstack([h.u_past, h.y_past])
        b_eq = np.concatenate([u_ini, y_ini])
    a_box = np.vstack([h.u_future, h.y_future])
    lb = np.concatenate([np.tile(bounds.u_lb, h.horizon), np.tile(bounds.y_lb, h.horizon)])
    ub = np.concatenate([np.tile(bounds.u_ub, h.horizon), np.tile(bounds.y_ub, h.horizon)])
    if soft_y_weight is not None:
        return _soften_y_rows(hess, f, a_eq, b_eq, a_box, lb, ub, h.n_y * h.horizon,
                              soft_y_weight, h.t_cols, h_base, w_rows)
    return CondensedQP(hess, f, a_eq, b_eq, a_box, lb, ub, n_g=h.t_cols,
                       h_base=h_base, penalty_rows=w_rows)


def kkt_residuals(H, f, a_eq, b_eq, a_box, lb, ub, g, nu, mu, hg=None):
    """(stationarity, primal_eq, primal_ineq, complementarity) for a candidate.

    hg optionally supplies a precomputed (or more accurately evaluated) H @ g.
    """
    stat_vec = (H @ g if hg is None else hg) + f
    if a_eq.shape[0]:
        stat_vec = stat_vec + a_eq.T @ nu
    if a_box.shape[0]:
        stat_vec = stat_vec + a_box.T @ mu
    stat = np.abs(stat_vec).max(initial=0.0)
    peq = np.abs(a_eq @ g - b_eq).max(initial=0.0) if a_eq.shape[0] else 0.0
    if a_box.shape[0]:
        v = a_box @ g
        lower_gap = np.where(np.isfinite(lb), lb - v, -np.inf)
        upper_gap = np.where(np.isfinite(ub), v - ub, -np.inf)
        pineq = max(0.0, lower_gap.max(initial=-np.inf), upper_gap.max(initial=-np.inf))
        pos = mu > 0
        neg = mu < 0
        up_term = np.zeros_like(mu)
        lo_term = np.zeros_like(mu)
        up_term[pos] = mu[pos] * np.where(np.isfinite(ub[pos]), ub[pos] - v[pos], np.inf)
        lo_term[neg] = -mu[neg] * np.where(np.isfinite(lb[neg]), v[neg] - lb[neg], np.inf)
        comp = max(np.abs(up_term).max(initial=0.0), np.abs(lo_term).max(initial=0.0))
    else:
        pineq = 0.0
        comp = 0.0
    return stat, peq, pineq, comp


def _ruiz_equilibrate(h, a, iters: int):
    m = h.shape[0]
    r = a.shape[0]
    d = np.ones(m)
    e = np.ones(r)
    hs = h.copy()
    as_ = a.copy()
    for _ in range(iters):
        col_h = np.abs(hs).max(axis=0) if m else np.zeros(0)
        if r:
            col_a = np.abs(as_).max(axis=0)
            nv = np.maximum(col_h, col_a)
        else:
            nv = col_h
        nv = np.where(nv > 0, nv, 1.0)
        dv = 1.0 / np.sqrt(nv)
        hs = dv[:, None] * hs * dv[None, :]
        if r:
            nr = np.abs(as_).max(axis=1)
            nr = np.where(nr > 0, nr, 1.0)
            er = 1.0 / np.sqrt(nr)
            as_ = er[:, None] * (as_ * dv[None, :])
            e *= er
        d *= dv
    return d, e, hs, as_


class BoxQpSolver:
    """Workspace for repeated solves against fixed (H, A_eq, A_box).

    Receding-horizon controllers rebuild only (f, b_eq, lb, ub) each step, so
    the equilibration, the PSD validation, the penalty lift and the Cholesky
    factorization of the ADMM normal matrix all happen once here. Each
    instance owns its workspace; concurrent solves on distinct instances are
    safe.
    """

    def __init__(self, H, a_eq=None, a_box=None, settings: SolverSettings | None = None,
                 validate_psd: bool = True, h_base=None, penalty_rows=None):
        self.settings = settings or SolverSettings()
        H = np.atleast_2d(np.asarray(H, dtype=float))
        self.m = H.shape[0]
        self.h = 0.5 * (H + H.T)
        self.a_eq = np.zeros((0, self.m)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
        self.a_box = np.zeros((0, self.m)) if a_box is None else np.atleast_2d(np.asarray(a_box, dtype=float))
        self.p = self.a_eq.shape[0]
        self.q = self.a_box.shape[0]
        self.a = np.vstack([self.a_eq, self.a_box])
        self.r = self.p + self.q
        if validate_psd and self.m:
            w_min = float(np.linalg.eigvalsh(self.h)[0])
            h_norm = max(1.0, float(np.abs(self.h).max()))
            if w_min < -self.settings.psd_tol * h_norm:
                raise ValueError(
                    f"Hessian is not positive semidefinite (min eigenvalue {w_min:.3e})"
                )

        if penalty_rows is not None:
            if h_base is None:
                raise ValueError("penalty_rows requires h_base")
            w_rows = np.atleast_2d(np.asarray(penalty_rows, dtype=float))
            h_base = np.atleast_2d(np.asarray(h_base, dtype=float))
            self.k = w_rows.shape[0]
            self._w_rows = w_rows
            self._h_base = 0.5 * (h_base + h_base.T)
            h_int = np.zeros((self.m + self.k, self.m + self.k))
            h_int[: self.m, : self.m] = 0.5 * (h_base + h_base.T)
            h_int[self.m:, self.m:] = np.eye(self.k)
            a_int = np.zeros((self.r + self.k, self.m + self.k))
            a_int[: self.p, : self.m] = self.a_eq
            a_int[self.p : self.p + self.k, : self.m] = w_rows
            a_int[self.p : self.p + self.k, self.m:] = -np.eye(self.k)
            a_int[self.p + self.k:, : self.m] = self.a_box
        else:
            self.k = 0
            self._w_rows = None
            self._h_base = None
            h_int = self.h
            a_int = self.a
        self._m_int = self.m + self.k
        self._r_int = self.r + self.k
        self._p_int = self.p + self.k

        st = self.settings
        self.d, self.e, h_s, a_s = _ruiz_equilibrate(h_int, a_int, st.scaling_iters)
        self._h_s = h_s
        self.a_s = np.ascontiguousarray(a_s)
        self.a_abs_max = float(np.abs(self.a).max(initial=0.0))
        self._set_rho(st.rho)
        self._polish_cache: OrderedDict = OrderedDict()

    def _set_rho(self, rho_base: float) -> None:
        """(Re)build the penalty vector and the ADMM normal-matrix factor."""
        self._rho_base = rho_base
        rho = np.full(self._r_int, rho_base)
        rho[: self._p_int] *= self.settings.eq_rho_scale
        self.rho = np.ascontiguousarray(rho)
        self.inv_rho = np.ascontiguousarray(1.0 / rho) if self._r_int else np.zeros(0)
        k_mat = self._h_s + self.settings.sigma * np.eye(self._m_int)
        if self._r_int:
            k_mat = k_mat + (self.a_s.T * rho) @ self.a_s
        self.chol = np.ascontiguousarray(np.linalg.cholesky(k_mat))

    # -- solving ---------------------------------------------------------

    def solve(self, f, b_eq=None, lb=None, ub=None, warm_g=None, warm_y=None,
              tol: float = DEFAULT_TOL, max_iter: int = 4000) -> QpSolution:
        t0 = time.perf_counter()
        st = self.settings
        f = np.asarray(f, dtype=float).reshape(-1)
        b_eq = np.zeros(self.p) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
        lb = np.full(self.q, -np.inf) if lb is None else np.asarray(lb, dtype=float).reshape(-1)
        ub = np.full(self.q, np.inf) if ub is None else np.asarray(ub, dtype=float).reshape(-1)
        if f.shape[0] != self.m or b_eq.shape[0] != self.p or lb.shape[0] != self.q or ub.shape[0] != self.q:
            raise ValueError("solve data does not match workspace dimensions")
        if np.any(lb > ub):
            return self._finish(np.zeros(self.m), np.zeros(self.p), np.zeros(self.q),
                                STATUS_INFEASIBLE, 0, t0, f, b_eq, lb, ub, tol)

        lo_user = np.concatenate([b_eq, lb])
        hi_user = np.concatenate([b_eq, ub])
        f_int = np.concatenate([f, np.zeros(self.k)]) if self.k else f
        lo_int = np.concatenate([b_eq, np.zeros(self.k), lb])
        hi_int = np.concatenate([b_eq, np.zeros(self.k), ub])
        f_s = np.ascontiguousarray(self.d * f_int)
        lo_s = np.ascontiguousarray(self.e * lo_int) if self._r_int else np.zeros(0)
        hi_s = np.ascontiguousarray(self.e * hi_int) if self._r_int else np.zeros(0)

        if warm_g is None:
            x = np.zeros(self._m_int)
        else:
            warm_g = np.asarray(warm_g, dtype=float).reshape(-1)
            x_full = np.concatenate([warm_g, self._w_rows @ warm_g]) if self.k else warm_g
            x = x_full / self.d
        z = self.a_s @ x if self._r_int else np.zeros(0)
        y_int = np.zeros(self._r_int)
        if warm_y is not None and self.r:
            warm_y = np.asarray(warm_y, dtype=float).reshape(-1)
            y_int[: self.p] = warm_y[: self.p]
            y_int[self._p_int:] = warm_y[self.p:]
            if self.k and warm_g is not None:
                # at an optimum the lift multiplier equals the slack itself
                y_int[self.p : self._p_int] = self._w_rows @ warm_g
        y = np.ascontiguousarray(y_int / self.e) if self._r_int else np.zeros(0)
        x = np.ascontiguousarray(x)
        z = np.ascontiguousarray(z)
        dx = np.zeros(self._m_int)
        dy = np.zeros(self._r_int)
        wm = np.zeros(self._m_int)
        wr = np.zeros(self._r_int)

        eps_run = max(tol * 1e2, 1e-6)
        eps_floor = max(tol * 1e-4, 1e-13)
        iterations = 0
        last_polish_at = None
        rho_updates = 0
        tried_active_set = False
        best = None

        while True:
            g, nu_raw, mu_raw = self._split_iterate(x, y)
            ag = self.a @ g if self.r else np.zeros(0)
            hg = self.h @ g
            z_user = self._user_rows(z / self.e) if self.r else np.zeros(0)
            y_user = np.concatenate([nu_raw, mu_raw])
            pri = np.abs(ag - z_user).max(initial=0.0)
            dua_vec = hg + f
            if self.r:
                dua_vec = dua_vec + self.a.T @ y_user
            dua = np.abs(dua_vec).max(initial=0.0)
            pri_scale = 1.0 + max(np.abs(ag).max(initial=0.0), np.abs(z_user).max(initial=0.0))
            dua_scale = 1.0 + max(np.abs(hg).max(initial=0.0), np.abs(f).max(initial=0.0),
                                  np.abs(self.a.T @ y_user).max(initial=0.0) if self.r else 0.0)
            converged = pri <= eps_run * pri_scale and dua <= eps_run * dua_scale
            due_polish = (last_polish_at is None
                          or iterations - last_polish_at >= st.polish_interval)
            if converged or due_polish:
                last_polish_at = iterations
                candidate = self._attempt_candidates(g, nu_raw, mu_raw, f, b_eq, lb, ub, tol)
                best = self._better(best, candidate)
                if candidate[0]:
                    g_c, nu_c, mu_c, resid = candidate[1]
                    return self._finish(g_c, nu_c, mu_c, STATUS_OPTIMAL, iterations, t0,
                                        f, b_eq, lb, ub, tol, resid)
                if converged:
                    eps_run = max(eps_run * 1e-2, eps_floor)
            if not tried_active_set and iterations >= st.active_set_after:
                tried_active_set = True
                refined = self._active_set_refine(f, b_eq, lb, ub, mu_raw < 0, mu_raw > 0)
                if refined is not None:
                    entry = self._certify(*refined, f, b_eq, lb, ub, tol)
                    best = self._better(best, entry)
                    if entry[0]:
                        g_c, nu_c, mu_c, resid = entry[1]
                        return self._finish(g_c, nu_c, mu_c, STATUS_OPTIMAL, iterations, t0,
                                            f, b_eq, lb, ub, tol, resid)
            if iterations > 0 and self.r and self._primal_infeasible(dy, lo_user, hi_user):
                return self._finish(g, nu_raw, mu_raw, STATUS_INFEASIBLE,
                                    iterations, t0, f, b_eq, lb, ub, tol)
            if iterations >= max_iter:
                break
            if (st.adaptive_rho and iterations > 0 and not converged
                    and rho_updates < st.max_rho_updates):
                ratio = np.sqrt((pri / pri_scale) / max(dua / dua_scale, 1e-30))
                if ratio > 5.0 or ratio < 0.2:
                    new_rho = float(np.clip(self._rho_base * ratio, st.rho_min, st.rho_max))
                    if new_rho != self._rho_base:
                        self._set_rho(new_rho)
                        rho_updates += 1
            n_steps = min(st.check_interval, max_iter - iterations)
            admm_chunk(self.chol, self.a_s, self.rho, self.inv_rho, st.sigma, st.relax,
                       f_s, lo_s, hi_s, x, z, y, dx, dy, wm, wr, n_steps)
            iterations += n_steps

        g, nu_raw, mu_raw = self._split_iterate(x, y)
        candidate = self._attempt_candidates(g, nu_raw, mu_raw, f, b_eq, lb, ub, tol)
        best = self._better(best, candidate)
        if candidate[0]:
            g_c, nu_c, mu_c, resid = candidate[1]
            return self._finish(g_c, nu_c, mu_c, STATUS_OPTIMAL, iterations, t0,
                                f, b_eq, lb, ub, tol, resid)
        if not tried_active_set:
            refined = self._active_set_refine(f, b_eq, lb, ub, mu_raw < 0, mu_raw > 0)
            if refined is not None:
                entry = self._certify(*refined, f, b_eq, lb, ub, tol)
                best = self._better(best, entry)
                if entry[0]:
                    g_c, nu_c, mu_c, resid = entry[1]
                    return self._finish(g_c, nu_c, mu_c, STATUS_OPTIMAL, iterations, t0,
                                        f, b_eq, lb, ub, tol, resid)
        g_c, nu_c, mu_c, resid = best[1]
        return self._finish(g_c, nu_c, mu_c, STATUS_MAX_ITER, iterations, t0,
                            f, b_eq, lb, ub, tol, resid)

    # -- helpers ---------------------------------------------------------

    def _split_iterate(self, x, y):
        """Unscale and strip the lift block: returns (g, nu, mu)."""
        g_full = self.d * x
        g = g_full[: self.m]
        if self._r_int:
            y_u = self.e * y
            nu = y_u[: self.p]
            mu = y_u[self._p_int:]
        else:
            nu = np.zeros(0)
            mu = np.zeros(0)
        return g, nu, mu

    def _user_rows(self, vec):
        if self.k == 0:
            return vec
        return np.concatenate([vec[: self.p], vec[self._p_int:]])

    def _certify(self, g, nu, mu, f, b_eq, lb, ub, tol):
        """Evaluate one candidate against the original KKT conditions."""
        f_scale = 1.0 + np.abs(f).max(initial=0.0)
        resid = kkt_residuals(self.h, f, self.a_eq, b_eq, self.a_box, lb, ub, g, nu, mu)
        ok = (
            resid[0] <= tol * f_scale
            and resid[1] <= tol
            and resid[2] <= tol
            and resid[3] <= tol
        )
        return ok, (g, nu, mu, resid)

    def _attempt_candidates(self, g, nu_raw, mu_raw, f, b_eq, lb, ub, tol):
        """Try the polished candidate first, then the raw iterate.

        Returns (certified, (g, nu, mu, residuals)).
        """
        f_scale = 1.0 + np.abs(f).max(initial=0.0)
        polished = self._polish(mu_raw, f, b_eq, lb, ub)
        candidates = []
        if polished is not None:
            candidates.append(polished)
        candidates.append((g, nu_raw, mu_raw))
        best_entry = None
        best_score = np.inf
        for g_c, nu_c, mu_c in candidates:
            ok, bundle = self._certify(g_c, nu_c, mu_c, f, b_eq, lb, ub, tol)
            if ok:
                return True, bundle
            resid = bundle[3]
            score = max(resid[0] / f_scale, resid[1], resid[2], resid[3])
            if score < best_score:
                best_score = score
                best_entry = bundle
        return False, best_entry

    @staticmethod
    def _better(best, candidate):
        if best is None:
            return candidate
        if candidate[0]:
            return candidate
        b_res = best[1][3]
        c_res = candidate[1][3]
        return candidate if max(c_res) < max(b_res) else best

    def _polish(self, y_box, f, b_eq, lb, ub):
        """Solve the KKT system restricted to the duals' active-set guess.

        Works in the original (un-lifted) variable space; residual-based
        acceptance happens in the caller, so a wrong active set is harmless.
        """
        return self._kkt_solve(y_box < 0, y_box > 0, f, b_eq, lb, ub)

    def _kkt_solve(self, low, upp, f, b_eq, lb, ub):
        """Equality-constrained solve on a given working set, with refinement.

        Factorizations are cached by working-set pattern, so repeated
        patterns across receding-horizon steps cost one back-substitution.
        """
        key = (low.tobytes(), upp.tobytes())
        cached = self._polish_cache.get(key)
        if cached is None:
            a_act = np.vstack([self.a_eq, self.a_box[low], self.a_box[upp]])
            na = a_act.shape[0]
            k0 = np.zeros((self.m + na, self.m + na))
            k0[: self.m, : self.m] = self.h
            if na:
                k0[: self.m, self.m:] = a_act.T
                k0[self.m:, : self.m] = a_act
            row_norm = np.abs(k0).max(axis=1)
            scale = 1.0 / np.sqrt(np.where(row_norm > 0, row_norm, 1.0))
            ks = k0 * scale[:, None] * scale[None, :]
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    lu = sla.lu_factor(ks, check_finite=False)
            except (ValueError, sla.LinAlgError):
                return None
            cached = (lu, scale, a_act)
            self._polish_cache[key] = cached
            if len(self._polish_cache) > self.settings.polish_cache_size:
                self._polish_cache.popitem(last=False)
        else:
            self._polish_cache.move_to_end(key)
        lu, scale, a_act = cached
        na = a_act.shape[0]
        n_low = int(np.count_nonzero(low))
        b_act = np.concatenate([b_eq, lb[low], ub[upp]])
        rhs = np.concatenate([-f, b_act])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sol = scale * sla.lu_solve(lu, scale * rhs, check_finite=False)
            for _ in range(self.settings.polish_refine):
                if not np.all(np.isfinite(sol)):
                    return None
                g_c = sol[: self.m]
                lam = sol[self.m:]
                res_top = -f - (self.h @ g_c + (a_act.T @ lam if na else 0.0))
                res_bot = b_act - a_act @ g_c if na else np.zeros(0)
                res = np.concatenate([res_top, res_bot])
                sol = sol + scale * sla.lu_solve(lu, scale * res, check_finite=False)
        if not np.all(np.isfinite(sol)):
            return None
        g_c = sol[: self.m]
        lam = sol[self.m:]
        nu = lam[: self.p]
        mu = np.zeros(self.q)
        mu[low] = lam[self.p : self.p + n_low]
        mu[upp] = lam[self.p + n_low:]
        return g_c, nu, mu

    def _active_set_refine(self, f, b_eq, lb, ub, low, upp):
        """Single-exchange primal active-set loop from a warm working set.

        Used as a backstop when the splitting iteration has not certified: it
        is immune to the Hessian conditioning because every step is a direct
        refined KKT solve. Returns a candidate (g, nu, mu) or None.
        """
        if self.q == 0:
            return self._kkt_solve(np.zeros(0, bool), np.zeros(0, bool), f, b_eq, lb, ub)
        low = low.copy()
        upp = upp.copy()
        pinned = np.isfinite(lb) & (lb == ub)
        low |= pinned
        upp &= ~pinned
        banned = np.zeros(self.q, dtype=bool)
        last_added: list = []
        best = None
        for _ in range(self.settings.max_pivots):
            res = self._kkt_solve(low, upp, f, b_eq, lb, ub)
            if res is None:
                if not last_added:
                    return best
                # back out the most recent additions, one of them made the
                # working set rank-deficient
                for idx in last_added:
                    banned[idx] = True
                    low[idx] = False
                    upp[idx] = False
                last_added = []
                continue
            g_c, nu_c, mu_c = res
            best = res
            dual_scale = 1.0 + np.abs(mu_c).max(initial=0.0)
            sign_eps = 1e-10 * dual_scale
            wrong = (low & ~pinned & (mu_c > sign_eps)) | (upp & (mu_c < -sign_eps))
            if np.any(wrong):
                low[wrong] = False
                upp[wrong] = False
                last_added = []
                continue
            v = self.a_box @ g_c
            cand_low = ~low & ~banned & np.isfinite(lb)
            cand_upp = ~upp & ~banned & ~pinned & np.isfinite(ub)
            viol_low = np.where(cand_low, lb - v, -np.inf)
            viol_upp = np.where(cand_upp, v - ub, -np.inf)
            viol = np.maximum(viol_low, viol_upp)
            feas_target = 1e-9 * (1.0 + np.abs(v).max(initial=0.0))
            if viol.max(initial=-np.inf) <= feas_target:
                return res
            order = np.argsort(viol)[::-1]
            last_added = []
            for idx in order[: self.settings.max_adds_per_pivot]:
                idx = int(idx)
                if viol[idx] <= feas_target:
                    break
                if viol_low[idx] >= viol_upp[idx]:
                    low[idx] = True
                else:
                    upp[idx] = True
                last_added.append(idx)
        return best

    def _primal_infeasible(self, dy_scaled, lo_user, hi_user) -> bool:
        if self.r == 0:
            return False
        dy_user = self._user_rows(self.e * dy_scaled)
        ndy = np.abs(dy_user).max(initial=0.0)
        if ndy <= 1e-14:
            return False
        v = dy_user / ndy
        eps = self.settings.eps_pinf
        if np.any((v > eps) & np.isinf(hi_user)) or np.any((v < -eps) & np.isneginf(lo_user)):
            return False
        fin_hi = np.isfinite(hi_user)
        fin_lo = np.isfinite(lo_user)
        support = float(hi_user[fin_hi] @ np.maximum(v[fin_hi], 0.0)
                        + lo_user[fin_lo] @ np.minimum(v[fin_lo], 0.0))
        bound_scale = max(1.0, np.abs(hi_user[fin_hi]).max(initial=0.0),
                          np.abs(lo_user[fin_lo]).max(initial=0.0))
        if support >= -eps * bound_scale:
            return False
        atv = np.abs(self.a.T @ v).max(initial=0.0)
        return atv <= eps * (1.0 + self.a_abs_max)

    def _finish(self, g, nu, mu, status, iterations, t0, f, b_eq, lb, ub, tol, resid=None):
        if resid is None:
            resid = kkt_residuals(self.h, f, self.a_eq, b_eq, self.a_box, lb, ub, g, nu, mu)
        objective = float(0.5 * g @ (self.h @ g) + f @ g)
        return QpSolution(
            g_star=g,
            status=status,
            kkt_residuals=tuple(float(v) for v in resid),
            iterations=iterations,
            solve_time=time.perf_counter() - t0,
            nu=nu,
            mu=mu,
            objective=objective,
            tolerance=tol,
        )


def solve_qp(qp: CondensedQP, warm_start=None, tol: float = DEFAULT_TOL,
             max_iter: int = 4000, settings: SolverSettings | None = None) -> QpSolution:
    """One-shot solve of a condensed QP (builds a fresh workspace)."""
    solver = BoxQpSolver(qp.H, qp.a_eq, qp.a_box, settings=settings,
                         h_base=qp.h_base, penalty_rows=qp.penalty_rows)
    return solver.solve(qp.f, qp.b_eq, qp.lb, qp.ub, warm_g=warm_start, tol=tol, max_iter=max_iter)


def dump_qp_csv(qp: CondensedQP, directory) -> None:
    """Debug dump of all QP blocks as CSV files for external cross-checks."""
    import os

    os.makedirs(directory, exist_ok=True)
    parts = {
        "H": qp.H, "f": qp.f, "A_eq": qp.a_eq, "b_eq": qp.b_eq,
        "A_box": qp.a_box, "lb": qp.lb, "ub": qp.ub,
    }
    for name, arr in parts.items():
        np.savetxt(os.path.join(directory, f"{name}.csv"), np.atleast_2d(arr), delimiter=",", fmt="%.17g")
