"""Receding-horizon controllers: base-plus-correction (shift or SPC base),
direct data-driven control, and the unconstrained SPC law.

One step is: refresh the rolling windows with the newest measurement, choose
the base input sequence, predict its output response, condense and solve the
correction QP, apply the first input block, then shift. Window conventions
follow the predictor: at decision time k the input window ends at u(k-1) and
the output window ends at y(k), so the harness pushes the measurement before
calling step() and pushes the applied input afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hankel import HankelSet, Projector
from .predictor import (
    SpcGain,
    ThetaPredictor,
    build_spc_gain,
    predict_base_output,
    stack_input_weight,
    stack_output_weight,
    unconstrained_spc,
)
from .qp import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    BoxBounds,
    BoxQpSolver,
    CostWeights,
    condense_deepc,
    condense_gdpc,
    solve_qp,
)

TAIL_REPEAT_LAST = "repeat_last"
TAIL_REFERENCE = "r_u"

BASE_SHIFT = "shift"
BASE_SPC = "spc"


class QpInfeasibleError(RuntimeError):
    """Raised when the per-step QP is infeasible and softening is disabled."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ReferenceSchedule:
    """Piecewise-constant reference schedule: list of (k_start, r_y, r_u)."""

    entries: tuple

    @classmethod
    def constant(cls, r_y, r_u) -> "ReferenceSchedule":
        return cls(entries=((0, np.asarray(r_y, dtype=float), np.asarray(r_u, dtype=float)),))

    @classmethod
    def from_steps(cls, steps) -> "ReferenceSchedule":
        entries = tuple(
            (int(k), np.asarray(ry, dtype=float), np.asarray(ru, dtype=float))
            for k, ry, ru in sorted(steps, key=lambda s: s[0])
        )
        if not entries:
            raise ValueError("reference schedule needs at least one entry")
        return cls(entries=entries)

    def at(self, k: int):
        r_y, r_u = self.entries[0][1], self.entries[0][2]
        for k_start, ry, ru in self.entries:
            if k >= k_start:
                r_y, r_u = ry, ru
            else:
                break
        return r_y, r_u


@dataclass
class ControllerConfig:
    t_ini: int
    horizon: int
    weights: CostWeights
    bounds: BoxBounds
    schedule: ReferenceSchedule
    base_mode: str = BASE_SHIFT
    regularizer: str = "projector"
    tail_rule: str = TAIL_REPEAT_LAST
    solver_tol: float = 1e-8
    solver_max_iter: int = 4000
    soften_output_box: bool = False
    soft_y_weight: float = 1e6

    def __post_init__(self):
        if self.horizon < self.t_ini:
            raise ValueError(
                f"horizon ({self.horizon}) must be at least t_ini ({self.t_ini})"
            )
        if self.base_mode not in (BASE_SHIFT, BASE_SPC):
            raise ValueError(f"unknown base_mode {self.base_mode!r}")
        if self.tail_rule not in (TAIL_REPEAT_LAST, TAIL_REFERENCE):
            raise ValueError(f"unknown tail_rule {self.tail_rule!r}")
        for k_start, r_y, r_u in self.schedule.entries:
            b = self.bounds
            if not (np.all(r_u > b.u_lb) and np.all(r_u < b.u_ub)):
                raise ValueError(f"schedule entry at k={k_start}: r_u not interior to the input box")
            if not (np.all(r_y > b.y_lb) and np.all(r_y < b.y_ub)):
                raise ValueError(f"schedule entry at k={k_start}: r_y not interior to the output box")


class ControllerState:
    """Rolling windows plus everything carried between consecutive steps."""

    def __init__(self, u_window: np.ndarray, y_window: np.ndarray, horizon: int):
        self.u_win = np.array(u_window, dtype=float)
        self.y_win = np.array(y_window, dtype=float)
        self.horizon = horizon
        self.u_base = np.zeros((horizon, self.u_win.shape[1]))
        self.prev_u_star: np.ndarray | None = None
        self.prev_g: np.ndarray | None = None
        self.prev_duals: np.ndarray | None = None

    @property
    def t_ini(self) -> int:
        return self.u_win.shape[0]

    def push_measurement(self, y) -> "ControllerState":
        self.y_win = np.vstack([self.y_win[1:], np.asarray(y, dtype=float).reshape(1, -1)])
        return self

    def push_input(self, u) -> "ControllerState":
        self.u_win = np.vstack([self.u_win[1:], np.asarray(u, dtype=float).reshape(1, -1)])
        return self

    def windows(self):
        return self.u_win.ravel(), self.y_win.ravel()


def init_controller(cfg: ControllerConfig, h_large=None, h_small=None, warmup=None) -> ControllerState:
    """Fill the rolling windows from the tail of the warm-up record.

    The base input sequence starts at zero; in SPC-base mode it is recomputed
    fresh on every step so the initialization is irrelevant there.
    """
    if warmup is None or len(warmup) < cfg.t_ini:
        have = 0 if warmup is None else len(warmup)
        raise ValueError(f"warm-up must supply at least t_ini={cfg.t_ini} samples, got {have}")
    return ControllerState(
        u_window=warmup.inputs[-cfg.t_ini:],
        y_window=warmup.outputs[-cfg.t_ini:],
        horizon=cfg.horizon,
    )


def shift_sequence(prev_u_star: np.ndarray, tail_rule: str, r_u) -> np.ndarray:
    """Drop the first block of the previous optimal sequence episode and
    append a tail element chosen by rule."""
    prev = np.atleast_2d(np.asarray(prev_u_star, dtype=float))
    if tail_rule == TAIL_REPEAT_LAST:
        tail = prev[-1]
    elif tail_rule == TAIL_REFERENCE:
        tail = np.asarray(r_u, dtype=float).reshape(-1)
        if tail.shape[0] != prev.shape[1]:
            raise ValueError("r_u dimension does not match the input sequence")
    else:
        raise ValueError(f"unknown tail_rule {tail_rule!r}")
    return np.vstack([prev[1:], tail.reshape(1, -1)])


def advance_windows(state: ControllerState, applied_u, measured_y) -> ControllerState:
    """Push the applied input and the next measurement, dropping the oldest."""
    return state.push_input(applied_u).push_measurement(measured_y)


@dataclass
class StepDiagnostics:
    k: int
    applied_u: np.ndarray
    u_star: np.ndarray
    y_star: np.ndarray
    u_base: np.ndarray | None
    y_base: np.ndarray | None
    u_g_first: np.ndarray
    g: np.ndarray | None
    sigma: np.ndarray | None
    g_norm: float
    sigma_norm: float
    qp_status: str
    qp_objective: float
    qp_iterations: int
    solve_time_ms: float
    r_y: np.ndarray = field(default=None)
    r_u: np.ndarray = field(default=None)
    softened: bool = False


class GdpcController:
    """Base-plus-correction controller over a small Hankel set.

    base_mode="shift" reuses the shifted previous optimum as the base
    sequence (zero at the first step); base_mode="spc" recomputes the
    unconstrained SPC law every step and clips it into the input box so that
    the zero correction stays input-feasible.
    """

    def __init__(self, cfg: ControllerConfig, h: HankelSet, predictor: ThetaPredictor,
                 projector: Projector):
        if h.t_ini != cfg.t_ini or h.horizon != cfg.horizon:
            raise ValueError("Hankel set dimensions do not match the controller config")
        self.cfg = cfg
        self.h = h
        self.predictor = predictor
        self.projector = projector
        self.n_u = h.n_u
        self.n_y = h.n_y
        r_y0, r_u0 = cfg.schedule.at(0)
        template = condense_gdpc(h, projector, np.zeros(self.n_y * cfg.horizon),
                                 np.zeros(self.n_u * cfg.horizon), cfg.weights, cfg.bounds,
                                 (r_y0 * 0.0, r_u0 * 0.0))
        self._template = template
        self.solver = BoxQpSolver(template.H, template.a_eq, template.a_box,
                                  h_base=template.h_base, penalty_rows=template.penalty_rows)
        psi = stack_input_weight(cfg.weights.r_mat, cfg.horizon)
        omega = stack_output_weight(cfg.weights.q_mat, cfg.horizon, cfg.weights.alpha)
        self._w_y = 2.0 * h.y_future.T @ omega
        self._w_u = 2.0 * h.u_future.T @ psi
        self.spc_gain: SpcGain | None = None
        if cfg.base_mode == BASE_SPC:
            self.spc_gain = build_spc_gain(predictor, cfg.weights.q_mat, cfg.weights.r_mat,
                                           cfg.weights.alpha)

    def _base_sequence(self, state: ControllerState, k: int, r_y, r_u) -> np.ndarray:
        cfg = self.cfg
        if cfg.base_mode == BASE_SPC:
            u_ini, y_ini = state.windows()
            seq = unconstrained_spc(self.spc_gain, self.predictor, u_ini, y_ini, r_y, r_u)
            seq = seq.reshape(cfg.horizon, self.n_u)
            return np.clip(seq, cfg.bounds.u_lb, cfg.bounds.u_ub)
        if state.prev_u_star is None:
            return np.zeros((cfg.horizon, self.n_u))
        return shift_sequence(state.prev_u_star, cfg.tail_rule, r_u)

    def step(self, state: ControllerState, k: int):
        cfg = self.cfg
        r_y, r_u = cfg.schedule.at(k)
        u_ini, y_ini = state.windows()
        u_base = self._base_sequence(state, k, r_y, r_u)
        u_base_flat = u_base.ravel()
        y_base = predict_base_output(self.predictor, u_ini, y_ini, u_base_flat)
        ry_stack = np.tile(r_y, cfg.horizon)
        ru_stack = np.tile(r_u, cfg.horizon)
        f = self._w_y @ (y_base - ry_stack) + self._w_u @ (u_base_flat - ru_stack)
        lb = np.concatenate([
            np.tile(cfg.bounds.u_lb, cfg.horizon) - u_base_flat,
            np.tile(cfg.bounds.y_lb, cfg.horizon) - y_base,
        ])
        ub = np.concatenate([
            np.tile(cfg.bounds.u_ub, cfg.horizon) - u_base_flat,
            np.tile(cfg.bounds.y_ub, cfg.horizon) - y_base,
        ])
        sol = self.solver.solve(f, self._template.b_eq, lb, ub,
                                warm_g=state.prev_g, warm_y=state.prev_duals,
                                tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        softened = False
        if sol.status == STATUS_INFEASIBLE:
            if not cfg.soften_output_box:
                raise QpInfeasibleError(
                    f"correction QP infeasible at step {k}",
                    diagnostics={"k": k, "kkt": sol.kkt_residuals, "u_base": u_base},
                )
            soft_qp = condense_gdpc(self.h, self.projector, y_base, u_base_flat, cfg.weights,
                                    cfg.bounds, (r_y, r_u), soft_y_weight=cfg.soft_y_weight)
            sol = solve_qp(soft_qp, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
            softened = True
        g = sol.g_star[: self.h.t_cols]
        u_corr = (self.h.u_future @ g).reshape(cfg.horizon, self.n_u)
        u_star = u_base + u_corr
        y_star = (y_base + self.h.y_future @ g).reshape(cfg.horizon, self.n_y)
        sigma = self.h.y_past @ g
        applied = np.clip(u_star[0], cfg.bounds.u_lb, cfg.bounds.u_ub)
        state.prev_u_star = u_star
        if not softened:
            state.prev_g = g
            state.prev_duals = np.concatenate([sol.nu, sol.mu])
        else:
            state.prev_g = None
            state.prev_duals = None
        diag = StepDiagnostics(
            k=k, applied_u=applied, u_star=u_star, y_star=y_star,
            u_base=u_base, y_base=y_base.reshape(cfg.horizon, self.n_y),
            u_g_first=u_corr[0].copy(), g=g, sigma=sigma,
            g_norm=float(np.linalg.norm(g)), sigma_norm=float(np.linalg.norm(sigma)),
            qp_status=sol.status, qp_objective=sol.objective,
            qp_iterations=sol.iterations, solve_time_ms=1000.0 * sol.solve_time,
            r_y=r_y, r_u=r_u, softened=softened,
        )
        return applied, diag


class DeepcController:
    """Direct data-driven controller over a single Hankel set."""

    def __init__(self, cfg: ControllerConfig, h: HankelSet, projector: Projector):
        if h.t_ini != cfg.t_ini or h.horizon != cfg.horizon:
            raise ValueError("Hankel set dimensions do not match the controller config")
        self.cfg = cfg
        self.h = h
        self.projector = projector
        self.n_u = h.n_u
        self.n_y = h.n_y
        template = condense_deepc(h, projector, np.zeros(self.n_u * cfg.t_ini),
                                  np.zeros(self.n_y * cfg.t_ini), cfg.weights, cfg.bounds,
                                  (np.zeros(self.n_y), np.zeros(self.n_u)))
        self._template = template
        self.solver = BoxQpSolver(template.H, template.a_eq, template.a_box,
                                  h_base=template.h_base, penalty_rows=template.penalty_rows)
        psi = stack_input_weight(cfg.weights.r_mat, cfg.horizon)
        omega = stack_output_weight(cfg.weights.q_mat, cfg.horizon, cfg.weights.alpha)
        self._w_y = 2.0 * h.y_future.T @ omega
        self._w_u = 2.0 * h.u_future.T @ psi
        self._lb = np.concatenate([np.tile(cfg.bounds.u_lb, cfg.horizon),
                                   np.tile(cfg.bounds.y_lb, cfg.horizon)])
        self._ub = np.concatenate([np.tile(cfg.bounds.u_ub, cfg.horizon),
                                   np.tile(cfg.bounds.y_ub, cfg.horizon)])

    def step(self, state: ControllerState, k: int):
        cfg = self.cfg
        r_y, r_u = cfg.schedule.at(k)
        u_ini, y_ini = state.windows()
        f = -(self._w_y @ np.tile(r_y, cfg.horizon) + self._w_u @ np.tile(r_u, cfg.horizon))
        if cfg.weights.lambda_sigma > 0:
            f = f - 2.0 * cfg.weights.lambda_sigma * (self.h.y_past.T @ y_ini)
            b_eq = u_ini
        else:
            b_eq = np.concatenate([u_ini, y_ini])
        sol = self.solver.solve(f, b_eq, self._lb, self._ub,
                                warm_g=state.prev_g, warm_y=state.prev_duals,
                                tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        softened = False
        if sol.status == STATUS_INFEASIBLE:
            if not cfg.soften_output_box:
                raise QpInfeasibleError(
                    f"data-driven QP infeasible at step {k}",
                    diagnostics={"k": k, "kkt": sol.kkt_residuals},
                )
            soft_qp = condense_deepc(self.h, self.projector, u_ini, y_ini, cfg.weights,
                                     cfg.bounds, (r_y, r_u), soft_y_weight=cfg.soft_y_weight)
            sol = solve_qp(soft_qp, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
            softened = True
        g = sol.g_star[: self.h.t_cols]
        u_star = (self.h.u_future @ g).reshape(cfg.horizon, self.n_u)
        y_star = (self.h.y_future @ g).reshape(cfg.horizon, self.n_y)
        sigma = self.h.y_past @ g - y_ini
        applied = np.clip(u_star[0], cfg.bounds.u_lb, cfg.bounds.u_ub)
        state.prev_u_star = u_star
        if not softened:
            state.prev_g = g
            state.prev_duals = np.concatenate([sol.nu, sol.mu])
        else:
            state.prev_g = None
            state.prev_duals = None
        diag = StepDiagnostics(
            k=k, applied_u=applied, u_star=u_star, y_star=y_star,
            u_base=None, y_base=None,
            u_g_first=applied.copy(), g=g, sigma=sigma,
            g_norm=float(np.linalg.norm(g)), sigma_norm=float(np.linalg.norm(sigma)),
            qp_status=sol.status, qp_objective=sol.objective,
            qp_iterations=sol.iterations, solve_time_ms=1000.0 * sol.solve_time,
            r_y=r_y, r_u=r_u, softened=softened,
        )
        return applied, diag


class SpcController:
    """Unconstrained SPC law applied receding horizon, clipped into the
    input box; no QP is solved."""

    def __init__(self, cfg: ControllerConfig, predictor: ThetaPredictor):
        self.cfg = cfg
        self.predictor = predictor
        self.n_u = predictor.n_u
        self.n_y = predictor.n_y
        self.gain = build_spc_gain(predictor, cfg.weights.q_mat, cfg.weights.r_mat,
                                   cfg.weights.alpha)

    def step(self, state: ControllerState, k: int):
        import time as _time

        cfg = self.cfg
        r_y, r_u = cfg.schedule.at(k)
        u_ini, y_ini = state.windows()
        t0 = _time.perf_counter()
        seq = unconstrained_spc(self.gain, self.predictor, u_ini, y_ini, r_y, r_u)
        solve_ms = 1000.0 * (_time.perf_counter() - t0)
        u_star = np.clip(seq.reshape(cfg.horizon, self.n_u), cfg.bounds.u_lb, cfg.bounds.u_ub)
        y_star = predict_base_output(self.predictor, u_ini, y_ini, u_star.ravel())
        applied = u_star[0].copy()
        state.prev_u_star = u_star
        diag = StepDiagnostics(
            k=k, applied_u=applied, u_star=u_star,
            y_star=y_star.reshape(cfg.horizon, self.n_y),
            u_base=u_star, y_base=y_star.reshape(cfg.horizon, self.n_y),
            u_g_first=np.zeros(self.n_u), g=None, sigma=None,
            g_norm=0.0, sigma_norm=0.0,
            qp_status="closed_form", qp_objective=float("nan"),
            qp_iterations=0, solve_time_ms=solve_ms,
            r_y=r_y, r_u=r_u,
        )
        return applied, diag
