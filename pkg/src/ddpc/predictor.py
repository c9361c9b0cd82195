"""Least-squares multi-step prediction: the block predictor theta, its
partition into past/future maps, the unconstrained SPC law and ARX
identification for the terminal monitor.

The predictor maps col(u_ini, y_ini, u_plan) to the stacked output forecast
col(y(1|k), ..., y(N|k)); u_ini holds the last t_ini inputs, y_ini the last
t_ini measurements ending at the current one, and u_plan the N planned
inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import linalg
from .hankel import HankelSet
from .lti import ExperimentData


@dataclass(frozen=True)
class ThetaPredictor:
    """Multi-step least-squares predictor with its column-block partition.

    theta = [past_input_map, past_output_map, future_input_map] where the
    blocks have widths n_u*t_ini, n_y*t_ini and n_u*horizon.
    """

    theta: np.ndarray
    t_ini: int
    horizon: int
    n_u: int
    n_y: int

    def __post_init__(self):
        rows, cols = self.theta.shape
        if rows != self.n_y * self.horizon:
            raise ValueError(f"theta has {rows} rows, expected {self.n_y * self.horizon}")
        expected = self.t_ini * (self.n_u + self.n_y) + self.n_u * self.horizon
        if cols != expected:
            raise ValueError(f"theta has {cols} columns, expected {expected}")

    @property
    def past_input_map(self) -> np.ndarray:
        return self.theta[:, : self.n_u * self.t_ini]

    @property
    def past_output_map(self) -> np.ndarray:
        a = self.n_u * self.t_ini
        return self.theta[:, a : a + self.n_y * self.t_ini]

    @property
    def future_input_map(self) -> np.ndarray:
        return self.theta[:, (self.n_u + self.n_y) * self.t_ini :]


@dataclass(frozen=True)
class SpcGain:
    """Precomputed quantities of the unconstrained SPC control law.

    G = 2 (Psi + Gamma^T Omega Gamma) and F = 2 Gamma^T Omega, where Gamma is
    the predictor's future-input map, Psi = diag(R, ..., R) and
    Omega = diag(Q, ..., Q, alpha Q).
    """

    G: np.ndarray
    F: np.ndarray
    psi: np.ndarray
    omega: np.ndarray
    _factor: tuple = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._factor is None:
            object.__setattr__(self, "_factor", sla.cho_factor(self.G, lower=True))
        return sla.cho_solve(self._factor, rhs)


@dataclass(frozen=True)
class ArxModel:
    """Finite-window input-output model y(k) = sum a_i y(k-i) + sum b_i u(k-i).

    a and b are stacked as (t_ini, n_y, n_y) and (t_ini, n_y, n_u) with index
    i-1 holding the lag-i coefficient matrix.
    """

    a: np.ndarray
    b: np.ndarray

    @property
    def t_ini(self) -> int:
        return self.a.shape[0]

    def predict_next(self, y_window: np.ndarray, u_window: np.ndarray) -> np.ndarray:
        """One-step prediction from windows ordered oldest first.

        y_window is (t_ini, n_y) ending at y(k-1), u_window is (t_ini, n_u)
        ending at u(k-1); returns the predicted y(k).
        """
        if len(y_window) != self.t_ini or len(u_window) != self.t_ini:
            raise ValueError(f"windows must have length {self.t_ini}")
        y_new = np.zeros(self.a.shape[1])
        for i in range(1, self.t_ini + 1):
            y_new += self.a[i - 1] @ y_window[self.t_ini - i]
            y_new += self.b[i - 1] @ u_window[self.t_ini - i]
        return y_new


def stack_input_weight(r_mat: np.ndarray, horizon: int) -> np.ndarray:
    """Psi = diag(R, ..., R) over the horizon."""
    return np.kron(np.eye(horizon), r_mat)


def stack_output_weight(q_mat: np.ndarray, horizon: int, alpha: float = 1.0) -> np.ndarray:
    """Omega = diag(Q, ..., Q, alpha Q), terminal block scaled by alpha."""
    omega = np.kron(np.eye(horizon), q_mat)
    n_y = q_mat.shape[0]
    omega[-n_y:, -n_y:] *= alpha
    return omega


def fit_theta(h: HankelSet) -> ThetaPredictor:
    """Fit the multi-step predictor from a (large) Hankel set.

    theta = y_future @ pinv([u_past; y_past; u_future]); the pseudo-inverse
    returns the minimum-norm solution, which on rank-deficient noise-free
    data still reproduces every trajectory seen in the regressor row space.
    """
    regressors = h.past_future_input_stack()
    theta = h.y_future @ linalg.pinv(regressors)
    return ThetaPredictor(theta=theta, t_ini=h.t_ini, horizon=h.horizon, n_u=h.n_u, n_y=h.n_y)


def predict_base_output(p: ThetaPredictor, u_ini, y_ini, u_plan) -> np.ndarray:
    """Stacked output forecast theta @ col(u_ini, y_ini, u_plan)."""
    z = np.concatenate(
        [
            np.asarray(u_ini, dtype=float).reshape(-1),
            np.asarray(y_ini, dtype=float).reshape(-1),
            np.asarray(u_plan, dtype=float).reshape(-1),
        ]
    )
    if z.shape[0] != p.theta.shape[1]:
        raise ValueError(f"stacked regressor has length {z.shape[0]}, expected {p.theta.shape[1]}")
    return p.theta @ z


def build_spc_gain(p: ThetaPredictor, q_mat, r_mat, alpha: float = 1.0) -> SpcGain:
    """Assemble and factorize the unconstrained-SPC normal equations."""
    q_mat = np.atleast_2d(np.asarray(q_mat, dtype=float))
    r_mat = np.atleast_2d(np.asarray(r_mat, dtype=float))
    for name, mat in (("Q", q_mat), ("R", r_mat)):
        if not np.allclose(mat, mat.T, atol=1e-12):
            raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(mat).min() <= 0:
            raise ValueError(f"{name} must be positive definite")
    if alpha < 1.0:
        raise ValueError("terminal scaling alpha must be >= 1")
    psi = stack_input_weight(r_mat, p.horizon)
    omega = stack_output_weight(q_mat, p.horizon, alpha)
    gamma = p.future_input_map
    g = 2.0 * (psi + gamma.T @ omega @ gamma)
    g = 0.5 * (g + g.T)
    f = 2.0 * gamma.T @ omega
    return SpcGain(G=g, F=f, psi=psi, omega=omega)


def unconstrained_spc(gain: SpcGain, p: ThetaPredictor, u_ini, y_ini, r_y, r_u) -> np.ndarray:
    """Closed-form minimizer of the tracking cost over the planned inputs.

    Returns the stacked input sequence of length n_u * horizon.
    """
    z = np.concatenate(
        [np.asarray(u_ini, dtype=float).reshape(-1), np.asarray(y_ini, dtype=float).reshape(-1)]
    )
    past = np.hstack([p.past_input_map, p.past_output_map])
    if z.shape[0] != past.shape[1]:
        raise ValueError("u_ini/y_ini dimensions do not match the predictor")
    ry_stack = np.tile(np.asarray(r_y, dtype=float).reshape(-1), p.horizon)
    ru_stack = np.tile(np.asarray(r_u, dtype=float).reshape(-1), p.horizon)
    rhs = gain.F @ (past @ z - ry_stack) - 2.0 * gain.psi @ ru_stack
    return -gain.solve(rhs)


def fit_arx(data, t_ini: int) -> ArxModel:
    """Least-squares fit of the finite-window model on a record or Hankel set.

    Regresses y(k) on col(y(k-1), ..., y(k-t_ini), u(k-1), ..., u(k-t_ini));
    the minimum-norm solution is used, so on redundant windows (t_ini larger
    than the true order) coefficients are not unique but predictions on
    trajectories of the same system are exact for noise-free data.
    """
    if isinstance(data, HankelSet):
        if data.t_ini != t_ini:
            raise ValueError(f"Hankel set was built with t_ini={data.t_ini}, not {t_ini}")
        n_u, n_y = data.n_u, data.n_y
        # Column j of the blocks: y regressors y(j+1..j+t_ini) and u
        # regressors u(j+1..j+t_ini), target y(j+t_ini+1).
        y_regs = data.y_past
        u_regs = np.vstack([data.u_past[n_u:, :], data.u_future[:n_u, :]])
        targets = data.y_future[:n_y, :].T
        n_samples = data.t_cols
        y_blocks = [y_regs[(t_ini - i) * n_y : (t_ini - i + 1) * n_y, :].T for i in range(1, t_ini + 1)]
        u_blocks = [u_regs[(t_ini - i) * n_u : (t_ini - i + 1) * n_u, :].T for i in range(1, t_ini + 1)]
    elif isinstance(data, ExperimentData):
        n_u, n_y = data.n_u, data.n_y
        n_samples = len(data) - t_ini
        if n_samples < 1:
            raise ValueError(f"need more than t_ini={t_ini} samples, got {len(data)}")
        y_blocks = [data.outputs[t_ini - i : t_ini - i + n_samples] for i in range(1, t_ini + 1)]
        u_blocks = [data.inputs[t_ini - i : t_ini - i + n_samples] for i in range(1, t_ini + 1)]
        targets = data.outputs[t_ini:]
    else:
        raise TypeError(f"cannot fit ARX model from {type(data).__name__}")

    regressors = np.hstack(y_blocks + u_blocks)
    if not np.any(regressors) and not np.any(targets):
        raise ValueError("degenerate all-zero data, ARX fit is undefined")
    coeffs = linalg.least_squares(regressors, targets)  # (t_ini*(n_y+n_u), n_y)
    a = np.empty((t_ini, n_y, n_y))
    b = np.empty((t_ini, n_y, n_u))
    for i in range(t_ini):
        a[i] = coeffs[i * n_y : (i + 1) * n_y, :].T
        b[i] = coeffs[t_ini * n_y + i * n_u : t_ini * n_y + (i + 1) * n_u, :].T
    return ArxModel(a=a, b=b)


def save_theta_csv(p: ThetaPredictor, path) -> None:
    """Serialize the predictor: a dims header line, then the matrix rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ini", "horizon", "n_u", "n_y"])
        writer.writerow([p.t_ini, p.horizon, p.n_u, p.n_y])
        for row in p.theta:
            writer.writerow(["%.17g" % v for v in row])


def load_theta_csv(path) -> ThetaPredictor:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header names
        t_ini, horizon, n_u, n_y = (int(v) for v in next(reader))
        theta = np.array([[float(v) for v in row] for row in reader])
    return ThetaPredictor(theta=theta, t_ini=t_ini, horizon=horizon, n_u=n_u, n_y=n_y)
