"""Block Hankel data matrices, excitation-length checks and the projector
regularizer.

Index conventions for a record of length L (inputs u(0..L-1), outputs
y(0..L-1)) with past window t_ini and horizon N, column j (0-based):

    u_past[:, j]   = col(u(j), ..., u(j + t_ini - 1))
    y_past[:, j]   = col(y(j + 1), ..., y(j + t_ini))
    u_future[:, j] = col(u(j + t_ini), ..., u(j + t_ini + N - 1))
    y_future[:, j] = col(y(j + t_ini + 1), ..., y(j + t_ini + N))

Outputs run one sample later than inputs because the measurement window
associated with time k ends at y(k) while the input window ends at u(k-1).
The number of columns is t_cols = L - t_ini - N, which uses inputs up to
u(L-2) and outputs up to y(L-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .lti import ExperimentData


@dataclass(frozen=True)
class HankelSet:
    """The four block Hankel matrices carved from one data record."""

    u_past: np.ndarray
    y_past: np.ndarray
    u_future: np.ndarray
    y_future: np.ndarray
    t_ini: int
    horizon: int

    def __post_init__(self):
        t_cols = self.u_past.shape[1]
        for name in ("y_past", "u_future", "y_future"):
            block = getattr(self, name)
            if block.shape[1] != t_cols:
                raise ValueError(f"{name} has {block.shape[1]} columns, expected {t_cols}")
        if self.u_past.shape[0] != self.n_u * self.t_ini:
            raise ValueError("u_past row count does not match n_u * t_ini")
        if self.y_future.shape[0] != self.n_y * self.horizon:
            raise ValueError("y_future row count does not match n_y * horizon")

    @property
    def t_cols(self) -> int:
        return self.u_past.shape[1]

    @property
    def n_u(self) -> int:
        return self.u_future.shape[0] // self.horizon

    @property
    def n_y(self) -> int:
        return self.y_past.shape[0] // self.t_ini

    def stacked(self) -> np.ndarray:
        """All four blocks stacked vertically (past over future)."""
        return np.vstack([self.u_past, self.y_past, self.u_future, self.y_future])

    def past_future_input_stack(self) -> np.ndarray:
        """[u_past; y_past; u_future], the regressor block used by the
        least-squares predictor and the projector regularizer."""
        return np.vstack([self.u_past, self.y_past, self.u_future])


@dataclass(frozen=True)
class Projector:
    """Regularization metric M_reg; in projector mode also the projector Pi
    onto the row space of [u_past; y_past; u_future]."""

    m_reg: np.ndarray
    pi: np.ndarray | None = None

    @property
    def mode(self) -> str:
        return "identity" if self.pi is None else "projector"


def _window_block(series: np.ndarray, start: int, length: int, t_cols: int) -> np.ndarray:
    width = series.shape[1]
    block = np.empty((length * width, t_cols))
    for i in range(length):
        block[i * width : (i + 1) * width, :] = series[start + i : start + i + t_cols].T
    return block


def build_hankel(data: ExperimentData, t_ini: int, horizon: int) -> HankelSet:
    """Carve the four block Hankel matrices out of one record.

    Raises:
        ValueError: if the record is shorter than t_ini + horizon + 1.
    """
    if t_ini < 1 or horizon < 1:
        raise ValueError("t_ini and horizon must be positive")
    t_cols = len(data) - t_ini - horizon
    if t_cols < 1:
        raise ValueError(
            f"record of length {len(data)} too short for t_ini={t_ini}, horizon={horizon} "
            f"(needs at least {t_ini + horizon + 1} samples)"
        )
    return HankelSet(
        u_past=_window_block(data.inputs, 0, t_ini, t_cols),
        y_past=_window_block(data.outputs, 1, t_ini, t_cols),
        u_future=_window_block(data.inputs, t_ini, horizon, t_cols),
        y_future=_window_block(data.outputs, t_ini + 1, horizon, t_cols),
        t_ini=t_ini,
        horizon=horizon,
    )


def check_pe_length(t_cols: int, n: int, n_u: int, t_ini: int, horizon: int):
    """Persistency-of-excitation column-count gate.

    Returns:
        (passed, bound) with bound = (n_u + 1) * (t_ini + horizon + n) - 1.
    """
    bound = (n_u + 1) * (t_ini + horizon + n) - 1
    return t_cols >= bound, bound


def check_regularizer_length(t_cols: int, t_ini: int, n_u: int, n_y: int, horizon: int):
    """Column-count gate for the projector regularizer.

    Returns:
        (passed, bound) with bound = t_ini * (n_u + n_y) + horizon * n_u.
    """
    bound = t_ini * (n_u + n_y) + horizon * n_u
    return t_cols >= bound, bound


def check_full_row_rank(h: HankelSet, rcond: float = linalg.DEFAULT_RCOND):
    """Numerical-rank report for the full four-block stack.

    Returns:
        (passed, rank) where passed means rank equals the row count.
    """
    stack = h.stacked()
    rank = linalg.numerical_rank(stack, rcond=rcond)
    return rank == stack.shape[0], rank


def build_projector(h: HankelSet, mode: str = "projector") -> Projector:
    """Build the regularization metric for the combination-vector cost.

    mode="projector": Pi = pinv(S) S with S = [u_past; y_past; u_future] and
    M_reg = (I - Pi)^T (I - Pi), which penalizes only the component of g
    orthogonal to the row space of S. Requires the regularizer length gate.

    mode="identity": M_reg = I (plain ||g||^2 penalty).
    """
    if mode == "identity":
        return Projector(m_reg=np.eye(h.t_cols))
    if mode != "projector":
        raise ValueError(f"unknown projector mode {mode!r}")
    ok, bound = check_regularizer_length(h.t_cols, h.t_ini, h.n_u, h.n_y, h.horizon)
    if not ok:
        raise ValueError(
            f"projector regularizer needs t_cols >= {bound}, got {h.t_cols}"
        )
    s = h.past_future_input_stack()
    pi = linalg.pinv(s) @ s
    residual = np.eye(h.t_cols) - pi
    return Projector(m_reg=residual.T @ residual, pi=pi)
