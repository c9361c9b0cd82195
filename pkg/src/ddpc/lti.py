"""Discrete-time LTI plant simulation, excitation signals and the built-in
Boeing 747 longitudinal-motion benchmark.

Conventions used throughout the package:
  * the state updates as x(k+1) = A x(k) + B u(k),
  * the measurement y(k) = C x(k) + w(k) is taken from the pre-update state,
    so outputs[k] of a simulated record is sampled before inputs[k] acts,
  * w ~ N(0, sigma_w^2 I) with w identically zero when the variance is zero
    (no generator draws are consumed in the noise-free case).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearSystem:
    """State-space model (A, B, C) with output-noise variance sigma_w^2.

    Instances are immutable and safe to share between threads.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "A", np.array(self.A, dtype=float))
        object.__setattr__(self, "B", np.array(self.B, dtype=float))
        object.__setattr__(self, "C", np.array(self.C, dtype=float))
        a, b, c = self.A, self.B, self.C
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"A must be square, got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError(f"B must have {a.shape[0]} rows, got shape {b.shape}")
        if c.ndim != 2 or c.shape[1] != a.shape[0]:
            raise ValueError(f"C must have {a.shape[0]} columns, got shape {c.shape}")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def with_noise(self, noise_variance: float) -> "LinearSystem":
        return LinearSystem(self.A, self.B, self.C, noise_variance)


@dataclass(frozen=True)
class ExperimentData:
    """Recorded input/output sequences from one excitation experiment.

    inputs has shape (L, n_u), outputs shape (L, n_y); outputs[k] was measured
    before inputs[k] was applied.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    seed: int | None = None
    noise_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.atleast_2d(np.array(self.inputs, dtype=float)))
        object.__setattr__(self, "outputs", np.atleast_2d(np.array(self.outputs, dtype=float)))
        if len(self.inputs) != len(self.outputs):
            raise ValueError(
                f"inputs ({len(self.inputs)}) and outputs ({len(self.outputs)}) differ in length"
            )

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_y(self) -> int:
        return self.outputs.shape[1]

    def split(self, first_length: int) -> tuple["ExperimentData", "ExperimentData"]:
        """Split into two disjoint contiguous records (first_length, rest)."""
        if not 0 < first_length < len(self):
            raise ValueError(f"first_length must be in (0, {len(self)}), got {first_length}")
        head = ExperimentData(
            self.inputs[:first_length], self.outputs[:first_length], self.seed, self.noise_variance
        )
        tail = ExperimentData(
            self.inputs[first_length:], self.outputs[first_length:], self.seed, self.noise_variance
        )
        return head, tail


def simulate_step(sys: LinearSystem, x, u, rng: np.random.Generator | None = None):
    """One plant step: returns (next_state, noisy_output).

    The output is computed from the current state x before u acts.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise ValueError(f"state has dimension {x.shape[0]}, expected {sys.n}")
    if u.shape[0] != sys.n_u:
        raise ValueError(f"input has dimension {u.shape[0]}, expected {sys.n_u}")
    y = sys.C @ x
    if sys.noise_variance > 0.0:
        if rng is None:
            raise ValueError("rng is required when noise_variance > 0")
        y = y + np.sqrt(sys.noise_variance) * rng.standard_normal(sys.n_y)
    x_next = sys.A @ x + sys.B @ u
    return x_next, y


def simulate_sequence(
    sys: LinearSystem,
    x0,
    inputs,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> ExperimentData:
    """Run the plant over an input sequence, recording outputs before inputs."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.size == 0:
        inputs = inputs.reshape(0, sys.n_u)
    if inputs.shape[1] != sys.n_u:
        raise ValueError(f"inputs have {inputs.shape[1]} channels, expected {sys.n_u}")
    x = np.asarray(x0, dtype=float).reshape(-1)
    outputs = np.empty((len(inputs), sys.n_y))
    for k in range(len(inputs)):
        x, outputs[k] = simulate_step(sys, x, inputs[k], rng)
    return ExperimentData(inputs, outputs, seed=seed, noise_variance=sys.noise_variance)


def generate_prbs(length: int, amplitude: float, n_u: int, rng: np.random.Generator) -> np.ndarray:
    """Two-level excitation: each channel independently takes values in {-a, +a}."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if amplitude <= 0:
        raise ValueError(f"amplitude must be > 0, got {amplitude}")
    signs = np.where(rng.random((length, n_u)) < 0.5, -1.0, 1.0)
    return amplitude * signs


def boeing747_benchmark(noise_variance: float = 0.0) -> LinearSystem:
    """Longitudinal Boeing 747 flight model, discretized at Ts = 0.1 s.

    Two inputs (throttle, elevator angle) and two outputs (longitudinal
    velocity, climb rate); n = 4.
    """
    a = np.array(
        [
            [0.9997, 0.0038, -0.0001, -0.0322],
            [-0.0056, 0.9648, 0.7446, 0.0001],
            [0.0020, -0.0097, 0.9543, -0.0000],
            [0.0001, -0.0005, 0.0978, 1.0000],
        ]
    )
    b = np.array(
        [
            [0.0010, 0.1000],
            [-0.0615, 0.0183],
            [-0.1133, 0.0586],
            [-0.0057, 0.0029],
        ]
    )
    c = np.array(
        [
            [1.0000, 0.0, 0.0, 0.0],
            [0.0, -1.0000, 0.0, 7.7400],
        ]
    )
    return LinearSystem(a, b, c, noise_variance)


def steady_state(sys: LinearSystem, r_y) -> tuple[np.ndarray, np.ndarray]:
    """Solve for (x_ss, u_ss) with x_ss = A x_ss + B u_ss and C x_ss = r_y.

    Requires n_u == n_y; raises if the stacked system is singular.
    """
    r_y = np.asarray(r_y, dtype=float).reshape(-1)
    if sys.n_u != sys.n_y:
        raise ValueError("steady_state needs as many inputs as outputs")
    k = np.block(
        [
            [sys.A - np.eye(sys.n), sys.B],
            [sys.C, np.zeros((sys.n_y, sys.n_u))],
        ]
    )
    rhs = np.concatenate([np.zeros(sys.n), r_y])
    sol, residual, rank, _ = np.linalg.lstsq(k, rhs, rcond=None)
    if rank < k.shape[1] or np.linalg.norm(k @ sol - rhs) > 1e-8 * max(1.0, np.linalg.norm(rhs)):
        raise ValueError("no steady state exists for the requested output reference")
    return sol[: sys.n], sol[sys.n :]


_FLOAT_FMT = "%.17g"


def save_experiment_csv(data: ExperimentData, path) -> None:
    """Write a dataset as k,u1..u{n_u},y1..y{n_y} rows at full precision."""
    header = ["k"]
    header += [f"u{i + 1}" for i in range(data.n_u)]
    header += [f"y{i + 1}" for i in range(data.n_y)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(data)):
            row = [str(k)]
            row += [_FLOAT_FMT % v for v in data.inputs[k]]
            row += [_FLOAT_FMT % v for v in data.outputs[k]]
            writer.writerow(row)


def load_experiment_csv(path) -> ExperimentData:
    """Read a dataset written by save_experiment_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_u = sum(1 for name in header if name.startswith("u"))
        n_y = sum(1 for name in header if name.startswith("y"))
        inputs, outputs = [], []
        for row in reader:
            vals = [float(v) for v in row[1:]]
            inputs.append(vals[:n_u])
            outputs.append(vals[n_u : n_u + n_y])
    return ExperimentData(np.array(inputs).reshape(-1, n_u), np.array(outputs).reshape(-1, n_y))
