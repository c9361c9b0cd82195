"""Experiment orchestration: run configuration, excitation and warm-up
phases, closed-loop simulation with stability monitoring, performance
metrics, Monte-Carlo comparisons and CSV persistence.

Randomness discipline: every run derives four independent generator streams
from its seed (excitation inputs, excitation measurement noise, warm-up
inputs, plant measurement noise). The warm-up inputs and the closed-loop
noise realization therefore depend only on the seed, not on the controller,
which makes controller comparisons share identical pre-start excitation and
disturbances.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import hankel as hk
from .controllers import (
    BASE_SHIFT,
    BASE_SPC,
    ControllerConfig,
    ControllerState,
    DeepcController,
    GdpcController,
    ReferenceSchedule,
    SpcController,
    init_controller,
)
from .lti import (
    ExperimentData,
    LinearSystem,
    boeing747_benchmark,
    generate_prbs,
    simulate_step,
    steady_state,
)
from .predictor import ArxModel, ThetaPredictor, fit_arx, fit_theta
from .qp import BoxBounds, CostWeights

_FMT = "%.17g"

CONTROLLERS = ("gdpc-shift", "gdpc-spc", "deepc", "spc")


class ConfigError(ValueError):
    """Malformed run configuration; the message names the offending field."""


class CheckFailure(RuntimeError):
    """A data-length or rank gate failed; the message names the check."""


@dataclass
class RunConfig:
    model: str | dict = "boeing747"
    noise_variance: float = 0.0
    seed: int = 0
    t_max: int = 300
    t_ini: int = 20
    horizon: int = 20
    data_cols: int = 1000
    data_cols_g: int = 150
    controller: str = "gdpc-shift"
    q_weight: float | list = 10.0
    r_weight: float | list = 0.01
    alpha: float = 1.0
    lambda_g: float = 1e5
    lambda_sigma: float = 1e7
    regularizer: str | None = None
    tail_rule: str = "repeat_last"
    u_bounds: list | None = None
    y_bounds: list | None = None
    prbs_amplitude: float = 3.0
    warmup_amplitude: float = 0.1
    references: list | None = None
    eps_rho: float = 0.01
    solver_tol: float = 1e-8
    solver_max_iter: int = 4000
    soften_output_box: bool = False
    rank_check: str = "report"
    x0: list | None = None

    _FIELD_TYPES = {
        "noise_variance": (int, float), "seed": (int,), "t_max": (int,),
        "t_ini": (int,), "horizon": (int,), "data_cols": (int,), "data_cols_g": (int,),
        "alpha": (int, float), "lambda_g": (int, float), "lambda_sigma": (int, float),
        "prbs_amplitude": (int, float), "warmup_amplitude": (int, float),
        "eps_rho": (int, float), "solver_tol": (int, float), "solver_max_iter": (int,),
        "soften_output_box": (bool,),
    }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration root must be a JSON object")
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        cfg_kwargs = {}
        for key, value in raw.items():
            if key == "compare":
                continue
            if key not in known:
                raise ConfigError(f"unknown configuration field: {key!r}")
            cfg_kwargs[key] = value
        cfg = cls(**cfg_kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name, types in self._FIELD_TYPES.items():
            value = getattr(self, name)
            if isinstance(value, bool) and bool not in types:
                raise ConfigError(f"field {name!r} has invalid type bool")
            if not isinstance(value, types):
                raise ConfigError(f"field {name!r} has invalid type {type(value).__name__}")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"field 'controller' must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.noise_variance < 0:
            raise ConfigError("field 'noise_variance' must be >= 0")
        if self.t_max <= self.t_ini:
            raise ConfigError("field 't_max' must exceed 't_ini'")
        if self.horizon < self.t_ini:
            raise ConfigError("field 'horizon' must be at least 't_ini'")
        if self.regularizer not in (None, "projector", "identity"):
            raise ConfigError(f"field 'regularizer' must be 'projector' or 'identity', got {self.regularizer!r}")
        if self.rank_check not in ("report", "enforce"):
            raise ConfigError("field 'rank_check' must be 'report' or 'enforce'")
        if self.tail_rule not in ("repeat_last", "r_u"):
            raise ConfigError("field 'tail_rule' must be 'repeat_last' or 'r_u'")
        if isinstance(self.model, str) and self.model != "boeing747":
            raise ConfigError(f"field 'model' names unknown builtin {self.model!r}")
        if isinstance(self.model, dict):
            for key in ("A", "B", "C"):
                if key not in self.model:
                    raise ConfigError(f"field 'model' is missing matrix {key!r}")
        if self.references is not None:
            for i, entry in enumerate(self.references):
                if not isinstance(entry, dict) or not {"k", "r_y", "r_u"} <= set(entry):
                    raise ConfigError(f"field 'references[{i}]' must have keys k, r_y, r_u")

    # -- derived objects --------------------------------------------------

    def system(self) -> LinearSystem:
        if isinstance(self.model, str):
            return boeing747_benchmark(self.noise_variance)
        return LinearSystem(
            np.array(self.model["A"], dtype=float),
            np.array(self.model["B"], dtype=float),
            np.array(self.model["C"], dtype=float),
            self.noise_variance,
        )

    def weight_matrix(self, raw, n: int, name: str) -> np.ndarray:
        if isinstance(raw, (int, float)):
            return float(raw) * np.eye(n)
        mat = np.array(raw, dtype=float)
        if mat.shape != (n, n):
            raise ConfigError(f"field {name!r} must be scalar or {n}x{n}")
        return mat

    def cost_weights(self, sys: LinearSystem) -> CostWeights:
        return CostWeights(
            q_mat=self.weight_matrix(self.q_weight, sys.n_y, "q_weight"),
            r_mat=self.weight_matrix(self.r_weight, sys.n_u, "r_weight"),
            alpha=self.alpha,
            lambda_g=self.lambda_g,
            lambda_sigma=self.lambda_sigma,
        )

    def box_bounds(self, sys: LinearSystem) -> BoxBounds:
        if self.u_bounds is None and isinstance(self.model, str):
            u_lb, u_ub = [-20.0, -20.0], [20.0, 20.0]
        elif self.u_bounds is None:
            u_lb, u_ub = [-math.inf] * sys.n_u, [math.inf] * sys.n_u
        else:
            u_lb, u_ub = self.u_bounds
        if self.y_bounds is None and isinstance(self.model, str):
            y_lb, y_ub = [-25.0, -15.0], [25.0, 15.0]
        elif self.y_bounds is None:
            y_lb, y_ub = [-math.inf] * sys.n_y, [math.inf] * sys.n_y
        else:
            y_lb, y_ub = self.y_bounds
        return BoxBounds(u_lb, u_ub, y_lb, y_ub)

    def schedule(self, sys: LinearSystem) -> ReferenceSchedule:
        if self.references is None:
            # default benchmark schedule: step to a mid-range output at
            # t_ini, back to the origin halfway through (not ground truth)
            if sys.n_y == 2:
                mid = np.array([12.5, 7.5])
            else:
                mid = np.zeros(sys.n_y)
            return ReferenceSchedule.from_steps([
                (self.t_ini, mid, np.zeros(sys.n_u)),
                (self.t_max // 2, np.zeros(sys.n_y), np.zeros(sys.n_u)),
            ])
        return ReferenceSchedule.from_steps(
            [(e["k"], np.array(e["r_y"], dtype=float), np.array(e["r_u"], dtype=float))
             for e in self.references]
        )

    def regularizer_mode(self) -> str | None:
        if self.regularizer is not None:
            return self.regularizer
        return {"gdpc-shift": "projector", "gdpc-spc": "identity",
                "deepc": "projector", "spc": None}[self.controller]

    def controller_config(self, sys: LinearSystem) -> ControllerConfig:
        return ControllerConfig(
            t_ini=self.t_ini,
            horizon=self.horizon,
            weights=self.cost_weights(sys),
            bounds=self.box_bounds(sys),
            schedule=self.schedule(sys),
            base_mode=BASE_SPC if self.controller == "gdpc-spc" else BASE_SHIFT,
            regularizer=self.regularizer_mode() or "projector",
            tail_rule=self.tail_rule,
            solver_tol=self.solver_tol,
            solver_max_iter=self.solver_max_iter,
            soften_output_box=self.soften_output_box,
        )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return RunConfig.from_dict(raw)


def _streams(seed: int):
    """Named deterministic generator streams for one run."""
    children = np.random.SeedSequence(seed).spawn(4)
    return {
        "excitation": np.random.default_rng(children[0]),
        "excitation_noise": np.random.default_rng(children[1]),
        "warmup": np.random.default_rng(children[2]),
        "plant": np.random.default_rng(children[3]),
    }


# -- data collection and gate checks --------------------------------------


def collect_excitation(cfg: RunConfig, sys: LinearSystem, rng_in, rng_noise):
    """PRBS experiment(s) for the predictors; one record, split when the
    controller needs two Hankel sets."""
    need_two = cfg.controller.startswith("gdpc")
    len_large = cfg.data_cols + cfg.t_ini + cfg.horizon
    len_small = cfg.data_cols_g + cfg.t_ini + cfg.horizon if need_two else 0
    prbs = generate_prbs(len_large + len_small, cfg.prbs_amplitude, sys.n_u, rng_in)
    x = np.zeros(sys.n)
    outputs = np.empty((len(prbs), sys.n_y))
    for k in range(len(prbs)):
        x, outputs[k] = simulate_step(sys, x, prbs[k], rng_noise)
    record = ExperimentData(prbs, outputs, seed=cfg.seed, noise_variance=sys.noise_variance)
    if need_two:
        return record.split(len_large)
    return record, None


def check_config(cfg: RunConfig, sys=None, data=None):
    """Evaluate the data-length and rank gates; returns a report list.

    Each entry is (check_name, value, bound, passed, enforced). With
    data=None the rank checks are computed on freshly collected data.
    """
    sys = sys or cfg.system()
    streams = _streams(cfg.seed)
    if data is None:
        data = collect_excitation(cfg, sys, streams["excitation"], streams["excitation_noise"])
    large, small = data
    report = []

    def gate(name, value, bound, enforced=True):
        report.append((name, value, bound, value >= bound, enforced))

    gate("pe_length_large", cfg.data_cols, hk.check_pe_length(
        cfg.data_cols, sys.n, sys.n_u, cfg.t_ini, cfg.horizon)[1])
    reg_mode = cfg.regularizer_mode()
    if cfg.controller.startswith("gdpc"):
        gate("pe_length_small", cfg.data_cols_g, hk.check_pe_length(
            cfg.data_cols_g, sys.n, sys.n_u, cfg.t_ini, cfg.horizon)[1])
        if reg_mode == "projector":
            gate("regularizer_length_small", cfg.data_cols_g, hk.check_regularizer_length(
                cfg.data_cols_g, cfg.t_ini, sys.n_u, sys.n_y, cfg.horizon)[1])
    elif cfg.controller == "deepc" and reg_mode == "projector":
        gate("regularizer_length_large", cfg.data_cols, hk.check_regularizer_length(
            cfg.data_cols, cfg.t_ini, sys.n_u, sys.n_y, cfg.horizon)[1])

    enforce_rank = cfg.rank_check == "enforce"
    h_large = hk.build_hankel(large, cfg.t_ini, cfg.horizon)
    ok, rank = hk.check_full_row_rank(h_large)
    report.append(("full_row_rank_large", rank, h_large.stacked().shape[0], ok, enforce_rank))
    if small is not None:
        h_small = hk.build_hankel(small, cfg.t_ini, cfg.horizon)
        ok, rank = hk.check_full_row_rank(h_small)
        report.append(("full_row_rank_small", rank, h_small.stacked().shape[0], ok, enforce_rank))
    return report


def _assert_gates(report):
    for name, value, bound, passed, enforced in report:
        if enforced and not passed:
            raise CheckFailure(f"check {name} failed: value {value} below bound {bound}")


# -- stability monitoring --------------------------------------------------


class StabilityMonitor:
    """Terminal-condition and storage/supply dissipation diagnostics.

    The stage cost is l(y, u) = |Q^(1/2)(y - r_y)|^2 + |R^(1/2)(u - r_u)|^2
    at the current step's references; the terminal cost weighs outputs only,
    scaled by alpha. The finite-window model forecasts the output one step
    past the horizon from the tails of the predicted sequences.
    """

    ATOL = 1e-9

    def __init__(self, arx: ArxModel, q_mat, r_mat, alpha: float, eps_rho: float,
                 tail_rule: str, t_ini: int, horizon: int):
        self.arx = arx
        self.q_mat = np.atleast_2d(q_mat)
        self.r_mat = np.atleast_2d(r_mat)
        self.alpha = alpha
        self.eps_rho = eps_rho
        self.tail_rule = tail_rule
        self.t_ini = t_ini
        self.horizon = horizon
        self.u_hist: list[np.ndarray] = []
        self.y_hist: list[np.ndarray] = []
        self._prev_v: float | None = None
        self._prev_supply: float | None = None

    def seed_history(self, warmup: ExperimentData) -> None:
        for k in range(len(warmup)):
            self.u_hist.append(np.array(warmup.inputs[k]))
            self.y_hist.append(np.array(warmup.outputs[k]))

    def stage_cost(self, y, u, r_y, r_u) -> float:
        dy = np.asarray(y, dtype=float) - r_y
        du = np.asarray(u, dtype=float) - r_u
        return float(dy @ self.q_mat @ dy + du @ self.r_mat @ du)

    def _terminal_forecast(self, diag, r_u):
        """Forecast y one step past the horizon and pick the tail input."""
        n = self.horizon
        y_tail = diag.y_star[n - self.t_ini:]
        if self.tail_rule == "r_u":
            tail_u = np.asarray(r_u, dtype=float)
        else:
            tail_u = diag.u_star[-1]
        u_tail = np.vstack([diag.u_star[n - self.t_ini + 1:], tail_u.reshape(1, -1)])
        return self.arx.predict_next(y_tail, u_tail), tail_u

    def update(self, k: int, measured_y, applied_u, diag, r_y, r_u) -> dict:
        """Advance the monitor by one closed-loop step.

        Called after the controller computed its step and before the history
        gains the new sample; returns the per-step monitor row.
        """
        r_y = np.asarray(r_y, dtype=float)
        r_u = np.asarray(r_u, dtype=float)
        y_old = self.y_hist[-self.t_ini]
        u_old = self.u_hist[-self.t_ini]
        l_old = self.stage_cost(y_old, u_old, r_y, r_u)

        y_next, tail_u = self._terminal_forecast(diag, r_u)
        l_terminal = self.stage_cost(y_next, tail_u, r_y, r_u)
        margin = self.eps_rho * l_old - l_terminal
        terminal_ok = l_terminal - self.eps_rho * l_old <= self.ATOL

        # optimal-cost part of the storage function, including the current
        # measurement's output term (constant w.r.t. the decision, so the
        # solver dropped it)
        dy0 = np.asarray(measured_y, dtype=float) - r_y
        j_star = float(dy0 @ self.q_mat @ dy0)
        for i in range(self.horizon):
            du = diag.u_star[i] - r_u
            j_star += float(du @ self.r_mat @ du)
        for i in range(self.horizon - 1):
            dy = diag.y_star[i] - r_y
            j_star += float(dy @ self.q_mat @ dy)
        dy_n = diag.y_star[-1] - r_y
        j_star += self.alpha * float(dy_n @ self.q_mat @ dy_n)

        w_val = 0.0
        for i in range(1, self.t_ini + 1):
            w_val += self.stage_cost(self.y_hist[-i], self.u_hist[-i], r_y, r_u)
        v_val = j_star + w_val
        supply = l_terminal - l_old

        diss_slack = float("nan")
        if self._prev_v is not None:
            diss_slack = v_val - self._prev_v - self._prev_supply
        self._prev_v = v_val
        self._prev_supply = supply

        self.u_hist.append(np.asarray(applied_u, dtype=float))
        self.y_hist.append(np.asarray(measured_y, dtype=float))
        return {
            "terminal_ok": terminal_ok,
            "terminal_margin": margin,
            "terminal_lhs": l_terminal,
            "storage_v": v_val,
            "supply_s": supply,
            "diss_slack_prev": diss_slack,
        }


# -- closed loop -----------------------------------------------------------


@dataclass
class RunRecord:
    rows: list
    summary: dict
    config: RunConfig
    check_report: list = field(default_factory=list)


def build_controller(cfg: RunConfig, sys: LinearSystem, large: ExperimentData,
                     small: ExperimentData | None):
    """Fit predictors, build Hankel sets and instantiate the controller."""
    ctrl_cfg = cfg.controller_config(sys)
    h_large = hk.build_hankel(large, cfg.t_ini, cfg.horizon)
    theta = fit_theta(h_large) if cfg.controller != "deepc" else None
    arx = fit_arx(large, cfg.t_ini)
    if cfg.controller == "spc":
        return SpcController(ctrl_cfg, theta), ctrl_cfg, arx, h_large, None
    if cfg.controller == "deepc":
        projector = hk.build_projector(h_large, cfg.regularizer_mode())
        return DeepcController(ctrl_cfg, h_large, projector), ctrl_cfg, arx, h_large, None
    h_small = hk.build_hankel(small, cfg.t_ini, cfg.horizon)
    projector = hk.build_projector(h_small, cfg.regularizer_mode())
    return (GdpcController(ctrl_cfg, h_small, theta, projector), ctrl_cfg, arx,
            h_large, h_small)


def run_closed_loop(cfg: RunConfig) -> RunRecord:
    """Excite, fit, warm up and run the selected controller to t_max."""
    cfg.validate()
    sys = cfg.system()
    streams = _streams(cfg.seed)
    large, small = collect_excitation(cfg, sys, streams["excitation"],
                                      streams["excitation_noise"])
    report = check_config(cfg, sys, (large, small))
    _assert_gates(report)
    controller, ctrl_cfg, arx, h_large, h_small = build_controller(cfg, sys, large, small)

    x = np.zeros(sys.n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    warm_inputs = streams["warmup"].uniform(-cfg.warmup_amplitude, cfg.warmup_amplitude,
                                            (cfg.t_ini, sys.n_u))
    warm_outputs = np.empty((cfg.t_ini, sys.n_y))
    for k in range(cfg.t_ini):
        x, warm_outputs[k] = simulate_step(sys, x, warm_inputs[k], streams["plant"])
    warmup = ExperimentData(warm_inputs, warm_outputs, seed=cfg.seed,
                            noise_variance=cfg.noise_variance)
    state = init_controller(ctrl_cfg, h_large, h_small, warmup)

    monitor = StabilityMonitor(arx, ctrl_cfg.weights.q_mat, ctrl_cfg.weights.r_mat,
                               cfg.alpha, cfg.eps_rho, cfg.tail_rule, cfg.t_ini, cfg.horizon)
    monitor.seed_history(warmup)

    rows = []
    sigma_w = math.sqrt(cfg.noise_variance)
    for k in range(cfg.t_ini, cfg.t_max + 1):
        y_k = sys.C @ x
        if sigma_w > 0:
            y_k = y_k + sigma_w * streams["plant"].standard_normal(sys.n_y)
        state.push_measurement(y_k)
        u_k, diag = controller.step(state, k)
        mon = monitor.update(k, y_k, u_k, diag, diag.r_y, diag.r_u)
        if rows:
            rows[-1]["diss_slack"] = mon["diss_slack_prev"]
        rows.append({
            "k": k,
            "u": np.array(u_k), "y": np.array(y_k),
            "r_y": np.array(diag.r_y), "r_u": np.array(diag.r_u),
            "u_g": np.array(diag.u_g_first),
            "stage_cost": monitor.stage_cost(y_k, u_k, diag.r_y, diag.r_u),
            "qp_cost": diag.qp_objective,
            "g_norm": diag.g_norm, "sigma_norm": diag.sigma_norm,
            "qp_iterations": diag.qp_iterations,
            "solve_time_ms": diag.solve_time_ms,
            "qp_status": diag.qp_status,
            "terminal_ok": bool(mon["terminal_ok"]),
            "terminal_margin": mon["terminal_margin"],
            "storage_v": mon["storage_v"],
            "supply_s": mon["supply_s"],
            "diss_slack": float("nan"),
        })
        x = sys.A @ x + sys.B @ u_k
        state.push_input(u_k)

    record = RunRecord(rows=rows, summary={}, config=cfg, check_report=report)
    j_cost, j_u = compute_metrics(record)
    tail = max(1, int(math.ceil(0.1 * len(rows))))
    converged = all(
        float(np.linalg.norm(row["y"] - row["r_y"])) <= 1e-3 for row in rows[-tail:]
    )
    solve_times = [row["solve_time_ms"] for row in rows]
    record.summary = {
        "J": j_cost,
        "J_u": j_u,
        "mean_solve_ms": float(np.mean(solve_times)),
        "max_solve_ms": float(np.max(solve_times)),
        "converged": converged,
        "n_steps": len(rows),
    }
    return record


def compute_metrics(record: RunRecord):
    """Tracking cost J and input cost J_u from the recorded (simulated) data."""
    sys = record.config.system()
    q_mat = record.config.weight_matrix(record.config.q_weight, sys.n_y, "q_weight")
    r_mat = record.config.weight_matrix(record.config.r_weight, sys.n_u, "r_weight")
    j_cost = 0.0
    j_u = 0.0
    for row in record.rows:
        dy = row["y"] - row["r_y"]
        du = row["u"] - row["r_u"]
        j_cost += float(dy @ q_mat @ dy + du @ r_mat @ du)
        j_u += float(row["u"] @ row["u"])
    return j_cost, j_u


# -- comparisons ------------------------------------------------------------


DEFAULT_COMPARE = (
    {"name": "gdpc-shift-Tg150-T1000", "controller": "gdpc-shift",
     "data_cols": 1000, "data_cols_g": 150},
    {"name": "deepc-T500", "controller": "deepc", "data_cols": 500},
    {"name": "deepc-T150", "controller": "deepc", "data_cols": 150},
)


def compare_runs(base_cfg: RunConfig, variants=None, seeds=None):
    """Run a (variant x seed) sweep; returns (rows, aggregates).

    Individual failures become failed rows instead of aborting the sweep.
    """
    variants = list(variants) if variants is not None else [dict(v) for v in DEFAULT_COMPARE]
    seeds = list(seeds) if seeds is not None else [base_cfg.seed]
    rows = []
    for variant in variants:
        overrides = {k: v for k, v in variant.items() if k != "name"}
        name = variant.get("name") or overrides.get("controller", base_cfg.controller)
        for seed in seeds:
            cfg = replace(base_cfg, seed=int(seed), **overrides)
            try:
                record = run_closed_loop(cfg)
                rows.append({
                    "config": name, "seed": int(seed), "status": "ok",
                    "J": record.summary["J"], "J_u": record.summary["J_u"],
                    "mean_solve_ms": record.summary["mean_solve_ms"],
                    "max_solve_ms": record.summary["max_solve_ms"],
                    "converged": record.summary["converged"],
                })
            except Exception as exc:  # noqa: BLE001 - failures become rows
                rows.append({
                    "config": name, "seed": int(seed), "status": f"failed: {exc}",
                    "J": float("nan"), "J_u": float("nan"),
                    "mean_solve_ms": float("nan"), "max_solve_ms": float("nan"),
                    "converged": False,
                })
    aggregates = []
    for variant in variants:
        name = variant.get("name") or variant.get("controller", base_cfg.controller)
        good = [r for r in rows if r["config"] == name and r["status"] == "ok"]
        if good:
            j_vals = np.array([r["J"] for r in good])
            ju_vals = np.array([r["J_u"] for r in good])
            st_vals = np.array([r["mean_solve_ms"] for r in good])
            aggregates.append({
                "config": name, "runs": len(good),
                "median_J": float(np.median(j_vals)),
                "iqr_J": float(np.percentile(j_vals, 75) - np.percentile(j_vals, 25)),
                "median_J_u": float(np.median(ju_vals)),
                "mean_solve_ms": float(np.mean(st_vals)),
            })
        else:
            aggregates.append({
                "config": name, "runs": 0, "median_J": float("nan"),
                "iqr_J": float("nan"), "median_J_u": float("nan"),
                "mean_solve_ms": float("nan"),
            })
    rows.sort(key=lambda r: (r["config"], r["seed"]))
    return rows, aggregates


# -- CSV persistence --------------------------------------------------------


def _vector_headers(prefix: str, n: int):
    return [f"{prefix}{i + 1}" for i in range(n)]


def run_record_headers(n_u: int, n_y: int):
    return (
        ["k"]
        + _vector_headers("u", n_u) + _vector_headers("y", n_y)
        + _vector_headers("ry", n_y) + _vector_headers("ru", n_u)
        + _vector_headers("ug", n_u)
        + ["stage_cost", "qp_cost", "g_norm", "sigma_norm", "qp_iterations",
           "solve_time_ms", "qp_status", "terminal_ok", "terminal_margin",
           "storage_v", "supply_s", "diss_slack"]
    )


def save_run_record(record: RunRecord, path) -> None:
    """Write per-step rows to path and the summary to path + '.summary.csv'."""
    sys = record.config.system()
    headers = run_record_headers(sys.n_u, sys.n_y)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        for row in record.rows:
            out = [str(row["k"])]
            for key in ("u", "y", "r_y", "r_u", "u_g"):
                out += [_FMT % v for v in row[key]]
            out += [_FMT % row["stage_cost"], _FMT % row["qp_cost"],
                    _FMT % row["g_norm"], _FMT % row["sigma_norm"],
                    str(row["qp_iterations"]), _FMT % row["solve_time_ms"],
                    row["qp_status"], str(int(row["terminal_ok"])),
                    _FMT % row["terminal_margin"], _FMT % row["storage_v"],
                    _FMT % row["supply_s"], _FMT % row["diss_slack"]]
            writer.writerow(out)
    with open(str(path) + ".summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        keys = list(record.summary)
        writer.writerow(keys)
        writer.writerow([
            record.summary[k] if isinstance(record.summary[k], (int, bool))
            else _FMT % record.summary[k] for k in keys
        ])


def load_run_rows(path):
    """Read back the per-step rows written by save_run_record."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        headers = next(reader)
        n_u = sum(1 for name in headers if name.startswith("u") and name[1:].isdigit())
        n_y = sum(1 for name in headers if name.startswith("y") and name[1:].isdigit())
        rows = []
        for raw in reader:
            item = dict(zip(headers, raw))
            row = {
                "k": int(item["k"]),
                "u": np.array([float(item[f"u{i+1}"]) for i in range(n_u)]),
                "y": np.array([float(item[f"y{i+1}"]) for i in range(n_y)]),
                "r_y": np.array([float(item[f"ry{i+1}"]) for i in range(n_y)]),
                "r_u": np.array([float(item[f"ru{i+1}"]) for i in range(n_u)]),
                "u_g": np.array([float(item[f"ug{i+1}"]) for i in range(n_u)]),
            }
            for key in ("stage_cost", "qp_cost", "g_norm", "sigma_norm",
                        "solve_time_ms", "terminal_margin", "storage_v",
                        "supply_s", "diss_slack"):
                row[key] = float(item[key])
            row["qp_iterations"] = int(item["qp_iterations"])
            row["qp_status"] = item["qp_status"]
            row["terminal_ok"] = item["terminal_ok"] == "1"
            rows.append(row)
    return rows


def save_compare_csv(rows, aggregates, path) -> None:
    """Per-run rows at path, aggregates at path + '.aggregate.csv'."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "seed", "status", "J", "J_u",
                         "mean_solve_ms", "max_solve_ms", "converged"])
        for r in rows:
            writer.writerow([r["config"], r["seed"], r["status"],
                             _FMT % r["J"], _FMT % r["J_u"],
                             _FMT % r["mean_solve_ms"], _FMT % r["max_solve_ms"],
                             str(int(r["converged"]))])
    with open(str(path) + ".aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "runs", "median_J", "iqr_J", "median_J_u",
                         "mean_solve_ms"])
        for a in aggregates:
            writer.writerow([a["config"], a["runs"], _FMT % a["median_J"],
                             _FMT % a["iqr_J"], _FMT % a["median_J_u"],
                             _FMT % a["mean_solve_ms"]])
