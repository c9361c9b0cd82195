"""Data-driven predictive control toolkit.

Implements and cross-compares subspace predictive control (SPC), data-enabled
predictive control (DeePC) and generalized data-driven predictive control
(GDPC) on desk-scale LTI benchmarks, including data collection, Hankel and
least-squares predictors, a condensed QP solver, closed-loop simulation with
stability monitoring, and a Boeing 747 benchmark harness.
"""

from ._kernel import BACKEND as KERNEL_BACKEND
from .controllers import (
    ControllerConfig,
    ControllerState,
    DeepcController,
    GdpcController,
    QpInfeasibleError,
    ReferenceSchedule,
    SpcController,
    advance_windows,
    init_controller,
    shift_sequence,
)
from .hankel import (
    HankelSet,
    Projector,
    build_hankel,
    build_projector,
    check_full_row_rank,
    check_pe_length,
    check_regularizer_length,
)
from .harness import (
    CheckFailure,
    ConfigError,
    RunConfig,
    RunRecord,
    StabilityMonitor,
    compare_runs,
    compute_metrics,
    run_closed_loop,
)
from .lti import (
    ExperimentData,
    LinearSystem,
    boeing747_benchmark,
    generate_prbs,
    simulate_sequence,
    simulate_step,
    steady_state,
)
from .predictor import (
    ArxModel,
    SpcGain,
    ThetaPredictor,
    build_spc_gain,
    fit_arx,
    fit_theta,
    predict_base_output,
    unconstrained_spc,
)
from .qp import (
    BoxBounds,
    BoxQpSolver,
    CondensedQP,
    CostWeights,
    QpSolution,
    SolverSettings,
    condense_deepc,
    condense_gdpc,
    solve_qp,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
