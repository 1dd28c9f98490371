"""Closed-loop data-enabled predictive control.

Sequential instrumental-variable output predictors, their equivalence with
closed-loop subspace predictive control, a DeePC baseline, an oracle MPC, and
a seeded benchmark simulation harness.
"""

from .controllers import CLDeePCController, DeePCIvController, OracleMpc, make_controller
from .experiments import (
    ExperimentConfig,
    MetricsReport,
    bias_analysis,
    correlation_analysis,
    correlation_experiment,
    emit_report,
    estimate_future_input_map,
    j_rms,
    run_tracking,
    square_wave_reference,
    sweep,
)
from .matrices import (
    BlockHankel,
    PsiMatrix,
    ToeplitzSet,
    block_hankel,
    block_toeplitz,
    data_equation_residual,
    extended_controllability,
    extended_observability,
    pe_order_check,
    psi,
    toeplitz_set,
)
from .plant import (
    ControlLoopError,
    NoiseProcess,
    SignalLog,
    StateSpaceModel,
    benchmark_system,
    run_closed_loop,
    simulate_open_loop,
    step_innovation,
    step_predictor,
)
from .predictors import (
    IllConditionedWindow,
    IvCorrelations,
    IvDataset,
    OneStepCoeffs,
    PredictorMatrices,
    PredictorTilde,
    assemble_tilde,
    build_dataset,
    clspc_assemble,
    clspc_fit,
    correlations,
    deepc_iv_matrices,
    deepc_iv_predict,
    fit_one_step,
    min_norm_g,
    predict,
    solve_final,
    unified_cl_deepc,
)
from .qp import (
    BoxConstraints,
    ControlDecision,
    ControllerWeights,
    QpProblem,
    QpSolveError,
    build_tracking_qp,
    kkt_residual,
    oracle_mpc_step,
    soften_and_resolve,
    solve_qp,
)

__version__ = "0.1.0"
