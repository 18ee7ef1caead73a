"""Monte Carlo approximation of stationary diffusion laws.

One decreasing-step trajectory explores the invariant regime of an ergodic
diffusion; gamma-weighted averages of stopped path functionals along its
shifts converge to the stationary expectation at rate 1/sqrt(Gamma_n), and
the package verifies the Gaussian limit experimentally.
"""

from .stepgrid import StepSchedule, ScheduleReport, check_conditions, schedule_from_config
from .streams import GaussianStream
from .schemes import (
    AnalyticExtras,
    CirParams,
    DiffusionModel,
    LyapunovReport,
    PoissonSolution,
    SchemeBlowUpError,
    SchemeState,
    bs_log_model,
    check_poisson_solution,
    cir_model,
    cir_reflected_step,
    euler_step,
    genuine_interpolate,
    heston_logprice_step,
    lyapunov_grid_check,
    make_model,
    ou_exact_step,
    ou_model,
)
from .pathfun import (
    PathFunctional,
    PathWindow,
    SlidingMax,
    WindowCoverageError,
    WindowView,
    barrier_payoff,
    bridge_sup_cdf,
    bridge_sup_sample,
    eval_stopped,
    make_functional,
)
from .empirical import AccumulatorSnapshot, EmpiricalAccumulator, marginal_average, on_step
from .cltlab import (
    CltExperiment,
    CovarianceCurve,
    FunctionalOracle,
    NormalityStats,
    ScheduleConditionError,
    constant_oracle,
    kernel_density,
    ks_critical,
    marginal_sigma2,
    normality_stats,
    ou_marginal_start_oracle,
    ou_terminal_oracle,
    run_clt_experiment,
    sigma2_conditional_form,
    sigma2_covariance_form,
)
from .heston import (
    DEFAULT_CONFIG,
    REFERENCE_PRICE,
    HestonConfig,
    bs_barrier_price,
    bs_vanilla_call,
    compute_reference_price,
    mc_bs_barrier_oracle,
    price_stationary_heston,
    run_figure1,
    sample_stationary_v,
)

__version__ = "0.1.0"
