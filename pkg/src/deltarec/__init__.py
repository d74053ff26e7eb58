"""Counting process of δ-records for i.i.d. observations on the non-negative integers."""

from deltarec.counter import CounterState, StepOutcome, martingale_residual, new_counter, run_stream, step
from deltarec.distributions import (
    DiscreteModel,
    Geometric,
    NegativeBinomial,
    Poisson,
    TabulatedPmf,
    TabulatedRates,
    Zeta,
    parse_model,
)
from deltarec.hazard import (
    HazardTable,
    build_hazard,
    cond_moment_oracle,
    cond_var_increment,
    cond_var_increments,
    e_product,
    theta_inverse,
)
from deltarec.minima import MinimaSpec, deheuvels_diagnostics, g_inverse, h_log, simulate_partial_minima
from deltarec.montecarlo import (
    ExperimentConfig,
    ExperimentReport,
    ks_statistic,
    moments,
    run_experiment,
    trend_check,
)
from deltarec.normalizers import (
    NormalizerPlan,
    centering,
    make_plan,
    poisson_special,
    scaling_thm31a,
    scaling_thm31b,
    scaling_thm41,
    sigma_r,
)
from deltarec.rng import RngState

__version__ = "0.1.0"

__all__ = [
    "CounterState", "StepOutcome", "martingale_residual", "new_counter", "run_stream", "step",
    "DiscreteModel", "Geometric", "NegativeBinomial", "Poisson", "TabulatedPmf", "TabulatedRates",
    "Zeta", "parse_model",
    "HazardTable", "build_hazard", "cond_moment_oracle", "cond_var_increment", "cond_var_increments", "e_product",
    "theta_inverse",
    "MinimaSpec", "deheuvels_diagnostics", "g_inverse", "h_log", "simulate_partial_minima",
    "ExperimentConfig", "ExperimentReport", "ks_statistic", "moments", "run_experiment",
    "trend_check",
    "NormalizerPlan", "centering", "make_plan", "poisson_special", "scaling_thm31a",
    "scaling_thm31b", "scaling_thm41", "sigma_r",
    "RngState",
]
