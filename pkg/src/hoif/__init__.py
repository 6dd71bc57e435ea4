"""Bias diagnostics for doubly robust ML estimators via higher-order
influence functions: point corrections, assumption-light bias tests,
coverage upper confidence bounds, and the simulation harness behind them."""

from .adaptive import AdaptiveConfig, AdaptiveReport, run_adaptive, run_adaptive_covariance
from .audit import BiasAudit
from .covariance import (
    PrecisionPlan,
    empirical_precision,
    oracle_precision,
    shrink_precision,
    svd_precision,
)
from .dgp import DgpSpec, ObservationSet, generate_dataset, make_holder_function, oracle_projection
from .drml import CorrectedEstimate, Psi1Estimate, cross_fit, psi1, psi2k, psi_mk
from .harness import StudySpec, StudyResult, emit_tables, preset_spec, run_study
from .inference import CoverageBound, TestOutcome, bias_test, cs_test, sequential_m_tests, tc_alpha, ucb
from .kernels import KernelCache
from .nuisance import KernelRegression, ResidualSet, fit_kernel_cv, ingest_fitted_values, residuals
from .sequential import KGridPlan, SequentialReport, pairwise_test, run_sequential
from .ustat import (
    UStatReport,
    bootstrap_variance,
    if22,
    if22_debiased_reference,
    if22_difference_se,
    if22_quasi,
    if33,
    if44_cs,
    if_mm,
    variance_corrected,
    variance_uncorrected,
)
from .wavelets import BasisFamily, WaveletTable, build_basis_family, build_wavelet_table, eval_basis

__version__ = "0.1.0"
