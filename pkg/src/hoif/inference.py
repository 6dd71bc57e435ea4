"""Bias tests, coverage map, upper confidence bounds, sequential order tests.

The coverage map gives the actual asymptotic coverage of a nominal
(1 - alpha) Wald interval whose bias is delta standard errors:
Phi(z_{alpha/2} - delta) - Phi(-z_{alpha/2} - delta).  Tests compare the
standardized bias estimate, shrunk by a critical-value multiple of its own
standard error, against the tolerated fraction delta; inverting the test and
plugging into the coverage map yields the upper confidence bound.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .drml import Psi1Estimate
from .kernels import KernelCache
from .ustat import UStatReport, order_value, order_variance

__all__ = [
    "TestOutcome",
    "CoverageBound",
    "tc_alpha",
    "bias_test",
    "ucb",
    "cs_test",
    "sequential_m_tests",
]

MAX_SEQUENTIAL_M = 5
IMPLEMENTED_ORDER_CAP = 6


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    cutoff: float
    delta: float
    reject: bool
    sided: str
    k: int
    omega: float | None = None
    m: int | None = None

    def __post_init__(self):
        if self.reject != (self.statistic > self.delta):
            raise ValueError("outcome inconsistent with its own statistic")


@dataclass(frozen=True)
class CoverageBound:
    alpha: float
    omega: float
    ucb_value: float
    sided: str
    k: int

    def __post_init__(self):
        if not 0.0 <= self.ucb_value <= 1.0:
            raise ValueError("coverage bound must lie in [0, 1]")


def tc_alpha(alpha: float, delta: float) -> float:
    """Actual asymptotic coverage of a nominal (1 - alpha) Wald interval
    whose bias equals delta standard errors."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = norm.ppf(1.0 - alpha / 2.0)
    return float(norm.cdf(z - delta) - norm.cdf(-z - delta))


def bias_test(
    if22_report: UStatReport,
    psi1_est: Psi1Estimate,
    delta: float,
    zeta: float,
    sided: str = "one",
) -> TestOutcome:
    """Test of 'the projected bias is below delta standard errors of psi_1'.

    One-sided for the conditional-variance functional (zeta = z_omega),
    two-sided, via the absolute value, for the covariance functional
    (zeta = z_{omega/2}).
    """
    if delta <= 0 or zeta <= 0:
        raise ValueError("delta and zeta must be positive")
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    se_psi = psi1_est.se
    if se_psi == 0:
        raise ValueError("psi_1 has a zero standard error")
    center = if22_report.value if sided == "one" else abs(if22_report.value)
    stat = center / se_psi - zeta * if22_report.se / se_psi
    return TestOutcome(
        statistic=float(stat),
        cutoff=float(zeta),
        delta=float(delta),
        reject=bool(stat > delta),
        sided=sided,
        k=if22_report.k,
    )


def ucb(
    if22_report: UStatReport,
    psi1_est: Psi1Estimate,
    alpha: float,
    omega: float,
    sided: str = "one",
) -> CoverageBound:
    """Upper confidence bound on the actual coverage of the psi_1 interval.

    Plugs the test-inverted bias fraction into the coverage map; negative
    arguments are clamped to zero so bounds above nominal report as nominal.
    """
    if sided not in ("one", "two"):
        raise ValueError("sided must be 'one' or 'two'")
    z = norm.ppf(1.0 - omega)
    se_psi = psi1_est.se
    if se_psi == 0:
        raise ValueError("psi_1 has a zero standard error")
    center = if22_report.value if sided == "one" else abs(if22_report.value)
    arg = (center - z * if22_report.se) / se_psi
    value = tc_alpha(alpha, max(arg, 0.0))
    return CoverageBound(
        alpha=alpha, omega=omega, ucb_value=value, sided=sided, k=if22_report.k
    )


def cs_test(
    if44_report: UStatReport,
    psi1_est: Psi1Estimate,
    delta_op: float,
    zeta: float,
) -> TestOutcome:
    """One-sided test of the squared Cauchy-Schwarz bias fraction.

    Rejects when the fourth-order estimate, relative to the variance of
    psi_1, exceeds delta_op^2 after the critical-value shrinkage.
    """
    if delta_op <= 0 or zeta <= 0:
        raise ValueError("delta_op and zeta must be positive")
    var_psi = psi1_est.var_hat
    if var_psi == 0:
        raise ValueError("psi_1 has a zero variance estimate")
    stat = if44_report.value / var_psi - zeta * if44_report.se / var_psi
    return TestOutcome(
        statistic=float(stat),
        cutoff=float(zeta),
        delta=float(delta_op**2),
        reject=bool(stat > delta_op**2),
        sided="one",
        k=if44_report.k,
    )


def sequential_m_tests(
    psi1_est: Psi1Estimate,
    residuals,
    Z,
    plan_train,
    delta: float,
    omega: float,
    m_max: int = 2,
    cache: KernelCache | None = None,
    rng: np.random.Generator | None = None,
):
    """Escalating-order tests of the estimation bias of the corrected family.

    For m = 2, 3, ... the cumulative statistic of orders m+1 .. p with
    p = 2m+1 estimates the estimation bias of the order-m corrected
    estimator; testing stops at the first non-rejection.  Orders above the
    implemented cap are truncated with a warning (raising p further does not
    change the asymptotic power).  Returns (outcomes, m_first).
    """
    if not 2 <= m_max <= MAX_SEQUENTIAL_M:
        raise ValueError(f"m_max must lie in [2, {MAX_SEQUENTIAL_M}]")
    if plan_train.variant != "train":
        raise ValueError("sequential order tests use the training-sample plan")
    c = cache if cache is not None else KernelCache.build(residuals, Z, plan_train)
    z_cut = norm.ppf(1.0 - omega / 2.0)

    values: dict[int, float] = {}
    variances: dict[int, float] = {}

    def value_of(order: int) -> float:
        if order not in values:
            values[order] = order_value(c, order)
        return values[order]

    def variance_of(order: int) -> float:
        if order not in variances:
            if order == 2:
                variances[order] = c.var_corrected()
            else:
                variances[order] = order_variance(c, order, rng=rng)
        return variances[order]

    outcomes: list[TestOutcome] = []
    m_first = None
    for m in range(2, m_max + 1):
        p = 2 * m + 1
        if p > IMPLEMENTED_ORDER_CAP:
            warnings.warn(
                f"orders above {IMPLEMENTED_ORDER_CAP} are not implemented; using the "
                f"truncated cumulative statistic of orders {m + 1}..{IMPLEMENTED_ORDER_CAP} "
                f"in place of {m + 1}..{p}",
                stacklevel=2,
            )
            p = IMPLEMENTED_ORDER_CAP
        cum_value = sum(value_of(j) for j in range(m + 1, p + 1))
        # dominant-order standard error of the cumulative statistic
        se_cum = float(np.sqrt(max(variance_of(m + 1), 0.0)))
        var_m = psi1_est.var_hat + sum(
            max(variance_of(j), 0.0) for j in range(2, m + 1)
        )
        se_m = float(np.sqrt(var_m))
        if se_m == 0:
            raise ValueError("corrected estimator has a zero standard error")
        stat = abs(cum_value) / se_m - z_cut * se_cum / se_m
        out = TestOutcome(
            statistic=float(stat),
            cutoff=float(z_cut),
            delta=float(delta),
            reject=bool(stat > delta),
            sided="two",
            k=c.k,
            omega=omega,
            m=m,
        )
        outcomes.append(out)
        if not out.reject:
            m_first = m
            break
    return outcomes, m_first
