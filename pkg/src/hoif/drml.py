"""First-order estimator layer: plug-in value, cross-fit, bias corrections.

The plug-in estimator is the mean of the residual products on the estimation
split; subtracting the estimated second-order (or cumulative higher-order)
correction yields the bias-corrected family, whose variance is the sum of
the component variance estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ustat import UStatReport

__all__ = ["Psi1Estimate", "CorrectedEstimate", "psi1", "cross_fit", "psi2k", "psi_mk"]


@dataclass(frozen=True)
class Psi1Estimate:
    value: float
    var_hat: float
    n: int
    fingerprint: str = ""

    def __post_init__(self):
        if self.var_hat < 0:
            raise ValueError("var_hat must be nonnegative")

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_hat))

    def wald_ci(self, alpha: float = 0.10) -> tuple[float, float]:
        from scipy.stats import norm

        z = norm.ppf(1.0 - alpha / 2.0)
        return self.value - z * self.se, self.value + z * self.se


@dataclass(frozen=True)
class CorrectedEstimate:
    """psi_1 minus the cumulative influence-function correction."""

    value: float
    var: float
    order_m: int
    k: int
    variant: str

    @property
    def se(self) -> float:
        return float(np.sqrt(max(self.var, 0.0)))

    def wald_ci(self, alpha: float = 0.10) -> tuple[float, float]:
        from scipy.stats import norm

        z = norm.ppf(1.0 - alpha / 2.0)
        return self.value - z * self.se, self.value + z * self.se


def psi1(residuals) -> Psi1Estimate:
    """Mean residual product and its plug-in variance."""
    prod = np.asarray(residuals.eps_b, dtype=float) * np.asarray(
        residuals.eps_p, dtype=float
    )
    n = prod.size
    if n == 0:
        raise ValueError("empty residual set")
    return Psi1Estimate(
        value=float(prod.mean()),
        var_hat=float(np.sum(prod**2)) / (n * n),
        n=n,
        fingerprint=getattr(residuals, "fingerprint", ""),
    )


def cross_fit(psi1_a: Psi1Estimate, psi1_b: Psi1Estimate) -> Psi1Estimate:
    """Average of the two split-reversed estimates; quarter-sum variance."""
    if psi1_a.fingerprint and psi1_a.fingerprint == psi1_b.fingerprint:
        raise ValueError("cross-fit inputs come from the same split")
    return Psi1Estimate(
        value=0.5 * (psi1_a.value + psi1_b.value),
        var_hat=0.25 * (psi1_a.var_hat + psi1_b.var_hat),
        n=psi1_a.n + psi1_b.n,
        fingerprint=f"{psi1_a.fingerprint}+{psi1_b.fingerprint}",
    )


def psi2k(psi1_est: Psi1Estimate, if22_report: UStatReport) -> CorrectedEstimate:
    """Second-order bias-corrected estimate."""
    return CorrectedEstimate(
        value=psi1_est.value - if22_report.value,
        var=psi1_est.var_hat + max(if22_report.var_corrected, 0.0),
        order_m=2,
        k=if22_report.k,
        variant=if22_report.variant,
    )


def psi_mk(psi1_est: Psi1Estimate, reports: list[UStatReport]) -> CorrectedEstimate:
    """Order-m corrected estimate from the order 2..m reports.

    The correction variance sums the per-order variance estimates: the
    component statistics are degenerate U-statistics of distinct orders and
    hence uncorrelated under the residual-randomness benchmark.
    """
    if not reports:
        raise ValueError("need at least the order-2 report")
    orders = [r.order_m for r in reports]
    if orders != list(range(2, 2 + len(reports))):
        raise ValueError(f"reports must cover consecutive orders from 2, got {orders}")
    ks = {r.k for r in reports}
    variants = {r.variant for r in reports}
    if len(ks) > 1 or len(variants) > 1:
        raise ValueError("reports mix different k or precision variants")
    correction = sum(r.value for r in reports)
    var_corr = sum(max(r.var_corrected, 0.0) for r in reports)
    return CorrectedEstimate(
        value=psi1_est.value - correction,
        var=psi1_est.var_hat + var_corr,
        order_m=orders[-1],
        k=reports[0].k,
        variant=reports[0].variant,
    )
