"""Sequential truncation-bias testing over an increasing k grid.

The corrected estimator at a small k may still carry truncation bias; its
estimable part at a larger k' is the expected difference of the two
second-order statistics.  The procedure walks the grid upward, jointly
testing each k against every larger k' at a per-step Bonferroni-adjusted
level, stops at the first k whose joint tests all fail to reject, and
accepts that k and everything above it.  Ground-truth Gram inverses are
required: empirical precision estimation above k = n is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .drml import Psi1Estimate
from .inference import TestOutcome
from .kernels import KernelCache
from .ustat import if22_difference_se

__all__ = ["KGridPlan", "SequentialReport", "pairwise_test", "run_sequential", "default_k_grid"]


def default_k_grid(n: int, k_cap: int = 4096) -> list[int]:
    """Doubling grid from the largest power of two below n/log(n).

    Tops out at min(n^2 / 16, cap); the quadratic ceiling respects the
    regime in which the second-order statistic stays asymptotically normal.
    """
    k0 = 2 ** max(int(np.floor(np.log2(n / np.log(n)))), 0)
    grid = [k0]
    while 2 * grid[-1] <= min(n * n / 16, k_cap):
        grid.append(2 * grid[-1])
    return grid


@dataclass(frozen=True)
class KGridPlan:
    """Per-k caches and second-order values over an ascending k grid."""

    k_grid: tuple[int, ...]
    caches: dict[int, KernelCache] = field(repr=False)
    psi1_est: Psi1Estimate = None
    if22_values: dict[int, float] = field(default_factory=dict)
    if22_vars: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        ks = self.k_grid
        if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
            raise ValueError("k grid must be strictly ascending")
        n = next(iter(self.caches.values())).n
        if ks[-1] >= n * n:
            raise ValueError(f"largest k {ks[-1]} must stay below n^2 = {n * n}")
        if not self.if22_values:
            vals = {k: c.if22_value() for k, c in self.caches.items()}
            vars_ = {k: c.var_corrected() for k, c in self.caches.items()}
            object.__setattr__(self, "if22_values", vals)
            object.__setattr__(self, "if22_vars", vars_)

    def psi2_se(self, k: int) -> float:
        return float(np.sqrt(self.psi1_est.var_hat + max(self.if22_vars[k], 0.0)))


def pairwise_test(
    plan: KGridPlan, k: int, k_prime: int, zeta: float, delta: float
) -> TestOutcome:
    """Test of 'the k -> k' bias increment is below delta se's of psi_2k'."""
    if k >= k_prime:
        raise ValueError("pairwise test requires k < k'")
    if k not in plan.k_grid or k_prime not in plan.k_grid:
        raise ValueError("both k values must belong to the grid")
    diff = plan.if22_values[k_prime] - plan.if22_values[k]
    se_diff = if22_difference_se(plan.caches[k], plan.caches[k_prime])
    se_psi2 = plan.psi2_se(k)
    stat = diff / se_psi2 - zeta * se_diff / se_psi2
    return TestOutcome(
        statistic=float(stat),
        cutoff=float(zeta),
        delta=float(delta),
        reject=bool(stat > delta),
        sided="one",
        k=k,
    )


@dataclass(frozen=True)
class SequentialReport:
    outcomes: list  # (j, k, k_prime, TestOutcome) records in execution order
    first_accept_index: int | None
    accepted_k: tuple[int, ...]
    bar_data: list = field(default_factory=list)

    def __post_init__(self):
        # the walk stops at the first non-rejected step: no records may
        # exist for steps beyond it
        if self.first_accept_index is not None:
            beyond = [rec for rec in self.outcomes if rec[0] > self.first_accept_index]
            if beyond:
                raise ValueError("tests were executed past the accepting step")


def run_sequential(plan: KGridPlan, delta: float, omega: float | dict) -> SequentialReport:
    """Walk the grid, testing each k jointly against all larger k'.

    At step j the J - j pairwise tests run at level omega_k / (J - j); the
    step's null is rejected when any of them rejects.  Stops at the first
    step that is not rejected and accepts every k from there on.
    """
    ks = plan.k_grid
    J = len(ks) - 1
    if J < 1:
        raise ValueError("the grid needs at least two k values")
    records = []
    bar_data = []
    first_accept = None
    for j in range(J):
        k = ks[j]
        om_k = omega[k] if isinstance(omega, dict) else omega
        zeta = float(norm.ppf(1.0 - om_k / (J - j)))
        se_psi2 = plan.psi2_se(k)
        any_reject = False
        base = (plan.psi1_est.value - plan.if22_values[k]) / se_psi2 - delta / 2.0
        for k_prime in ks[j + 1 :]:
            out = pairwise_test(plan, k, k_prime, zeta, delta)
            records.append((j, k, k_prime, out))
            bar_low = (plan.psi1_est.value - plan.if22_values[k_prime]) / se_psi2 - delta / 2.0
            bar_len = zeta * if22_difference_se(plan.caches[k], plan.caches[k_prime]) / se_psi2
            bar_data.append(
                {
                    "step": j,
                    "k": k_prime,
                    "center": base,
                    "bar_low": bar_low,
                    "bar_high": bar_low + bar_len,
                }
            )
            if out.reject:
                any_reject = True
        if not any_reject:
            first_accept = j
            break
    accepted = ks[first_accept:] if first_accept is not None else ()
    return SequentialReport(
        outcomes=records,
        first_accept_index=first_accept,
        accepted_k=tuple(accepted),
        bar_data=bar_data,
    )


def write_bar_csv(report: SequentialReport, path) -> None:
    """Plot data for the error-bar figure: k, center, bar_low, bar_high."""
    with open(path, "w") as fh:
        fh.write("step,k,center,bar_low,bar_high\n")
        for row in report.bar_data:
            fh.write(
                f"{row['step']},{row['k']},{row['center']:.17g},"
                f"{row['bar_low']:.17g},{row['bar_high']:.17g}\n"
            )
