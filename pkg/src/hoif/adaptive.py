"""Data-adaptive choice between the quasi and shrinkage variants per k.

The quasi estimator tracks the oracle well until k gets close to n, where
its estimation bias pulls the point estimates back down; the shrinkage
variant only behaves in that large-k regime (and can blow up outright when
the covariate density is rough).  The selector walks the grid to find where
the quasi family stops increasing, then admits the shrinkage family on a
variance-ratio budget, producing a per-k variant assignment and the final
grid point k_star with its estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdaptiveConfig", "AdaptiveReport", "run_adaptive", "run_adaptive_covariance"]


@dataclass(frozen=True)
class AdaptiveConfig:
    """Constants for the stopping and admission rules.

    c controls the quasi stopping slack (in standard errors);
    v_j = c_v * (k_j / k_quasi) budgets the shrink admission variance ratio;
    w_j = c_w * (k_{j+1} / k_j) budgets consecutive shrink variance growth.
    The variance-ratio budgets default to 4 rather than 1: estimated
    variances of healthy variants inflate by a factor of two to three near
    k = n, while genuine blow-ups overshoot by orders of magnitude, so the
    looser budget keeps detection sharp without rejecting sound variants.
    blowup_guard excludes a variant whose standard error exceeds that
    multiple of the quasi standard error at k_quasi.
    """

    c: float = 1.0
    c_v: float = 4.0
    c_w: float = 4.0
    blowup_guard: float = 20.0

    def __post_init__(self):
        if min(self.c, self.c_v, self.c_w, self.blowup_guard) <= 0:
            raise ValueError("all adaptive constants must be positive")


@dataclass(frozen=True)
class AdaptiveReport:
    k_grid: tuple[int, ...]
    choice: dict[int, str]  # per-k variant in {"quasi", "shrink", "NA"}
    k_quasi: int
    k_shrink_low: int | None
    k_shrink_high: int | None
    k_star: int
    value_at_k_star: float
    se_at_k_star: float

    def __post_init__(self):
        for k in self.k_grid:
            ch = self.choice[k]
            if ch == "quasi" and k > self.k_quasi:
                raise ValueError("quasi assigned above k_quasi")
            if ch == "shrink" and not (
                self.k_shrink_low is not None
                and self.k_shrink_low <= k <= self.k_shrink_high
            ):
                raise ValueError("shrink assigned outside its admitted range")


def _se(var: float) -> float:
    return float(np.sqrt(max(var, 0.0)))


def _find_k_quasi(k_grid, quasi_values, quasi_vars, c) -> int:
    """First k after which the quasi family stops increasing beyond noise."""
    for j in range(len(k_grid) - 1):
        k, k_next = k_grid[j], k_grid[j + 1]
        if quasi_values[k_next] < quasi_values[k] - c * _se(quasi_vars[k]):
            return k
    return k_grid[-1]


def run_adaptive(
    quasi_values: dict[int, float],
    quasi_vars: dict[int, float],
    shrink_values: dict[int, float],
    shrink_vars: dict[int, float],
    k_grid,
    config: AdaptiveConfig | None = None,
    k_quasi_override: int | None = None,
) -> AdaptiveReport:
    """Per-k variant assignment and the final selection k_star.

    ``shrink_vars`` may be missing entries or hold inf for k where the
    shrinkage plan failed outright; those k are never admitted.
    """
    config = config or AdaptiveConfig()
    k_grid = [int(k) for k in k_grid]
    if not k_grid:
        raise ValueError("empty k grid")

    k_quasi = (
        k_quasi_override
        if k_quasi_override is not None
        else _find_k_quasi(k_grid, quasi_values, quasi_vars, config.c)
    )
    choice = {k: ("quasi" if k <= k_quasi else "NA") for k in k_grid}
    quasi_ref_var = max(quasi_vars[k_quasi], 0.0)
    guard_se = config.blowup_guard * _se(quasi_ref_var)

    above = [k for k in k_grid if k > k_quasi]
    k_shrink_low = None
    k_shrink_high = None
    if above and quasi_ref_var > 0:
        j_idx = None
        for idx, k in enumerate(above):
            var_k = shrink_vars.get(k, np.inf)
            ratio_budget = config.c_v * (k / k_quasi)
            if (
                np.isfinite(var_k)
                and var_k / quasi_ref_var <= ratio_budget
                and _se(var_k) <= guard_se
            ):
                j_idx = idx
                k_shrink_low = k
                break
        if j_idx is not None:
            k_shrink_high = k_shrink_low
            for idx in range(j_idx, len(above) - 1):
                k, k_next = above[idx], above[idx + 1]
                var_k = shrink_vars.get(k, np.inf)
                var_next = shrink_vars.get(k_next, np.inf)
                if not np.isfinite(var_next) or var_next > config.c_w * (
                    k_next / k
                ) * var_k or _se(var_next) > guard_se:
                    break
                k_shrink_high = k_next
            for k in above:
                if k_shrink_low <= k <= k_shrink_high:
                    choice[k] = "shrink"

    k_star = k_shrink_high if k_shrink_high is not None else k_quasi
    if choice[k_star] == "quasi":
        value, var = quasi_values[k_star], quasi_vars[k_star]
    else:
        value, var = shrink_values[k_star], shrink_vars[k_star]
    return AdaptiveReport(
        k_grid=tuple(k_grid),
        choice=choice,
        k_quasi=k_quasi,
        k_shrink_low=k_shrink_low,
        k_shrink_high=k_shrink_high,
        k_star=k_star,
        value_at_k_star=float(value),
        se_at_k_star=_se(var),
    )


def run_adaptive_covariance(
    quasi_bb: tuple[dict, dict],
    quasi_pp: tuple[dict, dict],
    quasi_cov: tuple[dict, dict],
    shrink_cov: tuple[dict, dict],
    k_grid,
    config: AdaptiveConfig | None = None,
) -> AdaptiveReport:
    """Covariance-functional selector.

    The quasi stopping point is not meaningful on the covariance family (its
    population target need not be monotone), so it is detected on the two
    marginal variance-functional families -- (b, b) and (p, p) residuals --
    and the smaller of the two detections is used.  The rest of the
    algorithm runs unchanged on the covariance families.
    """
    config = config or AdaptiveConfig()
    k_grid = [int(k) for k in k_grid]
    k_quasi_b = _find_k_quasi(k_grid, quasi_bb[0], quasi_bb[1], config.c)
    k_quasi_p = _find_k_quasi(k_grid, quasi_pp[0], quasi_pp[1], config.c)
    k_quasi = min(k_quasi_b, k_quasi_p)
    return run_adaptive(
        quasi_cov[0],
        quasi_cov[1],
        shrink_cov[0],
        shrink_cov[1],
        k_grid,
        config=config,
        k_quasi_override=k_quasi,
    )
