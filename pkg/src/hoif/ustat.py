"""Influence-function U-statistics of order two through six.

Every operation returns a :class:`UStatReport` carrying the point estimate
and two variance estimates: the pairwise plug-in ("uncorrected") and its
finite-sample corrected version, which adds an unbiased estimate of the
distinct-triple variance component and errs on the conservative side.

Point estimates of order m >= 3 reduce to sums over distinct index chains of
kernel-matrix entries; coincident-index strata are removed exactly by the
partition-lattice machinery in :mod:`hoif.kernels`, so the cost is driven by
a handful of matrix contractions instead of the O(n^m) definition.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from math import comb, factorial

import numpy as np
import scipy.linalg

from .kernels import KernelCache, distinct_chain_sum, distinct_graph_sum, pair_variances_from_kernel

__all__ = [
    "UStatReport",
    "if22",
    "if22_quasi",
    "if22_debiased_reference",
    "if33",
    "if_mm",
    "if44_cs",
    "variance_uncorrected",
    "variance_corrected",
    "bootstrap_variance",
    "if22_difference_se",
    "var_plugin_order",
    "order_value",
    "order_variance",
]

MAX_ORDER = 6


@dataclass(frozen=True)
class UStatReport:
    """Point estimate with companion variance estimates."""

    value: float
    var_uncorrected: float
    var_corrected: float
    order_m: int
    k: int
    variant: str
    n: int
    var_bootstrap: float | None = None

    def __post_init__(self):
        for name in ("value", "var_uncorrected", "var_corrected"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite {name} in U-statistic report")

    @property
    def se(self) -> float:
        """Standard error from the corrected variance (clipped at zero)."""
        return float(np.sqrt(max(self.var_corrected, 0.0)))

    @property
    def se_uncorrected(self) -> float:
        return float(np.sqrt(max(self.var_uncorrected, 0.0)))


def _cache_of(residuals, Z, plan, cache: KernelCache | None) -> KernelCache:
    return cache if cache is not None else KernelCache.build(residuals, Z, plan)


def if22(residuals, Z, plan, cache: KernelCache | None = None) -> UStatReport:
    """Second-order estimate of the projected conditional bias.

    For explicit-inverse plans this is the separable double sum over
    distinct pairs; for the est_svd plan the eigenvalues cancel and only the
    column-space projector enters.
    """
    c = _cache_of(residuals, Z, plan, cache)
    if c.n < 2:
        raise ValueError("if22 requires at least two estimation rows")
    return UStatReport(
        value=c.if22_value(),
        var_uncorrected=c.var_uncorrected(),
        var_corrected=c.var_corrected(),
        order_m=2,
        k=c.k,
        variant=plan.variant,
        n=c.n,
    )


def if22_quasi(residuals, Z, plan, cache: KernelCache | None = None) -> UStatReport:
    """Quasi-debiased second-order estimate on the estimation sample.

    Adds the diagonal-interaction correction to the est_svd value; the
    variance estimates of the uncorrected est_svd statistic are reported, as
    they track the quasi variant's spread well in simulation.
    """
    c = _cache_of(residuals, Z, plan, cache)
    if c.variant != "est_svd":
        raise ValueError("if22_quasi requires an est_svd precision plan")
    value = c.if22_value() + (c.quasi_correction() if c.k > 0 else 0.0)
    return UStatReport(
        value=value,
        var_uncorrected=c.var_uncorrected(),
        var_corrected=c.var_corrected(),
        order_m=2,
        k=c.k,
        variant="quasi",
        n=c.n,
    )


def if22_debiased_reference(residuals, Z_est) -> float:
    """Exact leave-two-out debiased estimator (small-n reference only).

    Every pair needs its own leave-two-out inverse; they are obtained by
    rank-two downdates of the full inverse, which keeps the cost at
    O(n^2 k^2) but is still far too slow for production sizes.
    """
    a = np.asarray(residuals.eps_b, dtype=float)
    b = np.asarray(residuals.eps_p, dtype=float)
    Z = np.asarray(Z_est, dtype=float)
    n, k = Z.shape
    if n > 200:
        raise ValueError("the debiased estimator is a reference path, limited to n <= 200")
    omega = (Z.T @ Z) / n
    P = np.linalg.inv(omega)
    U = Z / np.sqrt(n)  # omega_{-i,-j} = omega - u_i u_i^T - u_j u_j^T
    PU = P @ U.T
    base = KernelCache.build(residuals, Z, _ExplicitPlan(P, k)).if22_value()
    extra = 0.0
    for i in range(n):
        Pi = P + np.outer(PU[:, i], PU[:, i]) / (1.0 - float(U[i] @ PU[:, i]))
        for j in range(n):
            if i == j:
                continue
            w = Pi @ U[j]
            denom = 1.0 - float(U[j] @ w)
            if abs(denom) < 1e-12:
                raise np.linalg.LinAlgError(
                    f"leave-two-out matrix singular for pair ({i}, {j})"
                )
            Pij = Pi + np.outer(w, w) / denom
            mid = np.outer(Z[i], Z[i]) + np.outer(Z[j], Z[j])
            extra += a[i] * float(Z[i] @ Pij @ mid @ P @ Z[j]) * b[j]
    return base + extra / (n * n * (n - 1))


class _ExplicitPlan:
    """Minimal adapter so KernelCache can wrap an ad-hoc explicit inverse."""

    variant = "oracle"
    source = ""

    def __init__(self, P, k):
        self.k = k
        self.inverse = P
        self.whitener = scipy.linalg.cholesky(0.5 * (P + P.T), lower=True)


def _chain_coefficients(n: int, m: int):
    """(coefficient, chain length r) pairs for the order-m statistic.

    Expanding each middle factor (z z^T - Omega) and using that the Omega
    parts collapse against the inverse, the order-m statistic is a signed
    combination of distinct-chain sums with binomial multiplicities.
    """
    out = []
    for r in range(m - 1):
        coeff = (-1.0) ** r * comb(m - 2, r) * factorial(n - r - 2) / factorial(n)
        out.append((coeff, r))
    return out


def _chain_value(a, G, b, n, m) -> float:
    total = 0.0
    for coeff, r in _chain_coefficients(n, m):
        total += coeff * distinct_chain_sum(a, G, b, r)
    return total


def order_value(c: KernelCache, m: int) -> float:
    """Point estimate of the order-m statistic from a prebuilt cache."""
    if m == 2:
        return c.if22_value()
    return _chain_value(c.a, c.G, c.b, c.n, m)


def order_variance(
    c: KernelCache, m: int, rng: np.random.Generator | None = None, n_boot: int = 100
) -> float:
    """Variance estimate of the order-m statistic.

    Exact full-overlap plug-in through order four, nonparametric bootstrap
    beyond (the exact pairing sum becomes intractable).
    """
    if m <= 4:
        return var_plugin_order(c, m)
    if rng is None:
        rng = np.random.default_rng(0)
    return _bootstrap_order_m(c, m, n_boot, rng)


def _bootstrap_order_m(c: KernelCache, m: int, n_boot: int, rng) -> float:
    vals = np.empty(n_boot)
    n = c.n
    for t in range(n_boot):
        idx = rng.integers(0, n, size=n)
        vals[t] = _chain_value(c.a[idx], c.G[np.ix_(idx, idx)], c.b[idx], n, m)
    return float(np.var(vals, ddof=1))


def if_mm(
    residuals,
    Z,
    plan,
    m: int,
    cache: KernelCache | None = None,
    rng: np.random.Generator | None = None,
    n_boot: int = 100,
) -> UStatReport:
    """The order-m influence-function statistic, exact over distinct tuples.

    m = 2 and m = 3 reproduce the dedicated second- and third-order
    statistics bit for bit.  Both variance slots hold the order-m
    full-overlap plug-in for m <= 4; for m >= 5 the exact plug-in is
    intractable and a nonparametric bootstrap is used instead (seeded by
    ``rng``, defaulting to a fixed stream).
    """
    if not 2 <= m <= MAX_ORDER:
        raise ValueError(f"order m must lie in [2, {MAX_ORDER}], got {m}")
    c = _cache_of(residuals, Z, plan, cache)
    if c.n < m:
        raise ValueError(f"order-{m} statistic needs at least {m} rows, got {c.n}")
    if m == 2:
        return if22(residuals, Z, plan, cache=c)
    value = order_value(c, m)
    vu = order_variance(c, m, rng=rng, n_boot=n_boot)
    return UStatReport(
        value=value,
        var_uncorrected=vu,
        var_corrected=vu,
        order_m=m,
        k=c.k,
        variant=plan.variant,
        n=c.n,
    )


def if33(residuals, Z, plan, cache: KernelCache | None = None) -> UStatReport:
    """Third-order statistic; exact mean zero under the oracle plan."""
    return if_mm(residuals, Z, plan, 3, cache=cache)


def if44_cs(residuals, Z, plan, cache: KernelCache | None = None) -> UStatReport:
    """Fourth-order estimate of the squared Cauchy-Schwarz bias component.

    Average over distinct 4-tuples of the product of a b-residual pair
    kernel and a p-residual pair kernel; coincidence strata are removed in
    closed form, so the cost is O(n^2).
    """
    c = _cache_of(residuals, Z, plan, cache)
    n = c.n
    if n < 4:
        raise ValueError("if44_cs needs at least four rows")
    if c.k == 0:
        value = 0.0
        vu = 0.0
    else:
        Bt = c.G * np.outer(c.a, c.a)
        Pt = c.G * np.outer(c.b, c.b)
        np.fill_diagonal(Bt, 0.0)
        np.fill_diagonal(Pt, 0.0)
        sb, sp = float(Bt.sum()), float(Pt.sum())
        cross = float(np.sum(Bt * Pt))
        rb, rp = Bt.sum(axis=1), Pt.sum(axis=1)
        s = sb * sp + 2.0 * cross - 4.0 * float(rb @ rp)
        value = s * factorial(n - 4) / factorial(n)
        vu = _var_plugin_cs(c)
    return UStatReport(
        value=value,
        var_uncorrected=vu,
        var_corrected=vu,
        order_m=4,
        k=c.k,
        variant=plan.variant,
        n=n,
    )


def variance_uncorrected(residuals, Z, plan, cache: KernelCache | None = None) -> float:
    """Pairwise plug-in variance estimate of the second-order statistic."""
    c = _cache_of(residuals, Z, plan, cache)
    return c.var_uncorrected()


def variance_corrected(residuals, Z, plan, cache: KernelCache | None = None) -> float:
    """Plug-in variance plus the unbiased distinct-triple correction."""
    c = _cache_of(residuals, Z, plan, cache)
    return c.var_corrected()


def bootstrap_variance(
    residuals, Z, plan, n_boot: int, rng: np.random.Generator,
    cache: KernelCache | None = None,
) -> float:
    """Nonparametric bootstrap variance of the second-order statistic.

    Valid for plans whose inverse is held fixed across resamples, i.e. built
    from data other than the estimation sample.
    """
    if n_boot < 50:
        raise ValueError("use at least 50 bootstrap replicates")
    if plan.variant == "est_svd":
        raise ValueError(
            "bootstrap variance requires a plan independent of the estimation "
            "sample (oracle, train, or shrink)"
        )
    c = _cache_of(residuals, Z, plan, cache)
    vals = c.bootstrap_values(n_boot, rng)
    return float(np.var(vals, ddof=1))


def if22_difference_se(cache_low: KernelCache, cache_high: KernelCache) -> float:
    """Corrected-variance standard error of IF22(k') - IF22(k), k < k'.

    With nested bases the difference of the two second-order statistics is
    itself a second-order U-statistic in the difference kernel, so the same
    variance machinery applies to G_{k'} - G_k.
    """
    if cache_low.n != cache_high.n:
        raise ValueError("difference kernels need a common estimation sample")
    if cache_low.k >= cache_high.k:
        raise ValueError("difference requires k < k'")
    D = cache_high.G - cache_low.G
    _, vc = pair_variances_from_kernel(cache_low.a, cache_low.b, D, cache_low.n)
    return float(np.sqrt(max(vc, 0.0)))


# -- higher-order variance plug-ins ------------------------------------


def var_plugin_order(c: KernelCache, m: int) -> float:
    """Full-overlap plug-in second-moment estimate for the order-m statistic.

    [(n-m)!/n!]^2 times the sum, over distinct m-tuples and all pairings of
    tuple slots between two copies of the kernel, of the kernel product.
    At m = 2 this is exactly the pairwise plug-in variance.  Exact up to
    m = 4; beyond that the pairing count explodes, so callers fall back to
    the bootstrap.
    """
    if m == 2:
        return c.var_uncorrected()
    if m > 4:
        raise ValueError("exact plug-in variance is implemented for m <= 4 only")
    n = c.n
    pref = (factorial(n - m) / factorial(n)) ** 2
    total = 0.0
    for r1 in range(m - 1):
        # canonical first chain: a-end slot 0, middles 2..r1+1, b-end slot 1
        p1 = (0, *range(2, r1 + 2), 1)
        w1 = (-1.0) ** r1 * comb(m - 2, r1)
        edges1 = [(p1[t], p1[t + 1], c.G) for t in range(r1 + 1)]
        for r2 in range(m - 1):
            w2 = (-1.0) ** r2 * comb(m - 2, r2) * factorial(m - r2 - 2)
            for p2 in permutations(range(m), r2 + 2):
                edges = edges1 + [(p2[t], p2[t + 1], c.G) for t in range(r2 + 1)]
                weights = [(p1[0], c.a), (p1[-1], c.b), (p2[0], c.a), (p2[-1], c.b)]
                total += w1 * w2 * distinct_graph_sum(
                    n, edges, weights, num_vertices=m
                )
    return pref * total


def _var_plugin_cs(c: KernelCache) -> float:
    """Full-overlap plug-in second moment for the fourth-order product kernel."""
    n = c.n
    Bt = c.G * np.outer(c.a, c.a)
    Pt = c.G * np.outer(c.b, c.b)
    total = 0.0
    for split in _CS_SPLITS:
        edges = [(0, 1, Bt), (2, 3, Pt), (split[0], split[1], Bt), (split[2], split[3], Pt)]
        total += 4.0 * distinct_graph_sum(n, edges, num_vertices=4)
    return total * (factorial(n - 4) / factorial(n)) ** 2


# The six unordered ways to split tuple slots (0, 1, 2, 3) into a b-pair and
# the complementary p-pair; each carries multiplicity 4 from within-pair
# orderings.
_CS_SPLITS = [
    (0, 1, 2, 3),
    (0, 2, 1, 3),
    (0, 3, 1, 2),
    (2, 3, 0, 1),
    (1, 2, 0, 3),
    (1, 3, 0, 2),
]
