"""Synthetic data generation with Holder-smooth nuisance functions.

Nuisance functions are built from mother-wavelet expansions with coefficient
decay 2^{-j(beta + 1/2)} across a fixed set of levels, which places them in
the Holder(beta) class by construction.  Covariates are drawn either uniform
on [0, 1] or from an unnormalized density proportional to
1 + exp{ (1/2) * holder_series(x) }, via rejection sampling against a
tabulated envelope.  Oracle population quantities (projected bias, Gram
matrices) come from dense trapezoid quadrature so tests can compare
estimators against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .wavelets import WaveletTable, eval_basis, eval_mother_level_sum

__all__ = [
    "HolderFunction",
    "DgpSpec",
    "ObservationSet",
    "OracleProjection",
    "make_holder_function",
    "make_density",
    "sample_covariates",
    "generate_dataset",
    "oracle_projection",
    "write_dataset_csv",
]

LEVEL_SET_J = (0, 3, 6, 9, 10, 16)
QUADRATURE_GRID_SIZE = 2**16
ORACLE_QUADRATURE_M = 2**17


@dataclass(frozen=True)
class HolderFunction:
    """Mother-wavelet series sum_{j in J} gamma_j * level_sum_j(x).

    gamma_j = 2^{-j(beta + 1/2)} up to per-level signs, so the Holder-norm
    bound sup 2^{j(beta + 1/2)}|gamma_{j,l}| <= 1 holds exactly.
    """

    beta: float
    table: WaveletTable
    levels: tuple[int, ...] = LEVEL_SET_J
    signs: tuple[float, ...] = ()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        signs = self.signs or (1.0,) * len(self.levels)
        for j, s in zip(self.levels, signs):
            gamma = 2.0 ** (-j * (self.beta + 0.5))
            out += s * gamma * eval_mother_level_sum(self.table, x, j)
        return out


def make_holder_function(
    table: WaveletTable,
    beta: float,
    seed: int | None = None,
    levels=LEVEL_SET_J,
) -> HolderFunction:
    """Holder(beta) function from the fixed coefficient-decay recipe.

    With ``seed`` given, per-level signs are flipped at random, which keeps
    the Holder norm unchanged while producing a different function; without
    a seed all signs are +1.  Deterministic for fixed inputs.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if seed is None:
        signs = (1.0,) * len(levels)
    else:
        rng = np.random.default_rng(seed)
        signs = tuple(rng.choice([-1.0, 1.0], size=len(levels)).tolist())
    return HolderFunction(beta=beta, table=table, levels=tuple(levels), signs=signs)


@dataclass(frozen=True)
class DgpSpec:
    """One synthetic design: functional, smoothness exponents, sizes, seed.

    For the conditional-variance functional the outcome duplicates the
    treatment (A = Y w.p. 1) and the true parameter is the unit noise
    variance, psi = 1.  For the conditional-covariance functional the two
    noises are independent and psi = 0.
    """

    functional: str = "variance"  # "variance" | "covariance"
    beta_b: float = 0.251
    beta_p: float = 0.251
    beta_fX: float | None = 0.4  # None -> uniform covariates
    n_est: int = 1000
    n_train: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.functional not in ("variance", "covariance"):
            raise ValueError(f"unknown functional {self.functional!r}")

    @property
    def true_psi(self) -> float:
        return 1.0 if self.functional == "variance" else 0.0


@dataclass(frozen=True)
class ObservationSet:
    """Raw data: outcome, treatment, covariate, and split labels."""

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    split: np.ndarray  # array of "train" / "est" labels

    def rows(self, label: str):
        mask = self.split == label
        return self.y[mask], self.a[mask], self.x[mask]


class _TabulatedDensity:
    """Unnormalized density tabulated on a uniform grid with trapezoid CDF."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = values
        self.envelope = float(values.max()) * 1.05
        w = np.gradient(grid)
        mass = values * w
        self.norm = float(mass.sum())
        self.cdf = np.cumsum(mass) / self.norm

    def __call__(self, x):
        return np.interp(x, self.grid, self.values)


def make_density(spec: DgpSpec, table: WaveletTable) -> _TabulatedDensity | None:
    if spec.beta_fX is None:
        return None
    f = make_holder_function(table, spec.beta_fX)
    grid = (np.arange(QUADRATURE_GRID_SIZE) + 0.5) / QUADRATURE_GRID_SIZE
    vals = 1.0 + np.exp(0.5 * f(grid))
    return _TabulatedDensity(grid, vals)


def sample_covariates(
    spec: DgpSpec,
    m: int,
    rng: np.random.Generator,
    table: WaveletTable | None = None,
    density: _TabulatedDensity | None = None,
) -> np.ndarray:
    """Draw m covariates, by rejection sampling when a density is present."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if spec.beta_fX is None:
        return rng.uniform(0.0, 1.0, size=m)
    if density is None:
        if table is None:
            raise ValueError("non-uniform sampling needs a wavelet table or density")
        density = make_density(spec, table)
    out = np.empty(m)
    filled = 0
    while filled < m:
        want = m - filled
        batch = max(2 * want, 256)
        cand = rng.uniform(0.0, 1.0, size=batch)
        dens = density(cand)
        if np.any(dens > density.envelope):
            raise RuntimeError(
                "rejection-sampling envelope exceeded: density evaluates above "
                f"{density.envelope:.6g}; the envelope constant is too small"
            )
        keep = cand[rng.uniform(0.0, density.envelope, size=batch) < dens]
        take = keep[: min(want, keep.size)]
        out[filled : filled + take.size] = take
        filled += take.size
    return out


def generate_dataset(
    spec: DgpSpec, rng: np.random.Generator, table: WaveletTable
) -> ObservationSet:
    """Sample a full observation set (training rows first, then estimation)."""
    density = make_density(spec, table)
    n = spec.n_train + spec.n_est
    x = sample_covariates(spec, n, rng, table=table, density=density)
    p = make_holder_function(table, spec.beta_p)
    a = rng.normal(p(x), 1.0)
    if spec.functional == "variance":
        y = a.copy()
    else:
        b = make_holder_function(table, spec.beta_b)
        y = rng.normal(b(x), 1.0)
    split = np.array(["train"] * spec.n_train + ["est"] * spec.n_est)
    return ObservationSet(y=y, a=a, x=x, split=split)


def true_functions(spec: DgpSpec, table: WaveletTable):
    """The (b, p) pair used by ``generate_dataset`` for this spec."""
    p = make_holder_function(table, spec.beta_p)
    if spec.functional == "variance":
        return p, p
    return make_holder_function(table, spec.beta_b), p


@dataclass(frozen=True)
class OracleProjection:
    """Population quantities for one (design, fit) pair on a k grid.

    ``true_cbias`` maps k to the projected conditional bias of the plug-in
    estimator given the frozen fits, computed by dense quadrature under the
    covariate density.  ``omega`` maps k to the population Gram matrix
    E[z_k(X) z_k(X)^T]; by default it also comes from quadrature (exact at
    tabulation resolution), optionally from a large auxiliary X-only sample.
    """

    k_grid: tuple[int, ...]
    true_cbias: dict[int, float] = field(repr=False)
    omega: dict[int, np.ndarray] = field(repr=False)
    omega_inv: dict[int, np.ndarray] = field(repr=False)
    cbias_total: float = 0.0
    truncation_bias: dict[int, float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for k, om in self.omega.items():
            if k == 0:
                continue
            if not np.allclose(om, om.T, atol=1e-10):
                raise ValueError(f"oracle Gram at k={k} is not symmetric")
            eigs = np.linalg.eigvalsh(om)
            if eigs[0] <= 1e-8 or eigs[-1] >= 1e8:
                raise ValueError(
                    f"oracle Gram at k={k} has eigenvalues outside bounds: "
                    f"[{eigs[0]:.3e}, {eigs[-1]:.3e}]"
                )


def oracle_projection(
    spec: DgpSpec,
    table: WaveletTable,
    k_grid,
    b_hat,
    p_hat,
    quadrature_m: int = ORACLE_QUADRATURE_M,
    omega_from: str = "quadrature",
    omega_sample_size: int = 10**6,
    rng: np.random.Generator | None = None,
) -> OracleProjection:
    """Projected bias and oracle Gram matrices by dense quadrature.

    ``b_hat`` and ``p_hat`` are frozen fitted functions (callables).  With
    ``omega_from="sample"`` the Gram matrices instead come from an auxiliary
    X-only sample of ``omega_sample_size`` draws.
    """
    if quadrature_m < 10**5:
        raise ValueError("quadrature_m must be at least 1e5")
    k_grid = [int(k) for k in k_grid]
    grid = (np.arange(quadrature_m) + 0.5) / quadrature_m
    density = make_density(spec, table)
    if density is None:
        w = np.full(quadrature_m, 1.0 / quadrature_m)
    else:
        vals = density(grid)
        w = vals / vals.sum()

    b, p = true_functions(spec, table)
    xi_b = b(grid) - np.asarray(b_hat(grid), dtype=float)
    xi_p = p(grid) - np.asarray(p_hat(grid), dtype=float)
    cbias_total = float(np.sum(w * xi_b * xi_p))

    true_cbias: dict[int, float] = {}
    omega: dict[int, np.ndarray] = {}
    omega_inv: dict[int, np.ndarray] = {}
    trunc: dict[int, float] = {}
    if rng is None:
        rng = np.random.default_rng(spec.seed + 7_000_003)
    x_aux = None
    if omega_from == "sample":
        x_aux = sample_covariates(
            spec, omega_sample_size, rng, table=table, density=density
        )
    elif omega_from != "quadrature":
        raise ValueError(f"omega_from must be 'quadrature' or 'sample', got {omega_from!r}")

    for k in k_grid:
        if k == 0:
            true_cbias[0] = 0.0
            omega[0] = np.zeros((0, 0))
            omega_inv[0] = np.zeros((0, 0))
            trunc[0] = cbias_total
            continue
        Zg = eval_basis(table, grid, k)
        gram_quad = Zg.T @ (w[:, None] * Zg)
        if omega_from == "sample":
            Za = eval_basis(table, x_aux, k)
            om = (Za.T @ Za) / x_aux.size
        else:
            om = gram_quad
        c_b = Zg.T @ (w * xi_b)
        c_p = Zg.T @ (w * xi_p)
        gram_inv_quad = np.linalg.inv(gram_quad)
        cb_k = float(c_b @ gram_inv_quad @ c_p)
        true_cbias[k] = cb_k
        trunc[k] = cbias_total - cb_k
        omega[k] = 0.5 * (om + om.T)
        omega_inv[k] = np.linalg.inv(omega[k])
    return OracleProjection(
        k_grid=tuple(k_grid),
        true_cbias=true_cbias,
        omega=omega,
        omega_inv=omega_inv,
        cbias_total=cbias_total,
        truncation_bias=trunc,
    )


def write_dataset_csv(data: ObservationSet, path) -> None:
    """Export to CSV with header y,a,x,split."""
    with open(path, "w") as fh:
        fh.write("y,a,x,split\n")
        for y, a, x, s in zip(data.y, data.a, data.x, data.split):
            fh.write(f"{y:.17g},{a:.17g},{x:.17g},{s}\n")
