"""Precision (inverse second-moment) strategies for the U-statistic engine.

Four interchangeable plans: the oracle population Gram inverse, empirical
inverses from the training or an auxiliary sample, the left-singular-basis
plan built on the estimation sample (which never materializes a k x k
inverse: only the column-space projector enters downstream), and a nonlinear
eigenvalue-shrinkage inverse suited to k comparable to n.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "PrecisionPlan",
    "oracle_precision",
    "empirical_precision",
    "svd_precision",
    "shrink_precision",
    "analytical_shrinkage_eigenvalues",
    "write_spectrum_csv",
]

EIG_FLOOR = 1e-8
EIG_CEILING = 1e8


@dataclass(frozen=True)
class PrecisionPlan:
    """A tagged strategy for the inverse Gram matrix at one k.

    ``inverse`` is the explicit k x k inverse for the oracle / train /
    shrink variants; ``basis_q`` is an orthonormal column basis of the
    estimation-sample design matrix for the est_svd variant.  ``whitener``
    W satisfies inverse = W W^T and is what the kernel cache multiplies by.
    """

    variant: str
    k: int
    inverse: np.ndarray | None = field(default=None, repr=False)
    basis_q: np.ndarray | None = field(default=None, repr=False)
    whitener: np.ndarray | None = field(default=None, repr=False)
    source: str = ""
    eig_range: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.variant not in ("oracle", "train", "est_svd", "shrink"):
            raise ValueError(f"unknown precision variant {self.variant!r}")
        if self.k == 0:
            return
        if self.variant == "est_svd":
            q = self.basis_q
            if q is None or q.shape[1] != self.k:
                raise ValueError("est_svd plan needs an n x k orthonormal basis")
            gram = q.T @ q
            if np.abs(gram - np.eye(self.k)).max() > 1e-10:
                raise ValueError("est_svd basis columns are not orthonormal")
        else:
            inv = self.inverse
            if inv is None or inv.shape != (self.k, self.k):
                raise ValueError(f"{self.variant} plan needs an explicit k x k inverse")
            if np.abs(inv - inv.T).max() > 1e-10 * max(1.0, np.abs(inv).max()):
                raise ValueError(f"{self.variant} inverse is not symmetric")


def _explicit_plan(gram: np.ndarray, variant: str, source: str) -> PrecisionPlan:
    k = gram.shape[0]
    if k == 0:
        return PrecisionPlan(variant=variant, k=0, source=source)
    gram = 0.5 * (gram + gram.T)
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] < EIG_FLOOR or eigs[-1] > EIG_CEILING:
        raise ValueError(
            f"{variant} Gram at k={k} is singular or ill-conditioned: eigenvalues in "
            f"[{eigs[0]:.3e}, {eigs[-1]:.3e}] violate [{EIG_FLOOR:.0e}, {EIG_CEILING:.0e}]"
        )
    chol = scipy.linalg.cholesky(gram, lower=True)
    whitener = scipy.linalg.solve_triangular(chol, np.eye(k), lower=True).T
    inverse = whitener @ whitener.T
    return PrecisionPlan(
        variant=variant,
        k=k,
        inverse=0.5 * (inverse + inverse.T),
        whitener=whitener,
        source=source,
        eig_range=(float(eigs[0]), float(eigs[-1])),
    )


def oracle_precision(omega: np.ndarray, k: int, source: str = "oracle") -> PrecisionPlan:
    """Plan from a known population Gram matrix."""
    if omega.shape != (k, k):
        raise ValueError(f"omega must be {k} x {k}")
    return _explicit_plan(omega, "oracle", source)


def empirical_precision(Z: np.ndarray, variant: str = "train", source: str = "") -> PrecisionPlan:
    """Explicit inverse of the sample Gram (1/n) Z^T Z.

    Requires more rows than columns; rank deficiency or a minimum eigenvalue
    below the floor raises rather than silently regularizing.
    """
    Z = np.asarray(Z, dtype=float)
    n, k = Z.shape
    if k == 0:
        return PrecisionPlan(variant=variant, k=0, source=source)
    if not np.all(np.isfinite(Z)):
        raise ValueError("design matrix contains non-finite entries")
    if n <= k:
        raise ValueError(
            f"{variant} precision needs n > k for explicit inversion, got n={n}, k={k}"
        )
    gram = (Z.T @ Z) / n
    return _explicit_plan(gram, variant, source)


def svd_precision(Z_est: np.ndarray, source: str = "") -> PrecisionPlan:
    """Estimation-sample plan storing an orthonormal column basis of Z.

    Downstream statistics use only the column-space projector Q Q^T, so the
    plan is invariant to any basis change of Z's columns; eigenvalues of the
    sample Gram cancel and are never formed.
    """
    Z_est = np.asarray(Z_est, dtype=float)
    n, k = Z_est.shape
    if k == 0:
        return PrecisionPlan(variant="est_svd", k=0, source=source)
    q, r = np.linalg.qr(Z_est)
    rank = int(np.sum(np.abs(np.diag(r)) > np.abs(r).max() * n * np.finfo(float).eps))
    if rank < k:
        raise ValueError(f"estimation design is rank deficient: rank {rank} < k={k}")
    return PrecisionPlan(variant="est_svd", k=k, basis_q=q, source=source)


def analytical_shrinkage_eigenvalues(sample_eigs: np.ndarray, n: int) -> np.ndarray:
    """Nonlinearly shrunk eigenvalues of a sample covariance matrix.

    Analytical kernel estimator for the regime k/n -> c in (0, 1): the
    sample spectral density and its Hilbert transform are estimated with an
    Epanechnikov kernel of bandwidth n^{-1/3} and plugged into the optimal
    nonlinear transform.  Requires k <= n and n >= 12.
    """
    lam = np.sort(np.asarray(sample_eigs, dtype=float))
    p = lam.size
    if p > n:
        raise ValueError("shrinkage requires k <= n")
    L = np.tile(lam[:, None], (1, p))
    h = n ** (-1.0 / 3.0)
    H = h * L.T
    x = (L - L.T) / H
    ftilde = (3.0 / 4.0 / np.sqrt(5.0)) * np.mean(np.maximum(1.0 - x**2 / 5.0, 0.0) / H, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        hftemp = (-3.0 / 10.0 / np.pi) * x + (3.0 / 4.0 / np.sqrt(5.0) / np.pi) * (
            1.0 - x**2 / 5.0
        ) * np.log(np.abs((np.sqrt(5.0) - x) / (np.sqrt(5.0) + x)))
    on_edge = np.abs(np.abs(x) - np.sqrt(5.0)) < 1e-12
    hftemp[on_edge] = (-3.0 / 10.0 / np.pi) * x[on_edge]
    hftilde = np.mean(hftemp / H, axis=1)
    c = p / n
    denom = (np.pi * c * lam * ftilde) ** 2 + (1.0 - c - np.pi * c * lam * hftilde) ** 2
    return lam / denom


def shrink_precision(Z_train: np.ndarray, source: str = "") -> PrecisionPlan:
    """Inverse of the nonlinear-shrinkage estimate of the Gram matrix."""
    Z_train = np.asarray(Z_train, dtype=float)
    n, k = Z_train.shape
    if k == 0:
        return PrecisionPlan(variant="shrink", k=0, source=source)
    if n < 12:
        raise ValueError(f"shrinkage estimator requires n >= 12, got n={n}")
    if k < 2:
        raise ValueError("shrinkage estimator requires k >= 2")
    if k > n:
        raise ValueError(f"shrinkage requires k <= n, got k={k} > n={n}")
    gram = (Z_train.T @ Z_train) / n
    lam, u = np.linalg.eigh(gram)
    shrunk = analytical_shrinkage_eigenvalues(lam, n)
    if shrunk.min() < EIG_FLOOR:
        raise ValueError(
            f"shrunk eigenvalue {shrunk.min():.3e} below floor {EIG_FLOOR:.0e} at k={k}"
        )
    whitener = u * (1.0 / np.sqrt(shrunk))[None, :]
    inverse = whitener @ whitener.T
    plan = PrecisionPlan(
        variant="shrink",
        k=k,
        inverse=0.5 * (inverse + inverse.T),
        whitener=whitener,
        source=source,
        eig_range=(float(shrunk.min()), float(shrunk.max())),
    )
    object.__setattr__(plan, "_sample_eigs", lam)
    object.__setattr__(plan, "_shrunk_eigs", shrunk)
    return plan


def write_spectrum_csv(plan: PrecisionPlan, path) -> None:
    """Dump (index, sample_eig, shrunk_eig) for a shrink plan."""
    sample = getattr(plan, "_sample_eigs", None)
    shrunk = getattr(plan, "_shrunk_eigs", None)
    if sample is None or shrunk is None:
        raise ValueError("spectrum dump is only available for shrink plans")
    with open(path, "w") as fh:
        fh.write("index,sample_eig,shrunk_eig\n")
        for i, (s, t) in enumerate(zip(sample, shrunk)):
            fh.write(f"{i},{s:.17g},{t:.17g}\n")
