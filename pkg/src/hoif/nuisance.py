"""Nuisance regression fits and the frozen residual sets they produce.

The built-in learner is Nadaraya-Watson kernel regression with a Gaussian
kernel and S-fold cross-validated bandwidth, fitted on the training split
only.  Externally fitted values can be ingested instead, so the downstream
machinery is agnostic to the ML algorithm that produced them.  Either way,
the only thing carried forward is the residual pair on the estimation split.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin

__all__ = [
    "KernelRegression",
    "KernelFit",
    "ResidualSet",
    "fit_kernel_cv",
    "residuals",
    "ingest_fitted_values",
    "default_bandwidth_grid",
    "split_fingerprint",
]

RESIDUAL_CAP = 50.0


def split_fingerprint(x: np.ndarray) -> str:
    """Order-insensitive fingerprint of a sample, used to police splits."""
    data = np.sort(np.ascontiguousarray(np.asarray(x, dtype=float)))
    return hashlib.sha256(data.tobytes()).hexdigest()[:16]


class KernelRegression(BaseEstimator, RegressorMixin):
    """Nadaraya-Watson regression with a Gaussian kernel.

    Parameters
    ----------
    bandwidth : float
        Kernel bandwidth, must be positive.

    Predictions are convex combinations of the training responses; a point
    far from every training point falls back to its nearest neighbour.
    """

    def __init__(self, bandwidth: float = 0.1):
        self.bandwidth = bandwidth

    def fit(self, X, y):
        X = np.asarray(X, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if X.size != y.size or X.size == 0:
            raise ValueError("X and y must be nonempty and of equal length")
        self.x_train_ = X
        self.y_train_ = y
        self.fingerprint_ = split_fingerprint(X)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float).ravel()
        out = np.empty(X.size)
        chunk = max(1, int(2**22 / max(self.x_train_.size, 1)))
        for lo in range(0, X.size, chunk):
            hi = min(lo + chunk, X.size)
            d = (X[lo:hi, None] - self.x_train_[None, :]) / self.bandwidth
            w = np.exp(-0.5 * np.square(d, out=d))
            tot = w.sum(axis=1)
            safe = tot > 1e-300
            vals = np.empty(hi - lo)
            vals[safe] = (w[safe] @ self.y_train_) / tot[safe]
            if not np.all(safe):
                near = np.abs(
                    X[lo:hi][~safe, None] - self.x_train_[None, :]
                ).argmin(axis=1)
                vals[~safe] = self.y_train_[near]
            out[lo:hi] = vals
        return out


@dataclass(frozen=True)
class KernelFit:
    """A frozen kernel regression with its cross-validation score."""

    model: KernelRegression
    bandwidth: float
    cv_score: float
    fingerprint: str

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if not np.isfinite(self.cv_score):
            raise ValueError("cv_score must be finite")

    def __call__(self, x):
        return self.model.predict(x)


def default_bandwidth_grid(n: int, num: int = 25) -> np.ndarray:
    """Log-spaced bandwidth grid over [1/n, 1]."""
    return np.geomspace(1.0 / n, 1.0, num=num)


def fit_kernel_cv(
    x_train,
    y_train,
    folds: int = 5,
    bandwidth_grid=None,
    rng: np.random.Generator | None = None,
) -> KernelFit:
    """Select the bandwidth minimizing the summed S-fold CV squared loss.

    Ties are broken toward the larger bandwidth.  Folds are a random
    partition of the training rows (deterministic given ``rng``).
    """
    x_train = np.asarray(x_train, dtype=float).ravel()
    y_train = np.asarray(y_train, dtype=float).ravel()
    n = x_train.size
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if n < folds:
        raise ValueError(f"need at least {folds} training rows, got {n}")
    if bandwidth_grid is None:
        bandwidth_grid = default_bandwidth_grid(n)
    bandwidth_grid = np.sort(np.asarray(bandwidth_grid, dtype=float))
    if bandwidth_grid.size == 0 or bandwidth_grid[0] <= 0:
        raise ValueError("bandwidth grid must be nonempty and positive")
    if rng is None:
        rng = np.random.default_rng(0)

    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % folds

    scores = np.zeros(bandwidth_grid.size)
    for s in range(folds):
        held = fold_of == s
        xs, ys = x_train[~held], y_train[~held]
        xh, yh = x_train[held], y_train[held]
        for bi, bw in enumerate(bandwidth_grid):
            pred = KernelRegression(bandwidth=bw).fit(xs, ys).predict(xh)
            scores[bi] += float(np.sum((yh - pred) ** 2))
    # argmin over reversed grid -> ties resolve to the largest bandwidth
    best = bandwidth_grid.size - 1 - int(np.argmin(scores[::-1]))
    model = KernelRegression(bandwidth=float(bandwidth_grid[best]))
    model.fit(x_train, y_train)
    return KernelFit(
        model=model,
        bandwidth=float(bandwidth_grid[best]),
        cv_score=float(scores[best]),
        fingerprint=model.fingerprint_,
    )


@dataclass(frozen=True)
class ResidualSet:
    """Estimation-split residual pair (Y - b_hat(X), A - p_hat(X))."""

    eps_b: np.ndarray
    eps_p: np.ndarray
    fingerprint: str
    max_abs: float = 0.0

    def __post_init__(self):
        eps_b = np.asarray(self.eps_b, dtype=float)
        eps_p = np.asarray(self.eps_p, dtype=float)
        if eps_b.shape != eps_p.shape or eps_b.ndim != 1 or eps_b.size == 0:
            raise ValueError("residual vectors must be equal-length nonempty 1-d arrays")
        if not (np.all(np.isfinite(eps_b)) and np.all(np.isfinite(eps_p))):
            raise ValueError("residuals must be finite")
        object.__setattr__(self, "eps_b", eps_b)
        object.__setattr__(self, "eps_p", eps_p)
        cap = float(max(np.abs(eps_b).max(), np.abs(eps_p).max()))
        object.__setattr__(self, "max_abs", cap)
        if cap > RESIDUAL_CAP:
            warnings.warn(
                f"max absolute residual {cap:.3g} exceeds the boundedness cap "
                f"{RESIDUAL_CAP:g}; downstream guarantees assume bounded residuals",
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return self.eps_b.size


def residuals(fit_b, fit_p, y_est, a_est, x_est) -> ResidualSet:
    """Residuals on the estimation split from training-split fits.

    Both fits must carry the same training fingerprint, and it must differ
    from the estimation split's; a mismatch signals a sample-splitting
    violation.
    """
    x_est = np.asarray(x_est, dtype=float).ravel()
    fp_est = split_fingerprint(x_est)
    fp_b = getattr(fit_b, "fingerprint", None)
    fp_p = getattr(fit_p, "fingerprint", None)
    if fp_b is not None and fp_p is not None and fp_b != fp_p:
        raise ValueError("b and p fits come from different training splits")
    if fp_b is not None and fp_b == fp_est:
        raise ValueError(
            "fit fingerprint equals the estimation split: estimation rows leaked "
            "into nuisance training"
        )
    eps_b = np.asarray(y_est, dtype=float).ravel() - np.asarray(fit_b(x_est), dtype=float)
    eps_p = np.asarray(a_est, dtype=float).ravel() - np.asarray(fit_p(x_est), dtype=float)
    return ResidualSet(eps_b=eps_b, eps_p=eps_p, fingerprint=fp_est)


def ingest_fitted_values(source) -> ResidualSet:
    """Residuals from a CSV (or DataFrame) of externally fitted values.

    Expects columns y, a, x, b_hat, p_hat, split with split labels in
    {train, est}; residuals are computed on the est rows only.
    """
    if isinstance(source, pd.DataFrame):
        df = source
    else:
        df = pd.read_csv(source)
    required = ["y", "a", "x", "b_hat", "p_hat", "split"]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValueError(f"missing required column(s): {', '.join(missing)}")
    labels = set(df["split"].unique())
    if not labels <= {"train", "est"}:
        raise ValueError(f"split labels must be 'train' or 'est', got {sorted(labels)}")
    est = df[df["split"] == "est"]
    if est.empty:
        raise ValueError("no estimation rows (split == 'est') present")
    numeric = est[["y", "a", "x", "b_hat", "p_hat"]].to_numpy(dtype=float)
    if not np.all(np.isfinite(numeric)):
        bad = [
            c
            for c in ["y", "a", "x", "b_hat", "p_hat"]
            if not np.all(np.isfinite(est[c].to_numpy(dtype=float)))
        ]
        raise ValueError(f"non-finite values in column(s): {', '.join(bad)}")
    eps_b = numeric[:, 0] - numeric[:, 3]
    eps_p = numeric[:, 1] - numeric[:, 4]
    return ResidualSet(
        eps_b=eps_b, eps_p=eps_p, fingerprint=split_fingerprint(numeric[:, 2])
    )
