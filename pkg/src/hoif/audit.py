"""The audit estimator: one dataset in, a full bias report out.

``BiasAudit`` follows the scikit-learn estimator protocol (constructor
parameters, ``fit``, trailing-underscore attributes, ``get_params``), so it
composes with the surrounding ecosystem.  Fitting runs the whole pipeline:
nuisance residuals, basis family, precision plans, the second-order family
per variant, corrected estimators, bias tests and upper confidence bounds,
the adaptive variant selection, and (under an oracle Gram family) the
sequential truncation-bias walk.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator

from . import covariance as cov
from ._validation import check_fraction, check_in_unit_interval, check_k_grid, check_vector
from .adaptive import AdaptiveConfig, run_adaptive
from .drml import psi1, psi2k
from .inference import bias_test, cs_test, sequential_m_tests, ucb
from .kernels import KernelCache
from .nuisance import ResidualSet, fit_kernel_cv, residuals as make_residuals, split_fingerprint
from .sequential import KGridPlan, run_sequential
from .ustat import UStatReport, if44_cs, order_value, order_variance
from .wavelets import build_basis_family, build_wavelet_table, eval_basis

__all__ = ["BiasAudit"]


class BiasAudit(BaseEstimator):
    """Estimate and test the bias of a doubly robust plug-in estimator.

    Parameters
    ----------
    k_grid : sequence of int
        Ascending powers of two (0 allowed as the no-correction row).
    variants : tuple of str
        Precision strategies among "oracle", "train", "est", "quasi",
        "shrink".  "oracle" requires ``oracle_gram`` at fit time.
    functional : str
        "variance" (one-sided tests) or "covariance" (two-sided).
    delta, omega, alpha : float
        Bias fraction under test, test level, and nominal CI level.
    fit_nuisance : bool
        Fit kernel regressions on the training split; otherwise externally
        fitted values must be supplied to :meth:`fit`.
    orders : bool
        Also compute the third/fourth-order statistics and the escalating
        order tests (training-sample plan required).
    sequential : bool
        Run the sequential truncation-bias walk over the oracle family.
    seed : int
        Seed for the nuisance cross-validation folds and any bootstrap.
    """

    def __init__(
        self,
        k_grid=(0, 8, 64),
        variants=("quasi",),
        functional="variance",
        delta=0.75,
        omega=0.10,
        alpha=0.10,
        fit_nuisance=True,
        orders=False,
        sequential=False,
        m_max=2,
        adaptive_config=None,
        seed=0,
    ):
        self.k_grid = k_grid
        self.variants = variants
        self.functional = functional
        self.delta = delta
        self.omega = omega
        self.alpha = alpha
        self.fit_nuisance = fit_nuisance
        self.orders = orders
        self.sequential = sequential
        self.m_max = m_max
        self.adaptive_config = adaptive_config
        self.seed = seed

    # -- fitting -------------------------------------------------------

    def fit(self, y, a, x, split, b_hat=None, p_hat=None, oracle_gram=None):
        """Run the audit pipeline.

        ``split`` labels rows "train" / "est".  With ``fit_nuisance=False``,
        ``b_hat`` and ``p_hat`` must be per-row fitted values.
        ``oracle_gram`` maps k to a known population Gram matrix and enables
        the oracle variant and the sequential walk.
        """
        y = check_vector("y", y)
        a = check_vector("a", a, y.size)
        x = check_vector("x", x, y.size)
        check_in_unit_interval("x", x)
        split = np.asarray(split)
        if split.shape != y.shape:
            raise ValueError("split must label every row")
        labels = set(np.unique(split))
        if not labels <= {"train", "est"}:
            raise ValueError(f"split labels must be 'train'/'est', got {sorted(labels)}")
        ks = check_k_grid(self.k_grid)
        delta = float(self.delta)
        if delta <= 0:
            raise ValueError("delta must be positive")
        omega = check_fraction("omega", self.omega)
        alpha = check_fraction("alpha", self.alpha)
        if self.functional not in ("variance", "covariance"):
            raise ValueError(f"unknown functional {self.functional!r}")
        sided = "one" if self.functional == "variance" else "two"
        unknown = [v for v in self.variants if v not in ("oracle", "train", "est", "quasi", "shrink")]
        if unknown:
            raise ValueError(f"unknown variant(s) {unknown}")
        if "oracle" in self.variants and oracle_gram is None:
            raise ValueError("the oracle variant requires oracle_gram")

        est_mask = split == "est"
        train_mask = ~est_mask
        if not est_mask.any():
            raise ValueError("no estimation rows")
        n_est = int(est_mask.sum())
        bad_k = [k for k in ks if k > n_est]
        non_oracle = [v for v in self.variants if v != "oracle"]
        if bad_k and non_oracle:
            raise ValueError(
                f"k values {bad_k} exceed the estimation sample size {n_est}: "
                "empirical precision estimation above k = n is not supported; "
                "supply an oracle Gram family and restrict variants to 'oracle'"
            )

        rng = np.random.default_rng(self.seed)
        if self.fit_nuisance:
            if not train_mask.any():
                raise ValueError("nuisance fitting needs training rows")
            x_tr = x[train_mask]
            fit_p = fit_kernel_cv(x_tr, a[train_mask], rng=rng)
            if self.functional == "variance" and np.array_equal(y, a):
                fit_b = fit_p
            else:
                fit_b = fit_kernel_cv(x_tr, y[train_mask], rng=rng)
            res = make_residuals(fit_b, fit_p, y[est_mask], a[est_mask], x[est_mask])
        else:
            if b_hat is None or p_hat is None:
                raise ValueError("external mode requires b_hat and p_hat values")
            b_hat = check_vector("b_hat", b_hat, y.size)
            p_hat = check_vector("p_hat", p_hat, y.size)
            res = ResidualSet(
                eps_b=y[est_mask] - b_hat[est_mask],
                eps_p=a[est_mask] - p_hat[est_mask],
                fingerprint=split_fingerprint(x[est_mask]),
            )

        table = build_wavelet_table()
        x_est = x[est_mask]
        family = build_basis_family(table, x_est, [k for k in ks if k > 0] or [1])
        self.residuals_ = res
        self.psi1_ = psi1(res)

        reports: dict[tuple[int, str], UStatReport] = {}
        caches: dict[tuple[int, str], KernelCache] = {}
        failures: dict[tuple[int, str], str] = {}
        plans: dict[tuple[int, str], object] = {}
        x_tr = x[train_mask]
        for k in ks:
            Z = family.matrix(k)
            for variant in self.variants:
                key = (k, variant)
                try:
                    plan = self._plan(variant, k, Z, x_tr, table, res, oracle_gram)
                    plans[key] = plan
                    cache = KernelCache.build(res, Z, plan)
                    caches[key] = cache
                    if variant == "quasi" and k > 0:
                        value = cache.if22_value() + cache.quasi_correction()
                    else:
                        value = cache.if22_value()
                    reports[key] = UStatReport(
                        value=value,
                        var_uncorrected=cache.var_uncorrected(),
                        var_corrected=cache.var_corrected(),
                        order_m=2,
                        k=k,
                        variant=variant,
                        n=cache.n,
                    )
                except (ValueError, np.linalg.LinAlgError) as exc:
                    failures[key] = str(exc)

        self.reports_ = reports
        self.failures_ = failures
        self.estimates_ = {
            key: psi2k(self.psi1_, rep) for key, rep in reports.items()
        }
        zeta = norm.ppf(1.0 - (omega if sided == "one" else omega / 2.0))
        self.tests_ = {
            key: bias_test(rep, self.psi1_, delta, zeta, sided)
            for key, rep in reports.items()
            if key[0] > 0
        }
        self.ucb_ = {
            key: ucb(rep, self.psi1_, alpha, omega, sided)
            for key, rep in reports.items()
            if key[0] > 0
        }

        self._fit_adaptive(ks, reports)
        self._fit_orders(ks, res, family, plans, caches, rng)
        self._fit_sequential(ks, res, family, oracle_gram, delta, omega)
        self.report_ = self._assemble_report(ks, sided)
        return self

    def _plan(self, variant, k, Z, x_tr, table, res, oracle_gram):
        if k == 0:
            from .harness import _zero_plan

            return _zero_plan(variant)
        if variant == "oracle":
            if k not in oracle_gram:
                raise ValueError(f"oracle Gram missing for k={k}")
            return cov.oracle_precision(np.asarray(oracle_gram[k], dtype=float), k)
        if variant == "train":
            if x_tr.size == 0:
                raise ValueError("the train variant needs training rows")
            return cov.empirical_precision(eval_basis(table, x_tr, k), "train")
        if variant == "shrink":
            if x_tr.size == 0:
                raise ValueError("the shrink variant needs training rows")
            return cov.shrink_precision(eval_basis(table, x_tr, k))
        return cov.svd_precision(Z, source=res.fingerprint)

    def _fit_adaptive(self, ks, reports):
        self.adaptive_ = None
        have_quasi = all((k, "quasi") in reports for k in ks if k > 0)
        ks_pos = [k for k in ks if k > 0]
        if not (have_quasi and "shrink" in self.variants and len(ks_pos) >= 2):
            return
        quasi_vals = {k: reports[(k, "quasi")].value for k in ks_pos}
        quasi_vars = {k: reports[(k, "quasi")].var_corrected for k in ks_pos}
        shrink_vals = {
            k: reports[(k, "shrink")].value for k in ks_pos if (k, "shrink") in reports
        }
        shrink_vars = {
            k: reports[(k, "shrink")].var_corrected
            for k in ks_pos
            if (k, "shrink") in reports
        }
        config = self.adaptive_config or AdaptiveConfig()
        self.adaptive_ = run_adaptive(
            quasi_vals, quasi_vars, shrink_vals, shrink_vars, ks_pos, config=config
        )

    def _fit_orders(self, ks, res, family, plans, caches, rng):
        self.order_reports_ = {}
        self.cs_tests_ = {}
        self.sequential_m_ = {}
        if not self.orders:
            return
        if "train" not in self.variants:
            warnings.warn("order tests need the train variant; skipping", stacklevel=2)
            return
        for k in ks:
            if k == 0 or (k, "train") not in caches:
                continue
            cache = caches[(k, "train")]
            plan = plans[(k, "train")]
            rep44 = if44_cs(res, family.matrix(k), plan, cache=cache)
            self.order_reports_[(k, 4)] = rep44
            val3 = order_value(cache, 3)
            var3 = order_variance(cache, 3)
            self.order_reports_[(k, 3)] = UStatReport(
                value=val3, var_uncorrected=var3, var_corrected=var3,
                order_m=3, k=k, variant="train", n=cache.n,
            )
            self.cs_tests_[k] = cs_test(
                rep44, self.psi1_, self.delta, norm.ppf(1.0 - self.omega)
            )
            outcomes, m_first = sequential_m_tests(
                self.psi1_, res, family.matrix(k), plan,
                self.delta, self.omega, m_max=self.m_max, cache=cache, rng=rng,
            )
            self.sequential_m_[k] = {"outcomes": outcomes, "m_first": m_first}

    def _fit_sequential(self, ks, res, family, oracle_gram, delta, omega):
        self.sequential_k_ = None
        if not self.sequential:
            return
        if oracle_gram is None:
            raise ValueError("the sequential walk requires an oracle Gram family")
        ks_pos = [k for k in ks if k > 0 and k in oracle_gram]
        if len(ks_pos) < 2:
            warnings.warn("sequential walk needs at least two positive k", stacklevel=2)
            return
        caches = {}
        for k in ks_pos:
            plan = cov.oracle_precision(np.asarray(oracle_gram[k], dtype=float), k)
            caches[k] = KernelCache.build(res, family.matrix(k), plan)
        plan_grid = KGridPlan(k_grid=tuple(ks_pos), caches=caches, psi1_est=self.psi1_)
        self.sequential_k_ = run_sequential(plan_grid, delta, omega)

    def _assemble_report(self, ks, sided) -> dict:
        rows = []
        for (k, variant), rep in sorted(self.reports_.items()):
            est = self.estimates_[(k, variant)]
            lo, hi = est.wald_ci(self.alpha)
            row = {
                "k": k,
                "variant": variant,
                "if22": rep.value,
                "if22_se": rep.se,
                "psi2": est.value,
                "psi2_se": est.se,
                "ci_low": lo,
                "ci_high": hi,
            }
            if (k, variant) in self.tests_:
                t = self.tests_[(k, variant)]
                row.update(statistic=t.statistic, reject=t.reject)
                row["ucb"] = self.ucb_[(k, variant)].ucb_value
            rows.append(row)
        report = {
            "schema_version": 1,
            "functional": self.functional,
            "sided": sided,
            "delta": float(self.delta),
            "omega": float(self.omega),
            "alpha": float(self.alpha),
            "n_est": self.psi1_.n,
            "psi1": {"value": self.psi1_.value, "se": self.psi1_.se},
            "estimates": rows,
            "failures": {f"{k}:{v}": msg for (k, v), msg in self.failures_.items()},
        }
        if self.adaptive_ is not None:
            ad = self.adaptive_
            report["adaptive"] = {
                "k_quasi": ad.k_quasi,
                "k_shrink_low": ad.k_shrink_low,
                "k_shrink_high": ad.k_shrink_high,
                "k_star": ad.k_star,
                "value_at_k_star": ad.value_at_k_star,
                "se_at_k_star": ad.se_at_k_star,
                "choice": {str(k): v for k, v in ad.choice.items()},
            }
        if self.cs_tests_:
            report["cs_tests"] = {
                str(k): {"statistic": t.statistic, "reject": t.reject}
                for k, t in self.cs_tests_.items()
            }
        if self.sequential_m_:
            report["sequential_m"] = {
                str(k): {
                    "m_first": rec["m_first"],
                    "outcomes": [
                        {"m": o.m, "statistic": o.statistic, "reject": o.reject}
                        for o in rec["outcomes"]
                    ],
                }
                for k, rec in self.sequential_m_.items()
            }
        if self.sequential_k_ is not None:
            seq = self.sequential_k_
            report["sequential_k"] = {
                "first_accept_index": seq.first_accept_index,
                "accepted_k": list(seq.accepted_k),
                "tests": [
                    {
                        "step": j,
                        "k": k,
                        "k_prime": kp,
                        "statistic": out.statistic,
                        "cutoff": out.cutoff,
                        "reject": out.reject,
                    }
                    for j, k, kp, out in seq.outcomes
                ],
                "bars": seq.bar_data,
            }
        return report
