"""Monte Carlo driver for coverage, bias, and rejection-rate studies.

A study freezes (or redraws) a training sample, fits the nuisance
regressions, then repeatedly draws estimation samples and records the
plug-in estimator, the second-order statistics under the requested precision
variants, the corrected estimators with their Wald intervals, and the bias
tests.  Per-replicate RNG streams derive from (master seed, replicate
index), so results are reproducible regardless of scheduling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from . import covariance as cov
from .dgp import DgpSpec, generate_dataset, make_density, oracle_projection, sample_covariates, true_functions
from .drml import cross_fit, psi1
from .kernels import KernelCache
from .nuisance import ResidualSet, fit_kernel_cv, split_fingerprint
from .wavelets import build_wavelet_table, eval_basis

__all__ = ["StudySpec", "StudyResult", "run_study", "emit_tables", "PRESETS", "preset_spec"]

VARIANTS = ("oracle", "train", "est", "quasi", "shrink")


@dataclass(frozen=True)
class StudySpec:
    """One Monte Carlo study: design, grid, variants, replications."""

    dgp: DgpSpec
    k_grid: tuple[int, ...] = (0, 8, 64)
    variants: tuple[str, ...] = ("oracle",)
    reps: int = 100
    delta: float = 0.75
    omega: float = 0.10
    alpha: float = 0.10
    conditional: bool = True
    seed: int = 0
    variant_k: dict = field(default_factory=dict)  # optional per-variant k subset
    bootstrap_k: tuple[int, ...] = ()
    bootstrap_B: int = 200
    threads: int = 1
    name: str = "study"

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValueError(f"unknown variant(s): {bad}; choose from {VARIANTS}")
        if list(self.k_grid) != sorted(set(self.k_grid)):
            raise ValueError("k_grid must be strictly ascending")

    def ks_for(self, variant: str):
        ks = self.variant_k.get(variant)
        return tuple(ks) if ks is not None else self.k_grid


@dataclass
class StudyResult:
    spec: StudySpec
    true_psi: float
    true_cbias: dict  # k -> quadrature projected bias (conditional mode)
    truncation_bias: dict
    psi1_values: np.ndarray
    psi1_vars: np.ndarray
    values: dict  # (k, variant) -> per-replicate point estimates
    var_corr: dict
    var_unc: dict
    boot_vars: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)  # (k, variant) -> message
    runtime: dict = field(default_factory=dict)
    summary_frame: pd.DataFrame | None = None

    def summary(self) -> pd.DataFrame:
        if self.summary_frame is None:
            self.summary_frame = _summarize(self)
        return self.summary_frame

    def psi2_values(self, k: int, variant: str) -> np.ndarray:
        return self.psi1_values - self.values[(k, variant)]

    def psi2_vars(self, k: int, variant: str) -> np.ndarray:
        return self.psi1_vars + np.maximum(self.var_corr[(k, variant)], 0.0)

    def coverage(self, k: int, variant: str, target: float | None = None) -> float:
        """MC coverage of the corrected estimator's (1 - alpha) Wald CI."""
        target = self.true_psi if target is None else target
        z = norm.ppf(1.0 - self.spec.alpha / 2.0)
        vals = self.psi2_values(k, variant)
        half = z * np.sqrt(self.psi2_vars(k, variant))
        return float(np.mean(np.abs(vals - target) <= half))

    def rejection_rate(self, k: int, variant: str, sided: str = "one") -> float:
        """MC rejection rate of the delta-fraction bias test at (omega, delta)."""
        z = norm.ppf(1.0 - (self.spec.omega if sided == "one" else self.spec.omega / 2))
        se_psi = np.sqrt(self.psi1_vars)
        center = self.values[(k, variant)]
        if sided == "two":
            center = np.abs(center)
        se_if = np.sqrt(np.maximum(self.var_corr[(k, variant)], 0.0))
        stat = center / se_psi - z * se_if / se_psi
        return float(np.mean(stat > self.spec.delta))

    def ucb_values(self, k: int, variant: str, sided: str = "one") -> np.ndarray:
        """Per-replicate upper confidence bounds on psi_1 interval coverage."""
        from .inference import tc_alpha

        z = norm.ppf(1.0 - self.spec.omega)
        se_psi = np.sqrt(self.psi1_vars)
        center = self.values[(k, variant)]
        if sided == "two":
            center = np.abs(center)
        se_if = np.sqrt(np.maximum(self.var_corr[(k, variant)], 0.0))
        args = np.maximum((center - z * se_if) / se_psi, 0.0)
        return np.array([tc_alpha(self.spec.alpha, d) for d in args])


def _fit_nuisances(spec: DgpSpec, data, rng):
    y_tr, a_tr, x_tr = data.rows("train")
    fit_p = fit_kernel_cv(x_tr, a_tr, rng=rng)
    if spec.functional == "variance":
        return fit_p, fit_p
    fit_b = fit_kernel_cv(x_tr, y_tr, rng=rng)
    return fit_b, fit_p


def _build_fixed_plans(study: StudySpec, table, x_train, oracle):
    """Plans that stay constant across replicates in conditional mode."""
    plans = {}
    failures = {}
    for variant in study.variants:
        if variant in ("est", "quasi"):
            continue
        for k in study.ks_for(variant):
            if k == 0:
                continue
            try:
                if variant == "oracle":
                    plans[(k, "oracle")] = cov.oracle_precision(oracle.omega[k], k)
                elif variant == "train":
                    Z_tr = eval_basis(table, x_train, k)
                    plans[(k, "train")] = cov.empirical_precision(Z_tr, "train")
                elif variant == "shrink":
                    Z_tr = eval_basis(table, x_train, k)
                    plans[(k, "shrink")] = cov.shrink_precision(Z_tr)
            except (ValueError, np.linalg.LinAlgError) as exc:
                failures[(k, variant)] = str(exc)
    return plans, failures


def _replicate(study: StudySpec, table, density, fits, plans, rep: int):
    """One estimation-sample replicate; returns a flat record dict."""
    spec = study.dgp
    rng = np.random.default_rng(np.random.SeedSequence([study.seed, 1 + rep]))
    fit_b, fit_p = fits
    b_fn, p_fn = true_functions(spec, table)

    x = sample_covariates(spec, spec.n_est, rng, table=table, density=density)
    a = rng.normal(p_fn(x), 1.0)
    y = a.copy() if spec.functional == "variance" else rng.normal(b_fn(x), 1.0)
    res = ResidualSet(
        eps_b=y - fit_b(x), eps_p=a - fit_p(x), fingerprint=split_fingerprint(x)
    )
    p1 = psi1(res)
    rec = {"psi1": p1.value, "psi1_var": p1.var_hat}

    est_like = [v for v in study.variants if v in ("est", "quasi")]
    for k in study.k_grid:
        Z = eval_basis(table, x, k) if k > 0 else np.zeros((x.size, 0))
        for variant in study.variants:
            if k not in study.ks_for(variant):
                continue
            key = (k, variant)
            if variant in ("est", "quasi"):
                continue  # handled below on a shared cache
            if key not in plans and k > 0:
                continue  # failed plan, recorded at study level
            plan = plans[key] if k > 0 else _zero_plan(variant)
            try:
                cache = KernelCache.build(res, Z, plan)
                rec[("value",) + key] = cache.if22_value()
                rec[("vu",) + key] = cache.var_uncorrected()
                rec[("vc",) + key] = cache.var_corrected()
                if k in study.bootstrap_k and variant == "oracle":
                    vals = cache.bootstrap_values(study.bootstrap_B, rng)
                    rec[("boot",) + key] = float(np.var(vals, ddof=1))
            except (ValueError, np.linalg.LinAlgError) as exc:
                rec[("fail",) + key] = str(exc)
        if est_like and k > 0:
            try:
                plan_est = cov.svd_precision(Z, source=res.fingerprint)
                cache = KernelCache.build(res, Z, plan_est)
                base = cache.if22_value()
                vu, vcr = cache.var_uncorrected(), cache.var_corrected()
                if "est" in est_like and k in study.ks_for("est"):
                    rec[("value", k, "est")] = base
                    rec[("vu", k, "est")] = vu
                    rec[("vc", k, "est")] = vcr
                if "quasi" in est_like and k in study.ks_for("quasi"):
                    rec[("value", k, "quasi")] = base + cache.quasi_correction()
                    rec[("vu", k, "quasi")] = vu
                    rec[("vc", k, "quasi")] = vcr
            except (ValueError, np.linalg.LinAlgError) as exc:
                for variant in est_like:
                    rec[("fail", k, variant)] = str(exc)
        elif est_like and k == 0:
            for variant in est_like:
                if k in study.ks_for(variant):
                    rec[("value", k, variant)] = 0.0
                    rec[("vu", k, variant)] = 0.0
                    rec[("vc", k, variant)] = 0.0
    return rec


class _ZeroPlan:
    variant = "oracle"
    source = ""
    k = 0


def _zero_plan(variant: str):
    plan = _ZeroPlan()
    plan.variant = variant if variant in ("oracle", "train", "shrink") else "oracle"
    return plan


def run_study(study: StudySpec) -> StudyResult:
    """Execute every replicate and collect per-(k, variant) arrays."""
    t_start = time.perf_counter()
    spec = study.dgp
    table = build_wavelet_table()
    density = make_density(spec, table)
    master = np.random.default_rng(np.random.SeedSequence([study.seed, 0]))

    if not study.conditional:
        return _run_unconditional(study, table, density, master, t_start)

    data = generate_dataset(spec, master, table)
    fits = _fit_nuisances(spec, data, master)
    ks_oracle = sorted({k for v in study.variants for k in study.ks_for(v) if k > 0})
    oracle = oracle_projection(spec, table, ks_oracle, fits[0], fits[1])
    x_train = data.rows("train")[2]
    plans, failures = _build_fixed_plans(study, table, x_train, oracle)

    runner = (
        Parallel(n_jobs=study.threads)(
            delayed(_replicate)(study, table, density, fits, plans, r)
            for r in range(study.reps)
        )
        if study.threads > 1
        else [
            _replicate(study, table, density, fits, plans, r)
            for r in range(study.reps)
        ]
    )

    result = _collect(study, runner, oracle, failures)
    result.runtime["total_s"] = time.perf_counter() - t_start
    return result


def _collect(study, records, oracle, failures) -> StudyResult:
    R = len(records)
    psi1_values = np.array([rec["psi1"] for rec in records])
    psi1_vars = np.array([rec["psi1_var"] for rec in records])
    values, var_corr, var_unc, boots = {}, {}, {}, {}
    fail = dict(failures)
    for variant in study.variants:
        for k in study.ks_for(variant):
            key = (k, variant)
            if key in fail:
                continue
            col = [rec.get(("value",) + key, np.nan) for rec in records]
            if all(np.isnan(col)):
                msgs = [rec.get(("fail",) + key) for rec in records]
                msg = next((m for m in msgs if m), None)
                if msg:
                    fail[key] = msg
                continue
            values[key] = np.asarray(col)
            var_corr[key] = np.asarray([rec.get(("vc",) + key, np.nan) for rec in records])
            var_unc[key] = np.asarray([rec.get(("vu",) + key, np.nan) for rec in records])
            bcol = [rec.get(("boot",) + key, np.nan) for rec in records]
            if not all(np.isnan(bcol)):
                boots[key] = np.asarray(bcol)
    true_cbias = dict(oracle.true_cbias) if oracle is not None else {}
    trunc = dict(oracle.truncation_bias) if oracle is not None else {}
    return StudyResult(
        spec=study,
        true_psi=study.dgp.true_psi,
        true_cbias=true_cbias,
        truncation_bias=trunc,
        psi1_values=psi1_values,
        psi1_vars=psi1_vars,
        values=values,
        var_corr=var_corr,
        var_unc=var_unc,
        boot_vars=boots,
        failures=fail,
        runtime={"reps": R},
    )


def _run_unconditional(study, table, density, master, t_start):
    """Cross-fit study: training and estimation samples both redrawn."""
    spec = study.dgp
    halves = []
    for r in range(study.reps):
        rng = np.random.default_rng(np.random.SeedSequence([study.seed, 1 + r]))
        data = generate_dataset(spec, rng, table)
        parts = []
        for direction in (0, 1):
            roles = ("train", "est") if direction == 0 else ("est", "train")
            y_tr, a_tr, x_tr = data.rows(roles[0])
            y_es, a_es, x_es = data.rows(roles[1])
            fit_rng = np.random.default_rng(np.random.SeedSequence([study.seed, 1 + r, direction]))
            fit_p = fit_kernel_cv(x_tr, a_tr, rng=fit_rng)
            fit_b = fit_p if spec.functional == "variance" else fit_kernel_cv(x_tr, y_tr, rng=fit_rng)
            res = ResidualSet(
                eps_b=y_es - fit_b(x_es),
                eps_p=a_es - fit_p(x_es),
                fingerprint=split_fingerprint(x_es),
            )
            p1 = psi1(res)
            piece = {"psi1": p1, "if22": {}}
            for k in study.k_grid:
                Z = eval_basis(table, x_es, k) if k > 0 else np.zeros((x_es.size, 0))
                for variant in study.variants:
                    if k not in study.ks_for(variant):
                        continue
                    if k == 0:
                        piece["if22"][(k, variant)] = (0.0, 0.0)
                        continue
                    try:
                        plan = _plan_for(variant, table, x_tr, Z, res, k, spec, master)
                        cache = KernelCache.build(res, Z, plan)
                        val = cache.if22_value()
                        if variant == "quasi":
                            val += cache.quasi_correction()
                        piece["if22"][(k, variant)] = (val, cache.var_corrected())
                    except (ValueError, np.linalg.LinAlgError):
                        piece["if22"][(k, variant)] = (np.nan, np.nan)
            parts.append(piece)
        halves.append(parts)

    psi1_values, psi1_vars = [], []
    values, var_corr = {}, {}
    for parts in halves:
        cf = cross_fit(parts[0]["psi1"], parts[1]["psi1"])
        psi1_values.append(cf.value)
        psi1_vars.append(cf.var_hat)
        for key in parts[0]["if22"]:
            v = 0.5 * (parts[0]["if22"][key][0] + parts[1]["if22"][key][0])
            w = 0.25 * (parts[0]["if22"][key][1] + parts[1]["if22"][key][1])
            values.setdefault(key, []).append(v)
            var_corr.setdefault(key, []).append(w)
    values = {key: np.asarray(v) for key, v in values.items()}
    var_corr = {key: np.asarray(v) for key, v in var_corr.items()}
    result = StudyResult(
        spec=study,
        true_psi=spec.true_psi,
        true_cbias={},
        truncation_bias={},
        psi1_values=np.asarray(psi1_values),
        psi1_vars=np.asarray(psi1_vars),
        values=values,
        var_corr=var_corr,
        var_unc={k: np.full(len(halves), np.nan) for k in values},
        runtime={"total_s": time.perf_counter() - t_start, "reps": study.reps},
    )
    return result


def _plan_for(variant, table, x_tr, Z_est, res, k, spec, rng):
    if variant == "oracle":
        grid = (np.arange(2**16) + 0.5) / 2**16
        density = make_density(spec, table)
        w = (
            np.full(grid.size, 1.0 / grid.size)
            if density is None
            else density(grid) / density(grid).sum()
        )
        Zg = eval_basis(table, grid, k)
        gram = Zg.T @ (w[:, None] * Zg)
        return cov.oracle_precision(gram, k)
    if variant == "train":
        return cov.empirical_precision(eval_basis(table, x_tr, k), "train")
    if variant == "shrink":
        return cov.shrink_precision(eval_basis(table, x_tr, k))
    if variant in ("est", "quasi"):
        return cov.svd_precision(Z_est, source=res.fingerprint)
    raise ValueError(variant)


def _summarize(result: StudyResult) -> pd.DataFrame:
    rows = []
    spec = result.spec
    rows.append(
        {
            "k": 0,
            "variant": "psi1",
            "mcav_value": float(np.mean(result.psi1_values)),
            "mcav_se": float(np.mean(np.sqrt(result.psi1_vars))),
            "mc_var": float(np.var(result.psi1_values, ddof=1)),
            "mc_bias": float(np.mean(result.psi1_values) - result.true_psi),
            "coverage": _psi1_coverage(result),
            "rejection": np.nan,
        }
    )
    for (k, variant), vals in sorted(result.values.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        finite = np.isfinite(vals)
        psi2 = result.psi2_values(k, variant)
        rows.append(
            {
                "k": k,
                "variant": variant,
                "mcav_value": float(np.mean(vals[finite])) if finite.any() else np.nan,
                "mcav_se": float(
                    np.mean(np.sqrt(np.maximum(result.var_corr[(k, variant)][finite], 0)))
                )
                if finite.any()
                else np.nan,
                "mc_var": float(np.var(vals[finite], ddof=1)) if finite.sum() > 1 else np.nan,
                "mc_bias": float(np.mean(psi2[finite]) - result.true_psi)
                if finite.any()
                else np.nan,
                "coverage": result.coverage(k, variant),
                "rejection": result.rejection_rate(k, variant),
            }
        )
    for key, msg in result.failures.items():
        rows.append(
            {
                "k": key[0],
                "variant": key[1],
                "mcav_value": np.nan,
                "mcav_se": np.nan,
                "mc_var": np.nan,
                "mc_bias": np.nan,
                "coverage": np.nan,
                "rejection": np.nan,
            }
        )
    return pd.DataFrame(rows)


def _psi1_coverage(result: StudyResult) -> float:
    z = norm.ppf(1.0 - result.spec.alpha / 2.0)
    half = z * np.sqrt(result.psi1_vars)
    return float(np.mean(np.abs(result.psi1_values - result.true_psi) <= half))


def emit_tables(result: StudyResult, outdir) -> dict:
    """Write tables/*.csv, plots/*.csv and report.json under outdir."""
    import json
    from pathlib import Path

    outdir = Path(outdir)
    (outdir / "tables").mkdir(parents=True, exist_ok=True)
    (outdir / "plots").mkdir(parents=True, exist_ok=True)
    summary = result.summary()
    table_path = outdir / "tables" / f"{result.spec.name}_summary.csv"
    summary.to_csv(table_path, index=False, float_format="%.17g")

    # qq ordinates for the oracle variant at its largest k, if available
    plots = {}
    oracle_keys = [key for key in result.values if key[1] == "oracle" and key[0] > 0]
    if oracle_keys:
        key = max(oracle_keys)
        vals = result.values[key]
        std = (vals - vals.mean()) / vals.std(ddof=1)
        qq = np.column_stack(
            [norm.ppf((np.arange(1, vals.size + 1) - 0.5) / vals.size), np.sort(std)]
        )
        qq_path = outdir / "plots" / f"{result.spec.name}_qq_k{key[0]}.csv"
        np.savetxt(
            qq_path, qq, delimiter=",", header="theoretical,observed", comments="", fmt="%.17g"
        )
        plots["qq"] = str(qq_path)
        ucb = result.ucb_values(key[0], "oracle")
        counts, edges = np.histogram(ucb, bins=20, range=(0.0, 1.0))
        hist_path = outdir / "plots" / f"{result.spec.name}_ucb_hist_k{key[0]}.csv"
        with open(hist_path, "w") as fh:
            fh.write("bin_low,bin_high,count\n")
            for lo, hi, ct in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{lo:.17g},{hi:.17g},{ct}\n")
        plots["ucb_hist"] = str(hist_path)

    report = {
        "schema_version": 1,
        "study": result.spec.name,
        "true_psi": result.true_psi,
        "true_cbias": {str(k): v for k, v in result.true_cbias.items()},
        "summary": summary.to_dict(orient="records"),
        "failures": {f"{k}:{v}": msg for (k, v), msg in result.failures.items()},
        "runtime": result.runtime,
        "plots": plots,
    }
    report_path = outdir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    return {"summary": str(table_path), "report": str(report_path), **plots}


PRESETS = {
    "table1-desk": dict(
        dgp=DgpSpec(functional="variance", beta_p=0.251, beta_fX=0.4, n_est=1000, n_train=1000),
        k_grid=(0, 8, 64, 256, 512),
        variants=("oracle", "quasi", "shrink"),
        reps=200,
        name="table1-desk",
    ),
    "table1-full": dict(
        dgp=DgpSpec(functional="variance", beta_p=0.251, beta_fX=0.4, n_est=2500, n_train=2500),
        k_grid=(0, 8, 256, 512, 1024, 2048),
        variants=("oracle", "train", "est", "quasi", "shrink"),
        variant_k={"train": (0, 8, 256, 512, 1024), "shrink": (512, 1024, 2048)},
        reps=200,
        name="table1-full",
    ),
    "covariance-desk": dict(
        dgp=DgpSpec(
            functional="covariance", beta_b=0.4, beta_p=0.1, beta_fX=None,
            n_est=1000, n_train=1000,
        ),
        k_grid=(0, 8, 64, 256, 512),
        variants=("oracle", "quasi"),
        reps=200,
        name="covariance-desk",
    ),
    "nonsmooth-desk": dict(
        dgp=DgpSpec(functional="variance", beta_p=0.251, beta_fX=0.01, n_est=1000, n_train=1000),
        k_grid=(0, 8, 64, 256, 512),
        variants=("oracle", "quasi", "shrink"),
        reps=50,
        name="nonsmooth-desk",
    ),
}


def preset_spec(name: str, **overrides) -> StudySpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    params = dict(PRESETS[name])
    params.update(overrides)
    return StudySpec(**params)
