"""Command-line interface: audit a dataset, run simulations, render reports.

Configuration files are INI-style (key = value sections).  Exit codes:
0 success, 2 validation/configuration error, 3 numerical failure (singular
precision, blow-up guard).
"""

from __future__ import annotations

import configparser
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .audit import BiasAudit
from .dgp import DgpSpec
from .harness import PRESETS, StudySpec, emit_tables, preset_spec, run_study

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _output_dir(explicit) -> Path:
    env = os.environ.get("HOIF_OUTPUT_DIR")
    out = Path(explicit) if explicit else (Path(env) if env else Path("hoif-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_config(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"config file {path} not found or unreadable")
    return parser


def _parse_ints(text: str):
    return tuple(int(tok) for tok in text.replace(",", " ").split())


@click.group()
def main():
    """Bias diagnostics for doubly robust ML estimators."""


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="INI config file")
@click.option("--input", "input_path", type=str, default=None, help="input CSV")
@click.option("--output", type=str, default=None, help="output directory")
@click.option("--k-grid", type=str, default=None, help="comma-separated k values")
@click.option("--variants", type=str, default=None, help="comma-separated variants")
@click.option(
    "--fit-mode",
    type=click.Choice(["internal-kernel", "external-columns"]),
    default=None,
)
@click.option("--functional", type=click.Choice(["variance", "covariance"]), default=None)
@click.option("--delta", type=float, default=None)
@click.option("--omega", type=float, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--orders", is_flag=True, default=False, help="higher-order statistics and tests")
@click.option("--sequential", is_flag=True, default=False, help="sequential truncation-bias walk")
@click.option("--oracle-gram", type=str, default=None, help=".npz with gram_<k> arrays")
@click.option("--basis", type=str, default=None, help=".npz with basis_<k> matrices (d > 1)")
@click.option("--seed", type=int, default=0)
@click.option("--threads", type=int, default=1)
def audit(config_path, input_path, output, k_grid, variants, fit_mode, functional,
          delta, omega, alpha, orders, sequential, oracle_gram, basis, seed, threads):
    """Analyze a user dataset: estimates, tests, bounds, adaptive selection."""
    settings = {
        "input": input_path,
        "output": output,
        "k_grid": k_grid,
        "variants": variants,
        "fit_mode": fit_mode,
        "functional": functional,
        "delta": delta,
        "omega": omega,
        "alpha": alpha,
        "oracle_gram": oracle_gram,
        "basis": basis,
    }
    try:
        if config_path:
            parser = _read_config(config_path)
            section = parser["audit"] if parser.has_section("audit") else parser["DEFAULT"]
            for key in settings:
                if settings[key] is None and key in section:
                    settings[key] = section[key]
        if not settings["input"]:
            raise ValueError("no input CSV given (flag --input or config key 'input')")
        df = pd.read_csv(settings["input"])
        required = ["y", "a", "x", "split"]
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise ValueError(f"missing required column(s): {', '.join(missing)}")
        fit_mode_val = settings["fit_mode"] or (
            "external-columns" if "b_hat" in df.columns else "internal-kernel"
        )
        if fit_mode_val == "external-columns":
            for col in ("b_hat", "p_hat"):
                if col not in df.columns:
                    raise ValueError(f"external-columns mode needs column {col}")
        ks = _parse_ints(settings["k_grid"]) if settings["k_grid"] else (0, 8, 64)
        variant_list = (
            tuple(settings["variants"].replace(",", " ").split())
            if settings["variants"]
            else ("quasi",)
        )
        gram = None
        if settings["oracle_gram"]:
            with np.load(settings["oracle_gram"]) as arc:
                gram = {
                    int(name.split("_")[1]): arc[name]
                    for name in arc.files
                    if name.startswith("gram_")
                }
        x_cols = [c for c in df.columns if c == "x" or c.startswith("x")]
        if len(x_cols) > 1 and fit_mode_val == "internal-kernel":
            raise ValueError(
                "internal kernel fitting supports one covariate column; supply "
                "external fitted values (and an external basis) for d > 1"
            )
        est = BiasAudit(
            k_grid=ks,
            variants=variant_list,
            functional=settings["functional"] or "variance",
            delta=float(settings["delta"]) if settings["delta"] is not None else 0.75,
            omega=float(settings["omega"]) if settings["omega"] is not None else 0.10,
            alpha=float(settings["alpha"]) if settings["alpha"] is not None else 0.10,
            fit_nuisance=(fit_mode_val == "internal-kernel"),
            orders=orders,
            sequential=sequential,
            seed=seed,
        )
        kwargs = {}
        if fit_mode_val == "external-columns":
            kwargs["b_hat"] = df["b_hat"].to_numpy(dtype=float)
            kwargs["p_hat"] = df["p_hat"].to_numpy(dtype=float)
        outdir = _output_dir(settings["output"])
    except (ValueError, KeyError, OSError, configparser.Error) as exc:
        _fail(EXIT_VALIDATION, str(exc))

    try:
        est.fit(
            df["y"].to_numpy(dtype=float),
            df["a"].to_numpy(dtype=float),
            df["x"].to_numpy(dtype=float),
            df["split"].to_numpy(),
            oracle_gram=gram,
            **kwargs,
        )
    except ValueError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
        _fail(EXIT_NUMERICAL, str(exc))

    report_path = outdir / "report.json"
    with open(report_path, "w") as fh:
        json.dump(est.report_, fh, indent=2, default=float)
    rows = pd.DataFrame(est.report_["estimates"])
    rows.to_csv(outdir / "estimates.csv", index=False, float_format="%.17g")
    if est.sequential_k_ is not None:
        from .sequential import write_bar_csv

        write_bar_csv(est.sequential_k_, outdir / "sequential_bars.csv")
    click.echo(f"wrote {report_path}")


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="INI config file")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--output", type=str, default=None)
@click.option("--reps", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=1)
def simulate(config_path, preset, output, reps, seed, threads):
    """Run a Monte Carlo study from a preset or a config file."""
    try:
        if preset:
            overrides = {}
            if reps is not None:
                overrides["reps"] = reps
            if seed is not None:
                overrides["seed"] = seed
            overrides["threads"] = threads
            study = preset_spec(preset, **overrides)
        elif config_path:
            parser = _read_config(config_path)
            dgp_sec = parser["dgp"]
            beta_fx_raw = dgp_sec.get("beta_fx", fallback="uniform")
            dgp = DgpSpec(
                functional=dgp_sec.get("functional", "variance"),
                beta_b=dgp_sec.getfloat("beta_b", 0.251),
                beta_p=dgp_sec.getfloat("beta_p", 0.251),
                beta_fX=None if beta_fx_raw in ("uniform", "none") else float(beta_fx_raw),
                n_est=dgp_sec.getint("n_est", 1000),
                n_train=dgp_sec.getint("n_train", 1000),
                seed=dgp_sec.getint("seed", 0),
            )
            sim = parser["simulate"] if parser.has_section("simulate") else parser["DEFAULT"]
            study = StudySpec(
                dgp=dgp,
                k_grid=_parse_ints(sim.get("k_grid", "0 8 64")),
                variants=tuple(sim.get("variants", "oracle").replace(",", " ").split()),
                reps=reps if reps is not None else sim.getint("reps", 100),
                delta=sim.getfloat("delta", 0.75),
                omega=sim.getfloat("omega", 0.10),
                alpha=sim.getfloat("alpha", 0.10),
                conditional=sim.getboolean("conditional", True),
                seed=seed if seed is not None else sim.getint("seed", 0),
                threads=threads,
                name=sim.get("name", "study"),
            )
        else:
            raise ValueError("provide --preset or --config")
        outdir = _output_dir(output)
    except (ValueError, KeyError, OSError, configparser.Error) as exc:
        _fail(EXIT_VALIDATION, str(exc))

    try:
        result = run_study(study)
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError) as exc:
        _fail(EXIT_NUMERICAL, str(exc))

    paths = emit_tables(result, outdir)
    click.echo(f"wrote {paths['report']}")


@main.command()
@click.argument("report_path", type=str)
@click.option("--what", type=str, required=True, help="tc-curve | ucb-hist | tables")
@click.option("--alpha", type=float, default=0.10)
@click.option("--output", type=str, default=None)
def report(report_path, what, alpha, output):
    """Render a stored report to CSV or markdown views."""
    from .inference import tc_alpha

    try:
        outdir = _output_dir(output)
        if what == "tc-curve":
            deltas = np.round(np.arange(0.0, 6.0 + 1e-9, 0.01), 10)
            path = outdir / "tc_curve.csv"
            with open(path, "w") as fh:
                fh.write("delta,tc\n")
                for d in deltas:
                    fh.write(f"{d:.17g},{tc_alpha(alpha, float(d)):.17g}\n")
            click.echo(f"wrote {path}")
            return
        with open(report_path) as fh:
            data = json.load(fh)
        if what == "ucb-hist":
            if "estimates" in data:
                vals = [row["ucb"] for row in data["estimates"] if "ucb" in row]
            else:
                raise ValueError("report holds no upper confidence bounds")
            if not vals:
                raise ValueError("report holds no upper confidence bounds")
            counts, edges = np.histogram(vals, bins=20, range=(0.0, 1.0))
            path = outdir / "ucb_hist.csv"
            with open(path, "w") as fh:
                fh.write("bin_low,bin_high,count\n")
                for lo, hi, ct in zip(edges[:-1], edges[1:], counts):
                    fh.write(f"{lo:.17g},{hi:.17g},{ct}\n")
            click.echo(f"wrote {path}")
            return
        if what == "tables":
            rows = data.get("estimates") or data.get("summary") or []
            if not rows:
                raise ValueError("report holds no tabular rows")
            frame = pd.DataFrame(rows)
            path = outdir / "tables.md"
            with open(path, "w") as fh:
                fh.write(frame.to_markdown(index=False))
            click.echo(f"wrote {path}")
            return
        raise ValueError(f"unknown report view {what!r}")
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, str(exc))


if __name__ == "__main__":
    main()
