"""Config-driven experiment runner.

Subcommands: run | rate | moments | metric | check | selftest.  Each reads a
flat key=value config (see config.py), validates everything up front, runs
the experiment, and writes CSV data plus a flat key=value summary (and a
gnuplot script where a plot makes sense).  Floats are serialized with
shortest round-trip decimals so reruns are byte-comparable.

Exit codes: 0 success, 2 config error, 3 numeric blow-up, 4 gate failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, models
from .config import ConfigError, ExperimentConfig, load_config
from .measure import default_dictionary
from .models import GrowthSampleSpec, PairSampleSpec, make_model, with_mf_ou_oracles
from .solver import BlowUpError, em_multilevel, em_run, run_single, sample_initial, sample_lattice

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_GATE = 4


class GateFailure(RuntimeError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_summary(path: Path, mapping: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {_fmt(value)}\n")


def _write_gnuplot(path: Path, body: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("set datafile separator ','\n")
        fh.write(body)


def _out_dir(cfg_out: Path | None, cli_out: str | None, kind: str) -> Path:
    if cli_out is not None:
        out = Path(cli_out)
    elif cfg_out is not None:
        out = cfg_out
    elif os.environ.get("MVSDE_OUT"):
        out = Path(os.environ["MVSDE_OUT"]) / kind
    else:
        out = Path("mvsde-out") / kind
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_model(cfg: ExperimentConfig):
    model = make_model(cfg.model_id, dim=cfg.dim, params=cfg.model_params)
    if model.model_id == "mf-ou":
        model = with_mf_ou_oracles(
            model, cfg.law.mean(cfg.dim), cfg.law.second_moment(cfg.dim)
        )
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig, out: Path, threads: int, gate: bool) -> dict:
    model = _build_model(cfg)
    traj = run_single(
        model,
        cfg.law,
        cfg.seed,
        cfg.level,
        finest=cfg.finest,
        n_particles=cfg.n_particles,
        horizon=cfg.horizon,
        record_level=cfg.record_level,
        workers=threads,
    )
    rows = (
        (traj.times[j], p, k, traj.states[j, p, k])
        for j in range(traj.times.shape[0])
        for p in range(traj.n_particles)
        for k in range(traj.dim)
    )
    _write_csv(out / "trajectories.csv", ["time", "particle", "dim", "value"], rows)

    means = traj.states.mean(axis=1)
    mean_norms = np.linalg.norm(means, axis=1)
    summary = {
        "experiment": "run",
        "model": cfg.model_id,
        "seed": cfg.seed,
        "N": cfg.n_particles,
        "T": cfg.horizon,
        "level": cfg.level,
        "points": traj.times.shape[0],
        "final_mean_norm": float(mean_norms[-1]),
    }
    if (mean_norms > 1e-12).all() and traj.times.shape[0] >= 3:
        decay, _ = np.polyfit(traj.times, np.log(mean_norms), 1)
        summary["mean_decay_rate"] = float(decay)
    _write_summary(out / "summary.txt", summary)
    return summary


def cmd_rate(cfg: ExperimentConfig, out: Path, threads: int, gate: bool) -> dict:
    model = _build_model(cfg)
    runs = em_multilevel(
        model,
        cfg.law,
        cfg.seed,
        list(cfg.levels),
        cfg.finest,
        cfg.n_particles,
        cfg.horizon,
        record_level=cfg.record_level,
        workers=threads,
    )
    ref = runs[cfg.finest]
    errors, stderrs = [], []
    for lvl in cfg.levels:
        est, se = analysis.strong_error(ref, runs[lvl])
        errors.append(est)
        stderrs.append(se)
    report = analysis.fit_rate(
        cfg.levels, errors, stderrs,
        n_particles=cfg.n_particles, seed=cfg.seed, model_id=cfg.model_id,
    )
    _write_csv(out / "rate.csv", ["level", "error", "stderr"], zip(cfg.levels, errors, stderrs))
    _write_gnuplot(
        out / "rate.gp",
        "set logscale y 2\nset xlabel 'level n'\nset ylabel 'mean squared sup gap'\n"
        "plot 'rate.csv' skip 1 using 1:2:3 with yerrorlines title 'coupled error'\n",
    )
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    summary = {
        "experiment": "rate",
        "model": cfg.model_id,
        "seed": cfg.seed,
        "N": cfg.n_particles,
        "T": cfg.horizon,
        "finest": cfg.finest,
        "levels": " ".join(str(v) for v in cfg.levels),
        "slope": report.slope,
        "intercept": report.intercept,
        "monotone": monotone,
    }
    for lvl, err, se in zip(cfg.levels, errors, stderrs):
        summary[f"error.{lvl}"] = err
        summary[f"stderr.{lvl}"] = se
    if gate:
        ok = cfg.gate_slope_min <= report.slope <= cfg.gate_slope_max
        if cfg.gate_monotone:
            ok = ok and monotone
        summary["gate"] = "pass" if ok else "fail"
        summary["gate.slope_window"] = f"[{cfg.gate_slope_min} {cfg.gate_slope_max}]"
        _write_summary(out / "summary.txt", summary)
        if not ok:
            raise GateFailure(
                f"rate gate failed: slope {report.slope:.4f} outside "
                f"[{cfg.gate_slope_min}, {cfg.gate_slope_max}]"
                + (" or errors not monotone" if cfg.gate_monotone and not monotone else "")
            )
    else:
        _write_summary(out / "summary.txt", summary)
    return summary


def cmd_moments(cfg: ExperimentConfig, out: Path, threads: int, gate: bool) -> dict:
    model = _build_model(cfg)
    traj = run_single(
        model,
        cfg.law,
        cfg.seed,
        cfg.level,
        finest=cfg.finest,
        n_particles=cfg.n_particles,
        horizon=cfg.horizon,
        record_level=cfg.record_level,
        workers=threads,
    )
    report = analysis.moment_curve(traj, cfg.moment_order)
    oracle_vals = None
    if model.moment_oracle is not None and cfg.moment_order == 1:
        oracle_vals = np.array([model.moment_oracle(t, 1) for t in report.times])
    header = ["time", "moment", "stderr", "envelope"]
    columns = [report.times, report.moments, report.stderrs, report.envelope]
    if oracle_vals is not None:
        header.append("oracle")
        columns.append(oracle_vals)
    _write_csv(out / "moments.csv", header, zip(*columns))
    _write_gnuplot(
        out / "moments.gp",
        "set xlabel 'time'\nset ylabel 'moment'\n"
        "plot 'moments.csv' skip 1 using 1:2:3 with yerrorlines title 'empirical', "
        "'moments.csv' skip 1 using 1:4 with lines title 'envelope'\n",
    )
    summary = {
        "experiment": "moments",
        "model": cfg.model_id,
        "seed": cfg.seed,
        "N": cfg.n_particles,
        "T": cfg.horizon,
        "level": cfg.level,
        "p": cfg.moment_order,
        "envelope_constant": report.envelope_constant,
        "envelope_dominates": report.dominated,
    }
    if oracle_vals is not None:
        dev = np.abs(report.moments - oracle_vals)
        # t = 0 has zero spread; compare later points in standard-error units
        with np.errstate(divide="ignore", invalid="ignore"):
            units = np.where(report.stderrs > 0, dev / report.stderrs, np.where(dev > 0, np.inf, 0.0))
        summary["oracle_max_dev_se"] = float(units.max())
    _write_summary(out / "summary.txt", summary)
    if gate:
        ok = report.dominated
        if oracle_vals is not None:
            ok = ok and summary["oracle_max_dev_se"] <= 3.0
        if not ok:
            raise GateFailure("moment gate failed: oracle deviation above 3 standard errors")
    return summary


def cmd_metric(cfg: ExperimentConfig, out: Path, threads: int, gate: bool) -> dict:
    model = _build_model(cfg)

    def one(seed: int):
        return run_single(
            model,
            cfg.law,
            seed,
            cfg.level,
            finest=cfg.finest,
            n_particles=cfg.n_particles,
            horizon=cfg.horizon,
            record_level=cfg.record_level,
            workers=threads,
        )

    traj_a = one(cfg.seed)
    traj_b = one(cfg.seed_b if cfg.seed_b is not None else cfg.seed + 1)
    report = analysis.law_gap_curve(traj_a, traj_b, default_dictionary(cfg.dim))
    _write_csv(
        out / "metric.csv",
        ["time", "rho_upper", "rho_lower"],
        zip(report.times, report.upper, report.lower),
    )
    _write_gnuplot(
        out / "metric.gp",
        "set xlabel 'time'\nset ylabel 'law gap'\n"
        "plot 'metric.csv' skip 1 using 1:2 with lines title 'upper', "
        "'metric.csv' skip 1 using 1:3 with lines title 'lower'\n",
    )
    summary = {
        "experiment": "metric",
        "model": cfg.model_id,
        "seed_a": cfg.seed,
        "seed_b": cfg.seed_b if cfg.seed_b is not None else cfg.seed + 1,
        "N": cfg.n_particles,
        "coupling": report.coupling,
        "max_upper": float(report.upper.max()),
        "max_lower": float(report.lower.max()),
        "sandwich": bool((report.lower <= report.upper + 1e-12).all()),
    }
    _write_summary(out / "summary.txt", summary)
    return summary


def cmd_check(cfg: ExperimentConfig, out: Path, threads: int, gate: bool) -> dict:
    model = _build_model(cfg)
    growth = models.check_linear_growth(
        model, GrowthSampleSpec(count=cfg.check_count), seed=cfg.seed
    )
    rows = [("linear_growth", growth.passed, growth.fitted_l1, "", growth.failure)]
    summary = {
        "experiment": "check",
        "model": cfg.model_id,
        "seed": cfg.seed,
        "linear_growth.passed": growth.passed,
        "linear_growth.fitted_l1": growth.fitted_l1,
    }
    if growth.failure:
        summary["linear_growth.failure"] = growth.failure
    h2p = None
    if model.assumption_class == "H1+H2'":
        h2p = models.check_h2prime(
            model, PairSampleSpec(count=cfg.check_pairs), seed=cfg.seed
        )
        rows.append(("h2prime", h2p.passed, h2p.fitted_lambda1, h2p.fitted_lambda2, h2p.failure))
        summary["h2prime.passed"] = h2p.passed
        summary["h2prime.fitted_lambda1"] = h2p.fitted_lambda1
        summary["h2prime.fitted_lambda2"] = h2p.fitted_lambda2
        summary["h2prime.measure_term"] = h2p.measure_term
    _write_csv(out / "check.csv", ["check", "passed", "fitted_1", "fitted_2", "note"], rows)
    _write_summary(out / "summary.txt", summary)
    if gate:
        ok = growth.passed and (h2p is None or h2p.passed)
        if not ok:
            raise GateFailure("assumption check failed; see check.csv")
    return summary


def cmd_selftest(out: Path, gate: bool) -> dict:
    """Solver-free pipeline checks against closed forms."""
    levels = [1, 2, 3, 4, 5, 6]
    errors = [2.0 ** (-n) for n in levels]
    report = analysis.fit_rate(levels, errors)
    _write_csv(out / "rate.csv", ["level", "error", "stderr"], zip(levels, errors, [0.0] * len(levels)))

    kappa = models.ModulusKappaEta()
    knee_gap = abs(
        models.kappa_eta(kappa.eta, kappa.eta)
        - ((math.log(1.0 / kappa.eta) - 1.0) * kappa.eta + kappa.eta)
    )
    osgood_val = analysis.osgood_integral(kappa, 1e-8, kappa.eta)
    osgood_exact = math.log(math.log(1e8)) - math.log(2.0)
    bihari = analysis.bihari_ode_check(kappa, 1.0, 1e-8, 1.0)
    bihari_exact = 1e-8 ** math.exp(-1.0)

    checks = {
        "synthetic_slope": abs(report.slope + 1.0) <= 1e-12,
        "modulus_knee_continuity": knee_gap <= 1e-12,
        "osgood_closed_form": abs(osgood_val - osgood_exact) <= 1e-6 * osgood_exact,
        "bihari_closed_form": abs(bihari.path[-1] - bihari_exact) <= 1e-6 * bihari_exact,
    }
    summary = {
        "experiment": "selftest",
        "synthetic_slope": report.slope,
        "osgood_value": osgood_val,
        "bihari_final": float(bihari.path[-1]),
    }
    for name, ok in checks.items():
        summary[f"check.{name}"] = "pass" if ok else "fail"
    _write_summary(out / "summary.txt", summary)
    if not all(checks.values()):
        raise GateFailure("selftest failed: " + ", ".join(k for k, v in checks.items() if not v))
    return summary


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "run": cmd_run,
    "rate": cmd_rate,
    "moments": cmd_moments,
    "metric": cmd_metric,
    "check": cmd_check,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvsde",
        description="particle simulation and verification experiments for mean-field SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_COMMANDS, "selftest"):
        p = sub.add_parser(name)
        if name != "selftest":
            p.add_argument("--config", required=True, help="path to a key=value config file")
        p.add_argument("--out", default=None, help="output directory (default: config, then $MVSDE_OUT)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap; never changes results")
        p.add_argument("--gate", action="store_true", help="enable acceptance thresholds (exit 4 on failure)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "selftest":
            out = _out_dir(None, args.out, "selftest")
            cmd_selftest(out, args.gate)
            print(f"selftest pass ({out})")
            return EXIT_OK
        cfg = load_config(args.config, args.command, seed_override=args.seed)
        out = _out_dir(cfg.out_dir, args.out, args.command)
        summary = _COMMANDS[args.command](cfg, out, args.threads, args.gate)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"numeric blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except GateFailure as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return EXIT_GATE
    except ValueError as exc:
        # library precondition violations surface as config-class failures
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key, value in summary.items():
        print(f"{key} = {_fmt(value)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
