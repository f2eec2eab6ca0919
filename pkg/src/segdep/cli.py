"""Command-line entry point.

Subcommands:
  fit        data.csv config out_dir   -> curve.csv, draws.csv, summary.txt
  simulate   config out.csv            -> x,y,z series drawn from the prior
  calibrate  config out_dir            -> q_sigma.csv, q_curve.csv, summary.txt
  power      config base.csv out.csv   -> detection probability per grid cell
  eb         data.csv config out_config-> config with re-estimated p/deltas

Exit codes: 0 success, 2 bad user input, 3 internal numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .evaluation import (
    calibration_study,
    discontinuity_probability,
    empirical_bayes,
    fit_series,
    ks_uniform,
    power_study,
    thread_count,
)
from .io import (
    RunConfig,
    UserInputError,
    atomic_write_text,
    format_config,
    parse_config,
    read_curve_csv,
    read_series_csv,
    write_series_csv,
)
from .model import ModelKind, NumericalError, TimeSeries
from .synthesis import SyntheticSpec, simulate_from_prior


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _window_probabilities(draws, x: np.ndarray, halfwidth: float) -> np.ndarray:
    """P(discontinuous changepoint within +/-halfwidth of x_t), per t,
    computed draw-by-draw with merged hit ranges so overlapping windows
    count each draw once."""
    n = x.size
    counts = np.zeros(n + 1)
    for d in draws:
        pos = d.changepoint_positions(x, ModelKind.DISCONTINUOUS)
        if pos.size == 0:
            continue
        lo = np.searchsorted(x, pos - halfwidth, side="left")
        hi = np.searchsorted(x, pos + halfwidth, side="right")
        spans = sorted((int(a), int(b)) for a, b in zip(lo, hi) if a < b)
        merged: list[list[int]] = []
        for a, b in spans:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        for a, b in merged:
            counts[a] += 1
            counts[b] -= 1
    return np.cumsum(counts[:-1]) / len(draws)


def cmd_fit(data_csv: str, config: str, out_dir: str) -> None:
    t_start = time.perf_counter()
    data, _ = read_series_csv(data_csv)
    cfg = parse_config(config)
    hp = cfg.hyperparams(data.n)
    res = fit_series(
        data,
        hp,
        n_draws=cfg.n_draws,
        seed=cfg.seed,
        resample_threshold=cfg.resample_threshold,
        max_particles=cfg.max_particles,
        eb_iterations=cfg.eb_iterations,
        eb_draws=cfg.draws_per_iteration,
    )
    mean = res.mean_curve()
    lo, hi = res.curve_interval(cfg.coverage_level)
    p_disc = _window_probabilities(res.draws, data.x, cfg.window_halfwidth)

    os.makedirs(out_dir, exist_ok=True)
    lines = ["t,x,mean,lower,upper,p_discontinuity"]
    for i in range(data.n):
        lines.append(
            f"{i + 1},{_fmt(data.x[i])},{_fmt(mean[i])},{_fmt(lo[i])},"
            f"{_fmt(hi[i])},{_fmt(p_disc[i])}"
        )
    atomic_write_text(os.path.join(out_dir, "curve.csv"), "\n".join(lines) + "\n")

    lines = ["draw,changepoint,x,model"]
    for i, d in enumerate(res.draws):
        for k, tau in enumerate(d.changepoints):
            xpos = 0.5 * (data.x[tau - 1] + data.x[tau])
            name = d.models[k + 1].name.lower()
            lines.append(f"{i},{tau},{_fmt(xpos)},{name}")
    atomic_write_text(os.path.join(out_dir, "draws.csv"), "\n".join(lines) + "\n")

    runtime = time.perf_counter() - t_start
    summary = (
        f"log_evidence = {_fmt(res.log_evidence)}\n"
        f"mean_changepoints = {_fmt(res.mean_changepoint_count())}\n"
        f"runtime_seconds = {runtime:.3f}\n"
    )
    atomic_write_text(os.path.join(out_dir, "summary.txt"), summary)
    print(f"fit written to {out_dir}")


def cmd_simulate(config: str, out_csv: str) -> None:
    cfg = parse_config(config)
    hp = cfg.hyperparams(cfg.n)
    rng = np.random.default_rng(cfg.seed)
    data, _, z = simulate_from_prior(SyntheticSpec(n=cfg.n, hp=hp, sigma2=cfg.sigma2), rng)
    write_series_csv(out_csv, data, z)
    print(f"simulated series written to {out_csv}")


def cmd_calibrate(config: str, out_dir: str) -> None:
    cfg = parse_config(config)
    hp = cfg.hyperparams(cfg.n)
    out = calibration_study(
        n_datasets=cfg.n_datasets,
        n=cfg.n,
        hp_sim=hp,
        sigma2=cfg.sigma2,
        n_draws=cfg.n_draws,
        seed=cfg.seed,
        resample_threshold=cfg.resample_threshold,
        n_jobs=thread_count(),
    )
    os.makedirs(out_dir, exist_ok=True)
    q_sigma = out["q_sigma"]
    lines = ["dataset,q_sigma"]
    lines += [f"{i},{_fmt(q)}" for i, q in enumerate(q_sigma)]
    atomic_write_text(os.path.join(out_dir, "q_sigma.csv"), "\n".join(lines) + "\n")

    q_z = np.sort(out["q_z"].ravel())
    grid = (np.arange(q_z.size) + 1.0) / (q_z.size + 1.0)
    lines = ["uniform,empirical"]
    lines += [f"{_fmt(g)},{_fmt(v)}" for g, v in zip(grid, q_z)]
    atomic_write_text(os.path.join(out_dir, "q_curve.csv"), "\n".join(lines) + "\n")

    summary = (
        f"datasets = {cfg.n_datasets}\n"
        f"ks_sigma = {_fmt(ks_uniform(q_sigma))}\n"
        f"ks_curve = {_fmt(ks_uniform(q_z))}\n"
    )
    atomic_write_text(os.path.join(out_dir, "summary.txt"), summary)
    print(f"calibration written to {out_dir}")


def cmd_power(config: str, base_csv: str, out_csv: str) -> None:
    cfg = parse_config(config)
    bx, bz = read_curve_csv(base_csv)
    rows = power_study(
        base=lambda xs: np.interp(xs, bx, bz),
        jump_sizes=cfg.jump_sizes,
        jump_positions=cfg.jump_x,
        lengths=cfg.jump_n,
        noise_sd=cfg.noise_sd,
        replicates=cfg.replicates,
        eb_iterations=max(cfg.eb_iterations, 1),
        n_draws=cfg.n_draws,
        seed=cfg.seed,
        resample_threshold=cfg.resample_threshold,
        window_halfwidth=cfg.window_halfwidth,
        n_jobs=thread_count(),
    )
    lines = ["jump_size,jump_x,n,probability,replicates"]
    for r in rows:
        lines.append(
            f"{_fmt(r['jump_size'])},{_fmt(r['jump_x'])},{r['n']},"
            f"{_fmt(r['probability'])},{r['replicates']}"
        )
    atomic_write_text(out_csv, "\n".join(lines) + "\n")
    print(f"power study written to {out_csv}")


def cmd_eb(data_csv: str, config: str, out_config: str) -> None:
    data, _ = read_series_csv(data_csv)
    cfg = parse_config(config)
    hp = cfg.hyperparams(data.n)
    hp2 = empirical_bayes(
        data,
        hp,
        iterations=max(cfg.eb_iterations, 1),
        n_draws=cfg.n_draws if cfg.draws_per_iteration is None else cfg.draws_per_iteration,
        seed=cfg.seed,
        resample_threshold=cfg.resample_threshold,
        max_particles=cfg.max_particles,
    )
    cfg.p = hp2.segment_length.tail_p
    cfg.delta0, cfg.delta1, cfg.delta2 = hp2.deltas
    cfg.eb_iterations = 0
    atomic_write_text(out_config, format_config(cfg))
    print(f"estimated config written to {out_config}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segdep",
        description="Bayesian multiple-changepoint regression with "
        "dependence between adjacent segments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a series and write posterior summaries")
    p.add_argument("data_csv")
    p.add_argument("config")
    p.add_argument("out_dir")

    p = sub.add_parser("simulate", help="draw a synthetic series from the prior")
    p.add_argument("config")
    p.add_argument("out_csv")

    p = sub.add_parser("calibrate", help="simulate-and-refit calibration study")
    p.add_argument("config")
    p.add_argument("out_dir")

    p = sub.add_parser("power", help="jump-detection power study")
    p.add_argument("config")
    p.add_argument("base_csv")
    p.add_argument("out_csv")

    p = sub.add_parser("eb", help="empirical-Bayes hyperparameter estimation")
    p.add_argument("data_csv")
    p.add_argument("config")
    p.add_argument("out_config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            cmd_fit(args.data_csv, args.config, args.out_dir)
        elif args.command == "simulate":
            cmd_simulate(args.config, args.out_csv)
        elif args.command == "calibrate":
            cmd_calibrate(args.config, args.out_dir)
        elif args.command == "power":
            cmd_power(args.config, args.base_csv, args.out_csv)
        elif args.command == "eb":
            cmd_eb(args.data_csv, args.config, args.out_config)
    except (UserInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
