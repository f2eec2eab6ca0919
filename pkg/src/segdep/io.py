"""File formats: series CSV, base-curve CSV, `key = value` run configs.

All writes go through a temp-file-plus-rename so a crash never leaves a
half-written output.  Floats are written with 17 significant digits,
which round-trips float64 exactly.
"""
from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from .model import Hyperparams, SegmentLengthPrior, TimeSeries


class UserInputError(ValueError):
    """Malformed user input (file contents, config values, paths)."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def atomic_write_text(path: str, text: str) -> None:
    """Write text to ``path`` via a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_rows(path: str) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            return [row for row in csv.reader(fh)]
    except FileNotFoundError as exc:
        raise UserInputError(f"{path}: file not found") from exc
    except OSError as exc:
        raise UserInputError(f"{path}: {exc}") from exc


def _parse_columns(path: str, headers: tuple[str, ...]) -> list[np.ndarray]:
    rows = _read_rows(path)
    if not rows:
        raise UserInputError(f"{path}: empty file")
    got = tuple(c.strip() for c in rows[0])
    allowed = (headers, headers + ("z",))
    if got not in allowed:
        raise UserInputError(
            f"{path}, line 1: expected header {','.join(headers)}"
            f"[,z] but found {','.join(got)}"
        )
    cols: list[list[float]] = [[] for _ in got]
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(got):
            raise UserInputError(
                f"{path}, line {lineno}: expected {len(got)} fields, found {len(row)}"
            )
        for j, cell in enumerate(row):
            try:
                cols[j].append(float(cell))
            except ValueError as exc:
                raise UserInputError(
                    f"{path}, line {lineno}: {cell!r} is not a number"
                ) from exc
    return [np.asarray(c, dtype=float) for c in cols]


def read_series_csv(path: str) -> tuple[TimeSeries, np.ndarray | None]:
    """Read an `x,y[,z]` series file; returns the series and, if present,
    the noise-free curve column."""
    cols = _parse_columns(path, ("x", "y"))
    try:
        data = TimeSeries(cols[0], cols[1])
    except ValueError as exc:
        raise UserInputError(f"{path}: {exc}") from exc
    z = cols[2] if len(cols) == 3 else None
    return data, z


def write_series_csv(path: str, data: TimeSeries, z: np.ndarray | None = None) -> None:
    lines = ["x,y,z" if z is not None else "x,y"]
    for i in range(data.n):
        cells = [_fmt(data.x[i]), _fmt(data.y[i])]
        if z is not None:
            cells.append(_fmt(z[i]))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read an `x,z` base-curve file (x strictly increasing)."""
    rows = _read_rows(path)
    if not rows or tuple(c.strip() for c in rows[0]) != ("x", "z"):
        raise UserInputError(f"{path}, line 1: expected header x,z")
    xs, zs = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise UserInputError(f"{path}, line {lineno}: expected 2 fields")
        try:
            xs.append(float(row[0]))
            zs.append(float(row[1]))
        except ValueError as exc:
            raise UserInputError(f"{path}, line {lineno}: not a number") from exc
    x = np.asarray(xs)
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise UserInputError(f"{path}: x must be strictly increasing with >= 2 rows")
    return x, np.asarray(zs)


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(","))


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(","))


@dataclass
class RunConfig:
    """Typed view of a `key = value` config file (defaults shown)."""

    p: float | None = None  # changepoint rate; None means 1/n at fit time
    nu0: float = 0.0
    gamma0: float = 0.0
    delta0: float = 10.0
    delta1: float = 100.0 * 10.0**2
    delta2: float = 1000.0 * 40.0**2
    model_prior: float = 0.5
    resample_threshold: float = 1e-6
    max_particles: int | None = None
    n_draws: int = 1000
    seed: int = 0
    eb_iterations: int = 0
    draws_per_iteration: int | None = None
    window_halfwidth: float = 1e-3
    coverage_level: float = 0.9
    n: int = 256
    sigma2: float = 1.0
    n_datasets: int = 100
    replicates: int = 20
    noise_sd: float = 0.3
    jump_sizes: tuple[float, ...] = (0.0, 1.0, 2.0, 3.0)
    jump_x: tuple[float, ...] = (0.3,)
    jump_n: tuple[int, ...] = (200,)

    def hyperparams(self, n: int) -> Hyperparams:
        rate = (1.0 / n) if self.p is None else self.p
        if not (0.0 < rate < 1.0):
            raise UserInputError(f"changepoint rate p = {rate} must lie in (0, 1)")
        try:
            return Hyperparams(
                segment_length=SegmentLengthPrior.geometric(rate),
                deltas=(self.delta0, self.delta1, self.delta2),
                dof0=self.nu0,
                ssq0=self.gamma0,
                model_prior=self.model_prior,
            )
        except ValueError as exc:
            raise UserInputError(str(exc)) from exc


_PARSERS = {
    "p": float,
    "nu0": float,
    "gamma0": float,
    "delta0": float,
    "delta1": float,
    "delta2": float,
    "model_prior": float,
    "resample_threshold": float,
    "max_particles": int,
    "n_draws": int,
    "seed": int,
    "eb_iterations": int,
    "draws_per_iteration": int,
    "window_halfwidth": float,
    "coverage_level": float,
    "n": int,
    "sigma2": float,
    "n_datasets": int,
    "replicates": int,
    "noise_sd": float,
    "jump_sizes": _parse_float_list,
    "jump_x": _parse_float_list,
    "jump_n": _parse_int_list,
}


def parse_config(path: str) -> RunConfig:
    """Read a config file: one `key = value` per line, '#' comments and
    blank lines allowed, unknown keys rejected."""
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except FileNotFoundError as exc:
        raise UserInputError(f"{path}: file not found") from exc
    cfg = RunConfig()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserInputError(f"{path}, line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _PARSERS:
            raise UserInputError(f"{path}, line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except ValueError as exc:
            raise UserInputError(
                f"{path}, line {lineno}: bad value for {key}: {value!r}"
            ) from exc
    _validate(cfg, path)
    return cfg


def _validate(cfg: RunConfig, path: str) -> None:
    checks = [
        (cfg.resample_threshold >= 0, "resample_threshold must be >= 0"),
        (cfg.n_draws >= 1, "n_draws must be >= 1"),
        (cfg.seed >= 0, "seed must be >= 0"),
        (cfg.eb_iterations >= 0, "eb_iterations must be >= 0"),
        (cfg.window_halfwidth > 0, "window_halfwidth must be > 0"),
        (0 < cfg.coverage_level < 1, "coverage_level must lie in (0, 1)"),
        (cfg.n >= 2, "n must be >= 2"),
        (cfg.sigma2 >= 0, "sigma2 must be >= 0"),
        (cfg.n_datasets >= 1, "n_datasets must be >= 1"),
        (cfg.replicates >= 1, "replicates must be >= 1"),
        (cfg.noise_sd > 0, "noise_sd must be > 0"),
        (cfg.max_particles is None or cfg.max_particles >= 1, "max_particles must be >= 1"),
        (
            cfg.draws_per_iteration is None or cfg.draws_per_iteration >= 1,
            "draws_per_iteration must be >= 1",
        ),
    ]
    for ok, message in checks:
        if not ok:
            raise UserInputError(f"{path}: {message}")


def format_config(cfg: RunConfig) -> str:
    """Render a config back to file text (stable key order)."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, tuple):
            out.append(f"{f.name} = {','.join(_fmt(u) if isinstance(u, float) else str(u) for u in v)}")
        elif isinstance(v, float):
            out.append(f"{f.name} = {_fmt(v)}")
        else:
            out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"
