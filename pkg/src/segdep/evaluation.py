"""Posterior summaries, empirical-Bayes refitting and simulation studies."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .filtering import FilterHistory, run_filter
from .model import Hyperparams, ModelKind, SegmentationDraw, SegmentLengthPrior, TimeSeries
from .smoothing import sample_posterior
from .synthesis import SyntheticSpec, inject_jump, simulate_from_prior

THREADS_ENV = "SEGDEP_THREADS"

# seed-stream namespace for the final fit, clear of the per-iteration
# empirical-Bayes streams (which use small indices)
_FINAL_FIT_STREAM = 2**20


def thread_count() -> int:
    """Worker cap for the replicate studies: SEGDEP_THREADS if set (>= 1),
    bounded by the machine's CPU count."""
    cpus = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return cpus
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, min(cap, cpus))


def _map_jobs(fn, payloads, n_jobs: int | None):
    jobs = thread_count() if n_jobs is None else max(1, n_jobs)
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, payloads))


def _child_seeds(seed: int, index: int, count: int) -> list[int]:
    ss = np.random.SeedSequence([seed, index])
    return [int(v) for v in ss.generate_state(count)]


def curve_draws(draws: list[SegmentationDraw], x: np.ndarray) -> np.ndarray:
    """Matrix of fitted curves, one row per draw."""
    return np.stack([d.fitted_values(x) for d in draws])


def mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.mean((estimate - truth) ** 2))


def posterior_quantiles(
    draws: list[SegmentationDraw],
    data: TimeSeries,
    truth_z: np.ndarray,
    truth_sigma2: float,
) -> tuple[np.ndarray, float]:
    """Where the truth sits inside the draw ensemble: q_z[t] is the
    fraction of draws whose curve at t is <= truth_z[t]; q_sigma is the
    same for the noise variance.  Exactly calibrated inference makes
    these uniform over repeated datasets."""
    curves = curve_draws(draws, data.x)
    q_z = np.mean(curves <= np.asarray(truth_z, dtype=float)[None, :], axis=0)
    sig = np.array([d.sigma2 for d in draws])
    q_sigma = float(np.mean(sig <= truth_sigma2))
    return q_z, q_sigma


def coverage(
    draws: list[SegmentationDraw],
    data: TimeSeries,
    truth_z: np.ndarray,
    level: float = 0.9,
) -> float:
    """Fraction of time points whose equal-tailed credible interval of the
    given level contains the true curve."""
    if not (0 < level < 1):
        raise ValueError("level must lie in (0, 1)")
    curves = curve_draws(draws, data.x)
    lo = np.quantile(curves, 0.5 * (1 - level), axis=0)
    hi = np.quantile(curves, 0.5 * (1 + level), axis=0)
    truth_z = np.asarray(truth_z, dtype=float)
    return float(np.mean((truth_z >= lo) & (truth_z <= hi)))


def discontinuity_probability(
    draws: list[SegmentationDraw], x: np.ndarray, window: tuple[float, float]
) -> float:
    """Posterior probability (fraction of draws) of at least one
    discontinuous changepoint whose position falls inside ``window``."""
    lo, hi = window
    hits = 0
    for d in draws:
        pos = d.changepoint_positions(x, ModelKind.DISCONTINUOUS)
        if pos.size and bool(np.any((pos >= lo) & (pos <= hi))):
            hits += 1
    return hits / len(draws)


def ks_uniform(values: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance between a sample and Uniform(0, 1)."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - v), np.max(v - (grid - 1.0 / n))))


def empirical_bayes(
    data: TimeSeries,
    hp: Hyperparams,
    iterations: int = 1,
    n_draws: int = 1000,
    seed: int = 0,
    resample_threshold: float = 1e-6,
    max_particles: int | None = None,
) -> Hyperparams:
    """Plug-in re-estimation of the changepoint rate and the coefficient
    prior variances from posterior draws, repeated ``iterations`` times.

    The rate estimate is the mean changepoint count divided by n (clamped
    into [1/(100 n), 0.5] so the geometric prior stays valid); delta0 is
    the mean of intercept^2/sigma2 over discontinuous segments, delta1 and
    delta2 the means of coef^2/sigma2 over all segments.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    n = data.n
    for it in range(iterations):
        s_filter, s_draws = _child_seeds(seed, it, 2)
        history = run_filter(
            data, hp, resample_threshold, max_particles=max_particles, seed=s_filter
        )
        draws = sample_posterior(history, data, hp, n_draws, seed=s_draws, resimulate=True)
        rate = np.mean([len(d.changepoints) for d in draws]) / n
        rate = float(np.clip(rate, 1.0 / (100.0 * n), 0.5))
        d0_terms, d1_terms, d2_terms = [], [], []
        for d in draws:
            for k, m in enumerate(d.models):
                if m is ModelKind.DISCONTINUOUS:
                    d0_terms.append(d.coefs[k][0] ** 2 / d.sigma2)
                d1_terms.append(d.coefs[k][1] ** 2 / d.sigma2)
                d2_terms.append(d.coefs[k][2] ** 2 / d.sigma2)
        deltas = (
            max(float(np.mean(d0_terms)), 1e-8),
            max(float(np.mean(d1_terms)), 1e-8),
            max(float(np.mean(d2_terms)), 1e-8),
        )
        hp = Hyperparams(
            segment_length=SegmentLengthPrior.geometric(rate),
            deltas=deltas,
            dof0=hp.dof0,
            ssq0=hp.ssq0,
            model_prior=hp.model_prior,
        )
    return hp


@dataclass
class FitResult:
    """Bundle returned by fit_series: the hyperparameters actually used,
    the filter history and the posterior draws."""

    data: TimeSeries
    hp: Hyperparams
    history: FilterHistory
    draws: list[SegmentationDraw]

    @property
    def log_evidence(self) -> float:
        return self.history.log_evidence

    def mean_curve(self) -> np.ndarray:
        return curve_draws(self.draws, self.data.x).mean(axis=0)

    def curve_interval(self, level: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
        curves = curve_draws(self.draws, self.data.x)
        lo = np.quantile(curves, 0.5 * (1 - level), axis=0)
        hi = np.quantile(curves, 0.5 * (1 + level), axis=0)
        return lo, hi

    def mean_changepoint_count(self) -> float:
        return float(np.mean([len(d.changepoints) for d in self.draws]))


def fit_series(
    data: TimeSeries,
    hp: Hyperparams,
    n_draws: int = 1000,
    seed: int = 0,
    resample_threshold: float = 1e-6,
    max_particles: int | None = None,
    eb_iterations: int = 0,
    eb_draws: int | None = None,
    resimulate: bool = True,
) -> FitResult:
    """Full pipeline: optional empirical-Bayes refinement, forward filter,
    posterior draws."""
    if eb_iterations > 0:
        hp = empirical_bayes(
            data,
            hp,
            iterations=eb_iterations,
            n_draws=n_draws if eb_draws is None else eb_draws,
            seed=seed,
            resample_threshold=resample_threshold,
            max_particles=max_particles,
        )
    s_filter, s_draws = _child_seeds(seed, _FINAL_FIT_STREAM, 2)
    history = run_filter(
        data, hp, resample_threshold, max_particles=max_particles, seed=s_filter
    )
    draws = sample_posterior(
        history, data, hp, n_draws, seed=s_draws, resimulate=resimulate
    )
    return FitResult(data=data, hp=hp, history=history, draws=draws)


# ---------------------------------------------------------------------------
# replicate studies (shared by the CLI and the acceptance checks)
# ---------------------------------------------------------------------------


def _calibration_case(payload) -> tuple[float, np.ndarray]:
    (n, hp_sim, hp_fit, sigma2, n_draws, threshold, seeds) = payload
    s_sim, s_filter, s_draws = seeds
    rng = np.random.default_rng(s_sim)
    data, _, z = simulate_from_prior(SyntheticSpec(n=n, hp=hp_sim, sigma2=sigma2), rng)
    history = run_filter(data, hp_fit, threshold, seed=s_filter)
    draws = sample_posterior(history, data, hp_fit, n_draws, seed=s_draws)
    q_z, q_sigma = posterior_quantiles(draws, data, z, sigma2)
    return q_sigma, q_z


def calibration_study(
    n_datasets: int,
    n: int,
    hp_sim: Hyperparams,
    sigma2: float,
    n_draws: int = 1000,
    seed: int = 0,
    resample_threshold: float = 1e-6,
    hp_fit: Hyperparams | None = None,
    n_jobs: int | None = None,
) -> dict:
    """Simulate-and-refit calibration check: returns the posterior quantile
    of the true noise variance (one per dataset) and of the true curve
    (one per dataset and time point).  Exact inference makes both uniform."""
    hp_fit = hp_sim if hp_fit is None else hp_fit
    payloads = [
        (n, hp_sim, hp_fit, sigma2, n_draws, resample_threshold, _child_seeds(seed, i, 3))
        for i in range(n_datasets)
    ]
    out = _map_jobs(_calibration_case, payloads, n_jobs)
    q_sigma = np.array([r[0] for r in out])
    q_z = np.stack([r[1] for r in out])
    return {"q_sigma": q_sigma, "q_z": q_z}


def _accuracy_case(payload) -> tuple[float, float]:
    (n, hp_sim, sigma2, cubic_scale, hp_fit, eb_iterations, n_draws, threshold, level, seeds) = payload
    s_sim, s_fit = seeds[0], seeds[1]
    rng = np.random.default_rng(s_sim)
    data, _, z = simulate_from_prior(
        SyntheticSpec(n=n, hp=hp_sim, sigma2=sigma2, cubic_scale=cubic_scale), rng
    )
    res = fit_series(
        data,
        hp_fit,
        n_draws=n_draws,
        seed=s_fit,
        resample_threshold=threshold,
        eb_iterations=eb_iterations,
    )
    return mse(res.mean_curve(), z), coverage(res.draws, data, z, level)


def accuracy_study(
    n_datasets: int,
    n: int,
    hp_sim: Hyperparams,
    sigma2: float,
    hp_fit: Hyperparams,
    eb_iterations: int = 1,
    n_draws: int = 1000,
    seed: int = 0,
    resample_threshold: float = 1e-6,
    level: float = 0.9,
    cubic_scale: float | None = None,
    n_jobs: int | None = None,
) -> dict:
    """Mean-squared error of the posterior-mean curve and credible-interval
    coverage over repeated simulated datasets."""
    payloads = [
        (
            n, hp_sim, sigma2, cubic_scale, hp_fit, eb_iterations, n_draws,
            resample_threshold, level, _child_seeds(seed, i, 2),
        )
        for i in range(n_datasets)
    ]
    out = _map_jobs(_accuracy_case, payloads, n_jobs)
    return {
        "mse": np.array([r[0] for r in out]),
        "coverage": np.array([r[1] for r in out]),
    }


def _power_case(payload) -> float:
    (xs, zs, noise_sd, size, position, hp_fit, eb_iterations, n_draws,
     threshold, halfwidth, seeds) = payload
    s_sim, s_fit = seeds[0], seeds[1]
    rng = np.random.default_rng(s_sim)
    z = inject_jump(zs, xs, noise_sd, size, position)
    y = z + noise_sd * rng.standard_normal(xs.size)
    data = TimeSeries(xs, y)
    res = fit_series(
        data,
        hp_fit,
        n_draws=n_draws,
        seed=s_fit,
        resample_threshold=threshold,
        eb_iterations=eb_iterations,
    )
    return discontinuity_probability(
        res.draws, xs, (position - halfwidth, position + halfwidth)
    )


def default_fit_prior(n: int) -> Hyperparams:
    """Broad automatic prior for fitting data of unknown scale: one
    expected changepoint, wide coefficient variances (intended to be
    sharpened by an empirical-Bayes pass)."""
    return Hyperparams(
        segment_length=SegmentLengthPrior.geometric(1.0 / n),
        deltas=(10.0, 100.0 * 10.0**2, 1000.0 * 40.0**2),
    )


def power_study(
    base,
    jump_sizes,
    jump_positions,
    lengths,
    noise_sd: float = 0.3,
    replicates: int = 20,
    eb_iterations: int = 1,
    n_draws: int = 1000,
    seed: int = 0,
    resample_threshold: float = 1e-6,
    window_halfwidth: float = 0.01,
    hp_fit: Hyperparams | None = None,
    n_jobs: int | None = None,
) -> list[dict]:
    """Detection power for a single injected jump on a smooth base curve.

    ``base`` maps an x grid to the noise-free curve.  For every
    (jump size, position, series length) cell, ``replicates`` datasets are
    fitted and the posterior probability of a discontinuous changepoint
    within ±window_halfwidth of the true position is averaged.
    """
    rows = []
    cell = 0
    for n in lengths:
        xs = np.linspace(0.0, 1.0, int(n))
        zs = np.asarray(base(xs), dtype=float)
        hp_n = default_fit_prior(int(n)) if hp_fit is None else hp_fit
        for position in jump_positions:
            for size in jump_sizes:
                payloads = [
                    (
                        xs, zs, noise_sd, float(size), float(position), hp_n,
                        eb_iterations, n_draws, resample_threshold,
                        window_halfwidth, _child_seeds(seed, cell * 100003 + r, 2),
                    )
                    for r in range(replicates)
                ]
                probs = np.array(_map_jobs(_power_case, payloads, n_jobs))
                rows.append(
                    {
                        "jump_size": float(size),
                        "jump_x": float(position),
                        "n": int(n),
                        "probability": float(probs.mean()),
                        "replicates": int(replicates),
                    }
                )
                cell += 1
    return rows
