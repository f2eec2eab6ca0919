"""Draw synthetic series from the generative model (and variants of it).

Used by the simulation studies: piecewise-quadratic data matching the
analysis model exactly, a piecewise-cubic variant (quadratic fits are
then deliberately misspecified), and a smooth curve with one injected
level shift for detection-power experiments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Hyperparams, ModelKind, SegmentationDraw, TimeSeries


@dataclass(frozen=True)
class SyntheticSpec:
    """What to simulate.

    sigma2 = None draws the noise variance from its inverse-gamma prior
    (requires a proper dof0/ssq0); sigma2 = 0 is a noiseless mode that
    draws coefficients at unit scale and adds no noise, so y equals the
    curve exactly.  x = None uses an equally spaced grid on [0, 1].
    cubic_scale, if set, appends a cubic coefficient with prior standard
    deviation cubic_scale * noise sd to every segment.
    """

    n: int
    hp: Hyperparams
    sigma2: float | None = 1.0
    x: np.ndarray | None = None
    cubic_scale: float | None = None

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        if self.cubic_scale is not None and self.cubic_scale <= 0:
            raise ValueError("cubic_scale must be positive")
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.size != self.n or np.any(np.diff(x) <= 0):
                raise ValueError("x must be strictly increasing with n entries")
            object.__setattr__(self, "x", x)

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n) if self.x is None else self.x


def simulate_from_prior(
    spec: SyntheticSpec, rng: np.random.Generator
) -> tuple[TimeSeries, SegmentationDraw, np.ndarray]:
    """One series from the prior: returns (data, truth, z) where z is the
    noise-free curve.  Segment lengths are drawn until they pass the end
    of the series (right-truncation); each later segment is CONTINUOUS
    with the model-prior probability, in which case only its intercept is
    pinned to the previous curve's boundary value."""
    hp = spec.hp
    x = spec.grid()
    n = spec.n
    if spec.sigma2 is not None:
        sigma2 = float(spec.sigma2)
    else:
        if not (hp.dof0 > 0 and hp.ssq0 > 0):
            raise ValueError("drawing sigma2 from the prior needs proper dof0/ssq0")
        sigma2 = 1.0 / rng.gamma(0.5 * hp.dof0, 2.0 / hp.ssq0)

    cps: list[int] = []
    pos = 0
    while True:
        pos += hp.segment_length.sample(rng)
        if pos >= n:
            break
        cps.append(pos)

    models = [ModelKind.DISCONTINUOUS]
    for _ in cps:
        models.append(
            ModelKind.CONTINUOUS if rng.random() < hp.model_prior else ModelKind.DISCONTINUOUS
        )

    rel_sd = np.sqrt(np.asarray(hp.deltas, dtype=float))
    if spec.cubic_scale is not None:
        rel_sd = np.append(rel_sd, spec.cubic_scale)
    k = rel_sd.size
    coef_sigma2 = sigma2 if sigma2 > 0 else 1.0
    sd = np.sqrt(coef_sigma2) * rel_sd

    starts = [0] + cps
    coefs: list[np.ndarray] = []
    for seg, (start, model) in enumerate(zip(starts, models)):
        coef = sd * rng.standard_normal(k)
        if model is ModelKind.CONTINUOUS:
            dx = x[start] - x[starts[seg - 1]]
            coef[0] = float(np.polyval(coefs[seg - 1][::-1], dx))
        coefs.append(coef)

    truth = SegmentationDraw(
        changepoints=tuple(cps),
        models=tuple(models),
        sigma2=sigma2 if sigma2 > 0 else None,
        coefs=tuple(coefs),
    )
    z = truth.fitted_values(x)
    y = z + np.sqrt(sigma2) * rng.standard_normal(n)
    return TimeSeries(x, y), truth, z


def inject_jump(
    z: np.ndarray, x: np.ndarray, noise_sd: float, size: float, position: float
) -> np.ndarray:
    """Shift the curve down by size * noise_sd strictly left of ``position``
    (a single level discontinuity; size 0 returns the curve unchanged)."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.where(x < position, z - size * noise_sd, z)


def simulate_jump_series(
    base_z: np.ndarray,
    x: np.ndarray,
    noise_sd: float,
    size: float,
    position: float,
    rng: np.random.Generator,
) -> tuple[TimeSeries, np.ndarray]:
    """Smooth base curve plus one injected jump plus Gaussian noise."""
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    z = inject_jump(base_z, x, noise_sd, size, position)
    y = z + noise_sd * rng.standard_normal(np.asarray(x).size)
    return TimeSeries(x, y), z
