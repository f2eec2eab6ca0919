"""Core data types for piecewise-polynomial changepoint regression.

A series y_1..y_n is split into contiguous segments by changepoints
tau_1 < ... < tau_l (tau in 1..n-1, counted in 1-based observation
indices; a changepoint after observation tau means a new segment starts
at observation tau+1).  Within each segment the mean is a quadratic in
x measured from the segment start, with coefficients drawn from a
normal-inverse-gamma prior.  All segments share one noise variance.
Each segment after the first is either DISCONTINUOUS (fresh intercept)
or CONTINUOUS (intercept pinned to the previous segment's value at the
boundary).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class NumericalError(RuntimeError):
    """Internal numerical invariant violated (not a user-input problem)."""


class ModelKind(enum.IntEnum):
    """How a segment attaches to its predecessor."""

    DISCONTINUOUS = 1
    CONTINUOUS = 2


def _as_float_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Observed series: covariates ``x`` (strictly increasing) and responses ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        x = _as_float_vector(self.x, "x")
        y = _as_float_vector(self.y, "y")
        if x.shape != y.shape:
            raise ValueError("x and y must have equal length")
        if x.size < 2:
            raise ValueError("need at least two observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("x and y must be finite")
        if np.any(np.diff(x) <= 0):
            raise ValueError("x must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class SegmentLengthPrior:
    """Prior on segment lengths d = 1, 2, ... with geometric tail.

    Either a plain Geometric(p) (``probs`` empty), or an explicit list of
    probabilities for d = 1..L with the mass beyond L spread as a
    geometric continuation with parameter ``tail_p``.

    hazard(age) is the probability the segment ends at length ``age``
    given it reached ``age``; survival_factor(age) is its complement.
    For Geometric(p) these are exactly p and 1-p at every age.
    """

    probs: tuple[float, ...]
    tail_p: float
    # cumulative G(0..L), derived
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.tail_p < 1.0):
            raise ValueError("tail probability must lie in (0, 1)")
        g = np.asarray(self.probs, dtype=float)
        if g.size and (np.any(g < 0) or np.any(g > 1)):
            raise ValueError("length probabilities must lie in [0, 1]")
        cum = np.concatenate([[0.0], np.cumsum(g)])
        if cum[-1] > 1.0 + 1e-12:
            raise ValueError("length probabilities sum beyond 1")
        object.__setattr__(self, "probs", tuple(float(p) for p in g))
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def geometric(cls, p: float) -> "SegmentLengthPrior":
        if not (0.0 < p < 1.0):
            raise ValueError("geometric parameter must lie in (0, 1)")
        return cls(probs=(), tail_p=p)

    @classmethod
    def from_probs(cls, probs, tail_p: float) -> "SegmentLengthPrior":
        return cls(probs=tuple(probs), tail_p=tail_p)

    @property
    def is_geometric(self) -> bool:
        return len(self.probs) == 0

    def mass(self, d):
        """P(length = d), vectorised over integer d >= 1."""
        d = np.asarray(d)
        if np.any(d < 1):
            raise ValueError("segment length must be >= 1")
        L = len(self.probs)
        tail_mass = 1.0 - self._cum[-1]
        tp = self.tail_p
        inside = d <= L
        g_in = np.asarray(self.probs + (0.0,))[np.where(inside, d - 1, L)]
        g_tail = tail_mass * tp * (1.0 - tp) ** np.maximum(d - L - 1, 0)
        out = np.where(inside, g_in, g_tail)
        return out if out.ndim else float(out)

    def cdf(self, s):
        """G(s) = P(length <= s), vectorised over integer s >= 0."""
        s = np.asarray(s)
        if np.any(s < 0):
            raise ValueError("cdf argument must be >= 0")
        L = len(self.probs)
        tail_mass = 1.0 - self._cum[-1]
        inside = s <= L
        cum_in = self._cum[np.minimum(s, L)]
        cum_tail = 1.0 - tail_mass * (1.0 - self.tail_p) ** np.maximum(s - L, 0)
        out = np.where(inside, cum_in, cum_tail)
        return out if out.ndim else float(out)

    def hazard(self, age):
        """P(segment ends at length age | length >= age), for integer age >= 1."""
        age = np.asarray(age)
        if np.any(age < 1):
            raise ValueError("age must be >= 1")
        L = len(self.probs)
        tail_mass = 1.0 - self._cum[-1]
        if self.is_geometric:
            out = np.full(age.shape, self.tail_p)
            return out if out.ndim else float(out)
        remaining = 1.0 - self._cum[np.minimum(age, L)]
        remaining = np.where(age >= L, tail_mass, remaining)
        if np.any(remaining <= 0.0):
            raise ValueError(
                "segment-length support exhausted: no mass beyond the given age"
            )
        g_next = self.mass(age + 1)
        out = np.where(age >= L, self.tail_p, g_next / remaining)
        return out if out.ndim else float(out)

    def survival_factor(self, age):
        """P(length > age | length >= age) = 1 - hazard(age)."""
        out = 1.0 - np.asarray(self.hazard(age))
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator) -> int:
        """Draw one segment length."""
        if self.is_geometric:
            return int(rng.geometric(self.tail_p))
        u = rng.random()
        idx = int(np.searchsorted(self._cum[1:], u, side="left"))
        L = len(self.probs)
        if idx < L:
            return idx + 1
        return L + int(rng.geometric(self.tail_p))


@dataclass(frozen=True)
class NIGParams:
    """Normal-inverse-gamma state for one segment's coefficients.

    noise variance v ~ InvGamma(dof/2, ssq/2); coefficients
    beta | v ~ Normal(mean, v * cov).  dof = ssq = 0 is the improper
    starting state.
    """

    dof: float
    ssq: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be a vector and cov a matching square matrix")
        if self.dof < 0 or self.ssq < 0:
            raise ValueError("dof and ssq must be >= 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def is_proper(self) -> bool:
        return self.dof > 0 and self.ssq > 0


@dataclass(frozen=True)
class Hyperparams:
    """Model hyperparameters shared by simulation and inference.

    deltas = (delta0, delta1, delta2): prior variances (relative to the
    noise variance) of a fresh segment's intercept, slope and curvature.
    model_prior is the probability a new segment is CONTINUOUS.
    """

    segment_length: SegmentLengthPrior
    deltas: tuple[float, float, float] = (1.0, 10.0**2, 40.0**2)
    dof0: float = 0.0
    ssq0: float = 0.0
    model_prior: float = 0.5

    def __post_init__(self) -> None:
        d = tuple(float(v) for v in self.deltas)
        if len(d) != 3:
            raise ValueError("deltas must have three entries")
        if d[0] < 0 or d[1] <= 0 or d[2] <= 0:
            raise ValueError("delta0 must be >= 0; delta1, delta2 must be > 0")
        if not (0.0 <= self.model_prior <= 1.0):
            raise ValueError("model_prior must lie in [0, 1]")
        if self.dof0 < 0 or self.ssq0 < 0:
            raise ValueError("dof0 and ssq0 must be >= 0")
        object.__setattr__(self, "deltas", d)

    @property
    def coef_prior_cov(self) -> np.ndarray:
        """diag(delta0, delta1, delta2) — fresh-segment coefficient covariance / v."""
        return np.diag(self.deltas)

    def fresh_post(self) -> NIGParams:
        """NIG state for a brand-new discontinuous segment."""
        return NIGParams(self.dof0, self.ssq0, np.zeros(3), self.coef_prior_cov)


@dataclass(frozen=True)
class Particle:
    """One filter hypothesis: the current segment started after observation
    ``start`` (0 = series start) with attachment ``model``."""

    start: int
    model: ModelKind
    weight: float
    post: NIGParams


@dataclass(frozen=True)
class SegmentationDraw:
    """One posterior draw: changepoints, per-segment models and parameters.

    changepoints are 1-based observation indices in 1..n-1, strictly
    increasing; segment k covers observations changepoints[k-1]+1 ..
    changepoints[k].  models has one entry per segment (first always
    DISCONTINUOUS).  All segments share sigma2; coefs[k] holds segment
    k's polynomial coefficients (constant term first, offsets measured
    from the segment's first x).
    """

    changepoints: tuple[int, ...]
    models: tuple[ModelKind, ...]
    sigma2: float
    coefs: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        cps = tuple(int(t) for t in self.changepoints)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("changepoints must be strictly increasing")
        if any(t < 1 for t in cps):
            raise ValueError("changepoints must be >= 1")
        models = tuple(ModelKind(m) for m in self.models)
        if len(models) != len(cps) + 1:
            raise ValueError("need one model per segment")
        if models and models[0] is not ModelKind.DISCONTINUOUS:
            raise ValueError("the first segment must be DISCONTINUOUS")
        if len(self.coefs) not in (0, len(models)):
            raise ValueError("need one coefficient vector per segment (or none)")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "changepoints", cps)
        object.__setattr__(self, "models", models)
        object.__setattr__(
            self, "coefs", tuple(np.asarray(c, dtype=float) for c in self.coefs)
        )

    @property
    def n_segments(self) -> int:
        return len(self.models)

    def segment_starts(self) -> tuple[int, ...]:
        """0-based index of each segment's first observation."""
        return (0,) + self.changepoints

    def segment_slices(self, n: int) -> list[slice]:
        starts = self.segment_starts()
        ends = self.changepoints + (n,)
        return [slice(a, b) for a, b in zip(starts, ends)]

    def fitted_values(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the piecewise polynomial mean on the grid ``x``."""
        if not self.coefs:
            raise ValueError("draw carries no coefficients")
        x = np.asarray(x, dtype=float)
        z = np.empty_like(x)
        for sl, coef in zip(self.segment_slices(x.size), self.coefs):
            offs = x[sl] - x[sl.start]
            acc = np.zeros_like(offs)
            for c in coef[::-1]:
                acc = acc * offs + c
            z[sl] = acc
        return z

    def changepoint_positions(
        self, x: np.ndarray, kind: ModelKind | None = None
    ) -> np.ndarray:
        """x-axis positions of changepoints (midpoint of the straddled gap),
        optionally restricted to those opening a segment of the given kind."""
        x = np.asarray(x, dtype=float)
        pos = []
        for k, tau in enumerate(self.changepoints):
            if kind is not None and self.models[k + 1] is not kind:
                continue
            pos.append(0.5 * (x[tau - 1] + x[tau]))
        return np.asarray(pos, dtype=float)
