"""Forward filter over (segment start, attachment model) hypotheses.

After t observations the state is a weighted set of particles, one per
plausible current segment: ``start`` is the 0-based index of the most
recent changepoint (0 = no changepoint yet) and ``model`` says how that
segment attaches to its predecessor.  Each particle carries the exact
conjugate posterior of its segment's coefficients and of the shared
noise variance given its history being true.

One step ahead, every particle either survives (no changepoint, weight
times survival probability times predictive density) or spawns a
changepoint.  The mixture of posteriors across particles is collapsed
to a single summary before a birth: the noise-variance mixture by
matching the first two moments of the precision, and the predicted
boundary value of the curve by matching the mean and variance of the
extrapolated intercept.  Weights stay in log space throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .conjugate import design_rows, log_predictive_arrays, update_arrays
from .model import (
    Hyperparams,
    ModelKind,
    NIGParams,
    NumericalError,
    Particle,
    TimeSeries,
)
from .resampling import ResampleConfig, resample

# moment-matching fallback when the precision mixture has no usable spread
_FALLBACK_DOF = 1e8


@dataclass
class FilterState:
    """Particle set after absorbing observations 1..t (arrays indexed by
    particle, kept sorted by (start, model)).  log_weights are normalised;
    log_norm is the log normalising constant absorbed at this step."""

    t: int
    starts: np.ndarray
    models: np.ndarray
    log_weights: np.ndarray
    dofs: np.ndarray
    ssqs: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    log_norm: float = 0.0

    @property
    def n_particles(self) -> int:
        return self.starts.size

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def particles(self) -> list[Particle]:
        return [
            Particle(
                start=int(self.starts[i]),
                model=ModelKind(int(self.models[i])),
                weight=float(np.exp(self.log_weights[i])),
                post=NIGParams(
                    float(self.dofs[i]),
                    float(self.ssqs[i]),
                    self.means[i].copy(),
                    self.covs[i].copy(),
                ),
            )
            for i in range(self.n_particles)
        ]

    @classmethod
    def from_particles(cls, t: int, particles: list[Particle]) -> "FilterState":
        """Build a state from explicit particles (weights are renormalised)."""
        if not particles:
            raise ValueError("need at least one particle")
        starts = np.array([p.start for p in particles], dtype=np.int64)
        models = np.array([int(p.model) for p in particles], dtype=np.int64)
        w = np.array([p.weight for p in particles], dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("particle weights must be >= 0 and sum > 0")
        state = cls(
            t=t,
            starts=starts,
            models=models,
            log_weights=np.log(w) - np.log(w.sum()),
            dofs=np.array([p.post.dof for p in particles], dtype=float),
            ssqs=np.array([p.post.ssq for p in particles], dtype=float),
            means=np.stack([p.post.mean for p in particles]).astype(float),
            covs=np.stack([p.post.cov for p in particles]).astype(float),
        )
        return _canonical(state)


def _canonical(state: FilterState) -> FilterState:
    """Sort particles by (start, model) — the one iteration order used
    everywhere, so results cannot depend on construction order."""
    order = np.lexsort((state.models, state.starts))
    if np.array_equal(order, np.arange(order.size)):
        return state
    return FilterState(
        t=state.t,
        starts=state.starts[order],
        models=state.models[order],
        log_weights=state.log_weights[order],
        dofs=state.dofs[order],
        ssqs=state.ssqs[order],
        means=state.means[order],
        covs=state.covs[order],
        log_norm=state.log_norm,
    )


def filter_init(data: TimeSeries, hp: Hyperparams) -> FilterState:
    """State after the first observation: a single particle with the
    fresh-segment prior updated by y_1."""
    prior = hp.fresh_post()
    h = np.array([[1.0, 0.0, 0.0]])
    log_pred = log_predictive_arrays(
        np.array([prior.dof]), np.array([prior.ssq]), prior.mean[None], prior.cov[None], h, float(data.y[0])
    )
    dofs, ssqs, means, covs = update_arrays(
        np.array([prior.dof]), np.array([prior.ssq]), prior.mean[None], prior.cov[None], h, float(data.y[0])
    )
    return FilterState(
        t=1,
        starts=np.zeros(1, dtype=np.int64),
        models=np.array([int(ModelKind.DISCONTINUOUS)], dtype=np.int64),
        log_weights=np.zeros(1),
        dofs=dofs,
        ssqs=ssqs,
        means=means,
        covs=covs,
        log_norm=float(log_pred[0]),
    )


def collapse_sigma(state: FilterState) -> tuple[float, float]:
    """Single (dof, ssq) matching the first two moments of the noise
    precision under the particle mixture.

    With E1 = sum w*dof/ssq and E2 = sum w*dof*(dof+2)/ssq^2 the matched
    values are dof* = 2*E1^2/(E2 - E1^2), ssq* = dof*/E1; for a single
    particle this returns its own (dof, ssq).  If the moments are
    degenerate or non-finite (e.g. some particle has ssq = 0), fall back
    to a huge dof* with ssq* = dof*/E1 (0 when E1 is infinite, which
    re-enters the improper-state convention downstream).
    """
    w = np.exp(state.log_weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = state.dofs / state.ssqs
        r2 = state.dofs * (state.dofs + 2.0) / state.ssqs**2
        e1 = float(np.sum(np.where(w > 0, w * r1, 0.0)))
        e2 = float(np.sum(np.where(w > 0, w * r2, 0.0)))
    if np.isfinite(e1) and np.isfinite(e2) and e2 > e1 * e1 and e1 > 0:
        dof_c = 2.0 * e1 * e1 / (e2 - e1 * e1)
        return dof_c, dof_c / e1
    dof_c = _FALLBACK_DOF
    if not np.isfinite(e1):
        return dof_c, 0.0
    return dof_c, dof_c / e1 if e1 > 0 else 0.0


def collapse_intercept(state: FilterState, data: TimeSeries) -> tuple[float, float]:
    """Mean and variance (relative to the noise variance convention of the
    birth prior) of the current curve value extrapolated to the next
    observation's x, under the particle mixture."""
    if state.t >= data.n:
        raise ValueError("no next observation to extrapolate to")
    H = design_rows(data.x, state.starts, state.t + 1)
    pred_mean = np.einsum("ni,ni->n", H, state.means)
    pred_var = np.einsum("ni,nij,nj->n", H, state.covs, H)
    w = np.exp(state.log_weights)
    eta = float(np.sum(w * pred_mean))
    m2 = float(np.sum(w * (pred_var + pred_mean**2)))
    return eta, max(m2 - eta * eta, 0.0)


def filter_step(state: FilterState, data: TimeSeries, hp: Hyperparams) -> FilterState:
    """Absorb observation t+1: propagate survivors, spawn the two birth
    particles (start = t, each attachment kind), renormalise."""
    t = state.t
    if t >= data.n:
        raise ValueError("filter already consumed the whole series")
    y_next = float(data.y[t])
    ages = t - state.starts
    hazard = np.asarray(hp.segment_length.hazard(ages), dtype=float)
    with np.errstate(divide="ignore"):
        log_surv = np.log1p(-hazard)
        log_haz = np.log(hazard)

    H = design_rows(data.x, state.starts, t + 1)
    log_pred = log_predictive_arrays(
        state.dofs, state.ssqs, state.means, state.covs, H, y_next
    )
    surv_log_w = state.log_weights + log_surv + log_pred

    dof_c, ssq_c = collapse_sigma(state)
    eta, tau = collapse_intercept(state, data)
    log_birth_mass = float(logsumexp(state.log_weights + log_haz))

    d0, d1, d2 = hp.deltas
    birth_means = np.array([[0.0, 0.0, 0.0], [eta, 0.0, 0.0]])
    birth_covs = np.stack([np.diag([d0, d1, d2]), np.diag([tau, d1, d2])])
    birth_dofs = np.array([dof_c, dof_c])
    birth_ssqs = np.array([ssq_c, ssq_c])
    h_birth = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    with np.errstate(divide="ignore"):
        log_model = np.log(np.array([1.0 - hp.model_prior, hp.model_prior]))
    birth_log_w = (
        log_model
        + log_birth_mass
        + log_predictive_arrays(
            birth_dofs, birth_ssqs, birth_means, birth_covs, h_birth, y_next
        )
    )

    all_dofs = np.concatenate([state.dofs, birth_dofs])
    all_ssqs = np.concatenate([state.ssqs, birth_ssqs])
    all_means = np.concatenate([state.means, birth_means])
    all_covs = np.concatenate([state.covs, birth_covs])
    all_H = np.concatenate([H, h_birth])
    dofs2, ssqs2, means2, covs2 = update_arrays(
        all_dofs, all_ssqs, all_means, all_covs, all_H, y_next
    )

    log_w = np.concatenate([surv_log_w, birth_log_w])
    log_norm = float(logsumexp(log_w))
    if not np.isfinite(log_norm):
        raise NumericalError(f"filter weights vanished while absorbing observation {t + 1}")
    log_w = log_w - log_norm

    starts2 = np.concatenate([state.starts, np.array([t, t], dtype=np.int64)])
    models2 = np.concatenate(
        [state.models, np.array([int(ModelKind.DISCONTINUOUS), int(ModelKind.CONTINUOUS)], dtype=np.int64)]
    )
    alive = np.isfinite(log_w)
    return _canonical(
        FilterState(
            t=t + 1,
            starts=starts2[alive],
            models=models2[alive],
            log_weights=log_w[alive],
            dofs=dofs2[alive],
            ssqs=ssqs2[alive],
            means=means2[alive],
            covs=covs2[alive],
            log_norm=log_norm,
        )
    )


@dataclass
class FilterHistory:
    """All filter states (states[k] is time k+1) plus the accumulated log
    marginal likelihood of the series."""

    states: list[FilterState] = field(default_factory=list)

    @property
    def final(self) -> FilterState:
        return self.states[-1]

    @property
    def log_evidence(self) -> float:
        return float(sum(s.log_norm for s in self.states))


def run_filter(
    data: TimeSeries,
    hp: Hyperparams,
    resample_threshold: float = 1e-6,
    *,
    max_particles: int | None = None,
    seed: int = 0,
) -> FilterHistory:
    """Filter the whole series, applying rejection-control resampling after
    every step (a no-op when resample_threshold is 0 and no cap is set)."""
    cfg = ResampleConfig(threshold=resample_threshold, max_particles=max_particles, seed=seed)
    rng = np.random.default_rng(cfg.seed)
    state = filter_init(data, hp)
    history = FilterHistory([state])
    for _ in range(1, data.n):
        state = filter_step(state, data, hp)
        if cfg.active:
            state = resample(state, cfg, rng)
        history.states.append(state)
    return history
