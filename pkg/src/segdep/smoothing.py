"""Backward sampling of segmentations and segment parameters.

Given the stored filter states, draws from the joint posterior are
generated right to left: draw the last segment's (start, model) from
the final filter weights, draw its parameters from the conjugate
posterior, then repeatedly reweight the filter state at the changepoint
by hazard times the density of the just-drawn segment's parameters
under each candidate predecessor, draw the predecessor, and draw its
coefficients conditional on the boundary constraint.  The noise
variance is drawn once and shared by the whole path.

``resimulate_parameters`` replaces a draw's parameters with a draw from
the exact conditional posterior given its segmentation (a forward
conjugate sweep with deterministic boundary transitions, then backward
simulation), which removes the mixture-collapse approximation from the
within-segment parameters.

``sample_posterior`` shares two caches across draws: per-time-step
arrays that do not depend on the draw (backward-weight terms), and
forward sweeps keyed by segmentation prefix (draws usually agree on
their early segments).  The cached paths compute exactly what the
plain functions compute.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .conjugate import batch_update_raw, design_matrix, design_row, design_rows
from .filtering import FilterHistory, FilterState
from .model import (
    Hyperparams,
    ModelKind,
    NIGParams,
    NumericalError,
    SegmentationDraw,
    TimeSeries,
)

_LOG_2PI = float(np.log(2.0 * np.pi))
# a transition variance (relative to the noise variance) below this is a
# numerically degenerate, effectively deterministic constraint
_DEGENERATE_VAR = 1e-12
# allowed mismatch before a degenerate constraint zeroes the density
_DEGENERATE_TOL = 1e-8


def _log_invgamma(dof, ssq, value: float):
    """Log density of InvGamma(dof/2, ssq/2) at ``value``; -inf when the
    state is improper.  Vectorised over dof/ssq."""
    dof = np.asarray(dof, dtype=float)
    ssq = np.asarray(ssq, dtype=float)
    a = 0.5 * dof
    b = 0.5 * ssq
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(value) - b / value
    return np.where((dof > 0) & (ssq > 0), out, -np.inf)


def _log_normal_terms(dev, rel_var, sigma2: float):
    """Sum over the trailing axis of log N(dev; 0, sigma2 * rel_var).

    Components with rel_var below the degeneracy floor act as indicators:
    density 0 when |dev| exceeds the tolerance, otherwise the Gaussian
    normalisation evaluated at the floored variance.
    """
    dev, rel_var = np.broadcast_arrays(np.asarray(dev, float), np.asarray(rel_var, float))
    degen = rel_var < _DEGENERATE_VAR
    var = sigma2 * np.where(degen, _DEGENERATE_VAR, rel_var)
    core = -0.5 * (_LOG_2PI + np.log(var))
    core = core - np.where(degen, 0.0, 0.5 * dev * dev / var)
    core = np.where(degen & (np.abs(dev) > _DEGENERATE_TOL), -np.inf, core)
    return core.sum(axis=-1)


def _log_transition_arrays(
    dofs, ssqs, means, covs, H, hp: Hyperparams, next_model: ModelKind, sigma2: float, coef
):
    """Log density of the next segment's (sigma2, coef) given each candidate
    predecessor particle (batched)."""
    coef = np.asarray(coef, dtype=float)
    log_ig = _log_invgamma(dofs, ssqs, sigma2)
    d0, d1, d2 = hp.deltas
    if next_model is ModelKind.DISCONTINUOUS:
        log_n = _log_normal_terms(coef[:3], np.array([d0, d1, d2]), sigma2)
        return log_ig + log_n
    hmu = np.einsum("ni,ni->n", H, means)
    hvar = np.clip(np.einsum("ni,nij,nj->n", H, covs, H), 0.0, None)
    first = _log_normal_terms((coef[0] - hmu)[:, None], hvar[:, None], sigma2)
    rest = _log_normal_terms(coef[1:3], np.array([d1, d2]), sigma2)
    return log_ig + first + rest


def transition_density(
    post: NIGParams,
    next_model: ModelKind,
    next_params: tuple[float, np.ndarray],
    h: np.ndarray,
    hp: Hyperparams,
) -> float:
    """Density of the next segment's (sigma2, coef) given one predecessor
    posterior: the inverse-gamma density of the shared noise variance
    times the coefficient birth density, whose intercept component is
    centred on the boundary value extrapolated by ``h`` when the next
    segment is CONTINUOUS."""
    sigma2, coef = next_params
    out = _log_transition_arrays(
        np.array([post.dof]),
        np.array([post.ssq]),
        post.mean[None],
        post.cov[None],
        np.asarray(h, dtype=float)[None],
        hp,
        ModelKind(next_model),
        float(sigma2),
        coef,
    )
    return float(np.exp(out[0]))


def backward_log_weights(
    state: FilterState,
    data: TimeSeries,
    hp: Hyperparams,
    next_model: ModelKind,
    next_params: tuple[float, np.ndarray],
) -> np.ndarray:
    """Unnormalised log weights for drawing the previous changepoint/model
    given that a segment with ``next_model`` and ``next_params`` starts at
    observation state.t + 1."""
    t = state.t
    ages = t - state.starts
    with np.errstate(divide="ignore"):
        log_haz = np.log(np.asarray(hp.segment_length.hazard(ages), dtype=float))
    H = design_rows(data.x, state.starts, t + 1)
    sigma2, coef = next_params
    log_tr = _log_transition_arrays(
        state.dofs, state.ssqs, state.means, state.covs, H, hp,
        ModelKind(next_model), float(sigma2), coef,
    )
    return state.log_weights + log_haz + log_tr


def _categorical(rng: np.random.Generator, log_w: np.ndarray) -> int:
    m = log_w.max() if log_w.size else -np.inf
    if not np.isfinite(m):
        raise NumericalError("smoother weights all vanished; cannot draw a predecessor")
    c = np.cumsum(np.exp(log_w - m))
    idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(idx, log_w.size - 1)


def _draw_coef(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray, sigma2: float) -> np.ndarray:
    """One draw from N(mean, sigma2 * cov) via an eigen square root."""
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-10:
        raise NumericalError("coefficient covariance lost positive semidefiniteness")
    root = v * np.sqrt(sigma2 * np.maximum(w, 0.0))
    return mean + root @ rng.standard_normal(mean.size)


def _sample_coef_given_next(
    mean: np.ndarray,
    cov: np.ndarray,
    next_model: int,
    sigma2: float,
    next_coef: np.ndarray,
    h: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Coefficient draw for a segment given its successor (raw arrays)."""
    if next_model == int(ModelKind.DISCONTINUOUS):
        return _draw_coef(rng, mean, cov, sigma2)
    b = float(next_coef[0])
    ch = cov @ h
    q = float(h @ ch)
    if q >= _DEGENERATE_VAR:
        mean_c = mean + ch * ((b - float(h @ mean)) / q)
        cov_c = cov - np.outer(ch, ch) / q
    else:
        mean_c, cov_c = mean, cov
    coef = _draw_coef(rng, mean_c, cov_c, sigma2)
    # the successor's intercept equals this curve at the boundary by
    # construction; pin it exactly (removes last-ulp drift)
    return coef + h * ((b - float(h @ coef)) / float(h @ h))


def sample_params_given_next(
    post: NIGParams,
    next_model: ModelKind,
    next_params: tuple[float, np.ndarray],
    h: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Draw a segment's (sigma2, coef) given the following segment's
    parameters.  The noise variance is shared, so it passes through.  A
    CONTINUOUS successor pins this segment's curve at the boundary, so
    coefficients come from the posterior conditioned on h . coef equal
    to the successor's intercept."""
    sigma2, next_coef = next_params
    coef = _sample_coef_given_next(
        post.mean,
        post.cov,
        int(ModelKind(next_model)),
        float(sigma2),
        np.asarray(next_coef, dtype=float),
        np.asarray(h, dtype=float),
        rng,
    )
    return float(sigma2), coef


class _SmootherContext:
    """Draw-independent arrays shared across many backward passes over one
    filter history: per-time-step backward-weight pieces and prefix-cached
    forward sweeps for resimulation."""

    def __init__(self, history: FilterHistory, data: TimeSeries, hp: Hyperparams):
        self.history = history
        self.data = data
        self.hp = hp
        self._steps: dict[int, tuple] = {}

    def step(self, t: int) -> tuple:
        cached = self._steps.get(t)
        if cached is None:
            state = self.history.states[t - 1]
            ages = t - state.starts
            with np.errstate(divide="ignore"):
                log_haz = np.log(np.asarray(self.hp.segment_length.hazard(ages), dtype=float))
            H = design_rows(self.data.x, state.starts, t + 1)
            hmu = np.einsum("ni,ni->n", H, state.means)
            hvar = np.clip(np.einsum("ni,nij,nj->n", H, state.covs, H), 0.0, None)
            a = 0.5 * state.dofs
            b = 0.5 * state.ssqs
            with np.errstate(divide="ignore", invalid="ignore"):
                ig_const = a * np.log(b) - gammaln(a)
            ig_const = np.where((state.dofs > 0) & (state.ssqs > 0), ig_const, -np.inf)
            base = state.log_weights + log_haz + ig_const
            cached = (state, base, hmu, hvar, a + 1.0, b)
            self._steps[t] = cached
        return cached

    def backward_log_weights(self, t: int, next_model: int, sigma2: float, coef: np.ndarray):
        """Same quantity as the module-level backward_log_weights, using the
        cached draw-independent pieces."""
        state, base, hmu, hvar, a1, b = self.step(t)
        log_w = base - a1 * np.log(sigma2) - b / sigma2
        d0, d1, d2 = self.hp.deltas
        if next_model == int(ModelKind.DISCONTINUOUS):
            return state, log_w + _log_normal_terms(coef[:3], np.array([d0, d1, d2]), sigma2)
        first = _log_normal_terms((coef[0] - hmu)[:, None], hvar[:, None], sigma2)
        rest = _log_normal_terms(coef[1:3], np.array([d1, d2]), sigma2)
        return state, log_w + first + rest


class _ForwardSweeps:
    """Forward conjugate sweeps keyed by segmentation, with prefix reuse."""

    def __init__(self, data: TimeSeries, hp: Hyperparams):
        self.data = data
        self.hp = hp
        self._full: dict = {}
        self._prefix: dict = {}

    def sweep(self, draw: SegmentationDraw):
        """Returns (dof, ssq, posts, rows): terminal noise posterior, each
        segment's end-of-segment (mean, cov), and the boundary rows."""
        cps = draw.changepoints
        models = tuple(int(m) for m in draw.models)
        full_key = (cps, models)
        hit = self._full.get(full_key)
        if hit is not None:
            return hit
        data, hp = self.data, self.hp
        x, y, n = data.x, data.y, data.n
        starts = (0,) + cps
        ends = cps + (n,)
        L = len(models)
        d0, d1, d2 = hp.deltas

        k0 = 0
        dof, ssq = float(hp.dof0), float(hp.ssq0)
        mean, cov = np.zeros(3), hp.coef_prior_cov
        posts: tuple = ()
        rows: tuple = ()
        for k in range(L - 2, -1, -1):
            cached = self._prefix.get((cps[: k + 1], models[: k + 2]))
            if cached is not None:
                (dof, ssq, mean, cov), posts, rows = cached
                k0 = k + 1
                break
        for k in range(k0, L):
            H = design_matrix(x, starts[k], starts[k] + 1, ends[k])
            dof, ssq, mean, cov = batch_update_raw(dof, ssq, mean, cov, H, y[starts[k] : ends[k]])
            posts = posts + ((mean, cov),)
            if k + 1 < L:
                h_b = design_row(x, starts[k], cps[k] + 1)
                rows = rows + (h_b,)
                if models[k + 1] == int(ModelKind.DISCONTINUOUS):
                    mean, cov = np.zeros(3), hp.coef_prior_cov
                else:
                    hm = float(h_b @ mean)
                    hv = max(float(h_b @ cov @ h_b), 0.0)
                    mean, cov = np.array([hm, 0.0, 0.0]), np.diag([hv, d1, d2])
                self._prefix[(cps[: k + 1], models[: k + 2])] = ((dof, ssq, mean, cov), posts, rows)
        out = (dof, ssq, posts, rows)
        self._full[full_key] = out
        return out


def sample_segmentation(
    history: FilterHistory,
    data: TimeSeries,
    hp: Hyperparams,
    rng: np.random.Generator,
    _ctx: _SmootherContext | None = None,
) -> SegmentationDraw:
    """One joint posterior draw of (changepoints, models, parameters) by
    backward simulation through the stored filter states."""
    ctx = _SmootherContext(history, data, hp) if _ctx is None else _ctx
    final = history.final
    if final.t != data.n:
        raise ValueError("filter history does not cover the whole series")
    i = _categorical(rng, final.log_weights)
    if not (final.dofs[i] > 0 and final.ssqs[i] > 0):
        raise NumericalError("final posterior is improper; cannot draw a noise variance")
    sigma2 = 1.0 / rng.gamma(0.5 * final.dofs[i], 2.0 / final.ssqs[i])
    coef = _draw_coef(rng, final.means[i], final.covs[i], sigma2)
    start = int(final.starts[i])
    model = int(final.models[i])

    models_rev = [model]
    coefs_rev = [coef]
    cps_rev: list[int] = []
    t = start
    while t > 0:
        cps_rev.append(t)
        state, log_bw = ctx.backward_log_weights(t, model, sigma2, coef)
        j = _categorical(rng, log_bw)
        h = design_row(data.x, int(state.starts[j]), t + 1)
        coef = _sample_coef_given_next(
            state.means[j], state.covs[j], model, sigma2, coef, h, rng
        )
        model = int(state.models[j])
        models_rev.append(model)
        coefs_rev.append(coef)
        t = int(state.starts[j])

    return SegmentationDraw(
        changepoints=tuple(reversed(cps_rev)),
        models=tuple(ModelKind(m) for m in reversed(models_rev)),
        sigma2=float(sigma2),
        coefs=tuple(reversed(coefs_rev)),
    )


_SWEEPS_KEY = "__forward_sweeps__"


def resimulate_parameters(
    draw: SegmentationDraw,
    data: TimeSeries,
    hp: Hyperparams,
    rng: np.random.Generator,
    cache: dict | None = None,
) -> SegmentationDraw:
    """Redraw (sigma2, coefs) from their exact posterior given the draw's
    segmentation.  Passing the same ``cache`` dict across calls reuses the
    forward sweeps."""
    store = {} if cache is None else cache
    sweeps = store.get(_SWEEPS_KEY)
    if sweeps is None or sweeps.data is not data or sweeps.hp is not hp:
        sweeps = _ForwardSweeps(data, hp)
        store[_SWEEPS_KEY] = sweeps
    dof, ssq, posts, rows = sweeps.sweep(draw)
    if not (dof > 0 and ssq > 0):
        raise NumericalError("posterior is improper; cannot resimulate parameters")
    sigma2 = 1.0 / rng.gamma(0.5 * dof, 2.0 / ssq)
    L = draw.n_segments
    coefs: list[np.ndarray] = [np.empty(0)] * L
    coefs[-1] = _draw_coef(rng, posts[-1][0], posts[-1][1], sigma2)
    for k in range(L - 2, -1, -1):
        coefs[k] = _sample_coef_given_next(
            posts[k][0], posts[k][1], int(draw.models[k + 1]), sigma2,
            coefs[k + 1], rows[k], rng,
        )
    return SegmentationDraw(
        changepoints=draw.changepoints,
        models=draw.models,
        sigma2=float(sigma2),
        coefs=tuple(coefs),
    )


def sample_posterior(
    history: FilterHistory,
    data: TimeSeries,
    hp: Hyperparams,
    n_draws: int,
    seed: int = 0,
    resimulate: bool = True,
) -> list[SegmentationDraw]:
    """Independent posterior draws; draw i uses its own random stream
    derived from (seed, i), so the set is reproducible and order-free."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    ctx = _SmootherContext(history, data, hp)
    cache: dict = {}
    draws = []
    for i in range(n_draws):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        d = sample_segmentation(history, data, hp, rng, _ctx=ctx)
        if resimulate:
            d = resimulate_parameters(d, data, hp, rng, cache)
        draws.append(d)
    return draws
