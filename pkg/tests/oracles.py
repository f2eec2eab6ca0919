"""Independent reference implementations used by the test suite.

Everything here is written from the model definition with plain dicts,
python loops and scipy distribution routines, deliberately avoiding the
package's own vectorised code paths:

* ``reference_filter`` -- a quadratic-cost transcription of the forward
  recursion (no resampling, linear-domain weights).
* ``enumerate_posterior`` -- exact posterior over every changepoint
  configuration and model assignment for tiny series, with exact
  per-configuration conjugate states.
* ``exact_segment_regression`` -- the closed-form constrained-regression
  posterior for a fixed segmentation, built by eliminating continuity
  constraints into one global design matrix.

Only ``segdep.model`` value types (TimeSeries, Hyperparams, ModelKind)
are imported, so these oracles share no numerical code with the modules
they check.
"""

import itertools
import math

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from segdep.model import Hyperparams, ModelKind, SegmentLengthPrior, TimeSeries

DISC = int(ModelKind.DISCONTINUOUS)
CONT = int(ModelKind.CONTINUOUS)

# Fallback degrees of freedom used by the collapse when the mixture
# moments are degenerate (matches the documented package convention).
FALLBACK_DOF = 1e8


# ---------------------------------------------------------------------------
# segment-length prior, transcribed from its stored fields


def ref_mass(prior: SegmentLengthPrior, d: int) -> float:
    """P(segment length = d) from the explicit list + geometric tail."""
    probs = prior.probs
    k = len(probs)
    if d <= 0:
        return 0.0
    if d <= k:
        return float(probs[d - 1])
    rest = 1.0 - sum(probs)
    return rest * prior.tail_p * (1.0 - prior.tail_p) ** (d - k - 1)


def ref_cdf(prior: SegmentLengthPrior, s: int) -> float:
    return sum(ref_mass(prior, d) for d in range(1, s + 1))


def ref_hazard(prior: SegmentLengthPrior, age: int) -> float:
    g1 = ref_cdf(prior, age + 1)
    g0 = ref_cdf(prior, age)
    return (g1 - g0) / (1.0 - g0)


# ---------------------------------------------------------------------------
# conjugate updates and predictive densities (scipy-based)


def ref_update(zeta, h, y):
    nu, ga, mu, D = zeta
    h = np.asarray(h, dtype=float)
    Dh = D @ h
    q = float(h @ Dh) + 1.0
    e = float(y) - float(h @ mu)
    return (
        nu + 1.0,
        ga + e * e / q,
        mu + Dh * (e / q),
        D - np.outer(Dh, Dh) / q,
    )


def ref_predictive(zeta, h, y):
    nu, ga, mu, D = zeta
    if nu <= 0.0 or ga <= 0.0:
        return 1.0
    h = np.asarray(h, dtype=float)
    q = float(h @ D @ h) + 1.0
    scale = math.sqrt(ga * q / nu)
    return float(stats.t.pdf(y, df=nu, loc=float(h @ mu), scale=scale))


def ref_nig_logpdf(zeta, sigma2, beta):
    """Joint log density of (sigma2, beta) under a normal-inverse-gamma."""
    nu, ga, mu, D = zeta
    lp = stats.invgamma.logpdf(sigma2, a=nu / 2.0, scale=ga / 2.0)
    lp += stats.multivariate_normal.logpdf(
        beta, mean=mu, cov=sigma2 * D, allow_singular=True
    )
    return float(lp)


def ref_design_row(x, start, t):
    """Design row of 1-based observation t in the segment starting at
    0-based index ``start``."""
    dx = float(x[t - 1] - x[start])
    return np.array([1.0, dx, dx * dx])


# ---------------------------------------------------------------------------
# quadratic-cost forward recursion


def _collapse_sigma_ref(parts):
    e1 = 0.0
    e2 = 0.0
    for w, (nu, ga, _, _) in parts:
        if w <= 0.0:
            continue
        e1 += w * (nu / ga if ga > 0.0 else math.inf)
        e2 += w * (nu * (nu + 2.0) / (ga * ga) if ga > 0.0 else math.inf)
    if math.isfinite(e1) and math.isfinite(e2) and e2 > e1 * e1 and e1 > 0.0:
        dof_c = 2.0 * e1 * e1 / (e2 - e1 * e1)
        return dof_c, dof_c / e1
    if not math.isfinite(e1):
        return FALLBACK_DOF, 0.0
    return FALLBACK_DOF, FALLBACK_DOF / e1 if e1 > 0.0 else 0.0


def _collapse_intercept_ref(parts, x, t):
    eta = 0.0
    m2 = 0.0
    for (s, _), (w, (_, _, mu, D)) in parts.items():
        h = ref_design_row(x, s, t + 1)
        pm = float(h @ mu)
        pv = float(h @ D @ h)
        eta += w * pm
        m2 += w * (pv + pm * pm)
    return eta, max(m2 - eta * eta, 0.0)


def reference_filter(data: TimeSeries, hp: Hyperparams):
    """Run the forward recursion with plain dicts and linear weights.

    Returns (weight_history, final_zetas, log_evidence) where
    weight_history[t-1] maps (start, model) -> normalised weight at time
    t and final_zetas maps the final particles to their conjugate state.
    """
    x, y, n = data.x, data.y, data.n
    d0, d1, d2 = hp.deltas
    h1 = np.array([1.0, 0.0, 0.0])
    zeta0 = (hp.dof0, hp.ssq0, np.zeros(3), np.diag([d0, d1, d2]))
    log_ev = math.log(ref_predictive(zeta0, h1, y[0]))
    parts = {(0, DISC): (1.0, ref_update(zeta0, h1, y[0]))}
    weight_history = [{k: v[0] for k, v in parts.items()}]
    for t in range(1, n):
        unnorm = {}
        zetas = {}
        for (s, m), (w, zeta) in parts.items():
            haz = ref_hazard(hp.segment_length, t - s)
            h = ref_design_row(x, s, t + 1)
            unnorm[(s, m)] = w * (1.0 - haz) * ref_predictive(zeta, h, y[t])
            zetas[(s, m)] = ref_update(zeta, h, y[t])
        dof_c, ssq_c = _collapse_sigma_ref(list(parts.values()))
        eta, tau = _collapse_intercept_ref(parts, x, t)
        mass = sum(
            w * ref_hazard(hp.segment_length, t - s)
            for (s, _), (w, _) in parts.items()
        )
        births = (
            (DISC, np.zeros(3), np.diag([d0, d1, d2]), 1.0 - hp.model_prior),
            (CONT, np.array([eta, 0.0, 0.0]), np.diag([tau, d1, d2]), hp.model_prior),
        )
        for m, mean_b, cov_b, pm in births:
            zb = (dof_c, ssq_c, mean_b, cov_b)
            unnorm[(t, m)] = pm * mass * ref_predictive(zb, h1, y[t])
            zetas[(t, m)] = ref_update(zb, h1, y[t])
        norm = sum(unnorm.values())
        log_ev += math.log(norm)
        parts = {
            k: (unnorm[k] / norm, zetas[k]) for k in unnorm if unnorm[k] > 0.0
        }
        weight_history.append({k: v[0] for k, v in parts.items()})
    final_zetas = {k: v[1] for k, v in parts.items()}
    return weight_history, final_zetas, log_ev


# ---------------------------------------------------------------------------
# exact enumeration over changepoint configurations


def config_log_prior(cps, models, hp: Hyperparams, n: int) -> float:
    """Log prior of a configuration, accumulated transition by transition
    exactly as the forward recursion factors it."""
    lp = 0.0
    cp_set = set(cps)
    seg = 0
    s = 0
    for t in range(1, n):
        age = t - s
        haz = ref_hazard(hp.segment_length, age)
        if t in cp_set:
            seg += 1
            pm = hp.model_prior if models[seg] == CONT else 1.0 - hp.model_prior
            lp += math.log(haz) + math.log(pm)
            s = t
        else:
            lp += math.log(1.0 - haz)
    return lp


def config_log_lik(data: TimeSeries, hp: Hyperparams, cps, models):
    """Exact log marginal likelihood of a configuration via sequential
    predictives, with the exact boundary transitions (DISCONTINUOUS
    resets the coefficient prior; CONTINUOUS centres the intercept on
    the previous segment's extrapolated boundary value).

    Returns (log_lik, final_zeta).
    """
    x, y, n = data.x, data.y, data.n
    d0, d1, d2 = hp.deltas
    starts = (0,) + tuple(cps)
    zeta = (hp.dof0, hp.ssq0, np.zeros(3), np.diag([d0, d1, d2]))
    ll = 0.0
    seg = 0
    s = 0
    for i in range(n):
        if seg + 1 <= len(cps) and i == starts[seg + 1]:
            nu, ga, mu, D = zeta
            if models[seg + 1] == DISC:
                zeta = (nu, ga, np.zeros(3), np.diag([d0, d1, d2]))
            else:
                h = ref_design_row(x, s, i + 1)
                hm = float(h @ mu)
                hv = float(h @ D @ h)
                zeta = (nu, ga, np.array([hm, 0.0, 0.0]), np.diag([hv, d1, d2]))
            s = i
            seg += 1
        h = ref_design_row(x, s, i + 1)
        ll += math.log(ref_predictive(zeta, h, y[i]))
        zeta = ref_update(zeta, h, y[i])
    return ll, zeta


def all_configs(n: int):
    """Every (changepoints, models) pair for a series of length n.

    Changepoints are 0-based segment-start indices in 1..n-1; the first
    segment's model is always DISCONTINUOUS.
    """
    for k in range(n):
        for cps in itertools.combinations(range(1, n), k):
            for rest in itertools.product((DISC, CONT), repeat=k):
                yield cps, (DISC,) + rest


def enumerate_posterior(data: TimeSeries, hp: Hyperparams):
    """Exact posterior over configurations.

    Returns (posterior, zetas, log_evidence): posterior maps
    (cps, models) -> probability, zetas maps the same keys to the exact
    final conjugate state of the last segment.
    """
    keys = []
    logs = []
    zetas = {}
    for cps, models in all_configs(data.n):
        lp = config_log_prior(cps, models, hp, data.n)
        ll, zeta = config_log_lik(data, hp, cps, models)
        keys.append((cps, models))
        logs.append(lp + ll)
        zetas[(cps, models)] = zeta
    logs = np.asarray(logs)
    log_z = float(logsumexp(logs))
    probs = np.exp(logs - log_z)
    posterior = {k: float(p) for k, p in zip(keys, probs)}
    return posterior, zetas, log_z


def exact_final_state(posterior) -> dict:
    """Marginal P(last segment start, last model) from an enumeration."""
    out = {}
    for (cps, models), p in posterior.items():
        key = (cps[-1] if cps else 0, models[-1])
        out[key] = out.get(key, 0.0) + p
    return out


def exact_mean_changepoints(posterior) -> float:
    return sum(len(cps) * p for (cps, _), p in posterior.items())


def ref_transition_factor(zeta, next_model, sigma2, coef, h, hp: Hyperparams):
    """Log density of the next segment's (sigma2, coef) given a
    predecessor conjugate state: inverse-gamma factor for the shared
    noise variance times the birth prior of the coefficients."""
    nu, ga, mu, D = zeta
    d0, d1, d2 = hp.deltas
    lp = float(stats.invgamma.logpdf(sigma2, a=nu / 2.0, scale=ga / 2.0))
    if next_model == DISC:
        var0 = sigma2 * d0
        lp += float(stats.norm.logpdf(coef[0], 0.0, math.sqrt(var0)))
    else:
        hm = float(h @ mu)
        hv = float(h @ D @ h)
        if hv < 1e-12:
            cap = -0.5 * math.log(2.0 * math.pi * sigma2 * 1e-12)
            lp += cap if abs(coef[0] - hm) <= 1e-8 else -math.inf
        else:
            lp += float(stats.norm.logpdf(coef[0], hm, math.sqrt(sigma2 * hv)))
    lp += float(stats.norm.logpdf(coef[1], 0.0, math.sqrt(sigma2 * d1)))
    lp += float(stats.norm.logpdf(coef[2], 0.0, math.sqrt(sigma2 * d2)))
    return lp


def exact_backward_conditional(data_prefix, hp, next_model, next_params, x_full, t):
    """Exact conditional P(C_t = s, M = m | y_1:t, next segment params)
    by enumerating the prefix series and applying the exact transition
    factor configuration by configuration."""
    posterior, zetas, _ = enumerate_posterior(data_prefix, hp)
    sigma2, coef = next_params
    out = {}
    for key, p in posterior.items():
        cps, models = key
        s = cps[-1] if cps else 0
        m = models[-1]
        if p <= 0.0:
            continue
        haz = ref_hazard(hp.segment_length, t - s)
        h = ref_design_row(x_full, s, t + 1)
        ltr = ref_transition_factor(zetas[key], next_model, sigma2, coef, h, hp)
        out[(s, m)] = out.get((s, m), 0.0) + p * haz * math.exp(ltr)
    total = sum(out.values())
    return {k: v / total for k, v in out.items()}


# ---------------------------------------------------------------------------
# closed-form constrained regression for a fixed segmentation


def exact_segment_regression(data: TimeSeries, hp: Hyperparams, cps, models):
    """Exact posterior for a fixed segmentation by eliminating the
    continuity constraints into one global Bayesian linear regression.

    Free parameters are segment 1's three coefficients, three per later
    DISCONTINUOUS segment and two (slope, quadratic) per CONTINUOUS
    segment, each with an independent N(0, sigma2 * delta) prior; a
    CONTINUOUS intercept is the previous segment's extrapolated boundary
    value, a linear map of earlier free parameters.

    Returns (dof, ssq, beta_means, beta_covs) where beta_means[k] /
    beta_covs[k] give segment k's exact posterior mean and covariance
    (the latter scaled by sigma2, i.e. Cov(beta_k | sigma2) = sigma2 *
    beta_covs[k]).
    """
    x, y, n = data.x, data.y, data.n
    d0, d1, d2 = hp.deltas
    starts = (0,) + tuple(cps)
    ends = tuple(cps) + (n,)
    n_free = sum(3 if m == DISC else 2 for m in models)
    prior_var = []
    rows = []  # per segment: 3 x n_free map from free params to beta_k
    col = 0
    for k, m in enumerate(models):
        R = np.zeros((3, n_free))
        if k == 0 or m == DISC:
            R[0, col] = 1.0
            R[1, col + 1] = 1.0
            R[2, col + 2] = 1.0
            prior_var += [d0, d1, d2]
            col += 3
        else:
            h = ref_design_row(x, starts[k - 1], starts[k] + 1)
            R[0] = h @ rows[k - 1]
            R[1, col] = 1.0
            R[2, col + 1] = 1.0
            prior_var += [d1, d2]
            col += 2
        rows.append(R)
    X = np.zeros((n, n_free))
    for k, (a, b) in enumerate(zip(starts, ends)):
        for i in range(a, b):
            h = ref_design_row(x, a, i + 1)
            X[i] = h @ rows[k]
    P = np.diag(1.0 / np.asarray(prior_var))
    V = np.linalg.inv(X.T @ X + P)
    xty = X.T @ y
    phi_hat = V @ xty
    dof = hp.dof0 + n
    ssq = hp.ssq0 + float(y @ y) - float(xty @ phi_hat)
    beta_means = [R @ phi_hat for R in rows]
    beta_covs = [R @ V @ R.T for R in rows]
    return dof, ssq, beta_means, beta_covs


# ---------------------------------------------------------------------------
# distances and draw summaries


def config_distribution(draws) -> dict:
    """Empirical distribution of (changepoints, models) over draws."""
    out = {}
    step = 1.0 / len(draws)
    for d in draws:
        key = (tuple(d.changepoints), tuple(int(m) for m in d.models))
        out[key] = out.get(key, 0.0) + step
    return out


def tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
