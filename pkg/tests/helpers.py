"""Small shared builders for the test suite."""

import math

import numpy as np

from segdep.filtering import FilterState


def make_state(t, parts):
    """Build a FilterState from (start, model, weight, dof, ssq, mean, cov)
    tuples; weights are normalised probabilities."""
    starts = np.array([p[0] for p in parts], dtype=np.int64)
    models = np.array([p[1] for p in parts], dtype=np.int64)
    log_w = np.log(np.array([p[2] for p in parts], dtype=float))
    dofs = np.array([p[3] for p in parts], dtype=float)
    ssqs = np.array([p[4] for p in parts], dtype=float)
    means = np.stack([np.asarray(p[5], dtype=float) for p in parts])
    covs = np.stack([np.asarray(p[6], dtype=float) for p in parts])
    return FilterState(t, starts, models, log_w, dofs, ssqs, means, covs)


def state_weights(state):
    """dict (start, model) -> weight for order-free comparisons."""
    return {
        (int(s), int(m)): math.exp(lw)
        for s, m, lw in zip(state.starts, state.models, state.log_weights)
    }
