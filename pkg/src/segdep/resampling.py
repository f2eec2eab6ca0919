"""Rejection-control resampling for the forward filter.

Particles above a weight threshold pass through untouched; each
sub-threshold particle survives with probability weight/threshold and,
if kept, has its weight raised to the threshold (an unbiased move).
Survival decisions share a single uniform draw, stratified over the
sub-threshold particles in (start, model) order, so the expected number
of survivors is hit almost deterministically.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .filtering import FilterState


@dataclass(frozen=True)
class ResampleConfig:
    """threshold = 0 disables rejection control entirely; max_particles, if
    set, afterwards keeps only the heaviest particles."""

    threshold: float = 1e-6
    max_particles: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.max_particles is not None and self.max_particles < 1:
            raise ValueError("max_particles must be >= 1")

    @property
    def active(self) -> bool:
        return self.threshold > 0 or self.max_particles is not None


def resample(state: "FilterState", cfg: ResampleConfig, rng: np.random.Generator):
    """Apply rejection control (and the optional hard cap) to one filter
    state; returns a state with renormalised weights.  With threshold 0
    and no cap this is the identity and consumes no randomness."""
    w = np.exp(state.log_weights)
    new_w = w
    keep = np.ones(w.size, dtype=bool)
    if cfg.threshold > 0:
        sub = w < cfg.threshold
        if np.any(sub):
            # particle k of the sub-threshold block survives iff
            # (U + k)/K <= (k + w_k/threshold)/K, i.e. U <= w_k/threshold
            u = rng.random()
            keep = ~sub
            keep[sub] = u <= w[sub] / cfg.threshold
            new_w = np.where(sub, cfg.threshold, w)
    if cfg.max_particles is not None and int(np.count_nonzero(keep)) > cfg.max_particles:
        kept_idx = np.flatnonzero(keep)
        order = np.argsort(-new_w[kept_idx], kind="stable")
        drop = kept_idx[order[cfg.max_particles :]]
        keep = keep.copy()
        keep[drop] = False
    if np.all(keep) and new_w is w:
        return state
    kept_w = new_w[keep]
    log_w = np.log(kept_w) - np.log(kept_w.sum())
    return replace(
        state,
        starts=state.starts[keep],
        models=state.models[keep],
        log_weights=log_w,
        dofs=state.dofs[keep],
        ssqs=state.ssqs[keep],
        means=state.means[keep],
        covs=state.covs[keep],
    )
