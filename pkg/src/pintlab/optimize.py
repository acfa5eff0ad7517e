"""Batched Nelder-Mead minimization running many instances in lockstep.

Hyperparameter searches here fit hundreds of small GPs at once (one per
coordinate, nugget value, and random restart). Optimizing them one
scipy.optimize call at a time wastes most of its runtime on per-call
overhead, so this module advances every simplex together: each step
evaluates all pending reflection points in one vectorized objective call,
then the (rarer) expansion/contraction points in a second call.

The method itself is the textbook simplex recipe with the standard
coefficients (reflection 1, expansion 2, contraction 0.5, shrink 0.5).
Objectives may return +inf for infeasible points. An instance stops when
its value spread drops below ftol, when its simplex collapses below xtol
in coordinates (the exit for simplexes pinned against an infeasibility
cliff, where one vertex stays at +inf and the spread never settles), or
after maxiter steps; an instance whose whole simplex goes infeasible is
abandoned with value +inf.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["neldermead_minimize"]

# Objective for a batch: (points (q, p), instance_ids (q,)) -> values (q,).
BatchObjective = Callable[[np.ndarray, np.ndarray], np.ndarray]


def neldermead_minimize(
    fun: BatchObjective,
    x0: np.ndarray,
    *,
    maxiter: int = 200,
    ftol: float = 1e-6,
    xtol: float = 1e-6,
    step: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Minimize B independent p-dimensional objectives in lockstep.

    fun evaluates a stacked batch of points, one row per instance listed
    in instance_ids (ids may repeat during shrink steps). x0 is (B, p).

    Returns (x_best (B, p), f_best (B,)).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n_batch, n_dim = x0.shape
    n_vert = n_dim + 1

    simplex = np.repeat(x0[:, None, :], n_vert, axis=1)
    for j in range(n_dim):
        simplex[:, j + 1, j] += step
    ids = np.repeat(np.arange(n_batch), n_vert)
    fvals = fun(simplex.reshape(-1, n_dim), ids).reshape(n_batch, n_vert)

    active = np.ones(n_batch, dtype=bool)
    for _ in range(maxiter):
        live = np.flatnonzero(active)
        if live.size == 0:
            break
        f_live = fvals[live]
        order = np.argsort(f_live, axis=1, kind="stable")
        f_live = np.take_along_axis(f_live, order, axis=1)
        s_live = np.take_along_axis(simplex[live], order[:, :, None], axis=1)
        fvals[live] = f_live
        simplex[live] = s_live

        with np.errstate(invalid="ignore"):
            spread = f_live[:, -1] - f_live[:, 0]
            diameter = np.max(np.abs(s_live - s_live[:, :1, :]), axis=(1, 2))
            stop = ~np.isfinite(f_live[:, 0]) | (spread < ftol) | (diameter < xtol)
        if stop.any():
            active[live[stop]] = False
            keep = ~stop
            live = live[keep]
            if live.size == 0:
                continue
            f_live = f_live[keep]
            s_live = s_live[keep]

        best = f_live[:, 0]
        second_worst = f_live[:, -2]
        worst = f_live[:, -1]
        centroid = s_live[:, :-1].mean(axis=1)
        away = centroid - s_live[:, -1]

        x_reflect = centroid + away
        f_reflect = fun(x_reflect, live)

        wants_expand = f_reflect < best
        takes_reflect = ~wants_expand & (f_reflect < second_worst)
        wants_outside = ~wants_expand & ~takes_reflect & (f_reflect < worst)
        wants_inside = ~wants_expand & ~takes_reflect & ~wants_outside

        # Second evaluation round: expansion and both contraction kinds
        # are mutually exclusive, so they share one stacked call.
        x_second = np.where(
            wants_expand[:, None],
            centroid + 2.0 * away,
            np.where(wants_outside[:, None], centroid + 0.5 * away, centroid - 0.5 * away),
        )
        needs_second = ~takes_reflect
        f_second = np.full(live.size, np.inf)
        if needs_second.any():
            rows = np.flatnonzero(needs_second)
            f_second[rows] = fun(x_second[rows], live[rows])

        new_x = x_reflect.copy()
        new_f = f_reflect.copy()
        expand_better = wants_expand & (f_second < f_reflect)
        outside_ok = wants_outside & (f_second <= f_reflect)
        inside_ok = wants_inside & (f_second < worst)
        replace = expand_better | outside_ok | inside_ok
        new_x[replace] = x_second[replace]
        new_f[replace] = f_second[replace]

        accepted = wants_expand | takes_reflect | outside_ok | inside_ok
        acc_rows = live[accepted]
        simplex[acc_rows, -1] = new_x[accepted]
        fvals[acc_rows, -1] = new_f[accepted]

        shrinking = live[~accepted]
        if shrinking.size:
            kept = simplex[shrinking, :1]
            simplex[shrinking, 1:] = kept + 0.5 * (simplex[shrinking, 1:] - kept)
            ids = np.repeat(shrinking, n_dim)
            fvals[shrinking, 1:] = fun(
                simplex[shrinking, 1:].reshape(-1, n_dim), ids
            ).reshape(-1, n_dim)

    order = np.argsort(fvals, axis=1, kind="stable")
    fvals = np.take_along_axis(fvals, order, axis=1)
    simplex = np.take_along_axis(simplex, order[:, :, None], axis=1)
    return simplex[:, 0].copy(), fvals[:, 0].copy()
