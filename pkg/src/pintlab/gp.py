"""Gaussian-process regression on correction data, one GP per coordinate.

The kernel is squared-exponential, sigma_o^2 * exp(-||u - v||^2 / sigma_i^2),
with an additive noise term sigma_reg^2 on the training diagonal. Model
quality is scored by the log marginal likelihood

    -y^T (K + sigma_reg^2 I)^{-1} y - log det(K + sigma_reg^2 I)

(no constant or 1/2 factors; only the argmax matters). Hyperparameters are
chosen by multi-start Nelder-Mead over (log sigma_i^2, log sigma_o^2) run
separately for each candidate noise level on a fixed grid, taking the
overall likelihood argmax. Ties resolve to the smaller grid index, then the
earlier restart, so refits are reproducible.

All restarts for all coordinates and noise levels advance together through
one batched optimizer (see optimize.py). Likelihood evaluation has two
paths that share the same math: small training sets use a hand-vectorized
Cholesky over the whole batch, large ones loop over instances with LAPACK.
A factorization failure just scores -inf, which steers the search away from
degenerate hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.linalg.lapack import dpotrf
from scipy.spatial.distance import cdist

from .optimize import neldermead_minimize

__all__ = [
    "DEFAULT_NUGGET_GRID",
    "GpHyperparams",
    "GpModel",
    "HyperFit",
    "kernel_eval",
    "gram_matrix",
    "log_marginal_likelihood",
    "fit_hyperparams",
    "fit_gp_hyperparams_batch",
    "fit_coordinate_models",
    "build_model",
]

DEFAULT_NUGGET_GRID = (1e-20, 1e-16, 1e-13, 1e-10, 1e-8, 1e-6, 1e-4)

# Training sets at or below this size go through the batched Cholesky;
# larger ones are factorized one instance at a time with LAPACK, which wins
# once the O(n^3) work dominates the per-call overhead.
_BATCH_CHOL_MAX_N = 64

# Log-parameter clamp keeping exp() inside the finite double range.
_LOG_CLIP = 709.0


@dataclass(frozen=True)
class GpHyperparams:
    """Kernel scales and noise level, all on the natural (not log) scale."""

    input_scale: float  # sigma_i^2
    output_scale: float  # sigma_o^2
    nugget: float  # sigma_reg^2

    def __post_init__(self):
        if not (self.input_scale > 0 and self.output_scale > 0 and self.nugget >= 0):
            raise ValueError(f"scales must be positive and nugget nonnegative, got {self}")


def kernel_eval(u, v, hp: GpHyperparams) -> float:
    """Squared-exponential covariance between two states."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d2 = float(np.sum((u - v) ** 2))
    return hp.output_scale * float(np.exp(-d2 / hp.input_scale))


def gram_matrix(inputs: np.ndarray, hp: GpHyperparams, include_nugget: bool = True) -> np.ndarray:
    """Kernel matrix over a set of inputs, noise on the diagonal by default."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    d2 = cdist(inputs, inputs, "sqeuclidean")
    gram = hp.output_scale * np.exp(-d2 / hp.input_scale)
    if include_nugget:
        gram[np.diag_indices_from(gram)] += hp.nugget
    return gram


def log_marginal_likelihood(inputs: np.ndarray, y: np.ndarray, hp: GpHyperparams) -> float:
    """Likelihood score of one coordinate's data under the given scales.

    Raises LinAlgError when the regularized kernel matrix is not positive
    definite.
    """
    y = np.asarray(y, dtype=float)
    gram = gram_matrix(inputs, hp)
    chol = cholesky(gram, lower=True, check_finite=False)
    z = solve_triangular(chol, y, lower=True, check_finite=False)
    return float(-z @ z - 2.0 * np.sum(np.log(np.diag(chol))))


def _chol_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factors for a stack of matrices, with a success mask.

    Failed instances are flagged (and their factor replaced by identity so
    downstream solves stay finite) rather than raised, so one bad set of
    hyperparameters cannot abort a whole batch. The LAPACK routine is
    called directly for its info flag; numpy's batched wrapper would throw
    away the whole stack on the first bad instance.
    """
    n_batch, n, _ = mats.shape
    chol = np.empty_like(mats)
    ok = np.ones(n_batch, dtype=bool)
    eye = np.eye(n)
    for b in range(n_batch):
        factor, info = dpotrf(mats[b], lower=1, clean=0, overwrite_a=0)
        if info != 0:
            ok[b] = False
            chol[b] = eye
        else:
            chol[b] = factor
    # LAPACK does not screen non-finite input; a factor with a bad diagonal
    # means the instance was garbage all along.
    diag = chol[:, np.arange(n), np.arange(n)]
    bad = ~np.all(np.isfinite(diag) & (diag > 0.0), axis=1)
    if bad.any():
        ok &= ~bad
        chol[bad] = eye
    return chol, ok


def _forward_solve_batch(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve L z = y for each (L, y) pair in a batch, column by column."""
    n = rhs.shape[1]
    z = np.empty_like(rhs)
    for j in range(n):
        if j:
            acc = np.einsum("bk,bk->b", chol[:, j, :j], z[:, :j])
        else:
            acc = 0.0
        z[:, j] = (rhs[:, j] - acc) / chol[:, j, j]
    return z


def _llik_batch(d2: np.ndarray, targets: np.ndarray, nuggets: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Log marginal likelihood for a batch of (data row, nugget, scales).

    d2 is the shared (n, n) squared-distance matrix; targets is (B, n);
    theta is (B, 2) log scales. Infeasible instances score -inf.
    """
    n = d2.shape[0]
    n_batch = theta.shape[0]
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        input_scale = np.exp(np.clip(theta[:, 0], -_LOG_CLIP, _LOG_CLIP))
        output_scale = np.exp(np.clip(theta[:, 1], -_LOG_CLIP, _LOG_CLIP))
        if n <= _BATCH_CHOL_MAX_N:
            gram = np.exp(-d2[None, :, :] / input_scale[:, None, None])
            gram *= output_scale[:, None, None]
            gram[:, np.arange(n), np.arange(n)] += nuggets[:, None]
            safe_chol, ok = _chol_batch(gram)
            z = _forward_solve_batch(safe_chol, targets)
            diag = safe_chol[:, np.arange(n), np.arange(n)]
            llik = -np.einsum("bj,bj->b", z, z) - 2.0 * np.sum(np.log(diag), axis=1)
            llik[~ok] = -np.inf
            llik[~np.isfinite(llik)] = -np.inf
            return llik
    llik = np.empty(n_batch)
    for b in range(n_batch):
        gram = output_scale[b] * np.exp(-d2 / input_scale[b])
        gram[np.diag_indices(n)] += nuggets[b]
        try:
            chol = cholesky(gram, lower=True, check_finite=False)
        except LinAlgError:
            llik[b] = -np.inf
            continue
        z = solve_triangular(chol, targets[b], lower=True, check_finite=False)
        val = -z @ z - 2.0 * np.sum(np.log(np.diag(chol)))
        llik[b] = val if np.isfinite(val) else -np.inf
    return llik


@dataclass
class HyperFit:
    """Outcome of one coordinate's hyperparameter search."""

    hyperparams: GpHyperparams | None
    llik: float
    ok: bool


def fit_gp_hyperparams_batch(
    inputs: np.ndarray,
    targets: np.ndarray,
    *,
    rng: np.random.Generator,
    n_start: int = 10,
    nugget_grid=DEFAULT_NUGGET_GRID,
    maxiter: int = 200,
    ftol: float = 1e-6,
    warm_theta: np.ndarray | None = None,
    n_start_warm: int = 2,
) -> tuple[list[HyperFit], np.ndarray]:
    """Search hyperparameters for every target row in one batched run.

    targets is (C, n): one training vector per coordinate over shared
    inputs (n, d). Random restarts draw log scales uniformly from [-5, 5].
    When warm_theta (C, len(grid), 2) from a previous fit is given, it
    replaces the first restart and the restart count drops to
    max(n_start_warm, 1).

    Returns the per-coordinate fits and the per-(coordinate, nugget) best
    log scales for warm-starting the next fit.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n_coord, n = targets.shape
    if inputs.shape[0] != n:
        raise ValueError("targets and inputs disagree on the number of records")
    grid = np.asarray(nugget_grid, dtype=float)
    n_grid = grid.size
    n_restart = max(1, n_start if warm_theta is None else n_start_warm)

    x0 = rng.uniform(-5.0, 5.0, size=(n_coord, n_grid, n_restart, 2))
    if warm_theta is not None:
        x0[:, :, 0, :] = warm_theta
    x0 = x0.reshape(-1, 2)

    d2 = cdist(inputs, inputs, "sqeuclidean")
    instance_grid = np.tile(np.repeat(np.arange(n_grid), n_restart), n_coord)
    instance_coord = np.repeat(np.arange(n_coord), n_grid * n_restart)

    def objective(points: np.ndarray, ids: np.ndarray) -> np.ndarray:
        return -_llik_batch(d2, targets[instance_coord[ids]], grid[instance_grid[ids]], points)

    best_x, best_neg = neldermead_minimize(objective, x0, maxiter=maxiter, ftol=ftol)
    llik = (-best_neg).reshape(n_coord, n_grid, n_restart)
    best_x = best_x.reshape(n_coord, n_grid, n_restart, 2)

    # On degenerate data the search can walk a log scale past the float
    # range, where exp() rounds to 0 or inf even though the likelihood it
    # reported is finite. Such candidates cannot be turned into usable
    # hyperparameters, so they lose to any representable runner-up.
    with np.errstate(over="ignore"):
        scales = np.exp(best_x)
    representable = np.all(np.isfinite(scales) & (scales > 0.0), axis=-1)
    llik = np.where(representable, llik, -np.inf)

    # argmax over restarts, then over the nugget grid; np.argmax takes the
    # first of equals, which pins ties to (lower grid index, earlier start).
    restart_best = np.argmax(llik, axis=2)
    rows = np.arange(n_coord)[:, None], np.arange(n_grid)[None, :], restart_best
    warm_out = best_x[rows]
    llik_by_grid = llik[rows]
    grid_best = np.argmax(llik_by_grid, axis=1)

    fits = []
    for c in range(n_coord):
        g = grid_best[c]
        score = float(llik_by_grid[c, g])
        if np.isfinite(score):
            theta = warm_out[c, g]
            hp = GpHyperparams(float(np.exp(theta[0])), float(np.exp(theta[1])), float(grid[g]))
            fits.append(HyperFit(hp, score, True))
        else:
            fits.append(HyperFit(None, -np.inf, False))
    return fits, warm_out


def fit_hyperparams(
    inputs: np.ndarray,
    y: np.ndarray,
    *,
    rng: np.random.Generator,
    n_start: int = 10,
    nugget_grid=DEFAULT_NUGGET_GRID,
    maxiter: int = 200,
    ftol: float = 1e-6,
) -> GpHyperparams:
    """Hyperparameter search for a single training vector.

    Raises RuntimeError when every restart at every noise level fails to
    factorize, which signals degenerate data rather than bad luck.
    """
    y = np.asarray(y, dtype=float)
    fits, _ = fit_gp_hyperparams_batch(
        inputs,
        y[None, :],
        rng=rng,
        n_start=n_start,
        nugget_grid=nugget_grid,
        maxiter=maxiter,
        ftol=ftol,
    )
    fit = fits[0]
    if not fit.ok:
        raise RuntimeError(
            "GP hyperparameter search failed: no restart produced a positive-"
            f"definite kernel (n={len(y)}, n_start={n_start}, "
            f"nugget_grid={tuple(nugget_grid)})"
        )
    return fit.hyperparams


@dataclass
class GpModel:
    """One coordinate's fitted GP, factorized and ready to predict.

    An empty training set is legal: predictions then fall back to the
    prior (zero mean, output_scale variance).
    """

    hyperparams: GpHyperparams
    inputs: np.ndarray
    y: np.ndarray
    chol: np.ndarray | None
    alpha: np.ndarray | None
    llik: float
    ok: bool

    def _cross_kernel(self, queries: np.ndarray) -> np.ndarray:
        d2 = cdist(np.atleast_2d(queries), self.inputs, "sqeuclidean")
        return self.hyperparams.output_scale * np.exp(-d2 / self.hyperparams.input_scale)

    def posterior_mean(self, queries: np.ndarray) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if self.inputs.shape[0] == 0:
            return np.zeros(queries.shape[0])
        return self._cross_kernel(queries) @ self.alpha

    def posterior_variance(self, queries: np.ndarray) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if self.inputs.shape[0] == 0:
            return np.full(queries.shape[0], self.hyperparams.output_scale)
        cross = self._cross_kernel(queries)
        z = solve_triangular(self.chol, cross.T, lower=True, check_finite=False)
        var = self.hyperparams.output_scale - np.einsum("ij,ij->j", z, z)
        return np.maximum(var, 0.0)


def build_model(inputs: np.ndarray, y: np.ndarray, hp: GpHyperparams) -> GpModel:
    """Factorize the training data under fixed hyperparameters."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.size == 0:
        inputs = inputs.reshape(0, max(1, inputs.shape[-1] if inputs.ndim == 2 else 1))
    else:
        inputs = np.atleast_2d(inputs)
    y = np.asarray(y, dtype=float)
    if inputs.shape[0] == 0:
        return GpModel(hp, inputs, y, None, None, 0.0, True)
    gram = gram_matrix(inputs, hp)
    try:
        chol = cholesky(gram, lower=True, check_finite=False)
    except LinAlgError:
        return GpModel(hp, inputs, y, None, None, -np.inf, False)
    z = solve_triangular(chol, y, lower=True, check_finite=False)
    alpha = solve_triangular(chol.T, z, lower=False, check_finite=False)
    llik = float(-z @ z - 2.0 * np.sum(np.log(np.diag(chol))))
    return GpModel(hp, inputs, y, chol, alpha, llik, True)


def fit_coordinate_models(
    inputs: np.ndarray,
    targets: np.ndarray,
    *,
    rng: np.random.Generator,
    n_start: int = 10,
    nugget_grid=DEFAULT_NUGGET_GRID,
    maxiter: int = 200,
    ftol: float = 1e-6,
    warm_theta: np.ndarray | None = None,
    n_start_warm: int = 2,
) -> tuple[list[GpModel], np.ndarray]:
    """Fit hyperparameters for each coordinate and factorize the winners.

    Coordinates whose search or final factorization fails come back with
    ok=False so the caller can substitute another corrector.
    """
    fits, warm_out = fit_gp_hyperparams_batch(
        inputs,
        targets,
        rng=rng,
        n_start=n_start,
        nugget_grid=nugget_grid,
        maxiter=maxiter,
        ftol=ftol,
        warm_theta=warm_theta,
        n_start_warm=n_start_warm,
    )
    models = []
    for c, fit in enumerate(fits):
        if not fit.ok:
            models.append(
                GpModel(
                    GpHyperparams(1.0, 1.0, 0.0),
                    np.atleast_2d(inputs),
                    targets[c],
                    None,
                    None,
                    -np.inf,
                    False,
                )
            )
            continue
        model = build_model(inputs, targets[c], fit.hyperparams)
        models.append(model)
    return models, warm_out
