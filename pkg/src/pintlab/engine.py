"""Predictor-corrector time-parallel integration with pluggable correctors.

The time axis is cut into n_intervals slices with boundaries numbered
0..n_intervals. Each iteration runs the expensive fine solver on every
unconverged interval from the previous iterate's boundary values (these are
the propagations that would fan out across workers), then sequentially
rebuilds the boundary values with the cheap coarse solver plus a corrector
term standing in for the fine-minus-coarse discrepancy:

    U[i] <- coarse(U[i-1]) + correction_estimate(U[i-1])

Correctors:

* ``parareal``: the stored discrepancy from the previous iterate at the
  same interval.
* ``mnn``: mean discrepancy of the m nearest stored evaluations.
* ``gparareal``: per-coordinate GP posterior means conditioned on every
  stored evaluation, refit once per iteration.
* ``nngparareal``: per-coordinate GPs conditioned on a small subset near
  the query, refit for every prediction.

Boundaries converge from the left: once successive iterates agree below
epsilon (sup norm) on a contiguous prefix, those boundaries freeze and
their intervals drop out of all later sweeps. Every fine propagation is
cached by its exact input bits, so a frozen interval is never recomputed
and repeated inputs never duplicate store records.

When a GP corrector cannot produce a finite prediction for an interval
(failed fit or degenerate subset), that interval falls back to the plain
lookup term for the iteration and the event is logged on the report.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import SUBSET_STRATEGIES, CorrectionStore
from .gp import DEFAULT_NUGGET_GRID, fit_coordinate_models
from .integrators import SolverSpec, integrate_interval
from .systems import SystemDefinition, bounds_from_states, normalize_system

__all__ = [
    "CORRECTORS",
    "GpSettings",
    "PintConfig",
    "RunReport",
    "run",
    "run_serial",
    "normalized_setup",
]

CORRECTORS = ("parareal", "mnn", "gparareal", "nngparareal")


@dataclass
class GpSettings:
    """Knobs for the GP correctors' hyperparameter searches."""

    n_start: int = 10
    nugget_grid: tuple = DEFAULT_NUGGET_GRID
    maxiter: int = 200
    ftol: float = 1e-6
    # Full-dataset refits reuse the previous iteration's optimum as a
    # starting point once the dataset outgrows full_restart_max_n records,
    # keeping n_start_warm restarts instead of n_start.
    warm_start: bool = True
    full_restart_max_n: int = 200
    n_start_warm: int = 2


@dataclass
class PintConfig:
    """Everything one time-parallel run needs."""

    system: SystemDefinition
    n_intervals: int
    coarse: SolverSpec
    fine: SolverSpec
    epsilon: float = 5e-7
    corrector: str = "parareal"
    m: int = 15
    subset_strategy: str = "nearest"
    gp: GpSettings = field(default_factory=GpSettings)
    seed: int = 0
    max_iterations: int | None = None
    wallclock_budget: float | None = None
    jobs: int = 1
    # Extra correctors to evaluate against the true corrections after each
    # iteration (diagnostic only; roughly doubles the fine-solver work).
    probe_correctors: tuple = ()

    def validate(self) -> None:
        if self.corrector not in CORRECTORS:
            raise ValueError(f"unknown corrector {self.corrector!r}; choose from {CORRECTORS}")
        if self.subset_strategy not in SUBSET_STRATEGIES:
            raise ValueError(
                f"unknown subset strategy {self.subset_strategy!r}; choose from {SUBSET_STRATEGIES}"
            )
        if self.n_intervals < 2:
            raise ValueError("n_intervals must be at least 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        for probe in self.probe_correctors:
            if probe not in CORRECTORS:
                raise ValueError(f"unknown probe corrector {probe!r}")


@dataclass
class RunReport:
    """Everything a run produced: solution, trace, timings, events."""

    system: str
    corrector: str
    n_intervals: int
    dim: int
    epsilon: float
    m: int
    seed: int
    k_iterations: int
    converged: bool
    budget_exceeded: bool
    frontier: list[int]
    new_records: list[int]
    t_fine_single: list[float]
    t_fine_sweep: list[float]
    t_coarse_single: list[float]
    t_model: list[float]
    wallclock: float
    times: np.ndarray
    states: np.ndarray
    history: list[np.ndarray]
    events: list[str]
    fallback_count: int
    store_size: int
    model_parallel_units: int
    prediction_errors: dict[str, list[np.ndarray]] | None = None


def run(config: PintConfig) -> RunReport:
    """Execute one time-parallel run to convergence, cap, or budget."""
    config.validate()
    return _Run(config).execute()


def run_serial(
    system: SystemDefinition, n_intervals: int, spec: SolverSpec
) -> tuple[np.ndarray, np.ndarray, float]:
    """Sequential solution at the interval boundaries, with wallclock."""
    t0, t1 = system.t_span
    times = np.linspace(t0, t1, n_intervals + 1)
    dt = (t1 - t0) / n_intervals
    states = np.empty((n_intervals + 1, system.dim))
    states[0] = system.u0
    tic = time.perf_counter()
    for i in range(1, n_intervals + 1):
        states[i] = integrate_interval(system.rhs, states[i - 1], times[i - 1], dt, spec)
    return times, states, time.perf_counter() - tic


def normalized_setup(
    system: SystemDefinition, n_intervals: int, coarse: SolverSpec, margin: float = 0.1
):
    """Rescale a system so the engine works on roughly unit coordinates.

    A sequential coarse pass sketches the solution's extent; its padded
    bounds define the affine map onto [-1, 1] per coordinate. Convergence
    thresholds then mean the same thing across systems of very different
    magnitudes. Returns the rescaled system and the map.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        _, states, _ = run_serial(system, n_intervals, coarse)
    if not np.all(np.isfinite(states)):
        raise ValueError(
            f"coarse sketch of {system.name!r} produced non-finite values; "
            "the coarse solver is too crude for this horizon, increase its steps"
        )
    bounds = bounds_from_states(states, margin=margin)
    return normalize_system(system, bounds)


class _Run:
    def __init__(self, config: PintConfig):
        self.cfg = config
        self.system = config.system
        self.n = config.n_intervals
        self.dim = config.system.dim
        t0, t1 = config.system.t_span
        self.times = np.linspace(t0, t1, self.n + 1)
        self.dt = (t1 - t0) / self.n
        self.k_max = config.max_iterations if config.max_iterations is not None else self.n
        self.store = CorrectionStore(self.dim)
        self.events: list[str] = []
        self.fallbacks = 0
        # fine_vals[i] caches the fine propagation over interval i from the
        # input bits stored in fine_inputs[i].
        self.fine_inputs = np.full((self.n + 1, self.dim), np.nan)
        self.fine_vals = np.full((self.n + 1, self.dim), np.nan)
        # g_cur[i] holds the coarse propagation over interval i evaluated at
        # the current iterate's boundary i-1; the lookup term F - G and the
        # update formula both read it before it is refreshed.
        self.g_cur = np.full((self.n + 1, self.dim), np.nan)
        self.gp_models = None
        self.gp_warm = None
        self.probe_warm = None
        self.prediction_errors: dict[str, list[np.ndarray]] = {
            probe: [] for probe in config.probe_correctors
        }

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.cfg.seed, *key]))

    def _coarse(self, i: int, u: np.ndarray) -> np.ndarray:
        return integrate_interval(self.system.rhs, u, self.times[i - 1], self.dt, self.cfg.coarse)

    def _fine_rows(self, intervals: np.ndarray, state: np.ndarray) -> np.ndarray:
        """Fine-propagate a batch of intervals from the given iterate."""
        u0 = state[intervals - 1]
        t0 = self.times[intervals - 1]
        if self.cfg.jobs == 1 or intervals.size == 1:
            return integrate_interval(self.system.rhs, u0, t0, self.dt, self.cfg.fine)
        chunks = np.array_split(np.arange(intervals.size), min(self.cfg.jobs, intervals.size))
        out = np.empty_like(u0)
        with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
            futures = {
                pool.submit(
                    integrate_interval, self.system.rhs, u0[rows], t0[rows], self.dt, self.cfg.fine
                ): rows
                for rows in chunks
                if rows.size
            }
            for future, rows in futures.items():
                out[rows] = future.result()
        return out

    def execute(self) -> RunReport:
        # Intermediate iterates can leave the region where the problem is
        # integrable, making fine or coarse propagations overflow. Those
        # values are handled (never stored, frontier never advances over
        # them) and the affected intervals heal from the left as earlier
        # boundaries converge, so the arithmetic runs with warnings off.
        with np.errstate(over="ignore", invalid="ignore", under="ignore", divide="ignore"):
            return self._execute()

    def _execute(self) -> RunReport:
        cfg = self.cfg
        start = time.perf_counter()

        # Iteration 0: sequential coarse pass.
        state = np.empty((self.n + 1, self.dim))
        state[0] = np.asarray(self.system.u0, dtype=float)
        for i in range(1, self.n + 1):
            state[i] = self._coarse(i, state[i - 1])
            self.g_cur[i] = state[i]
        history = [state.copy()]

        frontier = 0
        converged = False
        budget_exceeded = False
        frontier_trace: list[int] = []
        new_records: list[int] = []
        t_fine_single: list[float] = []
        t_fine_sweep: list[float] = []
        t_coarse_single: list[float] = []
        t_model: list[float] = []

        k = 0
        while k < self.k_max:
            k += 1

            t_solo, t_sweep, n_new = self._fine_sweep(state, frontier, k)
            t_fine_single.append(t_solo)
            t_fine_sweep.append(t_sweep)
            new_records.append(n_new)

            model_time = self._begin_iteration(k)
            new_state, g_next, coarse_times, model_time = self._update_sweep(
                state, frontier, k, model_time
            )
            t_model.append(model_time)
            t_coarse_single.append(float(np.mean(coarse_times)) if coarse_times else np.nan)

            frontier = self._advance_frontier(state, new_state, frontier)
            frontier_trace.append(frontier)
            history.append(new_state.copy())
            state = new_state
            self.g_cur = g_next

            if self.cfg.probe_correctors:
                self._record_prediction_errors(state, frontier, k)

            if frontier == self.n - 1:
                converged = True
                break
            if cfg.wallclock_budget is not None and time.perf_counter() - start > cfg.wallclock_budget:
                budget_exceeded = True
                self.events.append(
                    f"iteration {k}: wallclock budget {cfg.wallclock_budget:.3g}s exhausted"
                )
                break

        return RunReport(
            system=self.system.name,
            corrector=cfg.corrector,
            n_intervals=self.n,
            dim=self.dim,
            epsilon=cfg.epsilon,
            m=cfg.m,
            seed=cfg.seed,
            k_iterations=k,
            converged=converged,
            budget_exceeded=budget_exceeded,
            frontier=frontier_trace,
            new_records=new_records,
            t_fine_single=t_fine_single,
            t_fine_sweep=t_fine_sweep,
            t_coarse_single=t_coarse_single,
            t_model=t_model,
            wallclock=time.perf_counter() - start,
            times=self.times,
            states=state,
            history=history,
            events=self.events,
            fallback_count=self.fallbacks,
            store_size=self.store.size,
            model_parallel_units=self._model_parallel_units(),
            prediction_errors=self.prediction_errors if cfg.probe_correctors else None,
        )

    def _model_parallel_units(self) -> int:
        """Independent tasks the corrector's model work splits into."""
        cfg = self.cfg
        if cfg.corrector == "gparareal":
            return self.dim
        if cfg.corrector == "nngparareal":
            return self.dim * len(cfg.gp.nugget_grid) * cfg.gp.n_start
        return 1

    def _fine_sweep(self, state: np.ndarray, frontier: int, k: int) -> tuple[float, float, int]:
        """Fine-propagate every unconverged interval whose input changed.

        The first pending interval runs alone and is timed; it stands in
        for the per-worker cost of one fine propagation. The rest run as
        one vectorized batch. Each propagation becomes a store record
        tagged with the iterate it came from.
        """
        sweep_tic = time.perf_counter()
        todo = [
            i
            for i in range(frontier + 1, self.n + 1)
            if not np.array_equal(self.fine_inputs[i], state[i - 1])
        ]
        if not todo:
            return np.nan, time.perf_counter() - sweep_tic, 0

        first = todo[0]
        solo_tic = time.perf_counter()
        self.fine_vals[first] = integrate_interval(
            self.system.rhs, state[first - 1], self.times[first - 1], self.dt, self.cfg.fine
        )
        t_solo = time.perf_counter() - solo_tic
        self.fine_inputs[first] = state[first - 1]

        rest = np.asarray(todo[1:], dtype=np.int64)
        if rest.size:
            vals = self._fine_rows(rest, state)
            self.fine_vals[rest] = vals
            self.fine_inputs[rest] = state[rest - 1]

        idx = np.asarray(todo, dtype=np.int64)
        inputs = state[idx - 1]
        outputs = self.fine_vals[idx] - self.g_cur[idx]
        keep = np.isfinite(inputs).all(axis=1) & np.isfinite(outputs).all(axis=1)
        if not keep.all():
            skipped = idx[~keep].tolist()
            self.events.append(
                f"iteration {k}: dropped non-finite corrections for intervals {skipped}"
            )
        if keep.any():
            self.store.insert_batch(inputs[keep], outputs[keep], idx[keep], iteration=k - 1)
        return t_solo, time.perf_counter() - sweep_tic, int(keep.sum())

    def _begin_iteration(self, k: int) -> float:
        """Per-iteration corrector setup; refits the full-data GPs."""
        if self.cfg.corrector != "gparareal":
            return 0.0
        if self.store.size == 0:
            self.gp_models = None
            return 0.0
        gp = self.cfg.gp
        tic = time.perf_counter()
        warm = None
        if gp.warm_start and self.gp_warm is not None and self.store.size > gp.full_restart_max_n:
            warm = self.gp_warm
        models, warm_out = fit_coordinate_models(
            self.store.inputs,
            self.store.outputs.T,
            rng=self._rng(203, k),
            n_start=gp.n_start,
            nugget_grid=gp.nugget_grid,
            maxiter=gp.maxiter,
            ftol=gp.ftol,
            warm_theta=warm,
            n_start_warm=gp.n_start_warm,
        )
        self.gp_warm = warm_out
        self.gp_models = models
        bad = [c for c, model in enumerate(models) if not model.ok]
        if bad:
            self.events.append(
                f"iteration {k}: full-data GP fit failed for coordinates {bad}; "
                "affected predictions fall back to the lookup term"
            )
        return time.perf_counter() - tic

    def _update_sweep(
        self, state: np.ndarray, frontier: int, k: int, model_time: float
    ) -> tuple[np.ndarray, np.ndarray, list[float], float]:
        """Sequential coarse-plus-correction rebuild of unconverged boundaries."""
        cfg = self.cfg
        new_state = state.copy()
        g_next = self.g_cur.copy()
        coarse_times: list[float] = []
        for i in range(frontier + 1, self.n + 1):
            tic = time.perf_counter()
            g_val = self._coarse(i, new_state[i - 1])
            coarse_times.append(time.perf_counter() - tic)
            lookup = self.fine_vals[i] - self.g_cur[i]
            if cfg.corrector == "parareal":
                correction = lookup
            else:
                tic = time.perf_counter()
                correction = self._predict(k, i, new_state[i - 1], lookup)
                model_time += time.perf_counter() - tic
            new_state[i] = g_val + correction
            g_next[i] = g_val
        return new_state, g_next, coarse_times, model_time

    def _predict(self, k: int, i: int, query: np.ndarray, lookup: np.ndarray) -> np.ndarray:
        """Corrector estimate at one query, falling back to the lookup term."""
        cfg = self.cfg
        if self.store.size == 0 or not np.all(np.isfinite(query)):
            self.fallbacks += 1
            self.events.append(
                f"iteration {k}: interval {i} fell back to the lookup correction"
            )
            return lookup
        if cfg.corrector == "mnn":
            m_eff = min(cfg.m, self.store.size)
            idx = self.store.query_m_nearest(query, m_eff, self._rng(101, k, i))
            return self.store.outputs[idx].mean(axis=0)
        if cfg.corrector == "gparareal":
            estimate = self._gp_full_estimate(query)
        else:
            estimate = self._gp_subset_estimate(k, i, query)
        if estimate is None or not np.all(np.isfinite(estimate)):
            self.fallbacks += 1
            self.events.append(
                f"iteration {k}: interval {i} fell back to the lookup correction"
            )
            return lookup
        return estimate

    def _gp_full_estimate(self, query: np.ndarray) -> np.ndarray | None:
        if self.gp_models is None or any(not model.ok for model in self.gp_models):
            return None
        point = query[None, :]
        return np.array([model.posterior_mean(point)[0] for model in self.gp_models])

    def _gp_subset_estimate(self, k: int, i: int, query: np.ndarray) -> np.ndarray | None:
        cfg = self.cfg
        idx = self.store.select_subset(
            cfg.subset_strategy, cfg.m, i, k, query=query, rng=self._rng(101, k, i)
        )
        models, _ = fit_coordinate_models(
            self.store.inputs[idx],
            self.store.outputs[idx].T,
            rng=self._rng(202, k, i),
            n_start=cfg.gp.n_start,
            nugget_grid=cfg.gp.nugget_grid,
            maxiter=cfg.gp.maxiter,
            ftol=cfg.gp.ftol,
        )
        if any(not model.ok for model in models):
            return None
        point = query[None, :]
        return np.array([model.posterior_mean(point)[0] for model in models])

    def _advance_frontier(self, prev: np.ndarray, new: np.ndarray, frontier: int) -> int:
        """Extend the converged prefix while successive iterates agree."""
        for i in range(frontier + 1, self.n):
            err = float(np.max(np.abs(new[i] - prev[i])))
            if err < self.cfg.epsilon:
                frontier = i
            else:
                break
        return frontier

    def _record_prediction_errors(self, state: np.ndarray, frontier: int, k: int) -> None:
        """Compare probe correctors against freshly computed corrections.

        Runs the fine solver once more on the just-updated boundary values
        of every unconverged interval, so enabling probes roughly doubles
        the fine-solver bill.
        """
        intervals = np.arange(frontier + 1, self.n + 1)
        if intervals.size == 0 or self.store.size == 0:
            return
        fine_true = self._fine_rows(intervals, state)
        true_corr = fine_true - self.g_cur[intervals]
        queries = state[intervals - 1]

        probe_models = None
        if "gparareal" in self.cfg.probe_correctors:
            probe_models, self.probe_warm = fit_coordinate_models(
                self.store.inputs,
                self.store.outputs.T,
                rng=self._rng(204, k),
                n_start=self.cfg.gp.n_start,
                nugget_grid=self.cfg.gp.nugget_grid,
                maxiter=self.cfg.gp.maxiter,
                ftol=self.cfg.gp.ftol,
                warm_theta=self.probe_warm if self.store.size > self.cfg.gp.full_restart_max_n else None,
                n_start_warm=self.cfg.gp.n_start_warm,
            )

        for probe in self.cfg.probe_correctors:
            errs = np.empty(intervals.size)
            for row, i in enumerate(intervals):
                query = queries[row]
                if not np.all(np.isfinite(query)):
                    errs[row] = np.nan
                    continue
                if probe == "parareal":
                    estimate = self.fine_vals[i] - self.g_cur[i]
                elif probe == "mnn":
                    m_eff = min(self.cfg.m, self.store.size)
                    idx = self.store.query_m_nearest(query, m_eff, self._rng(206, k, int(i)))
                    estimate = self.store.outputs[idx].mean(axis=0)
                elif probe == "gparareal":
                    if any(not model.ok for model in probe_models):
                        estimate = np.full(self.dim, np.nan)
                    else:
                        estimate = np.array(
                            [model.posterior_mean(query[None, :])[0] for model in probe_models]
                        )
                else:
                    idx = self.store.select_subset(
                        self.cfg.subset_strategy,
                        self.cfg.m,
                        int(i),
                        k,
                        query=query,
                        rng=self._rng(207, k, int(i)),
                    )
                    models, _ = fit_coordinate_models(
                        self.store.inputs[idx],
                        self.store.outputs[idx].T,
                        rng=self._rng(208, k, int(i)),
                        n_start=self.cfg.gp.n_start,
                        nugget_grid=self.cfg.gp.nugget_grid,
                        maxiter=self.cfg.gp.maxiter,
                        ftol=self.cfg.gp.ftol,
                    )
                    if any(not model.ok for model in models):
                        estimate = np.full(self.dim, np.nan)
                    else:
                        estimate = np.array(
                            [model.posterior_mean(query[None, :])[0] for model in models]
                        )
                errs[row] = float(np.linalg.norm(true_corr[row] - estimate))
            self.prediction_errors[probe].append(errs)
