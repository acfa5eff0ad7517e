"""Runtime accounting and speed-up estimates for time-parallel runs.

The cost model charges, per iteration k of K: one fine propagation (they
run concurrently across intervals, so one worker's cost counts), the
sequential coarse rebuild of the N - k boundaries still unconverged at
best, and whatever time the corrector's model work takes. A serial fine
solve costs N fine propagations. Estimates derived from measured
single-propagation times therefore answer "what would this run cost with
one worker per interval", which is the regime the algorithms target;
wall-clock on a small machine says more about the machine than the method.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "TimingBreakdown",
    "SpeedupEstimate",
    "theoretical_runtime",
    "speedup",
    "upper_bound_speedup",
    "empirical_speedup",
]


@dataclass(frozen=True)
class TimingBreakdown:
    """Per-component costs of one run, in seconds.

    t_model may be a scalar total or a per-iteration sequence of length
    k_iterations.
    """

    n_intervals: int
    k_iterations: int
    t_coarse: float
    t_fine: float
    t_model: float | Sequence[float] = 0.0

    def model_schedule(self) -> list[float]:
        """Per-iteration model times; a scalar total is charged up front."""
        if np.ndim(self.t_model) == 0:
            schedule = [0.0] * self.k_iterations
            if self.k_iterations:
                schedule[0] = float(self.t_model)
            return schedule
        schedule = [float(v) for v in self.t_model]
        if len(schedule) != self.k_iterations:
            raise ValueError(
                f"t_model has {len(schedule)} entries for {self.k_iterations} iterations"
            )
        return schedule


@dataclass(frozen=True)
class SpeedupEstimate:
    """Speed-up of one run against the serial fine solve."""

    corrector: str
    n_intervals: int
    k_iterations: int
    t_coarse: float
    t_fine: float
    t_model_total: float
    t_model_effective: float
    t_parallel: float
    t_serial: float
    s_estimate: float
    s_upper_bound: float
    wallclock: float | None = None
    s_wallclock: float | None = None


def theoretical_runtime(breakdown: TimingBreakdown) -> float:
    """Modeled runtime of a run with one worker per interval.

    Accumulated in a fixed order (initial coarse pass, then iterations in
    order, each adding fine + coarse tail + model time) so equal inputs
    give bit-equal results.
    """
    n = breakdown.n_intervals
    schedule = breakdown.model_schedule()
    total = n * breakdown.t_coarse
    for k in range(1, breakdown.k_iterations + 1):
        total += breakdown.t_fine + (n - k) * breakdown.t_coarse + schedule[k - 1]
    return total


def speedup(breakdown: TimingBreakdown, t_serial: float | None = None) -> float:
    """Modeled speed-up; the serial baseline defaults to N fine runs."""
    if t_serial is None:
        t_serial = breakdown.n_intervals * breakdown.t_fine
    return t_serial / theoretical_runtime(breakdown)


def upper_bound_speedup(n_intervals: int, k_iterations: int) -> float:
    """Best case N/K: ignores coarse and model costs entirely."""
    return n_intervals / k_iterations


def empirical_speedup(report, t_serial: float | None = None) -> SpeedupEstimate:
    """Speed-up estimate from a run's measured component timings.

    Fine and coarse costs come from the run's timed single propagations.
    Model time is divided across the corrector's independent tasks (GP
    fits per coordinate, restart, and noise level), capped at one task
    per interval worker. When a measured serial wallclock is passed, the
    honest whole-run ratio is reported alongside the estimate.
    """
    n = report.n_intervals
    k = report.k_iterations
    t_fine = float(np.nanmean(report.t_fine_single))
    t_coarse = float(np.nanmean(report.t_coarse_single))
    units = min(max(report.model_parallel_units, 1), n)
    model_effective = [t / units for t in report.t_model]
    breakdown = TimingBreakdown(n, k, t_coarse, t_fine, model_effective)
    t_parallel = theoretical_runtime(breakdown)
    serial = n * t_fine if t_serial is None else t_serial
    return SpeedupEstimate(
        corrector=report.corrector,
        n_intervals=n,
        k_iterations=k,
        t_coarse=t_coarse,
        t_fine=t_fine,
        t_model_total=float(np.sum(report.t_model)),
        t_model_effective=float(np.sum(model_effective)),
        t_parallel=t_parallel,
        t_serial=serial,
        s_estimate=serial / t_parallel,
        s_upper_bound=upper_bound_speedup(n, k),
        wallclock=report.wallclock,
        s_wallclock=None if t_serial is None else t_serial / report.wallclock,
    )
