"""Runtime model identities and speed-up accounting."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from pintlab.perf import (
    TimingBreakdown,
    empirical_speedup,
    speedup,
    theoretical_runtime,
    upper_bound_speedup,
)


def _summation_oracle(n, k_iters, t_coarse, t_fine, schedule):
    """Re-derive the documented accumulation order independently."""
    total = n * t_coarse
    for k in range(1, k_iters + 1):
        total += t_fine + (n - k) * t_coarse + schedule[k - 1]
    return total


def test_runtime_equals_summation_oracle_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 200))
        k = int(rng.integers(1, n + 1))
        t_coarse = float(rng.uniform(1e-6, 2.0))
        t_fine = float(rng.uniform(1e-3, 60.0))
        schedule = [float(v) for v in rng.uniform(0.0, 5.0, size=k)]
        breakdown = TimingBreakdown(n, k, t_coarse, t_fine, schedule)
        assert theoretical_runtime(breakdown) == _summation_oracle(n, k, t_coarse, t_fine, schedule)


def test_closed_form_identity():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(2, 100))
        k = int(rng.integers(1, n + 1))
        # Dyadic rationals keep every product and partial sum exact in
        # binary floating point, so the loop and the closed form agree
        # bitwise; generic floats get a relative bound below.
        t_coarse = int(rng.integers(0, 1 << 20)) / 1024.0
        t_fine = int(rng.integers(0, 1 << 20)) / 1024.0
        closed = (k + 1) * (n - k / 2.0) * t_coarse + k * t_fine
        assert theoretical_runtime(TimingBreakdown(n, k, t_coarse, t_fine)) == closed

        tc, tf = float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.1, 9.0))
        closed = (k + 1) * (n - k / 2.0) * tc + k * tf
        got = theoretical_runtime(TimingBreakdown(n, k, tc, tf))
        assert math.isclose(got, closed, rel_tol=1e-12)


def test_model_schedule_forms():
    assert TimingBreakdown(10, 3, 0.1, 1.0, 0.6).model_schedule() == [0.6, 0.0, 0.0]
    assert TimingBreakdown(10, 3, 0.1, 1.0, [0.1, 0.2, 0.3]).model_schedule() == [0.1, 0.2, 0.3]
    assert TimingBreakdown(10, 0, 0.1, 1.0, 0.5).model_schedule() == []
    with pytest.raises(ValueError, match="entries"):
        TimingBreakdown(10, 3, 0.1, 1.0, [0.1, 0.2]).model_schedule()


def test_speedup_baselines():
    breakdown = TimingBreakdown(16, 4, 0.01, 1.0)
    denominator = theoretical_runtime(breakdown)
    assert speedup(breakdown) == 16 * 1.0 / denominator
    assert speedup(breakdown, t_serial=100.0) == 100.0 / denominator
    assert upper_bound_speedup(16, 4) == 4.0


def test_modeled_speedup_never_beats_upper_bound():
    rng = np.random.default_rng(2)
    for _ in range(500):
        n = int(rng.integers(2, 300))
        k = int(rng.integers(1, n + 1))
        breakdown = TimingBreakdown(
            n,
            k,
            float(rng.uniform(0.0, 1.0)),
            float(rng.uniform(1e-3, 10.0)),
            [float(v) for v in rng.uniform(0.0, 2.0, size=k)],
        )
        assert speedup(breakdown) <= upper_bound_speedup(n, k) * (1 + 1e-12)


def _report(**overrides):
    base = dict(
        corrector="gparareal",
        n_intervals=20,
        k_iterations=4,
        t_fine_single=[1.0, np.nan, 1.2, 1.1],
        t_coarse_single=[0.01, 0.02, np.nan, 0.01],
        t_model=[0.4, 0.4, 0.4, 0.4],
        model_parallel_units=3,
        wallclock=12.5,
    )
    base.update(overrides)
    return SimpleNamespace(**base)


def test_empirical_speedup_accounting():
    report = _report()
    est = empirical_speedup(report)
    assert est.t_fine == float(np.nanmean([1.0, np.nan, 1.2, 1.1]))
    assert est.t_coarse == float(np.nanmean([0.01, 0.02, np.nan, 0.01]))
    # Model time splits across 3 independent tasks.
    assert math.isclose(est.t_model_effective, 1.6 / 3.0, rel_tol=1e-15)
    assert est.t_model_total == 1.6
    assert est.t_serial == 20 * est.t_fine
    assert est.s_estimate == est.t_serial / est.t_parallel
    assert est.s_upper_bound == 5.0
    assert est.wallclock == 12.5
    assert est.s_wallclock is None

    with_serial = empirical_speedup(report, t_serial=30.0)
    assert with_serial.t_serial == 30.0
    assert with_serial.s_wallclock == 30.0 / 12.5


def test_parallel_unit_clamping():
    # More units than intervals cannot help (one worker per interval);
    # zero units must not divide by zero.
    many = empirical_speedup(_report(model_parallel_units=500))
    assert math.isclose(many.t_model_effective, 1.6 / 20.0, rel_tol=1e-15)
    none = empirical_speedup(_report(model_parallel_units=0))
    assert math.isclose(none.t_model_effective, 1.6, rel_tol=1e-15)
