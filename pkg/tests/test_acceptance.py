"""Acceptance gate: one test per reproduction criterion.

Every test measures the real thing (no mocks, no recorded fixtures), prints
a single PASS/FAIL verdict line, and asserts it. Expected values and
tolerances are pinned in-line; a red line here means the build genuinely
does not reproduce that behavior on this machine, not that the test is
flaky. Runs that are known not to reach their reference iteration counts
in double precision are still executed faithfully and left to fail; the
README's known-deviations section discusses each one.

This module is slow (roughly 40 minutes end to end on one core). Run it
with `pytest tests/test_acceptance.py -v -s` to see the verdict lines as
they land.
"""

import time

import numpy as np

from pintlab.dataset import CorrectionStore
from pintlab.engine import PintConfig, normalized_setup, run, run_serial
from pintlab.gp import GpHyperparams, build_model, gram_matrix, log_marginal_likelihood
from pintlab.integrators import SolverSpec
from pintlab.perf import TimingBreakdown, empirical_speedup, theoretical_runtime
from pintlab.systems import make_system


def _verdict(tag, ok, detail):
    line = f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}"
    print(line, flush=True)
    return ok, line


def _normalized(name, n, coarse, **params):
    system, _ = normalized_setup(make_system(name, **params), n, coarse)
    return system


def _run_one(system, n, coarse, fine, corrector, *, m=15, seed=0, epsilon=5e-7, **kw):
    tic = time.perf_counter()
    report = run(
        PintConfig(
            system=system,
            n_intervals=n,
            coarse=coarse,
            fine=fine,
            corrector=corrector,
            epsilon=epsilon,
            m=m,
            seed=seed,
            **kw,
        )
    )
    return report, time.perf_counter() - tic


def test_criterion_1_iteration_counts():
    """Benchmark iteration counts for the three correctors on four systems.

    Reference counts carry a tolerance of one iteration (hyperparameter
    restarts are stochastic) and every run must finish within its time
    budget. Step counts quoted per horizon that do not divide evenly by
    the interval count are rounded to the nearest whole number of steps
    per interval; the README discusses the one system where that rounding
    shifts the GP-corrected counts below their reference window.
    """
    cases = [
        # name, n, coarse, fine, (parareal, gparareal, nngparareal)
        ("fhn", 40, SolverSpec(2, 4), SolverSpec(4, 4000), (11, 5, 5)),
        ("brusselator", 32, SolverSpec(4, 8), SolverSpec(4, 781), (19, 20, 17)),
        ("lorenz", 50, SolverSpec(4, 6), SolverSpec(4, 450), (15, 11, 9)),
        ("double_pendulum", 32, SolverSpec(1, 97), SolverSpec(8, 6781), (15, 10, 10)),
    ]
    budget_s = 300.0
    ok = True
    parts = []
    for name, n, coarse, fine, targets in cases:
        system = _normalized(name, n, coarse)
        got = []
        for corrector, target in zip(("parareal", "gparareal", "nngparareal"), targets):
            report, wall = _run_one(system, n, coarse, fine, corrector)
            got.append(report.k_iterations)
            if not report.converged or abs(report.k_iterations - target) > 1:
                ok = False
            if wall >= budget_s:
                ok = False
                parts.append(f"{name}/{corrector} took {wall:.0f}s")
        parts.append(f"{name} K={got[0]}/{got[1]}/{got[2]} (expect {targets[0]}/{targets[1]}/{targets[2]} each +-1)")
    passed, line = _verdict("criterion 1 | iteration counts", ok, "; ".join(parts))
    assert passed, line


def test_criterion_2_heat_equation():
    """Stiff method-of-lines run: iteration counts, speed-ups, and runtime.

    The coarse solver sits at its stability boundary on this grid, which
    in double precision drives the plain corrector far past its reference
    count; the run is executed faithfully and judged against the original
    windows regardless. The README's known-deviations section has the
    stability analysis.
    """
    n, m = 300, 18
    coarse, fine = SolverSpec(2, 2), SolverSpec(8, 1000)
    system = _normalized("heat", n, coarse, d=40)
    total = 0.0

    rep_para, wall_para = _run_one(system, n, coarse, fine, "parareal")
    s_para = empirical_speedup(rep_para).s_estimate
    total += wall_para
    rep_nng, wall_nng = _run_one(system, n, coarse, fine, "nngparareal", m=m)
    s_nng = empirical_speedup(rep_nng).s_estimate
    total += wall_nng

    checks = {
        "K_para in 33+-2": rep_para.converged and abs(rep_para.k_iterations - 33) <= 2,
        "K_nng in 3+-1": rep_nng.converged and abs(rep_nng.k_iterations - 3) <= 1,
        "S_para >= 5": s_para >= 5.0,
        "S_nng >= 12": s_nng >= 12.0,
        "runtime < 600s": total < 600.0,
    }
    detail = (
        f"K_para={rep_para.k_iterations} (expect 33+-2), K_nng={rep_nng.k_iterations} "
        f"(expect 3+-1), S_para={s_para:.2f} (>=5), S_nng={s_nng:.2f} (>=12), "
        f"runtime={total:.0f}s (<600); failing: "
        f"{[k for k, v in checks.items() if not v] or 'none'}"
    )
    passed, line = _verdict("criterion 2 | heat equation", all(checks.values()), detail)
    assert passed, line


def test_criterion_3_reduced_hopf_ordering():
    """Downscaled oscillator-with-drift run standing in for cluster jobs.

    Full-size runs of the slow-drift benchmarks take billions of fine
    steps and are out of desk scope. The substituted property: at reduced
    fidelity (32 intervals, one million fine steps in total) the three
    correctors keep their qualitative ranking, in iterations and in
    modeled speed-up.
    """
    n = 32
    coarse, fine = SolverSpec(1, 64), SolverSpec(8, 31250)
    system = _normalized("hopf", n, coarse)
    results = {}
    for corrector in ("parareal", "gparareal", "nngparareal"):
        report, _ = _run_one(system, n, coarse, fine, corrector)
        results[corrector] = (report.k_iterations, empirical_speedup(report).s_estimate, report.converged)
    k_p, s_p, c_p = results["parareal"]
    k_g, s_g, c_g = results["gparareal"]
    k_n, s_n, c_n = results["nngparareal"]
    ok = (
        c_n
        and c_g
        and k_n <= k_g <= k_p
        and s_n >= s_g
        and s_n >= s_p
    )
    detail = (
        f"K: nng={k_n} <= gpara={k_g} <= para={k_p}; "
        f"S*: nng={s_n:.2f} gpara={s_g:.2f} para={s_p:.2f} (nng highest)"
    )
    passed, line = _verdict("criterion 3 | reduced-scale ordering", ok, detail)
    assert passed, line


def test_criterion_4_oracle_equivalences():
    """Four independent-route checks, ten thousand cases each.

    Neighbor queries against a brute-force sort, GP quantities against
    explicit-inverse formulas, the nearest-subset GP at full subset size
    against the full-data GP, and the closed-form runtime model against
    its per-iteration summation (bit-for-bit on dyadic timings).
    """
    tic = time.perf_counter()
    rng = np.random.default_rng(2024)

    # (a) kd-backed m-nearest vs independent argsort, continuous data.
    for _ in range(10_000):
        size = int(rng.integers(2, 40))
        dim = int(rng.integers(1, 5))
        store = CorrectionStore(dim)
        store.insert_batch(
            rng.normal(size=(size, dim)), rng.normal(size=(size, dim)),
            rng.integers(0, 8, size), 0,
        )
        query = rng.normal(size=dim)
        m = int(rng.integers(1, size + 1))
        got = np.sort(store.query_m_nearest(query, m))
        d2 = np.sum((store.inputs - query) ** 2, axis=1)
        expect = np.sort(np.argsort(d2, kind="stable")[:m])
        if not np.array_equal(got, expect):
            _verdict("criterion 4 | oracle equivalences", False, f"nn mismatch {got} vs {expect}")
            raise AssertionError("kd route disagreed with brute force")

    # With exact duplicates the chosen indices may differ inside a tie
    # group, but the distance multiset may not.
    for case in range(2_000):
        dim = int(rng.integers(1, 4))
        base = np.round(rng.normal(size=(12, dim)), 1)
        rows = base[rng.integers(0, 12, 30)]
        store = CorrectionStore(dim)
        store.insert_batch(rows, np.zeros((30, dim)), np.zeros(30, dtype=int), 0)
        query = base[rng.integers(0, 12)].copy()
        m = int(rng.integers(1, 31))
        got = store.query_m_nearest(query, m, np.random.default_rng(case))
        d2 = np.sum((rows - query) ** 2, axis=1)
        assert np.array_equal(
            np.sort(d2[got]), np.sort(d2, kind="stable")[:m]
        ), "tie group distances differ"

    # (b) GP mean / variance / likelihood vs explicit dense inverse.
    worst_mv, worst_ll = 0.0, 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 21))
        d = int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        y = rng.normal(size=n)
        hp = GpHyperparams(
            float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.3, 3.0)),
            float(rng.uniform(1e-8, 1e-2)),
        )
        q = rng.normal(size=d)
        model = build_model(X, y, hp)
        K = gram_matrix(X, hp)
        K_inv = np.linalg.inv(K)
        kq = hp.output_scale * np.exp(-np.sum((X - q) ** 2, axis=1) / hp.input_scale)
        mean_o = kq @ K_inv @ y
        var_o = hp.output_scale - kq @ K_inv @ kq
        sign, logdet = np.linalg.slogdet(K)
        ll_o = -y @ K_inv @ y - logdet
        worst_mv = max(
            worst_mv,
            abs(float(model.posterior_mean(q[None, :])[0]) - mean_o),
            abs(float(model.posterior_variance(q[None, :])[0]) - max(var_o, 0.0)),
        )
        ll = log_marginal_likelihood(X, y, hp)
        worst_ll = max(worst_ll, abs(ll - ll_o) / max(1.0, abs(ll_o)))
    gp_ok = worst_mv < 1e-8 and worst_ll < 1e-8

    # (c) nearest-subset GP with m equal to the full store size must match
    # the full-data GP under shared hyperparameters. The subset route sees
    # the rows in nearest-first order, so this is a genuine two-route check;
    # the identity only holds to ten digits on well-conditioned kernels.
    # Rows are drawn one per jittered grid cell, which keeps every pair
    # separated without rejection sampling.
    worst_sub = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 21))
        d = int(rng.integers(1, 4))
        cells = np.stack(
            [rng.permutation(n) + rng.uniform(0.25, 0.75, n) for _ in range(d)], axis=1
        )
        X = cells * (5.0 / n)
        y = rng.normal(size=n)
        hp = GpHyperparams(
            float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)),
            float(rng.uniform(1e-4, 1e-2)),
        )
        q = rng.normal(size=d)
        store = CorrectionStore(d)
        store.insert_batch(X, np.zeros((n, d)), np.zeros(n, dtype=int), 0)
        idx = store.query_m_nearest(q, n)
        full = float(build_model(X, y, hp).posterior_mean(q[None, :])[0])
        sub = float(build_model(X[idx], y[idx], hp).posterior_mean(q[None, :])[0])
        worst_sub = max(worst_sub, abs(full - sub))
    sub_ok = worst_sub < 1e-10

    # (d) closed-form runtime model vs the per-iteration summation, exact
    # on dyadic-rational component timings.
    def summation(n, k, t_c, t_f, schedule):
        total = n * t_c
        for i in range(1, k + 1):
            total += t_f + (n - i) * t_c + schedule[i - 1]
        return total

    exact_runtime = True
    for _ in range(10_000):
        n = int(rng.integers(1, 60))
        k = int(rng.integers(0, n + 1))
        t_c = int(rng.integers(0, 1 << 20)) / 1024.0
        t_f = int(rng.integers(0, 1 << 20)) / 1024.0
        schedule = [int(v) / 1024.0 for v in rng.integers(0, 1 << 20, k)]
        got = theoretical_runtime(
            TimingBreakdown(n_intervals=n, k_iterations=k, t_coarse=t_c, t_fine=t_f, t_model=schedule)
        )
        if got != summation(n, k, t_c, t_f, schedule):
            exact_runtime = False
            break

    elapsed = time.perf_counter() - tic
    ok = gp_ok and sub_ok and exact_runtime and elapsed < 120.0
    detail = (
        f"nn exact over 1e4+2e3 cases; GP worst |mean/var err|={worst_mv:.2e}, "
        f"worst rel llik err={worst_ll:.2e} (<1e-8); subset-vs-full worst={worst_sub:.2e} "
        f"(<1e-10); runtime model bitwise={exact_runtime}; elapsed={elapsed:.0f}s (<120)"
    )
    passed, line = _verdict("criterion 4 | oracle equivalences", ok, detail)
    assert passed, line


def test_criterion_5_exactness_frontier():
    """The k-th iterate pins the first k boundaries to the serial fine run.

    Forcing the tolerance below representable spacing makes the run take
    the maximum iteration count, after which the whole trajectory must
    match the sequential fine composition to ten digits.
    """
    # A chaotic subject is deliberate: contracting dynamics can reach a
    # bitwise fixed point one iteration early, while chaos guarantees the
    # run takes the full interval count.
    n = 12
    coarse, fine = SolverSpec(4, 25), SolverSpec(4, 150)
    system = _normalized("lorenz", n, coarse)
    report, _ = _run_one(system, n, coarse, fine, "parareal", epsilon=1e-300)
    _, ref, _ = run_serial(system, n, fine)
    scale = 1.0 + float(np.max(np.abs(ref)))

    prefix_ok = True
    worst = 0.0
    for k in range(1, report.k_iterations + 1):
        gap = float(np.max(np.abs(report.history[k][1 : k + 1] - ref[1 : k + 1])))
        worst = max(worst, gap / scale)
        if gap > 1e-10 * scale:
            prefix_ok = False
    final_gap = float(np.max(np.abs(report.states - ref))) / scale
    ok = (
        report.k_iterations == n
        and report.converged
        and prefix_ok
        and final_gap <= 1e-10
    )
    detail = (
        f"K={report.k_iterations} (expect {n}), converged={report.converged}, "
        f"worst prefix rel gap={worst:.2e}, final rel gap={final_gap:.2e} (<=1e-10)"
    )
    passed, line = _verdict("criterion 5 | exactness frontier", ok, detail)
    assert passed, line


def test_criterion_6_thread_determinism(tmp_path):
    """Identical config and seed give byte-identical solutions at any width."""
    from pintlab.cli import main

    cfg = "\n".join(
        [
            "system.name = fhn",
            "pint.n_intervals = 16",
            "coarse.order = 2",
            "coarse.steps = 8",
            "fine.order = 4",
            "fine.steps = 800",
            "corrector.kind = parareal, gparareal, nngparareal",
            "corrector.m = 8",
            "run.seed = 3",
        ]
    )
    cfg_path = tmp_path / "determinism.cfg"
    cfg_path.write_text(cfg + "\n")

    outputs = {}
    ks = {}
    for jobs in (1, 4):
        out = tmp_path / f"jobs{jobs}"
        code = main(["run", str(cfg_path), "--jobs", str(jobs), "--out", str(out)])
        assert code == 0
        for corrector in ("parareal", "gparareal", "nngparareal"):
            blob = (out / corrector / "solution.csv").read_bytes()
            outputs.setdefault(corrector, []).append(blob)
            import json

            with open(out / corrector / "report.json") as fh:
                ks.setdefault(corrector, []).append(json.load(fh)["k_iterations"])

    same_bytes = all(blobs[0] == blobs[1] for blobs in outputs.values())
    same_k = all(pair[0] == pair[1] for pair in ks.values())
    detail = (
        f"solution bytes identical across --jobs 1/4: {same_bytes}; "
        f"K identical: {same_k} ({ {c: k[0] for c, k in ks.items()} })"
    )
    passed, line = _verdict("criterion 6 | determinism", same_bytes and same_k, detail)
    assert passed, line


def test_criterion_7_m_robustness():
    """Neighborhood size barely moves the iteration count.

    Eleven m values by five seeds, every run must converge with K between
    4 and 7, all inside a fifteen-minute budget.
    """
    n = 40
    coarse, fine = SolverSpec(2, 4), SolverSpec(4, 4000)
    system = _normalized("fhn", n, coarse)
    tic = time.perf_counter()
    ks = []
    all_ok = True
    for m in range(10, 21):
        for seed in range(5):
            report, _ = _run_one(system, n, coarse, fine, "nngparareal", m=m, seed=seed)
            ks.append(report.k_iterations)
            if not report.converged or not 4 <= report.k_iterations <= 7:
                all_ok = False
    elapsed = time.perf_counter() - tic
    ok = all_ok and elapsed < 900.0
    detail = (
        f"55 runs, K range [{min(ks)}, {max(ks)}] (expect within [4, 7]), "
        f"elapsed={elapsed:.0f}s (<900)"
    )
    passed, line = _verdict("criterion 7 | m robustness", ok, detail)
    assert passed, line


def test_criterion_8_subset_strategy_ranking():
    """Nearest neighbors beat every other subset heuristic.

    All six selection strategies run on the same benchmark with m=11;
    nearest must converge with the smallest K of the table, and the
    column-plus-random strategy must land on 8 give or take one. A
    strategy that fails to converge counts as an infinite K.
    """
    n = 40
    coarse, fine = SolverSpec(2, 4), SolverSpec(4, 4000)
    system = _normalized("fhn", n, coarse)
    ks = {}
    for strategy in ("nearest", "col_rnd", "col_only", "row_col", "row_major", "col_major"):
        report, _ = _run_one(
            system, n, coarse, fine, "nngparareal", m=11, subset_strategy=strategy
        )
        ks[strategy] = report.k_iterations if report.converged else np.inf
    nearest_ok = np.isfinite(ks["nearest"]) and all(
        ks["nearest"] <= ks[s] for s in ks if s != "nearest"
    )
    col_rnd_ok = np.isfinite(ks["col_rnd"]) and abs(ks["col_rnd"] - 8) <= 1
    detail = f"K by strategy: { {s: (int(k) if np.isfinite(k) else 'no convergence') for s, k in ks.items()} }; nearest minimal: {nearest_ok}; col_rnd 8+-1: {col_rnd_ok}"
    passed, line = _verdict(
        "criterion 8 | subset strategies", nearest_ok and col_rnd_ok, detail
    )
    assert passed, line
