"""Fixed-step explicit Runge-Kutta solvers over batches of initial states.

Every propagation in this package runs a fixed number of equal steps of an
explicit RK method (orders 1, 2, 4, 8). Adaptive stepping is deliberately
absent: reproducibility of iteration counts requires the coarse and fine
solvers to do exactly the same work on every call.

States are float64 arrays of shape (d,) or (P, d); a batch of P states is
advanced in lockstep with vectorized stage arithmetic. Batched and single
propagations share one code path, so results are bitwise identical for the
same row regardless of how rows are grouped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["SolverSpec", "tableau", "rk_step", "integrate", "integrate_interval"]

RhsFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _tableau_rk1() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.zeros((1, 1))
    b = np.array([1.0])
    c = np.array([0.0])
    return a, b, c


def _tableau_rk2() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Explicit midpoint rule.
    a = np.array([[0.0, 0.0], [0.5, 0.0]])
    b = np.array([0.0, 1.0])
    c = np.array([0.0, 0.5])
    return a, b, c


def _tableau_rk4() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.array(
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    b = np.array([1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0])
    c = np.array([0.0, 0.5, 0.5, 1.0])
    return a, b, c


def _tableau_rk8() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # 12-stage 8th-order Dormand-Prince coefficients (the propagation part of
    # the classic 8(5,3) pair), as round-trip-exact float64 literals.
    a = np.zeros((12, 12))
    a[1, :1] = [0.05260015195876773]
    a[2, :2] = [0.0197250569845379, 0.0591751709536137]
    a[3, :3] = [0.02958758547680685, 0.0, 0.08876275643042054]
    a[4, :4] = [0.2413651341592667, 0.0, -0.8845494793282861, 0.924834003261792]
    a[5, :5] = [0.037037037037037035, 0.0, 0.0, 0.17082860872947386, 0.12546768756682242]
    a[6, :6] = [0.037109375, 0.0, 0.0, 0.17025221101954405, 0.06021653898045596, -0.017578125]
    a[7, :7] = [
        0.03709200011850479,
        0.0,
        0.0,
        0.17038392571223998,
        0.10726203044637328,
        -0.015319437748624402,
        0.008273789163814023,
    ]
    a[8, :8] = [
        0.6241109587160757,
        0.0,
        0.0,
        -3.3608926294469414,
        -0.868219346841726,
        27.59209969944671,
        20.154067550477894,
        -43.48988418106996,
    ]
    a[9, :9] = [
        0.47766253643826434,
        0.0,
        0.0,
        -2.4881146199716677,
        -0.5902908268368429,
        21.230051448181193,
        15.279233632882423,
        -33.28821096898486,
        -0.020331201708508627,
    ]
    a[10, :10] = [
        -0.9371424300859873,
        0.0,
        0.0,
        5.186372428844064,
        1.0914373489967295,
        -8.149787010746927,
        -18.52006565999696,
        22.739487099350505,
        2.4936055526796523,
        -3.0467644718982196,
    ]
    a[11, :11] = [
        2.273310147516538,
        0.0,
        0.0,
        -10.53449546673725,
        -2.0008720582248625,
        -17.9589318631188,
        27.94888452941996,
        -2.8589982771350235,
        -8.87285693353063,
        12.360567175794303,
        0.6433927460157636,
    ]
    b = np.array(
        [
            0.054293734116568765,
            0.0,
            0.0,
            0.0,
            0.0,
            4.450312892752409,
            1.8915178993145003,
            -5.801203960010585,
            0.3111643669578199,
            -0.1521609496625161,
            0.20136540080403034,
            0.04471061572777259,
        ]
    )
    c = a.sum(axis=1)
    return a, b, c


_TABLEAUS: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {
    1: _tableau_rk1(),
    2: _tableau_rk2(),
    4: _tableau_rk4(),
    8: _tableau_rk8(),
}

SUPPORTED_ORDERS = tuple(sorted(_TABLEAUS))


def tableau(order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (a, b, c) Butcher arrays for a supported order."""
    try:
        return _TABLEAUS[order]
    except KeyError:
        raise ValueError(f"unsupported RK order {order!r}; choose from {SUPPORTED_ORDERS}") from None


@dataclass(frozen=True)
class SolverSpec:
    """A propagator: RK order plus the fixed step count per time interval."""

    order: int
    steps: int

    def __post_init__(self) -> None:
        if self.order not in _TABLEAUS:
            raise ValueError(f"unsupported RK order {self.order!r}; choose from {SUPPORTED_ORDERS}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")

    def label(self) -> str:
        return f"RK{self.order}/{self.steps}"


def rk_step(rhs: RhsFn, t, u: np.ndarray, dt: float, order: int) -> np.ndarray:
    """Advance u by one explicit RK step of the given order.

    t may be a scalar or an array broadcastable against u[..., 0]; u has
    shape (d,) or (P, d).
    """
    a, b, c = tableau(order)
    return _advance(rhs, np.asarray(u, dtype=float), t, dt, 1, a, b, c)


def integrate(rhs: RhsFn, u0: np.ndarray, t0, dt: float, n_steps: int, order: int) -> np.ndarray:
    """Run n_steps fixed RK steps from (t0, u0); returns the final state only."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    a, b, c = tableau(order)
    return _advance(rhs, np.asarray(u0, dtype=float), t0, dt, n_steps, a, b, c)


def integrate_interval(rhs: RhsFn, u0: np.ndarray, t0, t1_minus_t0: float, spec: SolverSpec) -> np.ndarray:
    """Propagate u0 across one interval of length t1_minus_t0 with spec.steps steps.

    u0 may be (d,) for a single state or (P, d) for a batch sharing the same
    interval length; t0 is then a scalar or a (P,) array of start times.
    """
    dt = t1_minus_t0 / spec.steps
    return integrate(rhs, u0, t0, dt, spec.steps, spec.order)


def _advance(rhs, u, t0, dt, n_steps, a, b, c):
    # Stage combinations accumulate with elementwise ufuncs only (no matrix
    # kernels), so every row of a batch sees the exact float operation
    # sequence of a single-state call: results are identical bitwise no
    # matter how states are grouped into batches.
    n_stages = b.shape[0]
    u = u.astype(float, copy=True)
    t0 = np.asarray(t0, dtype=float)
    k: list = [None] * n_stages
    for i in range(n_steps):
        t = t0 + i * dt
        k[0] = rhs(t, u)
        for j in range(1, n_stages):
            y = u + dt * _combine(a[j], k, j)
            k[j] = rhs(t + c[j] * dt, y)
        u = u + dt * _combine(b, k, n_stages)
    return u


def _combine(weights, stages, count):
    """Weighted sum of the first count stages, skipping zero weights.

    Zero entries are structural (fixed by the tableau), so skipping them
    never changes between calls and the summation order stays fixed.
    """
    acc = None
    for idx in range(count):
        w = weights[idx]
        if w == 0.0:
            continue
        term = w * stages[idx]
        acc = term if acc is None else acc + term
    return acc if acc is not None else 0.0
