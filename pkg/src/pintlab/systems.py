"""Benchmark initial value problems: ODE systems, method-of-lines PDEs, rescaling.

Each system is packaged as a :class:`SystemDefinition` whose ``rhs`` accepts
states of shape (d,) or (P, d) and is written with array ops only, so a batch
of states can be advanced in one call. All bundled systems are autonomous
(time enters only through the Hopf system's explicit time coordinate), but
``rhs(t, u)`` keeps the time argument for generality.

Coordinate rescaling to [-1, 1] is handled by :class:`NormalizationMap`;
convergence thresholds elsewhere in the package are meant to be applied in
the rescaled coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "SystemDefinition",
    "NormalizationMap",
    "normalize_system",
    "bounds_from_states",
    "make_system",
    "fhn_ode",
    "rossler",
    "brusselator",
    "double_pendulum",
    "lorenz",
    "hopf",
    "thomas",
    "discretize_heat",
    "discretize_burgers",
    "discretize_fhn2d",
    "SYSTEM_BUILDERS",
]


@dataclass(frozen=True)
class SystemDefinition:
    """An initial value problem u' = rhs(t, u), u(t0) = u0 on t in [t0, t1]."""

    name: str
    dim: int
    rhs: Callable[[object, np.ndarray], np.ndarray]
    u0: np.ndarray
    t_span: tuple[float, float]
    params: Mapping[str, float] = field(default_factory=dict)
    # Analytic solution at time t, when one is known (used only by tests and
    # error reports; None for every system without a closed form).
    exact: Callable[[float], np.ndarray] | None = None

    def __post_init__(self) -> None:
        u0 = np.asarray(self.u0, dtype=float)
        object.__setattr__(self, "u0", u0)
        if u0.ndim != 1 or u0.shape[0] != self.dim:
            raise ValueError(f"u0 must have shape ({self.dim},), got {u0.shape}")
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError(f"t_span must satisfy t1 > t0, got {self.t_span}")


@dataclass(frozen=True)
class NormalizationMap:
    """Per-coordinate affine map between original and [-1, 1] coordinates."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have matching shapes")
        if not np.all(hi > lo):
            bad = np.flatnonzero(~(hi > lo))
            raise ValueError(f"degenerate bounds (hi <= lo) at coordinates {bad.tolist()}")

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def to_unit(self, u: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(u, dtype=float) - self.lo) / self.span - 1.0

    def from_unit(self, v: np.ndarray) -> np.ndarray:
        return self.lo + (np.asarray(v, dtype=float) + 1.0) * 0.5 * self.span


def bounds_from_states(states: np.ndarray, margin: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate [min, max] over a set of states, widened by a margin.

    margin is a fraction of each coordinate's range added on both sides. A
    coordinate with zero observed range gets a fallback margin of
    max(1, 0.1 * |value|) so the resulting bounds are always usable.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[0] < 1:
        raise ValueError("states must be a nonempty (n, d) array")
    lo = states.min(axis=0)
    hi = states.max(axis=0)
    pad = margin * (hi - lo)
    flat = hi == lo
    if np.any(flat):
        pad = np.where(flat, np.maximum(1.0, 0.1 * np.abs(hi)), pad)
    return lo - pad, hi + pad


def normalize_system(system: SystemDefinition, bounds: tuple[np.ndarray, np.ndarray]) -> tuple[SystemDefinition, NormalizationMap]:
    """Conjugate a system by the affine map sending bounds to [-1, 1]^d.

    Returns the rescaled system (same time span; rhs, u0 and any analytic
    solution expressed in unit coordinates) together with the map.
    """
    norm = NormalizationMap(*bounds)
    if norm.lo.shape != (system.dim,):
        raise ValueError(f"bounds must have shape ({system.dim},), got {norm.lo.shape}")
    raw_rhs = system.rhs
    scale = 2.0 / norm.span

    def rhs(t, v):
        return raw_rhs(t, norm.from_unit(v)) * scale

    exact = None
    if system.exact is not None:
        raw_exact = system.exact

        def unit_exact(t):
            return norm.to_unit(raw_exact(t))

        exact = unit_exact

    rescaled = replace(
        system,
        name=system.name + "_unit",
        rhs=rhs,
        u0=norm.to_unit(system.u0),
        exact=exact,
    )
    return rescaled, norm


def _stack(components: list[np.ndarray]) -> np.ndarray:
    return np.stack(components, axis=-1)


def fhn_ode(a: float = 0.2, b: float = 0.2, c: float = 3.0, u0=(-1.0, 1.0), t_span=(0.0, 40.0)) -> SystemDefinition:
    """FitzHugh-Nagumo oscillator: membrane voltage with linear recovery."""

    def rhs(t, u):
        u1, u2 = u[..., 0], u[..., 1]
        return _stack([c * (u1 - u1**3 / 3.0 + u2), -(u1 - a + b * u2) / c])

    return SystemDefinition("fhn", 2, rhs, u0, t_span, {"a": a, "b": b, "c": c})


def rossler(a: float = 0.2, b: float = 0.2, c: float = 5.7, u0=(0.0, -6.78, 0.02), t_span=(0.0, 340.0)) -> SystemDefinition:
    """Rossler attractor in its chaotic parameter regime."""

    def rhs(t, u):
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        return _stack([-u2 - u3, u1 + a * u2, b + u3 * (u1 - c)])

    return SystemDefinition("rossler", 3, rhs, u0, t_span, {"a": a, "b": b, "c": c})


def brusselator(a: float = 1.0, b: float = 3.0, u0=(1.0, 3.7), t_span=(0.0, 100.0)) -> SystemDefinition:
    """Autocatalytic reaction model orbiting an unstable fixed point."""

    def rhs(t, u):
        u1, u2 = u[..., 0], u[..., 1]
        u1sq_u2 = u1 * u1 * u2
        return _stack([a + u1sq_u2 - (b + 1.0) * u1, b * u1 - u1sq_u2])

    return SystemDefinition("brusselator", 2, rhs, u0, t_span, {"a": a, "b": b})


def double_pendulum(u0=(-0.5, 0.0, 0.0, 0.0), t_span=(0.0, 80.0)) -> SystemDefinition:
    """Planar double pendulum (equal masses and lengths, gravity scaled out).

    Coordinates are the two angles from the vertical and their angular
    velocities.
    """

    def rhs(t, u):
        u1, u2, u3, u4 = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
        diff = u1 - u2
        s = np.sin(diff)
        co = np.cos(diff)
        f1 = s * co
        f2 = 2.0 - co * co
        s1 = np.sin(u1)
        s2 = np.sin(u2)
        u3sq = u3 * u3
        u4sq = u4 * u4
        du3 = (-u3sq * f1 - u4sq * s - 2.0 * s1 + co * s2) / f2
        du4 = (2.0 * u3sq * s + u4sq * f1 + 2.0 * co * s1 - 2.0 * s2) / f2
        return _stack([u3, u4, du3, du4])

    return SystemDefinition("double_pendulum", 4, rhs, u0, t_span, {})


def lorenz(gamma1: float = 10.0, gamma2: float = 28.0, gamma3: float = 8.0 / 3.0, u0=(-15.0, -15.0, 20.0), t_span=(0.0, 18.0)) -> SystemDefinition:
    """Lorenz system in the classic chaotic regime."""

    def rhs(t, u):
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        return _stack([gamma1 * (u2 - u1), gamma2 * u1 - u1 * u3 - u2, u1 * u2 - gamma3 * u3])

    return SystemDefinition("lorenz", 3, rhs, u0, t_span, {"gamma1": gamma1, "gamma2": gamma2, "gamma3": gamma3})


def hopf(T: float = 500.0, u0=(0.1, 0.1, 500.0), t_span=(-20.0, 500.0)) -> SystemDefinition:
    """Hopf normal form with a slowly ramped bifurcation parameter.

    The originally non-autonomous oscillator is made autonomous by carrying
    the ramp variable as a third coordinate with unit drift; the growth rate
    of the orbit radius is (u3/T - u1^2 - u2^2).
    """

    def rhs(t, u):
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        lam = u3 / T - (u1 * u1 + u2 * u2)
        return _stack([-u2 + u1 * lam, u1 + u2 * lam, np.ones_like(u3)])

    return SystemDefinition("hopf", 3, rhs, u0, t_span, {"T": T})


def thomas(a: float = 0.5, b: float = 10.0, u0=(4.6722764, 5.2437205e-10, -6.4444208e-10), t_span=(0.0, 10.0)) -> SystemDefinition:
    """Thomas' cyclically symmetric attractor (labyrinth regime)."""

    def rhs(t, u):
        u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
        return _stack([b * np.sin(u2) - a * u1, b * np.sin(u3) - a * u2, b * np.sin(u1) - a * u3])

    return SystemDefinition("thomas", 3, rhs, u0, t_span, {"a": a, "b": b})


def discretize_heat(
    d: int = 40,
    L: float = 1.0,
    alpha: float = 0.1,
    u0_profile: Callable[[np.ndarray], np.ndarray] | None = None,
    t_span=(0.0, 2.0),
) -> SystemDefinition:
    """1-D heat equation u_t = alpha * u_xx on [0, L], homogeneous Dirichlet.

    The grid has d subintervals (dx = L/d); the state holds the d-1 interior
    nodes, with the fixed zero boundary values folded into the stencil. With
    the default profile sin(2*pi*x/L) the semigroup is known in closed form
    and attached as ``exact``.
    """
    if d < 2:
        raise ValueError("heat discretization needs d >= 2 grid subintervals")
    dx = L / d
    x = np.linspace(0.0, L, d + 1)[1:-1]
    coef = alpha / (dx * dx)

    def rhs(t, u):
        out = -2.0 * u
        out[..., :-1] += u[..., 1:]
        out[..., 1:] += u[..., :-1]
        out *= coef
        return out

    exact = None
    if u0_profile is None:
        freq = 2.0 * np.pi / L
        u0 = np.sin(freq * x)

        def exact(t):
            return np.exp(-alpha * freq * freq * t) * np.sin(freq * x)

    else:
        u0 = np.asarray(u0_profile(x), dtype=float)
        if u0.shape != x.shape:
            raise ValueError("u0_profile must return one value per interior node")

    return SystemDefinition(
        "heat", d - 1, rhs, u0, t_span, {"d": d, "L": L, "alpha": alpha, "dx": dx}, exact=exact
    )


def discretize_burgers(
    d: int = 128,
    L: float = 1.0,
    nu: float = 0.01,
    v0_profile: Callable[[np.ndarray], np.ndarray] | None = None,
    t_span=(0.0, 5.0),
) -> SystemDefinition:
    """Viscous Burgers equation v_t = nu*v_xx - v*v_x on [-L, L].

    The boundary conditions identify the domain ends in both value and
    slope, so the stencil wraps periodically; the state holds the d distinct
    grid values (dx = 2L/d). Central differences for both terms.
    """
    if d < 3:
        raise ValueError("burgers discretization needs d >= 3 grid points")
    dx = 2.0 * L / d
    x = -L + dx * np.arange(d)

    def rhs(t, v):
        left = np.roll(v, 1, axis=-1)
        right = np.roll(v, -1, axis=-1)
        vxx = (left - 2.0 * v + right) / (dx * dx)
        vx = (right - left) / (2.0 * dx)
        return nu * vxx - v * vx

    if v0_profile is None:
        u0 = 0.5 * (np.cos(4.5 * np.pi * x) + 1.0)
    else:
        u0 = np.asarray(v0_profile(x), dtype=float)
        if u0.shape != x.shape:
            raise ValueError("v0_profile must return one value per grid point")

    return SystemDefinition("burgers", d, rhs, u0, t_span, {"d": d, "L": L, "nu": nu, "dx": dx})


def discretize_fhn2d(
    grid: int,
    a: float,
    b: float,
    c: float,
    tau: float,
    t_span: tuple[float, float],
    L: float = 1.0,
    ic_seed: int | None = None,
    u0: np.ndarray | None = None,
) -> SystemDefinition:
    """Two-field FitzHugh-Nagumo reaction-diffusion model on (-L, L)^2.

    v_t = a*lap(v) + v - v^3 - w - c and w_t = tau*(b*lap(w) + v - w) on a
    grid x grid mesh with wraparound boundaries, giving state dimension
    2*grid^2 (v field flattened C-order, then w). There are no default
    physical parameters: a, b, c, tau and the time span must be supplied.
    The initial fields are uniform draws on [0, 1] from ic_seed unless an
    explicit u0 is given.
    """
    if grid < 3:
        raise ValueError("fhn2d needs grid >= 3 points per dimension")
    n = grid * grid
    dim = 2 * n
    h = 2.0 * L / grid
    inv_h2 = 1.0 / (h * h)

    def lap(f):
        return (
            np.roll(f, 1, axis=-1)
            + np.roll(f, -1, axis=-1)
            + np.roll(f, 1, axis=-2)
            + np.roll(f, -1, axis=-2)
            - 4.0 * f
        ) * inv_h2

    def rhs(t, u):
        lead = u.shape[:-1]
        v = u[..., :n].reshape(lead + (grid, grid))
        w = u[..., n:].reshape(lead + (grid, grid))
        dv = a * lap(v) + v - v**3 - w - c
        dw = tau * (b * lap(w) + v - w)
        return np.concatenate([dv.reshape(lead + (n,)), dw.reshape(lead + (n,))], axis=-1)

    if u0 is None:
        if ic_seed is None:
            raise ValueError("fhn2d needs either ic_seed or an explicit u0")
        u0 = np.random.default_rng(ic_seed).uniform(0.0, 1.0, size=dim)

    return SystemDefinition(
        "fhn2d",
        dim,
        rhs,
        u0,
        t_span,
        {"grid": grid, "a": a, "b": b, "c": c, "tau": tau, "L": L},
    )


SYSTEM_BUILDERS: dict[str, Callable[..., SystemDefinition]] = {
    "fhn": fhn_ode,
    "rossler": rossler,
    "brusselator": brusselator,
    "double_pendulum": double_pendulum,
    "lorenz": lorenz,
    "hopf": hopf,
    "thomas": thomas,
    "heat": discretize_heat,
    "burgers": discretize_burgers,
    "fhn2d": discretize_fhn2d,
}


def make_system(name: str, **overrides) -> SystemDefinition:
    """Build a bundled system by name, forwarding parameter overrides."""
    try:
        builder = SYSTEM_BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(SYSTEM_BUILDERS)}") from None
    return builder(**overrides)
