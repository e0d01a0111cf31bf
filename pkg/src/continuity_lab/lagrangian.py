"""Flow maps of x' = u(t, x), Jacobians along trajectories and log-distance functionals."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateDistance, IntegrationError, InvalidArgument
from .fields import CellField, Grid, VelocityField, cell_nodes, lp_distance, reduce_cells, sample_points

#: tolerated excursion outside a walled domain before a trajectory is rejected
EXIT_TOL = 1e-8


@dataclass(frozen=True)
class FlowMap:
    """Classical RK4 flow of ``field`` with step at most ``dt``.

    ``domain`` is optional; when given, trajectories are checked against its
    walled axes.
    """

    field: VelocityField
    dt: float = 1e-3
    domain: Grid | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")


def _segments(u: VelocityField, t0: float, t1: float, dt: float):
    """Split [t0, t1] at the field's switch times, then into equal steps <= dt."""
    cuts = [t0]
    s = u.next_switch(t0)
    while s < t1 - 1e-12 * max(1.0, abs(t1)):
        cuts.append(s)
        s = u.next_switch(s)
    cuts.append(t1)
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 0:
            continue
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        yield a, b, n


def _rk4(rhs: Callable, y: np.ndarray, a: float, b: float, n: int):
    """Integrate y' = rhs(t, y) over [a, b] in ``n`` steps.

    Stage times are clamped strictly inside the segment so that fields which
    switch formula at ``b`` are evaluated with the formula valid on (a, b).
    """
    h = (b - a) / n
    eps = 1e-9 * (b - a)

    def f(t, y):
        return rhs(min(max(t, a + eps), b - eps), y)

    t = a
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def _check_domain(fm: FlowMap, x: np.ndarray):
    g = fm.domain
    if g is None:
        return
    for a in range(g.dim):
        if g.periodic[a]:
            continue
        lo, hi = g.lower[a], g.upper[a]
        out = np.maximum(lo - x[..., a], x[..., a] - hi)
        if np.any(out > EXIT_TOL):
            raise IntegrationError(
                f"trajectory left the domain by {out.max():.3g} along axis {a}; "
                "field not tangential or dt too large"
            )


def _as_points(x, dim):
    """Flatten to ``(n, dim)`` and return a function restoring the caller's layout."""
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        lead = x.shape
    else:
        lead = x.shape[:-1]
    pts = x.reshape(-1, dim)

    def restore(y):
        y = np.asarray(y)
        if y.ndim == 2 and y.shape[1] == dim and dim == 1 and lead == x.shape:
            return y.reshape(lead) if lead else float(y[0, 0])
        if y.ndim == 2 and y.shape[1] == dim:
            return y.reshape(lead + (dim,))
        out = y.reshape(lead)
        return out if lead else float(out)

    return pts, restore


def flow(fm: FlowMap, x0, t: float, t0: float = 0.0) -> np.ndarray:
    """Position phi(t, x0) of the particles started at ``x0`` at time ``t0``."""
    if t < t0:
        raise InvalidArgument("t must be >= t0")
    u = fm.field
    x, restore = _as_points(x0, u.dim)
    _check_domain(fm, x)
    for a, b, n in _segments(u, t0, t, fm.dt):
        x = _rk4(u.value, x, a, b, n)
        _check_domain(fm, x)
    return restore(x)


def jacobian_along_flow(fm: FlowMap, x0, t: float):
    """Return ``(J, Lambda)``: exp of the time integral of div u along the
    trajectory, and the lower bound exp(-int ||(div u)^-||_inf dt)."""
    u = fm.field
    x, restore = _as_points(x0, u.dim)
    d = u.dim

    def rhs(s, y):
        out = np.empty_like(y)
        out[:, :d] = u.value(s, y[:, :d])
        out[:, d] = u.divergence(s, y[:, :d])
        return out

    y = np.concatenate([x, np.zeros((len(x), 1))], axis=1)
    for a, b, n in _segments(u, 0.0, t, fm.dt):
        y = _rk4(rhs, y, a, b, n)
        _check_domain(fm, y[:, :d])
    J = np.exp(y[:, d])
    lam = math.exp(-u.div_neg_sup * t)
    return restore(J), lam


def flow_gradient_fd(fm: FlowMap, x0, t: float, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of x -> phi(t, x), shape (n, d, d)."""
    d = fm.field.dim
    x, _ = _as_points(x0, d)
    g = np.empty((len(x), d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        g[:, :, j] = (flow(fm, x[:, None, :] + e, t) - flow(fm, x[:, None, :] - e, t))[:, 0, :] / (2 * eps)
    return g


def two_particle_log_ratio(fm: FlowMap, x, y, t: float) -> np.ndarray | float:
    """log(|phi(t,x) - phi(t,y)| / |x - y|) for paired points."""
    d = fm.field.dim
    xs, restore = _as_points(x, d)
    ys, _ = _as_points(y, d)
    r0 = np.linalg.norm(xs - ys, axis=-1)
    if np.any(r0 == 0):
        raise InvalidArgument("coincident points")
    both = flow(fm, np.concatenate([xs, ys])[:, None, :], t)[:, 0, :]
    r = np.linalg.norm(both[: len(xs)] - both[len(xs):], axis=-1)
    return restore(np.log(r / r0))


def field_distance(u: VelocityField, v: VelocityField, grid: Grid, t: float, p: float,
                   dt: float) -> float:
    """delta(t) = int_0^t ||u - v||_{L^p} ds: composite midpoint in time over
    the ODE steps, tensor quadrature in space."""
    total = 0.0
    for a, b, n in _segments(u, 0.0, t, dt):
        h = (b - a) / n
        for i in range(n):
            total += h * lp_distance(u, v, grid, a + (i + 0.5) * h, p)
    return total


class LogDistance(NamedTuple):
    delta: float
    mean: float
    gradient_integral: float
    ratio: float


def two_flow_log_distance(fm_u: FlowMap, fm_v: FlowMap, points, t: float, p: float,
                          grid: Grid, weights=None, delta: float | None = None) -> LogDistance:
    """Ensemble mean of log(|phi_u - phi_v| / delta + 1) at time t.

    ``delta`` defaults to int_0^t ||u - v||_{L^p}.  ``weights`` (e.g. the
    initial density at the sample points) turn the mean into the weighted
    variant int log(...) rho_bar dx.  ``ratio`` is the mean divided by
    ``int ||grad u||_{L^p} + 1``.
    """
    if p < 1:
        raise InvalidArgument("p must be >= 1")
    u = fm_u.field
    pts, _ = _as_points(points, u.dim)
    if delta is None:
        delta = field_distance(u, fm_v.field, grid, t, p, fm_u.dt)
    pts = pts[:, None, :]
    gap = np.linalg.norm(flow(fm_u, pts, t) - flow(fm_v, pts, t), axis=-1).ravel()
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, float).ravel()
    if delta == 0:
        if np.any(gap > 0):
            raise DegenerateDistance("delta = 0 but the trajectories differ")
        vals = np.zeros_like(gap)
    else:
        vals = np.log(gap / delta + 1.0)
    mean = float(np.mean(vals * w))
    G = u.grad_lp_integral(t, p)
    return LogDistance(float(delta), mean, G, mean / (G + 1.0))


@dataclass
class TrajectoryEnsemble:
    """Initial points plus trajectories (and log-Jacobians) at shared times."""

    points: np.ndarray
    times: np.ndarray | None = None
    positions: np.ndarray | None = None
    log_jacobians: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if len(self.points) < 16:
            raise InvalidArgument("an ensemble needs at least 16 samples")

    @classmethod
    def lattice(cls, grid: Grid, per_axis=None) -> "TrajectoryEnsemble":
        if per_axis is None:
            per_axis = 64 if grid.dim == 1 else 32
        return cls(sample_points(grid, per_axis))

    def run(self, fm: FlowMap, times) -> "TrajectoryEnsemble":
        times = np.asarray(sorted(times), dtype=float)
        d = fm.field.dim
        u = fm.field

        def rhs(s, y):
            out = np.empty_like(y)
            out[:, :d] = u.value(s, y[:, :d])
            out[:, d] = u.divergence(s, y[:, :d])
            return out

        y = np.concatenate([self.points, np.zeros((len(self.points), 1))], axis=1)
        pos, logj = [], []
        t_prev = 0.0
        for t in times:
            for a, b, n in _segments(u, t_prev, t, fm.dt):
                y = _rk4(rhs, y, a, b, n)
            _check_domain(fm, y[:, :d])
            pos.append(y[:, :d].copy())
            logj.append(y[:, d].copy())
            t_prev = t
        return TrajectoryEnsemble(self.points, times, np.array(pos), np.array(logj))


def reversed_field(u: VelocityField, t: float) -> VelocityField:
    """The field v(s, x) = -u(t - s, x), whose flow over [0, t] inverts phi(t, .)."""
    off = 0.0
    if u.switch_period is not None:
        half = 0.5 * u.switch_period
        off = (t - u.switch_offset) % half
    return dataclasses.replace(
        u,
        name=f"reversed({u.name})",
        value=lambda s, x: -u.value(t - s, x),
        divergence=lambda s, x: -u.divergence(t - s, x),
        gradient=lambda s, x: -u.gradient(t - s, x),
        # |div u| <= dim * |grad u|_op bounds the negative part of -div u
        div_neg_sup=u.dim * u.lipschitz,
        switch_offset=off,
    )


def pushforward_cell_average(u: VelocityField, rho_bar: Callable, grid: Grid, t: float,
                             dt: float = 1e-3, order: int = 5) -> CellField:
    """Cell averages of the push-forward phi(t)_# rho_bar by backward characteristics.

    rho(t, y) = rho_bar(psi(y)) * exp(int div v) with psi the flow of the
    reversed field; evaluated at Gauss nodes of every cell.
    """
    y = cell_nodes(grid, order)
    v = reversed_field(u, t)
    bm = FlowMap(v, dt)
    back = y
    logj = np.zeros(len(y))
    if t > 0:
        d = u.dim

        def rhs(s, z):
            out = np.empty_like(z)
            out[:, :d] = v.value(s, z[:, :d])
            out[:, d] = v.divergence(s, z[:, :d])
            return out

        z = np.concatenate([y, np.zeros((len(y), 1))], axis=1)
        for a, b, n in _segments(v, 0.0, t, bm.dt):
            z = _rk4(rhs, z, a, b, n)
        back, logj = z[:, :d], z[:, d]
    back = back.copy()
    for a in range(grid.dim):
        if grid.periodic[a]:
            back[:, a] = grid.lower[a] + np.mod(back[:, a] - grid.lower[a], grid.lengths[a])
    vals = np.asarray(rho_bar(*back.T), float) * np.exp(logj)
    return CellField(grid, reduce_cells(vals, grid, order), t)
