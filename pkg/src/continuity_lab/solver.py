"""Explicit upwind finite-volume scheme and an operator-split advection-diffusion solver.

Face velocities are stored per axis with ``n_a + 1`` faces along that axis;
face ``i`` separates cell ``i - 1`` (left) from cell ``i`` (right).  On a
periodic axis faces ``0`` and ``n_a`` are the same face.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryError, InvalidArgument, StabilityError
from .fields import QUAD_ORDER, CellField, Grid, VelocityField, _gauss, entropy

DEFAULT_SAFETY = 0.45
DIFFUSION_SAFETY = 0.9
TIME_QUAD_ORDER = 3
#: relative tolerance on boundary normal velocity for walled axes
TANGENTIAL_TOL = 1e-10


def cfl_step(u: VelocityField, grid: Grid, t: float, remaining: float,
             safety: float = DEFAULT_SAFETY) -> float:
    """Largest step with int ||u||_inf dt <= safety * h, capped at ``remaining``."""
    if not 0 < safety <= 1:
        raise InvalidArgument("CFL safety factor must lie in (0, 1]")
    if u.sup_norm == 0:
        return min(grid.h, remaining)
    return min(safety * grid.h / u.sup_norm, remaining)


@dataclass(frozen=True)
class FluxTable:
    """Face- and time-averaged normal velocities u_KL for one time step."""

    grid: Grid
    t: float
    dt: float
    normal: tuple[np.ndarray, ...]

    def net_flow(self, axis: int) -> np.ndarray:
        """u_KL for the face between a cell and its right neighbour along ``axis``;
        the reverse orientation is the negative (antisymmetry by construction)."""
        return self.normal[axis]

    def divergence(self) -> np.ndarray:
        """Per cell: sum over faces of u_KL |K|L| (outward)."""
        g = self.grid
        out = np.zeros(g.shape)
        for a, v in enumerate(self.normal):
            out += (np.diff(v, axis=a)) * g.face_area(a)
        return out


def _face_nodes(grid: Grid, axis: int, order: int):
    """Quadrature points on all faces normal to ``axis`` and the weights over
    the transverse direction."""
    faces = grid.edges(axis)
    if grid.dim == 1:
        return faces[:, None], np.ones(1), (len(faces),)
    b = 1 - axis
    nodes, w = _gauss(order)
    lo = grid.edges(b)[:-1]
    tr = (lo[:, None] + grid.spacing[b] * nodes[None, :]).ravel()
    if axis == 0:
        X, Y = np.meshgrid(faces, tr, indexing="ij")
    else:
        X, Y = np.meshgrid(tr, faces, indexing="ij")
    shape = list(grid.shape)
    shape[axis] += 1
    return np.stack([X.ravel(), Y.ravel()], axis=-1), w, tuple(shape)


def face_fluxes(u: VelocityField, grid: Grid, t: float, dt: float,
                order: int = QUAD_ORDER, time_order: int = TIME_QUAD_ORDER) -> FluxTable:
    """Average u . e_axis over every face and over [t, t + dt]."""
    if u.dim != grid.dim:
        raise InvalidArgument("field and grid dimensions differ")
    tn, tw = _gauss(time_order)
    times = t + dt * tn if dt > 0 else np.array([t])
    tw = tw if dt > 0 else np.ones(1)
    normal = []
    for a in range(grid.dim):
        x, w, shape = _face_nodes(grid, a, order)
        acc = np.zeros(len(x))
        for s, ws in zip(times, tw):
            acc += ws * u.value(s, x)[:, a]
        if grid.dim == 1:
            v = acc.reshape(shape)
        else:
            b = 1 - a
            n_b = grid.cells[b]
            if a == 0:
                v = acc.reshape(shape[0], n_b, order) @ w
            else:
                v = np.moveaxis(acc.reshape(n_b, order, shape[1]), 1, 2) @ w
        if not grid.periodic[a]:
            edge = np.take(v, [0, -1], axis=a)
            if np.abs(edge).max() > TANGENTIAL_TOL * max(u.sup_norm, 1.0):
                raise BoundaryError(
                    f"field {u.name!r} is not tangential on the walls of axis {a} "
                    f"(|u.nu| = {np.abs(edge).max():.3g}); use a periodic axis"
                )
            sl = [slice(None)] * grid.dim
            sl[a] = 0
            v[tuple(sl)] = 0.0
            sl[a] = -1
            v[tuple(sl)] = 0.0
        else:
            sl0 = [slice(None)] * grid.dim
            sl1 = [slice(None)] * grid.dim
            sl0[a], sl1[a] = 0, -1
            v[tuple(sl1)] = v[tuple(sl0)]
        normal.append(v)
    return FluxTable(grid, t, dt, tuple(normal))


def _neighbours(r: np.ndarray, axis: int, periodic: bool):
    """Left and right cell values for every face along ``axis``."""
    first = np.take(r, [0], axis=axis)
    last = np.take(r, [-1], axis=axis)
    if periodic:
        left = np.concatenate([last, r], axis=axis)
        right = np.concatenate([r, first], axis=axis)
    else:
        left = np.concatenate([np.zeros_like(first), r], axis=axis)
        right = np.concatenate([r, np.zeros_like(last)], axis=axis)
    return left, right


def outflow_factor(flux: FluxTable) -> np.ndarray:
    g = flux.grid
    out = np.zeros(g.shape)
    for a, v in enumerate(flux.normal):
        vr = np.take(v, range(1, g.cells[a] + 1), axis=a)
        vl = np.take(v, range(0, g.cells[a]), axis=a)
        out += (np.maximum(vr, 0) + np.maximum(-vl, 0)) / g.spacing[a]
    return flux.dt * out


def _upwind_update(r: np.ndarray, flux: FluxTable) -> np.ndarray:
    g = flux.grid
    new = r.copy()
    for a, v in enumerate(flux.normal):
        left, right = _neighbours(r, a, g.periodic[a])
        F = np.maximum(v, 0) * left + np.minimum(v, 0) * right
        new -= flux.dt / g.spacing[a] * np.diff(F, axis=a)
    return new


def upwind_step(rho: CellField, flux: FluxTable) -> CellField:
    """One explicit upwind step

        rho_K <- rho_K + dt sum_L |K|L|/|K| (u_LK^+ rho_L - u_KL^+ rho_K).
    """
    worst = outflow_factor(flux).max()
    if worst > 1 + 1e-12:
        raise StabilityError(f"CFL violated: outgoing flux factor {worst:.4g} > 1")
    return rho.with_values(_upwind_update(rho.values, flux), rho.time + flux.dt)


def _diffuse(r: np.ndarray, grid: Grid, kappa: float, dt: float) -> np.ndarray:
    """Explicit centred diffusion; walls act as Neumann ghost cells (zero flux)."""
    new = r.copy()
    for a in range(grid.dim):
        left, right = _neighbours(r, a, grid.periodic[a])
        G = (right - left) / grid.spacing[a]
        if not grid.periodic[a]:
            sl = [slice(None)] * grid.dim
            sl[a] = 0
            G[tuple(sl)] = 0.0
            sl[a] = -1
            G[tuple(sl)] = 0.0
        new += dt * kappa / grid.spacing[a] * np.diff(G, axis=a)
    return new


def total_variation(r: np.ndarray, grid: Grid) -> float:
    """Volume-averaged discrete |grad rho|: sum over faces of jumps times face area / |Omega|."""
    tv = 0.0
    for a in range(grid.dim):
        d = np.abs(np.diff(r, axis=a)).sum()
        if grid.periodic[a]:
            d += np.abs(np.take(r, 0, axis=a) - np.take(r, -1, axis=a)).sum()
        tv += d * grid.face_area(a)
    return tv / grid.volume


@dataclass
class SolveReport:
    """Final field plus per-step diagnostic series (index 0 is the initial state)."""

    final: CellField
    times: np.ndarray
    mass: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    entropy: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    steps: int
    snapshots: dict = field(default_factory=dict)
    tv_integral: np.ndarray | None = None

    def mass_drift(self) -> float:
        m0 = self.mass[0]
        scale = abs(m0) if m0 != 0 else float(np.abs(self.l1[0]) * self.final.grid.volume or 1.0)
        return float(np.abs(self.mass - m0).max() / scale)


class _Recorder:
    def __init__(self, rho: CellField):
        self.grid = rho.grid
        self.nonneg = bool(np.all(rho.values >= 0))
        self.rows = []
        self.tv = [0.0]

    def add(self, t, r):
        g = self.grid
        a = np.abs(r)
        if self.nonneg and np.all(r >= 0):
            ent = entropy(CellField(g, r))
        else:
            ent = math.nan
        self.rows.append((t, r.sum() * g.cell_volume, a.mean(), math.sqrt(np.mean(r * r)),
                          a.max(), ent, r.min(), r.max()))

    def report(self, final, steps, snaps, with_tv=False):
        cols = np.array(self.rows).T
        return SolveReport(final, *cols, steps=steps, snapshots=snaps,
                           tv_integral=np.array(self.tv) if with_tv else None)


def _march(u, rho, T, safety, snapshot_times, kappa=0.0, diffusion_safety=DIFFUSION_SAFETY):
    if T <= 0:
        raise InvalidArgument("final time must be positive")
    grid = rho.grid
    t = rho.time
    r = rho.values.copy()
    rec = _Recorder(rho)
    rec.add(t, r)
    snaps = {}
    pending = sorted(s for s in snapshot_times if t <= s <= T)
    if pending and pending[0] == t:
        snaps[t] = r.copy()
        pending.pop(0)
    dt_diff = math.inf
    if kappa > 0:
        dt_diff = diffusion_safety * float(grid.spacing.min()) ** 2 / (2 * grid.dim * kappa)
    cache = {}
    steps = 0
    eps = 1e-12 * max(1.0, T)
    while t < T - eps:
        stop = min(T, u.next_switch(t), pending[0] if pending else math.inf)
        dt = min(cfl_step(u, grid, t, stop - t, safety), dt_diff)
        arrive = dt >= stop - t - eps
        if arrive:
            dt = stop - t
        # catalog fields are autonomous between switches: reuse the table
        key = (u.next_switch(t), dt) if (u.autonomous or u.switch_period is not None) else None
        flux = cache.get(key) if key is not None else None
        if flux is None:
            flux = face_fluxes(u, grid, t, dt)
            worst = outflow_factor(flux).max()
            if worst > 1 + 1e-12:
                raise StabilityError(f"CFL violated: outgoing flux factor {worst:.4g} > 1")
            if key is not None:
                cache = {key: flux}
        r = _upwind_update(r, flux)
        if kappa > 0:
            r = _diffuse(r, grid, kappa, dt)
            rec.tv.append(rec.tv[-1] + dt * total_variation(r, grid))
        t = stop if arrive else t + dt
        steps += 1
        rec.add(t, r)
        if pending and t >= pending[0] - eps:
            snaps[pending.pop(0)] = r.copy()
    return rec.report(CellField(grid, r, t), steps, snaps, with_tv=kappa > 0)


def solve_upwind(u: VelocityField, initial: CellField, T: float, safety: float = DEFAULT_SAFETY,
                 snapshot_times=()) -> SolveReport:
    """March the upwind scheme from ``initial`` to time ``T``.

    Steps are cut so that they end exactly on snapshot times and on the
    switch times of the field.
    """
    return _march(u, initial, T, safety, snapshot_times)


def solve_advection_diffusion(u: VelocityField, kappa: float, initial: CellField, T: float,
                              safety: float = DEFAULT_SAFETY,
                              diffusion_safety: float = DIFFUSION_SAFETY,
                              snapshot_times=()) -> SolveReport:
    """Upwind advection followed by explicit diffusion in every step.

    The step obeys both the CFL bound and dt <= 0.9 h_min^2 / (2 d kappa).
    ``report.tv_integral`` holds the running time integral of the averaged
    discrete |grad rho|.
    """
    if not kappa > 0:
        raise InvalidArgument("diffusivity must be positive")
    if np.any(initial.values < 0):
        raise InvalidArgument("advection-diffusion solver expects nonnegative data")
    return _march(u, initial, T, safety, snapshot_times, kappa, diffusion_safety)


def lq_bound(u: VelocityField, initial: CellField, t: float, q: float) -> float:
    """Right-hand side exp((1 - 1/q) int ||(div u)^-||_inf) ||rho_bar||_{L^q}."""
    expo = 1.0 if math.isinf(q) else 1.0 - 1.0 / q
    return math.exp(expo * u.div_neg_sup * t) * initial.lq_norm(q)


def write_snapshots_csv(report: SolveReport, path) -> None:
    """CSV with columns time, cell index per axis, value."""
    grid = report.final.grid
    idx_names = ["i", "j"][: grid.dim]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *idx_names, "value"])
        for t in sorted(report.snapshots):
            vals = report.snapshots[t]
            for index in np.ndindex(vals.shape):
                w.writerow([repr(float(t)), *index, repr(float(vals[index]))])
