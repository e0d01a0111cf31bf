"""Grids, piecewise-constant cell fields and the catalog of analytic velocity fields.

Points are passed around as arrays whose last axis is the spatial dimension,
e.g. shape ``(n, 2)`` for ``n`` points in the plane.  One-dimensional callers
may use shape ``(n, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma

from .errors import EvaluationError, InvalidArgument

#: minimal admissible ratio h_i / h of the tessellation
REGULARITY = 0.5
#: Gauss-Legendre points per axis for cell and face averages
QUAD_ORDER = 5


@dataclass(frozen=True)
class Grid:
    """Tensor tessellation of a box into rectangular cells.

    ``periodic`` marks axes that wrap around (torus variant); every other
    boundary is a closed wall.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]
    periodic: tuple[bool, ...]

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def lengths(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    @property
    def spacing(self) -> np.ndarray:
        """Edge lengths h_i per axis."""
        return self.lengths / np.asarray(self.cells)

    @property
    def h(self) -> float:
        """Maximal edge length."""
        return float(self.spacing.max())

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def period(self) -> np.ndarray:
        """Per-axis period (``inf`` on walled axes); used for distances."""
        return np.where(self.periodic, self.lengths, np.inf)

    def face_area(self, axis: int) -> float:
        return self.cell_volume / float(self.spacing[axis])

    def edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.cells[axis] + 1)

    def centers(self, axis: int) -> np.ndarray:
        e = self.edges(axis)
        return 0.5 * (e[1:] + e[:-1])

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij")

    def points(self) -> np.ndarray:
        """Cell centers as an ``(size, dim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)


def make_grid(extent, cells, periodic=False) -> Grid:
    """Build a grid.

    ``extent`` is a sequence of ``(lo, hi)`` pairs or of plain lengths
    (lower corner at the origin); ``cells`` an int or one int per axis.
    """
    ext = list(extent)
    if ext and np.isscalar(ext[0]):
        ext = [(0.0, float(L)) for L in ext]
    lower = tuple(float(lo) for lo, _ in ext)
    upper = tuple(float(hi) for _, hi in ext)
    dim = len(ext)
    if dim not in (1, 2):
        raise InvalidArgument(f"dimension must be 1 or 2, got {dim}")
    if np.isscalar(cells):
        cells = (int(cells),) * dim
    cells = tuple(int(c) for c in cells)
    if len(cells) != dim:
        raise InvalidArgument("one cell count per axis required")
    if isinstance(periodic, bool):
        periodic = (periodic,) * dim
    periodic = tuple(bool(p) for p in periodic)
    if len(periodic) != dim:
        raise InvalidArgument("one periodicity flag per axis required")
    if any(c < 1 for c in cells):
        raise InvalidArgument(f"cell counts must be >= 1, got {cells}")
    if any(hi - lo <= 0 for lo, hi in zip(lower, upper)):
        raise InvalidArgument(f"extents must be positive, got {ext}")
    grid = Grid(lower, upper, cells, periodic)
    hs = grid.spacing
    if hs.min() < REGULARITY * hs.max():
        raise InvalidArgument(
            f"irregular tessellation: h_i/h = {hs.min() / hs.max():.3g} < {REGULARITY}"
        )
    return grid


def _gauss(order: int = QUAD_ORDER):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w  # nodes and weights on [0, 1]


def cell_nodes(grid: Grid, order: int = QUAD_ORDER) -> np.ndarray:
    """Tensor Gauss nodes of every cell, as an ``(N, dim)`` array (ij order)."""
    nodes, _ = _gauss(order)
    coords = []
    for a in range(grid.dim):
        lo = grid.edges(a)[:-1]
        coords.append((lo[:, None] + grid.spacing[a] * nodes[None, :]).ravel())
    mesh = np.meshgrid(*coords, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def reduce_cells(vals: np.ndarray, grid: Grid, order: int = QUAD_ORDER) -> np.ndarray:
    """Collapse values at ``cell_nodes`` into per-cell averages."""
    _, weights = _gauss(order)
    shape = []
    for n in grid.cells:
        shape += [n, order]
    vals = np.asarray(vals, dtype=float).reshape(shape)
    for a in reversed(range(grid.dim)):
        vals = np.tensordot(vals, weights, axes=([2 * a + 1], [0]))
    return vals


def cell_average(func: Callable, grid: Grid, order: int = QUAD_ORDER, time: float = 0.0) -> "CellField":
    """Volume average of ``func`` over every cell by tensor Gauss quadrature.

    ``func`` takes one coordinate array per axis, ``func(x)`` or ``func(x, y)``.
    """
    x = cell_nodes(grid, order)
    vals = np.asarray(func(*x.T), dtype=float)
    vals = np.broadcast_to(vals, x.shape[:1])
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("density function returned non-finite values")
    return CellField(grid, reduce_cells(vals, grid, order), time)


@dataclass(frozen=True)
class CellField:
    """Piecewise-constant density: one value (mass per volume) per cell."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(self.grid.shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def with_values(self, values, time=None) -> "CellField":
        return CellField(self.grid, values, self.time if time is None else time)

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def lq_norm(self, q: float) -> float:
        return lq_norm(self, q)

    def entropy(self) -> float:
        return entropy(self)


def lq_norm(f: CellField, q: float) -> float:
    """Volume-averaged norm (mean |rho|^q)^(1/q); ``q=inf`` gives the max."""
    a = np.abs(f.values)
    if math.isinf(q):
        return float(a.max())
    if q <= 0:
        raise InvalidArgument("q must be positive")
    return float(np.mean(a**q) ** (1.0 / q))


def entropy(f: CellField) -> float:
    """Volume average of rho log rho with 0 log 0 = 0."""
    v = f.values
    if np.any(v < 0):
        raise InvalidArgument(f"entropy needs nonnegative data, min = {v.min():.3g}")
    pos = v > 0
    out = np.zeros_like(v)
    out[pos] = v[pos] * np.log(v[pos])
    return float(np.mean(out))


# --- velocity fields -------------------------------------------------------


def _abs_cos_mean(p: float) -> float:
    """(mean over a period of |cos|^p)^(1/p)."""
    if math.isinf(p):
        return 1.0
    return float((gamma((p + 1) / 2) / (math.sqrt(math.pi) * gamma(p / 2 + 1))) ** (1 / p))


@dataclass(frozen=True)
class VelocityField:
    """Analytic, time-dependent velocity field with the metadata the solvers need.

    ``sup_norm``, ``lipschitz`` and ``div_neg_sup`` are time-uniform bounds of
    |u|, |grad u| (operator norm) and the negative part of div u over the
    field's natural domain.  ``grad_lp(t, p)`` is the volume-averaged
    L^p norm of the Frobenius norm of grad u at time t.
    """

    name: str
    dim: int
    value: Callable[[float, np.ndarray], np.ndarray]
    divergence: Callable[[float, np.ndarray], np.ndarray]
    gradient: Callable[[float, np.ndarray], np.ndarray]
    sup_norm: float
    lipschitz: float
    div_neg_sup: float
    grad_lp: Callable[[float, float], float]
    divergence_free: bool
    autonomous: bool
    switch_period: float | None = None
    switch_offset: float = 0.0
    params: dict = field(default_factory=dict)

    def __call__(self, t, x):
        return self.value(t, x)

    def next_switch(self, t: float) -> float:
        """First time > t where the field changes formula (``inf`` if never)."""
        if self.switch_period is None:
            return math.inf
        half = 0.5 * self.switch_period
        n = math.floor((t - self.switch_offset) / half + 1e-12) + 1
        return self.switch_offset + n * half

    def grad_lp_integral(self, t: float, p: float, steps: int = 64) -> float:
        """Time integral of ``grad_lp`` over [0, t] (composite midpoint)."""
        if t <= 0:
            return 0.0
        if self.autonomous:
            return t * self.grad_lp(0.0, p)
        s = (np.arange(steps) + 0.5) * t / steps
        return float(sum(self.grad_lp(si, p) for si in s) * t / steps)


def _pts(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise InvalidArgument(f"expected points with last axis {dim}, got shape {x.shape}")
    return x


def _zero(dim):
    return VelocityField(
        "zero", dim,
        value=lambda t, x: np.zeros_like(_pts(x, dim)),
        divergence=lambda t, x: np.zeros(_pts(x, dim).shape[:-1]),
        gradient=lambda t, x: np.zeros(_pts(x, dim).shape[:-1] + (dim, dim)),
        sup_norm=0.0, lipschitz=0.0, div_neg_sup=0.0,
        grad_lp=lambda t, p: 0.0,
        divergence_free=True, autonomous=True, params={"dim": dim},
    )


def _constant(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = c.size
    return VelocityField(
        "constant", dim,
        value=lambda t, x: np.broadcast_to(c, _pts(x, dim).shape).copy(),
        divergence=lambda t, x: np.zeros(_pts(x, dim).shape[:-1]),
        gradient=lambda t, x: np.zeros(_pts(x, dim).shape[:-1] + (dim, dim)),
        sup_norm=float(np.linalg.norm(c)), lipschitz=0.0, div_neg_sup=0.0,
        grad_lp=lambda t, p: 0.0,
        divergence_free=True, autonomous=True, params={"c": tuple(c.tolist())},
    )


def _linear(a):
    a = float(a)
    return VelocityField(
        "linear", 1,
        value=lambda t, x: a * _pts(x, 1),
        divergence=lambda t, x: np.full(_pts(x, 1).shape[:-1], a),
        gradient=lambda t, x: np.full(_pts(x, 1).shape[:-1] + (1, 1), a),
        sup_norm=abs(a), lipschitz=abs(a), div_neg_sup=max(-a, 0.0),
        grad_lp=lambda t, p: abs(a),
        divergence_free=(a == 0), autonomous=True, params={"a": a},
    )


def _oscillating(k):
    k = int(k)
    if k < 1:
        raise InvalidArgument("oscillating field needs k >= 1")
    w = 2 * math.pi * k

    def value(t, x):
        x = _pts(x, 1)
        return np.sin(w * x) / w

    def div(t, x):
        return np.cos(w * _pts(x, 1)[..., 0])

    return VelocityField(
        "oscillating", 1,
        value=value, divergence=div,
        gradient=lambda t, x: div(t, x)[..., None, None],
        sup_norm=1.0 / w, lipschitz=1.0, div_neg_sup=1.0,
        grad_lp=lambda t, p: _abs_cos_mean(p),
        divergence_free=False, autonomous=True, params={"k": k},
    )


def _rotation(omega, center=(0.5, 0.5)):
    omega = float(omega)
    cx, cy = map(float, center)

    def value(t, x):
        x = _pts(x, 2)
        return np.stack([-omega * (x[..., 1] - cy), omega * (x[..., 0] - cx)], axis=-1)

    def grad(t, x):
        x = _pts(x, 2)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 1] = -omega
        g[..., 1, 0] = omega
        return g

    return VelocityField(
        "rigid_rotation", 2,
        value=value,
        divergence=lambda t, x: np.zeros(_pts(x, 2).shape[:-1]),
        gradient=grad,
        sup_norm=abs(omega) * math.sqrt(0.5), lipschitz=abs(omega), div_neg_sup=0.0,
        grad_lp=lambda t, p: abs(omega) * math.sqrt(2.0),
        divergence_free=True, autonomous=True,
        params={"omega": omega, "center": (cx, cy)},
    )


def _shear(axis, A, m):
    """axis=0: u = (A sin(2 pi m y), 0); axis=1: u = (0, A sin(2 pi m x))."""
    A, m = float(A), int(m)
    w = 2 * math.pi * m
    other = 1 - axis

    def value(t, x):
        x = _pts(x, 2)
        u = np.zeros_like(x)
        u[..., axis] = A * np.sin(w * x[..., other])
        return u

    def grad(t, x):
        x = _pts(x, 2)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., axis, other] = A * w * np.cos(w * x[..., other])
        return g

    return VelocityField(
        "shear_x" if axis == 0 else "shear_y", 2,
        value=value,
        divergence=lambda t, x: np.zeros(_pts(x, 2).shape[:-1]),
        gradient=grad,
        sup_norm=abs(A), lipschitz=abs(A) * w, div_neg_sup=0.0,
        grad_lp=lambda t, p: abs(A) * w * _abs_cos_mean(p),
        divergence_free=True, autonomous=True, params={"A": A, "m": m},
    )


def _alternating(A, m, period):
    period = float(period)
    if period <= 0:
        raise InvalidArgument("period must be positive")
    sx, sy = _shear(0, A, m), _shear(1, A, m)

    def phase(t):
        # first half of each period: shear_x
        return (np.floor(np.asarray(t) / (0.5 * period) + 1e-12).astype(int) % 2) == 0

    def pick(fx, fy):
        def f(t, x):
            return fx(t, x) if phase(t) else fy(t, x)
        return f

    return VelocityField(
        "alternating_shear", 2,
        value=pick(sx.value, sy.value),
        divergence=pick(sx.divergence, sy.divergence),
        gradient=pick(sx.gradient, sy.gradient),
        sup_norm=sx.sup_norm, lipschitz=sx.lipschitz, div_neg_sup=0.0,
        grad_lp=sx.grad_lp,
        divergence_free=True, autonomous=False, switch_period=period,
        params={"A": float(A), "m": int(m), "period": period},
    )


_CATALOG = {
    "zero": (_zero, "zero field; params: dim (1 or 2)"),
    "constant": (_constant, "u = c; params: c (scalar or pair)"),
    "linear": (_linear, "1D u(x) = a x, compressible, not tangential; params: a"),
    "oscillating": (_oscillating, "1D u(x) = sin(2 pi k x)/(2 pi k); params: k"),
    "rigid_rotation": (_rotation, "u = omega (-(y-cy), x-cx); params: omega, center"),
    "shear_x": (lambda A=1.0, m=1: _shear(0, A, m), "u = (A sin(2 pi m y), 0); params: A, m"),
    "shear_y": (lambda A=1.0, m=1: _shear(1, A, m), "u = (0, A sin(2 pi m x)); params: A, m"),
    "alternating_shear": (
        _alternating,
        "shear_x on the first half of each period, shear_y on the second; params: A, m, period",
    ),
}


def field_names() -> list[str]:
    return list(_CATALOG)


def describe_fields() -> dict[str, str]:
    return {k: v[1] for k, v in _CATALOG.items()}


def builtin_velocity(name: str, **params) -> VelocityField:
    """Look up a catalog field by name, e.g. ``builtin_velocity("oscillating", k=4)``."""
    try:
        factory = _CATALOG[name][0]
    except KeyError:
        raise InvalidArgument(f"unknown velocity field {name!r}; known: {field_names()}") from None
    if name == "zero":
        return _zero(int(params.get("dim", 1)))
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidArgument(f"bad parameters for {name!r}: {exc}") from None


def boundary_normal_velocity(u: VelocityField, grid: Grid, t: float = 0.0, samples: int = 33) -> float:
    """Largest |u . nu| over sampled points of the walled boundary faces."""
    worst = 0.0
    s = (np.arange(samples) + 0.5) / samples
    for a in range(grid.dim):
        if grid.periodic[a]:
            continue
        for side in (grid.lower[a], grid.upper[a]):
            if grid.dim == 1:
                x = np.array([[side]])
            else:
                b = 1 - a
                pts = np.empty((samples, 2))
                pts[:, a] = side
                pts[:, b] = grid.lower[b] + s * grid.lengths[b]
                x = pts
            worst = max(worst, float(np.abs(u.value(t, x)[..., a]).max()))
    return worst


def is_tangential(u: VelocityField, grid: Grid, t: float = 0.0, tol: float = 1e-10) -> bool:
    return boundary_normal_velocity(u, grid, t) <= tol * max(u.sup_norm, 1.0)


def domain_quadrature(grid: Grid, order: int = QUAD_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss nodes over all cells, shape ``(N, dim)``, and weights summing to 1."""
    nodes, weights = _gauss(order)
    coords, wts = [], []
    for a in range(grid.dim):
        lo = grid.edges(a)[:-1]
        coords.append((lo[:, None] + grid.spacing[a] * nodes[None, :]).ravel())
        wts.append(np.tile(weights, grid.cells[a]) / grid.cells[a])
    mesh = np.meshgrid(*coords, indexing="ij")
    w = wts[0] if grid.dim == 1 else np.outer(wts[0], wts[1])
    return np.stack([m.ravel() for m in mesh], axis=-1), w.ravel()


def _lp_mean(w, g, p):
    if math.isinf(p):
        return float(g.max())
    return float(np.sum(w * g**p) ** (1 / p))


def grad_lp_norm(u: VelocityField, grid: Grid, t: float, p: float, order: int = QUAD_ORDER) -> float:
    """Volume-averaged L^p norm of |grad u| by quadrature over ``grid``."""
    x, w = domain_quadrature(grid, order)
    return _lp_mean(w, np.linalg.norm(u.gradient(t, x), axis=(-2, -1)), p)


def lp_distance(u: VelocityField, v: VelocityField, grid: Grid, t: float, p: float,
                order: int = QUAD_ORDER) -> float:
    """Volume-averaged L^p norm of |u - v| at time t by tensor quadrature."""
    x, w = domain_quadrature(grid, order)
    return _lp_mean(w, np.linalg.norm(u.value(t, x) - v.value(t, x), axis=-1), p)


def sample_points(grid: Grid, per_axis: int | Sequence[int]) -> np.ndarray:
    """Equi-spaced lattice (cell-midpoint rule) with ``per_axis`` points per axis."""
    if np.isscalar(per_axis):
        per_axis = (int(per_axis),) * grid.dim
    axes = [grid.lower[a] + (np.arange(n) + 0.5) / n * grid.lengths[a] for a, n in enumerate(per_axis)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)
