"""Kantorovich-Rubinstein distance with logarithmic cost, the mixing scale and
the companion norms |grad^{-1} rho|_{L^2} and |grad rho|_BV.

Fields are represented by point masses at cell centers.  Distances on
periodic axes use the minimum-image convention.

The exact solver is a linear program in transportation form solved with the
HiGHS dual simplex.  Large instances go through column generation on a
k-nearest-neighbour edge set.  Every exact solution is polished on its
spanning-forest support and certified by duals checked against all pairs.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.fft import dctn, fftn, idctn, ifftn
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .errors import (ConvergenceError, DegenerateDistance, InvalidArgument, SizeError,
                     UnbalancedMarginals)
from .fields import CellField, Grid

#: largest n*m handled by kr_exact unless overridden
MAX_EXACT_ENTRIES = 4_000_000
#: instances up to this many pairs are solved as one dense LP
DENSE_ENTRIES = 40_000
#: relative mass mismatch tolerated (and repaired) by split_difference
BALANCE_TOL = 1e-10
#: how the exponent of M(rho) is normalised: "mass" (per unit plan mass) or "domain"
MIXING_NORMALIZATION = "mass"

_CHUNK = 512


# --- measures and plans ----------------------------------------------------


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud; zero-weight points are pruned on construction.

    ``period`` holds the per-axis period used for distances (``inf`` for an
    axis without wrap-around).
    """

    points: np.ndarray
    weights: np.ndarray
    period: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim == 1:
            pts = pts[:, None]
        if len(pts) != len(w):
            raise InvalidArgument("points and weights differ in length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidArgument("weights must be finite and nonnegative")
        keep = w > 0
        per = None if self.period is None else np.broadcast_to(
            np.asarray(self.period, dtype=float), (pts.shape[1],)).copy()
        object.__setattr__(self, "points", pts[keep])
        object.__setattr__(self, "weights", w[keep])
        object.__setattr__(self, "period", per)

    def __len__(self):
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * c, self.period)


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling: entries ``(rows[k], cols[k], mass[k])``."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, self.mass, minlength=len(self.source))

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, self.mass, minlength=len(self.target))

    def marginal_error(self) -> float:
        """Largest marginal violation relative to the total mass."""
        scale = max(self.source.mass, 1e-300)
        e1 = np.abs(self.row_sums() - self.source.weights).max(initial=0.0)
        e2 = np.abs(self.col_sums() - self.target.weights).max(initial=0.0)
        return float(max(e1, e2) / scale)

    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.source), len(self.target)))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def distances(self) -> np.ndarray:
        return _pair_distance(self.source.points[self.rows], self.target.points[self.cols],
                              self.source.period)

    def to_csv(self, path) -> None:
        d = self.source.dim
        head = [f"source_x{i}" for i in range(d)] + [f"target_x{i}" for i in range(d)] + ["mass"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            xs, ys = self.source.points[self.rows], self.target.points[self.cols]
            for k in range(len(self.mass)):
                w.writerow([repr(float(v)) for v in xs[k]] + [repr(float(v)) for v in ys[k]]
                           + [repr(float(self.mass[k]))])


@dataclass(frozen=True)
class KRResult:
    """Outcome of a KR solve.

    ``value`` is the normalised distance (optimal cost / ``volume``),
    ``cost`` the raw optimal cost, ``dual_gap`` the certified gap between the
    primal cost and the best dual bound found (relative to the cost scale).
    """

    value: float
    delta: float | None
    plan: TransportPlan
    dual_gap: float
    cost: float
    volume: float
    method: str
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def plan_mass(self) -> float:
        return float(self.plan.mass.sum())


# --- costs ----------------------------------------------------------------


def _pair_distance(x, y, period=None):
    d = x - y
    if period is not None:
        per = np.asarray(period, dtype=float)
        fin = np.isfinite(per)
        if np.any(fin):
            d = d.copy()
            d[..., fin] -= per[fin] * np.round(d[..., fin] / per[fin])
    return np.linalg.norm(d, axis=-1)


def _cost_fn(delta):
    """log(r/delta + 1), or log r when ``delta`` is None."""
    if delta is None:
        return np.log
    return lambda r: np.log1p(r / delta)


def cost_matrix(source: DiscreteMeasure, target: DiscreteMeasure, delta: float | None) -> np.ndarray:
    r = _pair_distance(source.points[:, None, :], target.points[None, :, :], source.period)
    return _cost_fn(delta)(r)


# --- splitting fields ------------------------------------------------------


def _measure_from(values, grid: Grid, sign: int) -> DiscreteMeasure:
    w = np.clip(sign * np.asarray(values, float).ravel(), 0, None) * grid.cell_volume
    return DiscreteMeasure(grid.points(), w, grid.period)


def split_difference(f1: CellField, f2: CellField | None = None):
    """Positive and negative parts of ``f1 - f2`` as balanced point measures.

    With ``f2`` omitted, ``f1`` itself is split (it must then have zero mass).
    """
    grid = f1.grid
    if f2 is not None and f2.grid != grid:
        raise InvalidArgument("fields live on different grids")
    diff = np.asarray(f1.values, float) - (0.0 if f2 is None else np.asarray(f2.values, float))
    m1 = f1.mass()
    m2 = 0.0 if f2 is None else f2.mass()
    scale = max(abs(m1), abs(m2), grid.volume)
    pos = _measure_from(diff, grid, 1)
    neg = _measure_from(diff, grid, -1)
    gap = pos.mass - neg.mass
    if abs(gap) > BALANCE_TOL * scale:
        raise UnbalancedMarginals(f"mass mismatch {gap:.3g} exceeds {BALANCE_TOL:g} x {scale:.3g}")
    if len(pos) and len(neg) and gap != 0:
        if gap > 0:
            neg = neg.scaled(pos.mass / neg.mass)
        else:
            pos = pos.scaled(neg.mass / pos.mass)
    return pos, neg


# --- exact solver ----------------------------------------------------------


_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _solve_lp(I, J, c, a, b, hub_cost=None):
    """Transportation LP restricted to the edges (I, J).

    With ``hub_cost`` an extra hub node is attached to every source and
    target so that the restricted problem is always feasible.
    """
    n, m = len(a), len(b)
    ne = len(I)
    if hub_cost is None:
        rows, cols, cc = I, J, c
        A = sp.vstack([
            sp.csr_matrix((np.ones(ne), (rows, np.arange(ne))), shape=(n, ne)),
            sp.csr_matrix((np.ones(ne), (cols, np.arange(ne))), shape=(m, ne)),
        ]).tocsr()
        rhs = np.r_[a, b]
    else:
        tot = a.sum()
        nc = ne + n + m + 1
        rows = np.r_[I, np.arange(n), np.full(m, n), n]
        cols = np.r_[J, np.full(n, m), np.arange(m), m]
        cc = np.r_[c, np.full(n + m, hub_cost), 0.0]
        k = np.arange(nc)
        A = sp.vstack([
            sp.csr_matrix((np.ones(nc), (rows, k)), shape=(n + 1, nc)),
            sp.csr_matrix((np.ones(nc), (cols, k)), shape=(m + 1, nc)),
        ]).tocsr()
        rhs = np.r_[a, tot, b, tot]
    res = linprog(cc, A_eq=A, b_eq=rhs, bounds=(0, None), method="highs-ds", options=_LP_OPTIONS)
    if res.status != 0:
        raise ConvergenceError(f"linear program failed: {res.message}")
    y = res.eqlin.marginals
    if hub_cost is None:
        u, v = y[:n], y[n:]
        hub = 0.0
    else:
        u, v = y[:n], y[n + 1:n + 1 + m]
        hub = float(res.x[ne:ne + n].sum())
    return res.x[:ne], u, v, hub


def _knn_edges(x, y, period, k):
    n, m = len(x), len(y)
    box = None
    if period is not None and np.all(np.isfinite(period)):
        box = period
        x, y = np.mod(x, period), np.mod(y, period)
    ty = cKDTree(y, boxsize=box)
    tx = cKDTree(x, boxsize=box)
    _, j = ty.query(x, k=min(k, m))
    _, i = tx.query(y, k=min(k, n))
    j = np.asarray(j).reshape(n, -1)
    i = np.asarray(i).reshape(m, -1)
    I = np.r_[np.repeat(np.arange(n), j.shape[1]), i.ravel()]
    J = np.r_[j.ravel(), np.repeat(np.arange(m), i.shape[1])]
    return _unique_edges(I, J, m)


def _unique_edges(I, J, m):
    key = np.unique(I.astype(np.int64) * m + J)
    return key // m, key % m


def _most_negative_reduced(src, tgt, u, v, cost, tol, per_row=None):
    """Scan all pairs in chunks; return edges with reduced cost < -tol and the minimum."""
    n = len(src.weights)
    add_i, add_j, vals = [], [], []
    worst = 0.0
    for s in range(0, n, _CHUNK):
        r = _pair_distance(src.points[s:s + _CHUNK, None, :], tgt.points[None, :, :], src.period)
        red = cost(r) - u[s:s + _CHUNK, None] - v[None, :]
        worst = min(worst, float(red.min()))
        ii, jj = np.nonzero(red < -tol)
        if len(ii):
            add_i.append(ii + s)
            add_j.append(jj)
            vals.append(red[ii, jj])
    if not add_i:
        return np.empty(0, int), np.empty(0, int), worst
    I, J, R = np.concatenate(add_i), np.concatenate(add_j), np.concatenate(vals)
    if per_row is not None and len(R) > per_row:
        keep = np.argsort(R, kind="stable")[:per_row]
        I, J = I[keep], J[keep]
    return I, J, worst


def _tree_polish(I, J, x, a, b, c, mass_tol):
    """Recompute flows and duals exactly on the forest carrying the plan.

    Returns ``(flow, u, v)`` or ``None`` if the support is not a forest.
    """
    n, m = len(a), len(b)
    keep = x > mass_tol
    I, J, c = I[keep], J[keep], c[keep]
    ne = len(I)
    # union-find cycle check
    parent = list(range(n + m))

    def find(z):
        while parent[z] != z:
            parent[z] = parent[parent[z]]
            z = parent[z]
        return z

    for i, j in zip(I, J):
        ri, rj = find(i), find(n + j)
        if ri == rj:
            return None
        parent[ri] = rj
    adj = [[] for _ in range(n + m)]
    for e, (i, j) in enumerate(zip(I, J)):
        adj[i].append(e)
        adj[n + j].append(e)
    # leaf peeling for the flows
    supply = np.r_[a, -b].astype(float)
    deg = np.array([len(l) for l in adj])
    used = np.zeros(ne, bool)
    flow = np.zeros(ne)
    stack = [z for z in range(n + m) if deg[z] == 1]
    while stack:
        z = stack.pop()
        if deg[z] != 1:
            continue
        e = next(e for e in adj[z] if not used[e])
        used[e] = True
        i, j = I[e], n + J[e]
        other = j if z == i else i
        f = supply[z] if z < n else -supply[z]
        flow[e] = f
        if z < n:
            supply[other] += f
        else:
            supply[other] -= f
        supply[z] = 0.0
        deg[z] -= 1
        deg[other] -= 1
        if deg[other] == 1:
            stack.append(other)
    if not used.all() or np.any(flow < -mass_tol) or np.abs(supply).max() > 1e3 * mass_tol:
        return None
    flow = np.clip(flow, 0.0, None)
    # duals: u_i + v_j = c_ij on the forest, one free constant per component
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    for root in range(n + m):
        if (root < n and not np.isnan(u[root])) or (root >= n and not np.isnan(v[root - n])):
            continue
        if root < n:
            u[root] = 0.0
        else:
            v[root - n] = 0.0
        todo = [root]
        while todo:
            z = todo.pop()
            for e in adj[z]:
                i, j = I[e], J[e]
                if z < n and np.isnan(v[j]):
                    v[j] = c[e] - u[i]
                    todo.append(n + j)
                elif z >= n and np.isnan(u[i]):
                    u[i] = c[e] - v[j]
                    todo.append(i)
    return (I, J, flow), u, v


def _exact_plan(src: DiscreteMeasure, tgt: DiscreteMeasure, cost, knn: int = 16,
                max_rounds: int = 200):
    """Optimal plan for the cost ``cost(distance)`` plus duals and bookkeeping."""
    a, b = src.weights, tgt.weights
    n, m = len(a), len(b)
    dense = n * m <= DENSE_ENTRIES
    tol = 1e-12 * max(1.0, float(np.abs(a).max(initial=0)))
    if dense:
        I = np.repeat(np.arange(n), m)
        J = np.tile(np.arange(m), n)
        c = cost(_pair_distance(src.points[I], tgt.points[J], src.period))
        x, u, v, _ = _solve_lp(I, J, c, a, b)
        rounds = 1
    else:
        I, J = _knn_edges(src.points, tgt.points, src.period, knn)
        c = cost(_pair_distance(src.points[I], tgt.points[J], src.period))
        hub_cost = None
        rounds = 0
        while True:
            rounds += 1
            if rounds > max_rounds:
                raise ConvergenceError("column generation did not terminate")
            if hub_cost is None:
                hub_cost = 10.0 * float(np.abs(c).max()) + 10.0
            x, u, v, hub = _solve_lp(I, J, c, a, b, hub_cost)
            nI, nJ, _ = _most_negative_reduced(src, tgt, u, v, cost, 1e-10, per_row=20 * _CHUNK)
            if len(nI) == 0 and hub <= 1e-14 * a.sum():
                break
            if len(nI) == 0:
                # hub still carries flow with no priced edge: make it costlier
                hub_cost *= 10.0
                continue
            I, J = _unique_edges(np.r_[I, nI], np.r_[J, nJ], m)
            c = cost(_pair_distance(src.points[I], tgt.points[J], src.period))
    polished = _tree_polish(I, J, x, a, b, c, tol)
    if polished is not None:
        (I, J, x), u, v = polished
        c = cost(_pair_distance(src.points[I], tgt.points[J], src.period))
    else:
        keep = x > tol
        I, J, x, c = I[keep], J[keep], x[keep], c[keep]
    primal = float(np.dot(x, c))
    # certificate: shift v so that every reduced cost is >= 0, then compare
    _, _, worst = _most_negative_reduced(src, tgt, u, v, cost, np.inf)
    v_feas = v + min(worst, 0.0)
    dual = float(np.dot(a, u) + np.dot(b, v_feas))
    return (I, J, x), primal, dual, u, v_feas, rounds, dense


def kr_exact(source: DiscreteMeasure, target: DiscreteMeasure, delta: float | None,
             volume: float = 1.0, max_entries: int = MAX_EXACT_ENTRIES) -> KRResult:
    """Exact D_delta = min sum pi_ij log(|x_i - y_j|/delta + 1) / volume.

    ``delta=None`` switches to the bare cost log|x - y| used by the mixing
    scale.  Marginals must balance to ``BALANCE_TOL`` relative.
    """
    if delta is not None:
        if not delta > 0:
            raise InvalidArgument("delta must be positive")
    if not volume > 0:
        raise InvalidArgument("volume must be positive")
    ma, mb = source.mass, target.mass
    if abs(ma - mb) > BALANCE_TOL * max(ma, mb, 1e-300):
        raise UnbalancedMarginals(f"source mass {ma!r} != target mass {mb!r}")
    n, m = len(source), len(target)
    if n * m > max_entries:
        raise SizeError(f"{n} x {m} pairs exceed {max_entries}; use kr_entropic or coarse-grain")
    if n == 0 or m == 0:
        if n or m:
            raise UnbalancedMarginals("one marginal is empty, the other is not")
        empty = np.empty(0, int)
        plan = TransportPlan(source, target, empty, empty, np.empty(0))
        return KRResult(0.0, delta, plan, 0.0, 0.0, volume, "empty")
    if mb != ma:
        target = target.scaled(ma / mb)
    (I, J, x), primal, dual, u, v, rounds, dense = _exact_plan(source, target, _cost_fn(delta))
    plan = TransportPlan(source, target, I, J, x)
    scale = max(abs(primal), float(np.abs(u).max() + np.abs(v).max()) * ma, 1e-300)
    gap = abs(primal - dual) / scale
    return KRResult(primal / volume, delta, plan, gap, primal, volume,
                    "dense-lp" if dense else "column-generation", rounds,
                    {"dual_value": dual})


# --- entropic solver -------------------------------------------------------


def _round_to_feasible(P, a, b):
    """Project a positive matrix onto the plans with marginals (a, b)."""
    r = np.minimum(a / np.maximum(P.sum(1), 1e-300), 1.0)
    P = P * r[:, None]
    c = np.minimum(b / np.maximum(P.sum(0), 1e-300), 1.0)
    P = P * c[None, :]
    ea = a - P.sum(1)
    eb = b - P.sum(0)
    if ea.sum() > 0:
        P = P + np.outer(ea, eb) / ea.sum()
    return P


def kr_entropic(source: DiscreteMeasure, target: DiscreteMeasure, delta: float | None,
                eps: float | None = None, max_iter: int = 100_000, volume: float = 1.0,
                tol: float = 1e-5, omega: float = 1.8) -> KRResult:
    """Sinkhorn iteration with eps-scaling for the same problem as ``kr_exact``.

    Scalings are absorbed into log-potentials whenever they grow large, so
    the iteration stays stable for small ``eps`` (default 1e-3 times the cost
    range).  Each eps stage starts with plain sweeps; their observed rate
    sets an over-relaxation factor capped at ``omega`` (in [1, 2)), and
    whenever the marginal error grows the excess over 1 is halved.  The iteration
    stops once the L1 marginal error is below ``tol``, and rounding the plan
    onto the feasible set then moves the cost by at most 2 * tol * max(C).
    ``dual_gap`` compares the rounded cost with the c-transform dual bound.
    """
    if delta is not None and not delta > 0:
        raise InvalidArgument("delta must be positive")
    ma, mb = source.mass, target.mass
    if abs(ma - mb) > BALANCE_TOL * max(ma, mb, 1e-300):
        raise UnbalancedMarginals(f"source mass {ma!r} != target mass {mb!r}")
    if len(source) == 0:
        empty = np.empty(0, int)
        plan = TransportPlan(source, target, empty, empty, np.empty(0))
        return KRResult(0.0, delta, plan, 0.0, 0.0, volume, "empty")
    a = source.weights / ma
    b = target.weights / mb
    C = cost_matrix(source, target, delta)
    spread = float(C.max() - C.min())
    scale = spread if spread > 0 else 1.0
    if eps is None:
        eps = 1e-3 * scale
    if not eps > 0:
        raise InvalidArgument("eps must be positive")
    if not 1.0 <= omega < 2.0:
        raise InvalidArgument("omega must lie in [1, 2)")
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    e = max(scale, eps)
    it = 0
    err = np.inf
    while True:
        K = np.exp((f[:, None] + g[None, :] - C) / e)
        u = np.ones(len(a))
        v = np.ones(len(b))
        target_err = tol if e == eps else 1e-3
        om, prev, checks = 1.0, np.inf, 0
        while it < max_iter:
            it += 1
            u = u ** (1 - om) * (a / np.maximum(K @ v, 1e-300)) ** om
            v = v ** (1 - om) * (b / np.maximum(K.T @ u, 1e-300)) ** om
            if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > 30:
                f += e * np.log(u)
                g += e * np.log(v)
                K = np.exp((f[:, None] + g[None, :] - C) / e)
                u[:] = 1.0
                v[:] = 1.0
            if it % 10 == 0:
                err = float(np.abs(u * (K @ v) - a).sum())
                if err < target_err:
                    break
                checks += 1
                if checks == 2 and prev > 0:
                    # plain rate over the first 20 sweeps picks the SOR-style factor
                    rho = min((err / prev) ** 0.1, 1.0)
                    om = min(omega, 2.0 / (1.0 + math.sqrt(1.0 - rho)))
                elif err > prev:
                    # safeguard: back off towards plain Sinkhorn, which always converges
                    om = 1.0 + 0.5 * (om - 1.0)
                prev = err
        f += e * np.log(u)
        g += e * np.log(v)
        if e == eps or it >= max_iter:
            break
        e = max(e / 4.0, eps)
    if err > tol:
        raise ConvergenceError(f"Sinkhorn stopped after {it} iterations, marginal error {err:.3g}",
                               residual=err)
    P = np.exp((f[:, None] + g[None, :] - C) / eps)
    P = _round_to_feasible(P, a, b) * ma
    primal = float(np.sum(P * C))
    # c-transform of f gives a feasible dual pair
    g_feas = np.min(C - f[:, None], axis=0)
    dual = float(ma * (np.dot(a, f) + np.dot(b, g_feas)))
    I, J = np.nonzero(P > 0)
    plan = TransportPlan(source, target, I, J, P[I, J])
    return KRResult(primal / volume, delta, plan, (primal - dual) / max(scale * ma, 1e-300),
                    primal, volume, "sinkhorn", it, {"eps": eps, "marginal_error": err})


def kr_distance(f1: CellField, f2: CellField, delta: float, solver: str = "exact",
                **kwargs) -> KRResult:
    """D_delta between two fields on one grid, via their difference."""
    pos, neg = split_difference(f1, f2)
    if delta < 1e-6 * f1.grid.h:
        warnings.warn(f"delta = {delta:.3g} is far below the cell size; ill-conditioned",
                      stacklevel=2)
    vol = f1.grid.volume
    if solver == "exact":
        return kr_exact(pos, neg, delta, vol, **kwargs)
    if solver == "entropic":
        return kr_entropic(pos, neg, delta, volume=vol, **kwargs)
    raise InvalidArgument(f"unknown solver {solver!r}")


# --- mixing functionals ----------------------------------------------------


def coarse_grain(f: CellField, block: int) -> CellField:
    """Average ``block**dim`` cells into one (cell counts must be divisible)."""
    if block == 1:
        return f
    g = f.grid
    if any(n % block for n in g.cells):
        raise InvalidArgument(f"block {block} does not divide cell counts {g.cells}")
    cells = tuple(n // block for n in g.cells)
    shape = []
    for n in cells:
        shape += [n, block]
    vals = np.asarray(f.values).reshape(shape).mean(axis=tuple(range(1, 2 * g.dim, 2)))
    grid = Grid(g.lower, g.upper, cells, g.periodic)
    return CellField(grid, vals, f.time)


def _zero_mean_check(f: CellField):
    vals = np.asarray(f.values)
    amp = float(np.abs(vals).max())
    if amp == 0:
        raise DegenerateDistance("field vanishes identically")
    if abs(vals.mean()) > BALANCE_TOL * amp:
        raise InvalidArgument(f"field must have zero mean, got {vals.mean():.3g}")


def mixing_plan(f: CellField, block: int = 1, **kwargs) -> KRResult:
    """Optimal plan between rho+ and rho- for the cost log|x - y|."""
    f = coarse_grain(f, block)
    _zero_mean_check(f)
    pos, neg = split_difference(f)
    return kr_exact(pos, neg, None, f.grid.volume, **kwargs)


def mixing_scale(f: CellField, block: int = 1, normalization: str | None = None,
                 **kwargs) -> float:
    """M(rho) = exp of the averaged log-distance under the optimal plan.

    ``normalization="mass"`` divides the exponent by the plan mass (M is a
    length); ``"domain"`` divides by |Omega| instead.  ``block`` coarse-grains
    the field first.
    """
    res = mixing_plan(f, block, **kwargs)
    norm = normalization or MIXING_NORMALIZATION
    if norm == "mass":
        return math.exp(res.cost / res.plan_mass)
    if norm == "domain":
        return math.exp(res.cost / res.volume)
    raise InvalidArgument(f"unknown normalization {norm!r}")


def mixing_limit_estimate(f: CellField, delta: float, normalization: str = "mass") -> float:
    """Finite-delta proxy for M(rho) built from D_delta.

    ``"mass"``: exp(D_delta |Omega| / plan mass + log delta), which tends to
    the mass-normalised M as delta -> 0.  ``"l1"``: exp(D_delta + log(delta)
    ||rho||_{L^1}) with ||rho||_{L^1} volume-averaged, the literal form.
    """
    _zero_mean_check(f)
    pos, neg = split_difference(f)
    res = kr_exact(pos, neg, delta, f.grid.volume)
    if normalization == "mass":
        return math.exp(res.value * res.volume / res.plan_mass + math.log(delta))
    if normalization == "l1":
        l1 = float(np.mean(np.abs(f.values)))
        return math.exp(res.value + math.log(delta) * l1)
    raise InvalidArgument(f"unknown normalization {normalization!r}")


def _poisson_symbol(n, h, periodic):
    k = np.arange(n)
    if periodic:
        return (2 - 2 * np.cos(2 * np.pi * k / n)) / h**2
    return (2 - 2 * np.cos(np.pi * k / n)) / h**2


def neg_sobolev(f: CellField, boundary: str | None = None) -> float:
    """|grad^{-1} rho|_{L^2}: solve -Lap psi = rho (5-point stencil) and return
    the volume-averaged L^2 norm of the face-difference gradient of psi.

    ``boundary`` is "periodic" or "neumann"; by default it follows the grid
    (all axes periodic -> periodic, otherwise Neumann).
    """
    g = f.grid
    if boundary is None:
        boundary = "periodic" if all(g.periodic) else "neumann"
    if boundary not in ("periodic", "neumann"):
        raise InvalidArgument(f"unknown boundary {boundary!r}")
    rho = np.asarray(f.values, float)
    amp = max(float(np.abs(rho).max()), 1.0)
    if abs(rho.mean()) > BALANCE_TOL * amp:
        raise InvalidArgument(f"field must have zero mean, got {rho.mean():.3g}")
    if not np.any(rho):
        return 0.0
    per = boundary == "periodic"
    lam = 0.0
    for a in range(g.dim):
        s = _poisson_symbol(g.cells[a], g.spacing[a], per)
        lam = lam + s.reshape([-1 if b == a else 1 for b in range(g.dim)])
    lam = np.broadcast_to(lam, rho.shape).copy()
    lam.flat[0] = 1.0
    if per:
        hat = fftn(rho) / lam
        hat.flat[0] = 0.0
        psi = ifftn(hat).real
    else:
        hat = dctn(rho, type=2, norm="ortho") / lam
        hat.flat[0] = 0.0
        psi = idctn(hat, type=2, norm="ortho")
    total = 0.0
    for a in range(g.dim):
        if per:
            d = np.roll(psi, -1, axis=a) - psi
        else:
            d = np.diff(psi, axis=a)
        total += float(np.sum((d / g.spacing[a]) ** 2))
    return math.sqrt(total * g.cell_volume / g.volume)


def bv_seminorm(f: CellField) -> float:
    """2 |interface between the phases| / |Omega| for a field with values +-1.

    Wrap-around faces count on periodic axes.
    """
    g = f.grid
    v = np.asarray(f.values)
    if not np.all(np.abs(np.abs(v) - 1.0) <= 1e-12):
        raise InvalidArgument("bv_seminorm expects a two-phase field with values +-1")
    s = np.sign(v)
    area = 0.0
    for a in range(g.dim):
        if g.periodic[a] and g.cells[a] > 1:
            jumps = np.count_nonzero(np.roll(s, -1, axis=a) != s)
        else:
            jumps = np.count_nonzero(np.diff(s, axis=a))
        area += jumps * g.face_area(a)
    return 2.0 * area / g.volume


def two_phase(f: CellField) -> CellField:
    """Threshold at zero: +1 where rho >= 0, -1 elsewhere."""
    return f.with_values(np.where(np.asarray(f.values) >= 0, 1.0, -1.0))
