"""Invariant suite behind ``continuity-lab validate``.

Each check returns a :class:`Check` with a pass flag and a short detail
string.  ``quick=True`` shrinks the random sample counts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import CellField, builtin_velocity, cell_average, make_grid
from .lagrangian import FlowMap, flow, flow_gradient_fd, jacobian_along_flow, two_particle_log_ratio
from .solver import lq_bound, solve_advection_diffusion, solve_upwind
from .transport import DiscreteMeasure, cost_matrix, kr_entropic, kr_exact

#: slack in log space for the trajectory sandwich (round-off near equality)
GRONWALL_SLACK = 1e-8


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


# --- transport oracles -----------------------------------------------------


def vertex_plans(a, b):
    """Yield every vertex of the transportation polytope with marginals (a, b).

    Vertices are the feasible plans supported on spanning trees of the
    complete bipartite graph; flows on a tree are fixed by peeling leaves.
    """
    n, m = len(a), len(b)
    edges = [(i, j) for i in range(n) for j in range(m)]
    need = n + m - 1

    def find(parent, z):
        while parent[z] != z:
            z = parent[z]
        return z

    def tree_flow(tree):
        supply = list(a) + [-x for x in b]
        adj = {z: [] for z in range(n + m)}
        for e, (i, j) in enumerate(tree):
            adj[i].append(e)
            adj[n + j].append(e)
        flow_ = [0.0] * len(tree)
        done = [False] * len(tree)
        deg = {z: len(adj[z]) for z in adj}
        leaves = [z for z in adj if deg[z] == 1]
        while leaves:
            z = leaves.pop()
            if deg[z] != 1:
                continue
            e = next(e for e in adj[z] if not done[e])
            done[e] = True
            i, j = tree[e]
            other = n + j if z == i else i
            f = supply[z] if z < n else -supply[z]
            flow_[e] = f
            supply[other] += f if z < n else -f
            supply[z] = 0.0
            deg[z] -= 1
            deg[other] -= 1
            if deg[other] == 1:
                leaves.append(other)
        return flow_

    def rec(start, chosen, parent):
        if len(chosen) == need:
            f = tree_flow(chosen)
            if min(f) >= -1e-12:
                P = np.zeros((n, m))
                for (i, j), x in zip(chosen, f):
                    P[i, j] = max(x, 0.0)
                yield P
            return
        for k in range(start, len(edges)):
            if len(edges) - k < need - len(chosen):
                return
            i, j = edges[k]
            ri, rj = find(parent, i), find(parent, n + j)
            if ri == rj:
                continue
            p2 = list(parent)
            p2[ri] = rj
            yield from rec(k + 1, chosen + [(i, j)], p2)

    yield from rec(0, [], list(range(n + m)))


def brute_force_cost(src: DiscreteMeasure, tgt: DiscreteMeasure, delta) -> float:
    C = cost_matrix(src, tgt, delta)
    return min(float(np.sum(P * C)) for P in vertex_plans(src.weights, tgt.weights))


def _random_instance(rng, max_points=4, dim=2):
    n, m = rng.integers(1, max_points + 1, size=2)
    a = rng.random(n) + 0.05
    b = rng.random(m) + 0.05
    b *= a.sum() / b.sum()
    return (DiscreteMeasure(rng.random((n, dim)), a), DiscreteMeasure(rng.random((m, dim)), b))


def check_ot_oracle(count=200, seed=0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        s, t = _random_instance(rng)
        delta = float(10 ** rng.uniform(-3, 0))
        worst = max(worst, abs(kr_exact(s, t, delta).cost - brute_force_cost(s, t, delta)))
    return Check("ot_exact_vs_vertex_enumeration", worst <= 1e-9, f"max |diff| = {worst:.2e}")


def _triple(rng, max_points=30):
    n = int(rng.integers(3, max_points + 1))
    pts = rng.random((n, 2))
    ws = [rng.random(n) * (rng.random(n) < 0.7) + 1e-3 for _ in range(3)]
    ws = [w / w.sum() for w in ws]
    return pts, ws


def _kr_between(pts, wa, wb, delta):
    d = wa - wb
    s = DiscreteMeasure(pts, np.clip(d, 0, None))
    t = DiscreteMeasure(pts, np.clip(-d, 0, None))
    if len(s) == 0 and len(t) == 0:
        return 0.0
    t = t.scaled(s.mass / t.mass)
    return kr_exact(s, t, delta).value


def check_metric_axioms(count=500, seed=1, delta=0.05) -> Check:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        pts, (a, b, c) = _triple(rng)
        ab, ba = _kr_between(pts, a, b, delta), _kr_between(pts, b, a, delta)
        bc, ac = _kr_between(pts, b, c, delta), _kr_between(pts, a, c, delta)
        aa = _kr_between(pts, a, a, delta)
        bad += abs(ab - ba) > 1e-9
        bad += ac > ab + bc + 1e-9
        bad += abs(aa) > 1e-9
    return Check("kr_metric_axioms", bad == 0, f"{bad} violations in {count} triples")


def check_entropic(count=50, seed=2, delta=0.01) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n, m = rng.integers(100, 201, size=2)
        s = DiscreteMeasure(rng.random((n, 2)), rng.random(n))
        t = DiscreteMeasure(rng.random((m, 2)), rng.random(m))
        s, t = s.scaled(1 / s.mass), t.scaled(1 / t.mass)
        worst = max(worst, abs(kr_entropic(s, t, delta).value - kr_exact(s, t, delta).value))
    return Check("kr_entropic_vs_exact", worst <= 1e-3, f"max |diff| = {worst:.2e}")


# --- solver invariants -----------------------------------------------------


def check_mass_conservation(steps=10_000, seed=3) -> Check:
    rng = np.random.default_rng(seed)
    grid = make_grid([1.0], 64)
    u = builtin_velocity("oscillating", k=2)
    rho = CellField(grid, rng.random(64))
    dt = 0.45 * grid.h / u.sup_norm
    rep = solve_upwind(u, rho, steps * dt * (1 - 1e-9))
    drift = rep.mass_drift()
    return Check("upwind_mass_conservation", drift <= 1e-12 and rep.steps >= steps,
                 f"{rep.steps} steps, relative drift {drift:.2e}")


def _torus2(n):
    return make_grid([(0.0, 1.0), (0.0, 1.0)], n, periodic=True)


def check_monotonicity(seed=4) -> Check:
    rng = np.random.default_rng(seed)
    cases = [
        ("constant", make_grid([1.0], 128, periodic=True), builtin_velocity("constant", c=1.0)),
        ("shear_x", _torus2(32), builtin_velocity("shear_x", A=1.0, m=1)),
        ("shear_y", _torus2(32), builtin_velocity("shear_y", A=0.7, m=2)),
        ("alternating_shear", _torus2(32), builtin_velocity("alternating_shear", A=1.0, m=1, period=1.0)),
    ]
    bad = []
    for name, grid, u in cases:
        rho = CellField(grid, rng.standard_normal(grid.shape))
        rep = solve_upwind(u, rho, 1.0)
        tol = 1e-12 * float(np.abs(rho.values).max())
        if np.any(np.diff(rep.vmin) < -tol) or np.any(np.diff(rep.vmax) > tol):
            bad.append(name)
    return Check("upwind_monotonicity", not bad, "violations: " + (", ".join(bad) or "none"))


def check_lq_bound() -> Check:
    grid = make_grid([1.0], 256)
    u = builtin_velocity("oscillating", k=4)
    rho = cell_average(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), grid)
    rep = solve_upwind(u, rho, 1.0)
    ok = all(l2 <= lq_bound(u, rho, t, 2) * (1 + 1e-12) for t, l2 in zip(rep.times, rep.l2))
    return Check("lq_bound_q2", ok, f"max ||rho||_2 = {rep.l2.max():.4f}, bound at T = {lq_bound(u, rho, 1.0, 2):.4f}")


def check_entropy_decay() -> Check:
    grid = _torus2(32)
    u = builtin_velocity("shear_x", A=1.0, m=1)
    rho = cell_average(lambda x, y: 1 + 0.8 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y), grid)
    rep = solve_advection_diffusion(u, 1e-3, rho, 0.5)
    inc = float(np.diff(rep.entropy).max())
    return Check("entropy_non_increasing", inc <= 1e-15, f"largest increase {inc:.2e}")


def check_neumann_decay() -> Check:
    grid = make_grid([1.0], 256)
    u = builtin_velocity("zero", dim=1)
    kappa = 0.01
    rho = cell_average(lambda x: 1 + np.cos(np.pi * x), grid)
    rep = solve_advection_diffusion(u, kappa, rho, 1.0)
    amp = float(np.abs(rep.final.values - 1).max() / np.abs(rho.values - 1).max())
    expect = math.exp(-kappa * math.pi**2)
    err = abs(amp / expect - 1)
    return Check("neumann_mode_decay", err <= 0.02, f"factor {amp:.5f} vs {expect:.5f}")


# --- Lagrangian invariants -------------------------------------------------


def lipschitz_catalog():
    """(field, sampling box) for every catalog entry with a finite Lipschitz bound."""
    box1 = [(0.0, 1.0)]
    box2 = [(0.0, 1.0), (0.0, 1.0)]
    return [
        (builtin_velocity("zero", dim=2), box2),
        (builtin_velocity("constant", c=(0.3, -0.2)), box2),
        (builtin_velocity("linear", a=1.0), [(0.1, 0.3)]),
        (builtin_velocity("oscillating", k=4), box1),
        (builtin_velocity("rigid_rotation", omega=1.3), box2),
        (builtin_velocity("shear_x", A=1.0, m=1), box2),
        (builtin_velocity("shear_y", A=0.5, m=2), box2),
        (builtin_velocity("alternating_shear", A=1.0, m=1, period=1.0), box2),
    ]


def check_gronwall(pairs=1000, t=1.0, seed=5) -> Check:
    rng = np.random.default_rng(seed)
    bad = []
    for u, box in lipschitz_catalog():
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        x = lo + (hi - lo) * rng.random((pairs, len(box)))
        y = lo + (hi - lo) * rng.random((pairs, len(box)))
        r = np.asarray(two_particle_log_ratio(FlowMap(u, 1e-2), x, y, t)).ravel()
        L = u.lipschitz * t
        if np.any(np.abs(r) > L + GRONWALL_SLACK):
            bad.append(u.name)
    return Check("gronwall_sandwich", not bad, "violations: " + (", ".join(bad) or "none"))


def check_jacobian(seed=6) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for u, box in lipschitz_catalog():
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        x = lo + (hi - lo) * rng.random((20, len(box)))
        fm = FlowMap(u, 1e-3)
        J, _ = jacobian_along_flow(fm, x, 1.0)
        det = np.linalg.det(flow_gradient_fd(fm, x, 1.0))
        worst = max(worst, float(np.abs(np.ravel(J) - det).max()))
    return Check("jacobian_vs_fd_determinant", worst <= 1e-4, f"max |diff| = {worst:.2e}")


def check_tan_closed_form(k=3, t=1.0) -> Check:
    x = (np.arange(200) + 0.5) / 200
    x = x[np.abs(np.mod(x * k, 1) - 0.5) > 0.05]
    phi = np.asarray(flow(FlowMap(builtin_velocity("oscillating", k=k), 1e-3), x, t))
    err = float(np.abs(np.tan(np.pi * k * phi) - math.exp(t) * np.tan(np.pi * k * x)).max())
    return Check("oscillating_flow_closed_form", err <= 1e-6, f"max error {err:.2e}")


def run_suite(quick: bool = False) -> list[Check]:
    n = (lambda full, small: small if quick else full)
    jobs: list[tuple[str, Callable[[], Check]]] = [
        ("ot", lambda: check_ot_oracle(n(200, 20))),
        ("metric", lambda: check_metric_axioms(n(500, 40))),
        ("entropic", lambda: check_entropic(n(50, 3))),
        ("mass", lambda: check_mass_conservation(n(10_000, 1_000))),
        ("monotone", check_monotonicity),
        ("lq", check_lq_bound),
        ("entropy", check_entropy_decay),
        ("neumann", check_neumann_decay),
        ("gronwall", lambda: check_gronwall(n(1000, 100))),
        ("jacobian", check_jacobian),
        ("tan", check_tan_closed_form),
    ]
    out = []
    for _, job in jobs:
        t0 = time.perf_counter()
        c = job()
        c.seconds = time.perf_counter() - t0
        out.append(c)
    return out
