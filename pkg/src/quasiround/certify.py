"""Checks of the inclusions promised by an exhaustion step.

Every check is either an exact polygon predicate or a deterministic sample test; grids use
mesh delta/8 and are laid out locally around components of size O(delta), where a global grid
would be astronomically large.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely

from .exhaust import K_MAX, CircleDomainSpec, ExhaustionStep
from .geometry import DEFAULT_RESOLUTION, circle_points, polygons_disjoint, region_gap

GRID_CELLS = 96  # cap on grid points per axis for local grids


@dataclass
class CertReport:
    j: int
    checks: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool, detail: str = ""):
        prev = self.checks.get(name)
        if prev is None or prev[0]:
            self.checks[name] = (bool(ok), detail)

    @property
    def ok(self) -> bool:
        return all(v[0] for v in self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [f"{k}: {v[1]}" for k, v in self.checks.items() if not v[0]]


def _local_grid(bounds, mesh: float) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    nx = min(GRID_CELLS, int(math.ceil((x1 - x0) / mesh)) + 1)
    ny = min(GRID_CELLS, int(math.ceil((y1 - y0) / mesh)) + 1)
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    return (xs[None, :] + 1j * ys[:, None]).ravel()


def verify_step(spec: CircleDomainSpec, prev: ExhaustionStep, step: ExhaustionStep,
                n: int = DEFAULT_RESOLUTION) -> CertReport:
    rep = CertReport(step.j)
    delta, j = step.delta, step.j
    comps = spec.components
    cen, rad = spec.centers(), spec.radii()
    mesh = delta / 8

    # certificates
    ks = []
    for c in step.components:
        ks.append(c.cert.K)
        rep.add("K<=43", c.cert.K <= K_MAX, f"K={c.cert.K:.4f}")
        rep.add("certificate", c.cert.verify(c.polygon, n), f"generator {c.generator_id}")
    rep.metrics["max_K"] = max(ks, default=1.0)
    rep.metrics["components"] = len(step.components)

    # Voronoi cell inclusions: B in V_B in D(z_B, r_B + 4 delta)
    kept = [cl for cl in step.cells if not cl.discarded]
    for cl in kept:
        g = cl.generator
        inside = cl.polygon.contains(circle_points(g.center, g.radius, n)).all()
        within = np.abs(cl.polygon.vertices - g.center).max() <= (g.radius + 4 * delta) * (1 + 1e-12)
        rep.add("cell inclusions", bool(inside and within), f"cell {cl.generator_id}")
        rep.add("cell radius bound", g.radius + 4 * delta <= 17 * g.radius * (1 + 1e-12), f"cell {cl.generator_id}")
    # q_B inclusions: D(z_B, r_B/2) in q_B in D(z_B, r_B + 5 delta)
    for cl in kept:
        q = step.q_regions[cl.generator_id]
        g = cl.generator
        inside = q.contains(circle_points(g.center, g.radius / 2, n)).all()
        within = np.abs(q.vertices - g.center).max() <= (g.radius + 5 * delta) * (1 + 1e-12)
        rep.add("q inclusions", bool(inside and within), f"q {cl.generator_id}")

    # kept cells pairwise disjoint on local grids
    if kept:
        shapes = [cl.polygon.shape for cl in kept]
        tree = shapely.STRtree(shapes)
        worst = 0
        for k, cl in enumerate(kept):
            if cl.generator.radius > 16 * delta:
                continue
            z = _local_grid(shapes[k].bounds, mesh)
            count = np.zeros(len(z), int)
            for i in tree.query(shapes[k]):
                count += shapely.contains_xy(shapes[i], z.real, z.imag)
            worst = max(worst, int(count.max()))
        rep.add("cells disjoint", worst <= 1, f"max multiplicity {worst}")

    # components: disjoint closures, boundaries in Omega, nested in Omega_{j-1}
    polys = step.polygons
    rep.add("components disjoint", polygons_disjoint(polys))
    prev_polys = prev.polygons
    for c in step.components:
        clear = c.polygon.boundary_distance(cen) - rad
        rep.add("boundary in Omega", bool((clear > 0).all()), f"component {c.generator_id}")
        host = [p for p in prev_polys if p.shape.contains(c.polygon.shape)]
        rep.add("Omega_{j-1} in Omega_j", bool(host), f"component {c.generator_id}")
        if host:
            gap = region_gap(c.polygon, host[0], b_as_curve=True)
            rep.add("Omega_{j-1} in Omega_j", gap > 0, f"component {c.generator_id}")

    # Omega_j in Omega: every complement component inside exactly one p_B
    for i, comp in enumerate(comps):
        hosts = [c for c in step.components if c.polygon.contains(comp.center, closed=False)[0]]
        ok = len(hosts) == 1
        if ok and comp.radius > 0:
            ok = bool(hosts[0].polygon.boundary_distance(comp.center)[0] > comp.radius)
        rep.add("complement covered", ok, f"component {i}")

    # complement(Omega_j) in N_{1/j}(complement(Omega)); grid checks at mesh delta/8
    far = 0.0
    for c in step.components:
        v = c.polygon.vertices
        far = max(far, float(spec.complement_distance(v).max()))
        x0, y0, x1, y1 = c.polygon.bbox
        if max(x1 - x0, y1 - y0) <= GRID_CELLS * mesh:
            z = _local_grid((x0, y0, x1, y1), mesh)
            inp = c.polygon.contains(z)
            z = z[inp]
            if len(z):
                far = max(far, float(spec.complement_distance(z).max()))
                in_prev = np.zeros(len(z), bool)
                for p in prev_polys:
                    in_prev |= shapely.contains_xy(p.shape, z.real, z.imag)
                rep.add("grid: Omega_{j-1} in Omega_j", bool(in_prev.all()), f"component {c.generator_id}")
    rep.add("within 1/j of complement", far < 1.0 / j, f"max distance {far:.3g}")
    rep.metrics["max_distance_to_complement"] = far

    # grid samples of the small complement disks lie in the complement of Omega_j
    for i, comp in enumerate(comps):
        if 0 < comp.radius <= GRID_CELLS * mesh / 2:
            z = _local_grid((comp.center.real - comp.radius, comp.center.imag - comp.radius,
                             comp.center.real + comp.radius, comp.center.imag + comp.radius), mesh)
            z = z[np.abs(z - comp.center) <= comp.radius]
            rep.add("grid: complement covered", bool(step.complement_contains(z).all()), f"component {i}")
    return rep
