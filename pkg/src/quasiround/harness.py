"""End-to-end convergence experiment and the packing without round exhaustions."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .certify import verify_step
from .exhaust import (DEFAULT_RESOLUTION, CircleDomainSpec, ExhaustionError, build_step,
                      initial_step)
from .geometry import Disk, GeometryError, circle_points, hausdorff_distance
from .uniformize import DEFAULT_TOL, FinitelyConnectedDomain, UniformizeError, koebe_uniformize

log = logging.getLogger(__name__)

REPORT_THRESHOLD = 0.05
TREND_SLACK = 1e-3


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PipelineReport:
    spec: CircleDomainSpec
    records: list
    normalization: tuple
    threshold: float = REPORT_THRESHOLD
    slack: float = TREND_SLACK
    steps: list = field(default_factory=list, repr=False)
    maps: list = field(default_factory=list, repr=False)
    test_points: np.ndarray | None = field(default=None, repr=False)

    @property
    def verdicts(self) -> dict:
        ok = [r for r in self.records if r.get("error") is None]
        dev = [r["deviation"] for r in ok if r["j"] >= 2]
        hd = [r["hausdorff"] for r in ok if r["j"] >= 2]
        return {
            "all_steps_ok": len(ok) == len(self.records) and bool(self.records),
            "deviation_nonincreasing": all(b <= a + self.slack for a, b in zip(dev[:-1], dev[1:])),
            "hausdorff_nonincreasing": all(b <= a + self.slack for a, b in zip(hd[:-1], hd[1:])),
            "final_deviation_below_threshold": bool(ok) and ok[-1]["deviation"] < self.threshold,
        }

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {"records": self.records, "verdicts": self.verdicts, "threshold": self.threshold,
                "slack": self.slack, "normalization": [str(a) if not np.isfinite(a) else a
                                                       for a in self.normalization]}


def choose_normalization(spec: CircleDomainSpec, grid: int = 41) -> tuple:
    """``(inf, a2, a3)``: grid points at distance > 1 from the complement (hence in every
    ``Omega_j``) maximizing boundary distance, then the smaller of boundary and mutual distance."""
    c, r = spec.centers(), spec.radii()
    lo = (c.real - r).min() - 1.5, (c.imag - r).min() - 1.5
    hi = (c.real + r).max() + 1.5, (c.imag + r).max() + 1.5
    xs, ys = np.linspace(lo[0], hi[0], grid), np.linspace(lo[1], hi[1], grid)
    pts = (xs[None, :] + 1j * ys[:, None]).ravel()
    d = spec.complement_distance(pts)
    pts, d = pts[d > 1.0], d[d > 1.0]
    if len(pts) < 2:
        raise GeometryError("no normalization points found")
    # cap the boundary distance so points stay near the configuration
    score = np.minimum(d, 2.0)
    a2 = pts[np.lexsort((pts.imag, pts.real, -score))[0]]
    score2 = np.minimum(score, np.abs(pts - a2))
    a3 = pts[np.lexsort((pts.imag, pts.real, -score2))[0]]
    return (np.inf, complex(a2), complex(a3))


def _test_points(spec, step1, n, seed):
    rng = np.random.default_rng(seed)
    c, r = spec.centers(), spec.radii()
    lo = complex((c.real - r).min() - 0.5, (c.imag - r).min() - 0.5)
    hi = complex((c.real + r).max() + 0.5, (c.imag + r).max() + 0.5)
    out = []
    for _ in range(100):
        z = lo.real + (hi.real - lo.real) * rng.random(4 * n) + 1j * (lo.imag + (hi.imag - lo.imag) * rng.random(4 * n))
        z = z[~step1.complement_contains(z) & (spec.complement_distance(z) > 0.1)]
        out.extend(z.tolist())
        if len(out) >= n:
            return np.array(out[:n])
    raise GeometryError("could not place test points")


def _target_boundary(spec, members, n=256):
    comps = spec.components
    pts = [circle_points(comps[m].center, comps[m].radius, n) if comps[m].radius > 0
           else np.array([comps[m].center]) for m in members]
    return np.concatenate(pts)


def run_pipeline(spec: CircleDomainSpec, J: int = 4, tol: float = DEFAULT_TOL,
                 resolution: int = DEFAULT_RESOLUTION, normalization=None, n_test: int = 50,
                 seed: int = 0, threshold: float = REPORT_THRESHOLD) -> PipelineReport:
    """Exhaust, uniformize each step and record how far ``f_j`` is from the identity."""
    if J < 1:
        raise ValueError("J must be at least 1")
    if not spec.components:
        raise ExhaustionError("the spec has no complementary components")
    if normalization is None:
        normalization = choose_normalization(spec)
    report = PipelineReport(spec, [], tuple(normalization), threshold)
    prev = initial_step(spec)
    for j in range(1, J + 1):
        rec = {"j": j, "error": None}
        report.records.append(rec)
        t0 = time.perf_counter()
        try:
            step = build_step(spec, prev, j, resolution)
            check = verify_step(spec, prev, step)
            if not check.ok:
                raise ExhaustionError("verification failed: " + "; ".join(check.failures), j)
        except (ExhaustionError, GeometryError) as exc:
            rec["error"] = f"exhaust: {exc}"
            break
        rec.update(delta=step.delta, components=len(step.components), max_K=step.max_K)
        report.steps.append(step)
        if report.test_points is None:
            report.test_points = _test_points(spec, step, n_test, seed)
        try:
            f = koebe_uniformize(FinitelyConnectedDomain.from_step(step), normalization, tol=tol)
        except (UniformizeError, GeometryError) as exc:
            rec["error"] = f"uniformize: {exc}"
            break
        report.maps.append(f)
        z = report.test_points
        hd = []
        for k, comp in enumerate(step.components):
            d = f.component_images[k]
            hd.append(hausdorff_distance(circle_points(d.center, d.radius, 256),
                                         _target_boundary(spec, comp.members)))
        rec.update(residual=max(f.residuals.values()), deviation=float(np.abs(f(z) - z).max()),
                   hausdorff=max(hd), osculations=len(f.chain), seconds=time.perf_counter() - t0)
        log.info("step %d: deviation %.3g, hausdorff %.3g", j, rec["deviation"], rec["hausdorff"])
        prev = step
    return report


# ---------------------------------------------------------------------------
# Packing without infinitesimally round exhaustions
# ---------------------------------------------------------------------------

LATERAL = complex(math.sqrt(21) / 9, 8 / 9)  # tangent to the central disks of radii 1 and 1/3


def counterexample_disks(k: float = math.inf, depth: int = 6, top: int = 2) -> list[Disk]:
    """Central disks ``D(2 i 3^-n, 3^-n)`` for ``-top <= n <= depth`` and the lateral disks of
    radius ``2 3^-(n+2)`` tangent to consecutive central ones, in four rotated copies, each
    shrunk by ``1 - 1/k`` about its center."""
    if not (k >= 2) or depth < 1:
        raise ValueError("need k >= 2 and depth >= 1")
    s = 1.0 - 1.0 / k
    base = []
    for n in range(-top, depth + 1):
        q = 3.0 ** -n
        base.append((2j * q, q))
        if n < depth:
            base.append((q * LATERAL, 2 * q / 9))
            base.append((q * complex(-LATERAL.real, LATERAL.imag), 2 * q / 9))
    out = []
    for rot in (1, 1j, -1, -1j):
        out.extend(Disk(rot * c, s * r) for c, r in base)
    return out


def generate_counterexample(k: float, depth: int, top: int = 2) -> CircleDomainSpec:
    """The circle domain ``G_k`` truncated to ``depth`` scale levels (``k = inf`` gives the
    touching packing of ``G_inf``)."""
    disks = counterexample_disks(k, depth, top)
    return CircleDomainSpec.build(disks, [0j], tangent_ok=math.isinf(k))


def tangency_table(depth: int = 6, top: int = 2) -> list[dict]:
    """Center distances of touching pairs in the unshrunk upper packing versus radius sums."""
    rows = []
    for n in range(-top, depth):
        q = 3.0 ** -n
        big, small = Disk(2j * q, q), Disk(2j * q / 3, q / 3)
        rows.append({"pair": f"central {n}/{n + 1}", "distance": abs(big.center - small.center),
                     "expected": big.radius + small.radius})
        for side in (1, -1):
            lat = Disk(q * complex(side * LATERAL.real, LATERAL.imag), 2 * q / 9)
            for other in (big, small):
                rows.append({"pair": f"lateral {n}{'+' if side > 0 else '-'} to r={other.radius:.6g}",
                             "distance": abs(lat.center - other.center),
                             "expected": lat.radius + other.radius})
    for r in rows:
        r["error"] = abs(r["distance"] - r["expected"])
    return rows


def circle_avoidance_experiment(disks, n_centers: int = 50, n_radii: int = 50) -> dict:
    """Penetration of candidate circles surrounding the origin into the open disks.

    Candidates have diameters ``1/3 + (2/3) i / n_radii`` (``i = 1..n_radii``) and centers on an
    ``n_centers x n_centers`` grid of ``[-1/2, 1/2]^2`` with ``|c| < r``. The penetration of a
    circle is ``max_m (r_m - dist(c_m, circle))``; a positive value means it enters some disk.
    """
    if isinstance(disks, CircleDomainSpec):
        disks = [d for d in disks.disks]
    c = np.array([d.center for d in disks])
    rad = np.array([d.radius for d in disks])
    g = np.linspace(-0.5, 0.5, n_centers)
    centers = (g[None, :] + 1j * g[:, None]).ravel()
    worst, worst_at, count = np.inf, None, 0
    for i in range(1, n_radii + 1):
        r = (1 / 3 + (2 / 3) * i / n_radii) / 2
        cc = centers[np.abs(centers) < r]
        if len(cc) == 0:
            continue
        count += len(cc)
        pen = (rad[None, :] - np.abs(np.abs(c[None, :] - cc[:, None]) - r)).max(axis=1)
        m = int(np.argmin(pen))
        if pen[m] < worst:
            worst, worst_at = float(pen[m]), (complex(cc[m]), r)
    return {"candidates": count, "min_penetration": worst, "worst_center": worst_at[0],
            "worst_radius": worst_at[1], "all_blocked": worst > 0}
