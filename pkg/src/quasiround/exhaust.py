"""Quasiround exhaustions of finite circle domains.

Step ``j`` turns the complement components of ``Omega_{j-1}`` into finitely many small
Jordan regions ``p_B`` around the complement of ``Omega``:

1. ``delta = min(1/j, dist(dOmega, dOmega_{j-1})) / 100``;
2. disks of radius >= delta/4 are kept as generators, everything else is covered by a
   packing of delta-disks (the 5r-cover);
3. disk-generated Voronoi cells are traced by ray marching from each generator center;
4. cells near ``Omega_{j-1}`` are dropped, the rest are translated by a common small vector so
   that no boundary touches the complement (q_B);
5. the q_B meeting the complement are shrunk by an inward offset (p_B).

Only generators near the degenerate part of the complement (points and disks smaller than
delta/4) are materialized; see ``MATERIAL_RADIUS``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .geometry import (DEFAULT_RESOLUTION, Disk, GeometryError, PolyJordan, QuasiroundCert,
                       as_points, circle_points, point_segment_distance, polygon_from_shape,
                       quasiround_certificate, region_gap, to_xy)

log = logging.getLogger(__name__)

K_MAX = 43.0
DELTA_DIVISOR = 100.0
# generators are materialized within this many deltas of the degenerate components
MATERIAL_RADIUS = 30.0
# cells are built for generators within this many deltas of a degenerate component
BUILD_RADIUS = 16.0
# Voronoi cells of large disks are capped at r + LARGE_CAP * delta
LARGE_CAP = 3.0
MAX_RAYS = 1 << 18
# relative separation slack of packed delta-disks; keeps neighbours resolvable in floating point
PACK_SLACK = 1e-3


class ExhaustionError(RuntimeError):
    """Construction failure; ``step`` is the exhaustion index when known."""

    def __init__(self, msg: str, step: int | None = None):
        self.step = step
        super().__init__(msg if step is None else f"step {step}: {msg}")


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CircleDomainSpec:
    """Complement of finitely many disjoint closed disks and points.

    ``tangent_ok`` admits touching disks (limit configurations such as the k = inf packing);
    such specs are not valid exhaustion input.
    """

    disks: tuple = ()
    points: tuple = ()
    infinity_interior: bool = True
    tangent_ok: bool = False

    def __post_init__(self):
        disks = tuple(d if isinstance(d, Disk) else Disk(*d) for d in self.disks)
        points = tuple(complex(p) for p in self.points)
        object.__setattr__(self, "disks", disks)
        object.__setattr__(self, "points", points)
        for d in disks:
            if d.radius <= 0:
                raise GeometryError("spec disks need positive radius; use points for radius 0")
        r = np.array([d.radius for d in disks])
        if len(r) > 1 and np.any(np.diff(r) > 0):
            raise GeometryError("disks must be sorted by decreasing radius")
        if not all(np.isfinite(p) for p in points):
            raise GeometryError("points must be finite")
        c = np.array([d.center for d in disks], dtype=complex)
        slack = 1e-12 if self.tangent_ok else 0.0
        if len(disks) > 1:
            gap = np.abs(c[:, None] - c[None, :]) - (r[:, None] + r[None, :])
            np.fill_diagonal(gap, np.inf)
            bad = gap <= 0 if not self.tangent_ok else gap < -slack
            if bad.any():
                i, k = np.argwhere(bad)[0]
                raise GeometryError(f"disks {i} and {k} are not disjoint")
        p = np.array(points, dtype=complex)
        if len(p) > 1:
            dp = np.abs(p[:, None] - p[None, :])
            np.fill_diagonal(dp, np.inf)
            if (dp == 0).any():
                raise GeometryError("points must be pairwise distinct")
        if len(p) and len(c):
            dd = np.abs(p[:, None] - c[None, :]) - r[None, :]
            if (dd <= 0).any():
                i, k = np.argwhere(dd <= 0)[0]
                raise GeometryError(f"point {i} lies in disk {k}")

    @classmethod
    def build(cls, disks: Sequence = (), points: Sequence = (), **kw) -> "CircleDomainSpec":
        """Constructor that sorts disks by decreasing radius (stable)."""
        ds = [d if isinstance(d, Disk) else Disk(*d) for d in disks]
        ds.sort(key=lambda d: -d.radius)
        return cls(tuple(ds), tuple(points), **kw)

    @property
    def components(self) -> tuple[Disk, ...]:
        """Complement components: disks first, then points as radius-0 disks."""
        return self.disks + tuple(Disk(p, 0.0) for p in self.points)

    @property
    def is_empty(self) -> bool:
        return not self.disks and not self.points

    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.components], dtype=complex)

    def radii(self) -> np.ndarray:
        return np.array([c.radius for c in self.components])

    def complement_distance(self, z) -> np.ndarray:
        """Distance to the complement (0 on it)."""
        z = as_points(z)
        if self.is_empty:
            return np.full(len(z), np.inf)
        d = np.abs(z[:, None] - self.centers()[None, :]) - self.radii()[None, :]
        return np.maximum(d.min(axis=1), 0.0)

    def in_domain(self, z) -> np.ndarray:
        z = as_points(z)
        if self.is_empty:
            return np.ones(len(z), bool)
        d = np.abs(z[:, None] - self.centers()[None, :]) - self.radii()[None, :]
        return (d > 0).all(axis=1)

    def component_gaps(self) -> np.ndarray:
        """Distance from each component to the nearest other component."""
        c, r = self.centers(), self.radii()
        if len(c) < 2:
            return np.full(len(c), np.inf)
        g = np.abs(c[:, None] - c[None, :]) - r[:, None] - r[None, :]
        np.fill_diagonal(g, np.inf)
        return g.min(axis=1)

    def scaled(self, factor: float, shift: complex = 0.0) -> "CircleDomainSpec":
        return CircleDomainSpec(tuple(Disk(factor * d.center + shift, abs(factor) * d.radius) for d in self.disks),
                                tuple(factor * p + shift for p in self.points),
                                self.infinity_interior, self.tangent_ok)


def random_spec(rng: np.random.Generator, n_disks: int, n_points: int, box: float = 2.0,
                rmin: float = 0.05, rmax: float = 0.4, min_gap: float = 0.05,
                tries: int = 10_000) -> CircleDomainSpec:
    """Random spec by rejection sampling: components pairwise at least ``min_gap`` apart."""
    cen: list[complex] = []
    rad: list[float] = []
    want = [float(rng.uniform(rmin, rmax)) for _ in range(n_disks)] + [0.0] * n_points
    for r in want:
        for _ in range(tries):
            z = complex(*rng.uniform(-box, box, 2))
            if all(abs(z - c) - r - rr >= min_gap for c, rr in zip(cen, rad)):
                cen.append(z)
                rad.append(r)
                break
        else:
            raise GeometryError("could not place all components; enlarge the box")
    disks = [Disk(c, r) for c, r in zip(cen, rad) if r > 0]
    points = [c for c, r in zip(cen, rad) if r == 0]
    return CircleDomainSpec.build(disks, points)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VoronoiCell:
    """Star-shaped Voronoi cell traced from its generator center."""

    generator: Disk
    generator_id: int
    angles: np.ndarray
    radii: np.ndarray
    polygon: PolyJordan
    cap: float
    clipped: bool = False
    discarded: bool = False

    def radial_profile(self, theta) -> np.ndarray:
        """Exit distance along direction ``theta`` (piecewise linear in the angle)."""
        a = np.append(self.angles, self.angles[0] + 2 * np.pi)
        r = np.append(self.radii, self.radii[0])
        return np.interp(np.mod(theta - self.angles[0], 2 * np.pi) + self.angles[0], a, r)


@dataclass(frozen=True, eq=False)
class Component:
    """One complement component ``p_B`` of an exhaustion step."""

    polygon: PolyJordan
    generator: Disk
    generator_id: int
    cert: QuasiroundCert
    members: tuple[int, ...] = ()
    q_region: PolyJordan | None = None
    margin: float = 0.0


@dataclass(frozen=True, eq=False)
class ExhaustionStep:
    """Step ``j`` of the exhaustion; ``j = 0`` is the initial complement of a large disk."""

    j: int
    delta: float
    components: tuple[Component, ...]
    large: tuple[int, ...] = ()
    cells: tuple[VoronoiCell, ...] = ()
    q_regions: dict = field(default_factory=dict)
    shift: complex = 0j
    generators: tuple[Disk, ...] = ()

    @property
    def polygons(self) -> list[PolyJordan]:
        return [c.polygon for c in self.components]

    @property
    def max_K(self) -> float:
        return max((c.cert.K for c in self.components), default=1.0)

    def component_of(self, member: int) -> int:
        """Index of the component containing spec component ``member`` (p_j(p))."""
        for i, c in enumerate(self.components):
            if member in c.members:
                return i
        raise KeyError(member)

    def complement_contains(self, z) -> np.ndarray:
        """Closed complement of Omega_j."""
        z = as_points(z)
        out = np.zeros(len(z), bool)
        for c in self.components:
            out |= c.polygon.contains(z)
        return out


def initial_step(spec: CircleDomainSpec, margin: float = 1.0, n: int = 1024) -> ExhaustionStep:
    """Omega_0: complement of a closed disk whose boundary stays ``margin`` away from the
    complement of Omega. The polygon circumscribes the circle so the margin is exact."""
    if spec.is_empty:
        raise ExhaustionError("nothing to exhaust: the complement is empty")
    c, r = spec.centers(), spec.radii()
    lo = (c - r).real.min() + 1j * (c - r * 1j).imag.min()
    hi = (c + r).real.max() + 1j * (c + r * 1j).imag.max()
    mid = 0.5 * (lo + hi)
    R = float((np.abs(c - mid) + r).max()) + margin
    poly = PolyJordan(circle_points(mid, R / math.cos(math.pi / n), n))
    big = Disk(mid, R)
    comp = Component(poly, big, 0, QuasiroundCert(mid, R, R / math.cos(math.pi / n)),
                     tuple(range(len(spec.components))))
    return ExhaustionStep(0, float("nan"), (comp,), generators=(big,))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def boundary_gap(spec: CircleDomainSpec, prev: ExhaustionStep) -> float:
    """dist(dOmega, dOmega_{j-1})."""
    cen, rad = spec.centers(), spec.radii()
    best = np.inf
    for comp in prev.components:
        d = comp.polygon.boundary_distance(cen) - rad
        best = min(best, float(d.min()))
    return best


def compute_delta(spec: CircleDomainSpec, prev: ExhaustionStep | float, j: int) -> float:
    """``min(1/j, dist(dOmega, dOmega_{j-1})) / 100``; ``prev`` may be the distance itself."""
    if j < 1:
        raise ExhaustionError("step index must be >= 1")
    dist = float(prev) if isinstance(prev, (int, float)) else boundary_gap(spec, prev)
    if not dist > 0:
        raise ExhaustionError("previous domain touches the boundary of Omega", j)
    return min(1.0 / j, dist) / DELTA_DIVISOR


def select_large_disks(spec: CircleDomainSpec, delta: float) -> list[Disk]:
    """Disks of radius >= delta/4 (a prefix of the sorted disk list)."""
    if delta <= 0:
        raise ExhaustionError("delta must be positive")
    return [d for d in spec.disks if d.radius >= delta / 4]


# -- 5r cover -----------------------------------------------------------------


def hex_lattice(bounds, spacing: float, origin: complex = 0j) -> np.ndarray:
    x0, y0, x1, y1 = bounds
    dy = spacing * math.sqrt(3) / 2
    j0 = math.floor((y0 - origin.imag) / dy) - 1
    j1 = math.ceil((y1 - origin.imag) / dy) + 1
    i0 = math.floor((x0 - origin.real) / spacing) - 2
    i1 = math.ceil((x1 - origin.real) / spacing) + 2
    jj, ii = np.mgrid[j0:j1 + 1, i0:i1 + 1]
    x = origin.real + (ii + 0.5 * (jj % 2)) * spacing
    y = origin.imag + jj * dy
    z = (x + 1j * y).ravel()
    keep = (z.real >= x0 - spacing) & (z.real <= x1 + spacing) & (z.imag >= y0 - spacing) & (z.imag <= y1 + spacing)
    return z[keep]


def greedy_packing(candidates: np.ndarray, delta: float, accepted: np.ndarray | None = None) -> np.ndarray:
    """Greedily accept candidate centers whose delta-disks are disjoint from earlier ones."""
    sep = 2.0 * delta * (1 + PACK_SLACK / 2)
    cell = sep
    grid: dict[tuple[int, int], list[complex]] = {}
    out = []

    def ok(z):
        kx, ky = math.floor(z.real / cell), math.floor(z.imag / cell)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for w in grid.get((kx + dx, ky + dy), ()):
                    if abs(z - w) <= sep:
                        return False
        return True

    def add(z):
        grid.setdefault((math.floor(z.real / cell), math.floor(z.imag / cell)), []).append(z)

    if accepted is not None:
        for z in accepted:
            add(complex(z))
    for z in as_points(candidates):
        z = complex(z)
        if ok(z):
            add(z)
            out.append(z)
    return np.array(out, dtype=complex)


def region_samples(region, mesh: float) -> np.ndarray:
    """Deterministic samples of a shapely geometry at spacing ``mesh``."""
    if region.is_empty:
        return np.zeros(0, complex)
    gt = region.geom_type
    if gt == "Point":
        return np.array([complex(region.x, region.y)])
    if gt in ("LineString", "LinearRing"):
        n = max(2, int(math.ceil(region.length / mesh)) + 1)
        pts = shapely.line_interpolate_point(region, np.linspace(0, region.length, n))
        return np.array([complex(p.x, p.y) for p in pts])
    if gt.startswith("Multi") or gt == "GeometryCollection":
        parts = [region_samples(g, mesh) for g in region.geoms]
        return np.concatenate(parts) if parts else np.zeros(0, complex)
    x0, y0, x1, y1 = region.bounds
    xs = np.arange(x0, x1 + mesh / 2, mesh)
    ys = np.arange(y0, y1 + mesh / 2, mesh)
    g = (xs[None, :] + 1j * ys[:, None]).ravel()
    inside = g[shapely.contains_xy(region, g.real, g.imag)]
    edge = region_samples(region.boundary, mesh)
    return np.concatenate([inside, edge])


def cover_5r(region, delta: float, seeds: Sequence[complex] = (), mesh: float | None = None) -> list[Disk]:
    """Pairwise disjoint closed delta-disks centered in ``region`` whose 5x enlargements cover it.

    ``region`` is a shapely geometry (point, curve or area). Candidates are tried in the
    order seeds, hexagonal lattice, region samples; the result is a greedy maximal packing
    with respect to the samples, which puts every sample within 2 delta of a center.
    """
    if delta <= 0:
        raise ExhaustionError("delta must be positive")
    mesh = mesh or delta / 4
    samples = region_samples(region, mesh)
    if len(samples) == 0:
        return []
    lattice = hex_lattice(region.bounds, 2 * delta * (1 + PACK_SLACK))
    lattice = lattice[shapely.contains_xy(region, lattice.real, lattice.imag)]
    seeds = as_points(seeds) if len(seeds) else np.zeros(0, complex)
    centers = greedy_packing(np.concatenate([seeds, lattice]), delta)
    centers = _fill_in(centers, samples, delta)
    return [Disk(c, delta) for c in centers]


def _fill_in(centers: np.ndarray, samples: np.ndarray, delta: float) -> np.ndarray:
    for _ in range(8):
        if len(centers):
            d, _ = cKDTree(to_xy(centers)).query(to_xy(samples))
            gaps = samples[d > 2 * delta]
        else:
            gaps = samples
        if len(gaps) == 0:
            break
        extra = greedy_packing(gaps, delta, accepted=centers)
        if len(extra) == 0:
            break
        centers = np.concatenate([centers, extra])
    return centers


# -- Voronoi cells ------------------------------------------------------------


def _ray_count(cap: float, delta: float | None, resolution: int) -> int:
    if delta is None or cap <= 0:
        return resolution
    # chord sag cap * (1 - cos(pi/N)) kept below delta/2
    need = math.ceil(math.pi * math.sqrt(cap / delta))
    n = max(resolution, need)
    return int(min(MAX_RAYS, 1 << int(math.ceil(math.log2(n)))))


def _pair_exit(zb, rb, u, cc, rr):
    """Exit parameter of the ray ``zb + t u`` against competitor disk ``(cc, rr)``.

    Along the ray, ``dist(w, B) = dist(w, B')`` reads ``t - rb = |t u - d| - r'`` with
    ``d = cc - zb``; its only root is ``t = (|d|^2 - s^2) / (2 (s + u.d))`` with ``s = r' - rb``,
    valid when ``s + u.d > 0`` (otherwise the competitor never wins along the ray). The
    difference of distances is monotone in t, so each ray exits exactly once (star-likeness).
    Padding entries (NaN centers) give ``inf``.
    """
    d = cc - zb
    s = rr - rb
    ud = u.real * d.real + u.imag * d.imag
    den = s + ud
    num = d.real ** 2 + d.imag ** 2 - s ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / (2 * den), np.inf)


def _active(zb, rb, cap, u, cc, rr):
    """Exit time and active competitor (-1 for the cap) for rays ``u`` of shape (k, n)."""
    tc = _pair_exit(zb[:, None, None], rb[:, None, None], u[:, :, None], cc[:, None, :], rr[:, None, :])
    m = tc.argmin(axis=2)
    tm = np.take_along_axis(tc, m[..., None], axis=2)[..., 0]
    capb = np.broadcast_to(cap[:, None], tm.shape)
    arg = np.where(tm < capb, m, -1)
    return np.minimum(tm, capb), arg


def _trace_cells(zb, rb, cap, cc, rr, n: int, iters: int = 48, passes: int = 4):
    """Ray-march ``k`` cells at once.

    ``cc, rr`` are (k, M) competitor arrays padded with NaN. Between consecutive rays whose
    active competitor differs the exact switching angle is found by bisection and inserted,
    so neighbouring polygons share their Voronoi vertices; repeated passes catch competitors
    active only between two rays. Returns a list of ``(angles, exit_times)`` per cell.
    """
    k = len(zb)
    ang0 = 2 * np.pi * np.arange(n) / n
    chunk = max(1, 3_000_000 // max(1, n * cc.shape[1]))
    t = np.empty((k, n))
    arg = np.empty((k, n), int)
    for s0 in range(0, k, chunk):
        sl = slice(s0, s0 + chunk)
        u = np.broadcast_to(np.exp(1j * ang0), (len(zb[sl]), n))
        t[sl], arg[sl] = _active(zb[sl], rb[sl], cap[sl], u, cc[sl], rr[sl])
    cid = np.repeat(np.arange(k), n)
    ang = np.tile(ang0, k)
    t, arg = t.ravel(), arg.ravel()

    def exit_of(cell, idx, theta):
        out = cap[cell].copy()
        m = idx >= 0
        if m.any():
            u = np.exp(1j * theta[m])
            e = _pair_exit(zb[cell[m]], rb[cell[m]], u, cc[cell[m], idx[m]], rr[cell[m], idx[m]])
            out[m] = np.minimum(out[m], e)
        return out

    for _ in range(passes):
        start = np.searchsorted(cid, np.arange(k))
        count = np.diff(np.append(start, len(cid)))
        pos = np.arange(len(cid)) - start[cid]
        nxt = np.where(pos + 1 < count[cid], np.arange(len(cid)) + 1, start[cid])
        lo = ang
        hi = np.where(ang[nxt] <= ang, ang[nxt] + 2 * np.pi, ang[nxt])
        sw = np.flatnonzero((arg != arg[nxt]) & (hi - lo > 1e-12))
        if len(sw) == 0:
            break
        cell = cid[sw]
        lo, hi = lo[sw].copy(), hi[sw].copy()
        both_cell = np.concatenate([cell, cell])
        both = np.concatenate([arg[sw], arg[nxt[sw]]])
        m = len(sw)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            e = exit_of(both_cell, both, np.concatenate([mid, mid]))
            left = e[:m] < e[m:]
            lo = np.where(left, mid, lo)
            hi = np.where(left, hi, mid)
        th = np.mod(0.5 * (lo + hi), 2 * np.pi)
        tt, aa = _active(zb[cell], rb[cell], cap[cell], np.exp(1j * th)[:, None], cc[cell], rr[cell])
        cid = np.concatenate([cid, cell])
        ang = np.concatenate([ang, th])
        t = np.concatenate([t, tt[:, 0]])
        arg = np.concatenate([arg, aa[:, 0]])
        order = np.lexsort((ang, cid))
        cid, ang, t, arg = cid[order], ang[order], t[order], arg[order]
        dup = np.concatenate([[False], (np.diff(ang) <= 1e-15) & (np.diff(cid) == 0)])
        cid, ang, t, arg = cid[~dup], ang[~dup], t[~dup], arg[~dup]
    bounds = np.searchsorted(cid, np.arange(k + 1))
    return [(ang[bounds[i]:bounds[i + 1]], t[bounds[i]:bounds[i + 1]]) for i in range(k)]


def build_voronoi_cells(generators: Sequence[Disk], prev_domain: ExhaustionStep | None = None,
                        delta: float | None = None, resolution: int = DEFAULT_RESOLUTION,
                        build: Sequence[int] | None = None, caps: Sequence[float] | None = None
                        ) -> list[VoronoiCell]:
    """Disk-generated Voronoi cells, traced by ray marching from each generator center.

    Each cell is capped at radius ``caps[i]`` (default ``r_B + 4 delta``; without ``delta``
    a cap beyond the generator hull). Cells of larger generators lose any sliver overlapping a
    neighbour of smaller radius (the chord approximation of the hyperbolic bisector bulges
    toward the smaller disk). ``build`` restricts which cells are traced; all generators
    still compete.
    """
    gens = list(generators)
    if not gens:
        return []
    c = np.array([g.center for g in gens], dtype=complex)
    r = np.array([g.radius for g in gens])
    tree = cKDTree(to_xy(c))
    rmax = float(r.max())
    # an overlapping pair is found from its larger member, querying radius 2 r
    for i in range(len(c)):
        near = np.array(tree.query_ball_point([c[i].real, c[i].imag], 2 * r[i] + 1e-300), dtype=int)
        near = near[near != i]
        if len(near) and (np.abs(c[near] - c[i]) <= r[near] + r[i]).any():
            k = int(near[np.abs(c[near] - c[i]) <= r[near] + r[i]][0])
            raise ExhaustionError(f"generators {min(i, k)} and {max(i, k)} overlap")
    if caps is None:
        if delta is not None:
            caps = r + 4 * delta
        else:
            span = float(np.abs(c - c.mean()).max() + rmax)
            caps = r + 4 * span + 1.0
    caps = np.asarray(caps, dtype=float)
    idx = list(range(len(gens))) if build is None else list(build)
    prev_regions = prev_domain.polygons if prev_domain is not None else []
    nbrs = []
    for i in idx:
        # a competitor can win inside D(z_B, cap) only if |c' - z_B| - r' <= 2 cap - r_B
        reach = 2 * caps[i] - r[i]
        near = np.array([k for k in tree.query_ball_point([c[i].real, c[i].imag], reach + rmax)
                         if k != i], dtype=int)
        if len(near):
            near = near[np.abs(c[near] - c[i]) - r[near] <= reach]
        nbrs.append(near)
    nrays = [_ray_count(float(caps[i]), delta, resolution) for i in idx]
    traced: dict[int, tuple] = {}
    keys = [(n, int(2 ** np.ceil(np.log2(max(1, len(nb)))))) for n, nb in zip(nrays, nbrs)]
    for key in sorted(set(keys)):
        n = key[0]
        group = [q for q, m in enumerate(keys) if m == key]
        width = max(1, max(len(nbrs[q]) for q in group))
        cc = np.full((len(group), width), np.nan + 0j)
        rr = np.zeros((len(group), width))
        for row, q in enumerate(group):
            cc[row, :len(nbrs[q])] = c[nbrs[q]]
            rr[row, :len(nbrs[q])] = r[nbrs[q]]
        gi = np.array([idx[q] for q in group])
        for q, res in zip(group, _trace_cells(c[gi], r[gi], caps[gi], cc, rr, n)):
            traced[q] = res
    cells = []
    for q, i in enumerate(idx):
        ang, t = traced[q]
        zb = c[i]
        v = zb + t * np.exp(1j * ang)
        # vertices closer than a few ulps (fine corner refinements at tiny delta) are merged,
        # otherwise round-off can fold the polygon
        eps = 64 * np.spacing(float(np.abs(v).max()))
        v = v[np.abs(v - np.roll(v, 1)) > eps]
        poly = PolyJordan(v, check=False)
        clipped = False
        if prev_regions:
            host = [p for p in prev_regions if p.contains(zb, closed=False)[0]]
            if not host:
                raise ExhaustionError(f"generator {i} is not inside the previous complement")
            if not host[0].shape.contains(poly.shape):
                clipped = True
                inter = shapely.intersection(poly.shape, host[0].shape)
                poly = polygon_from_shape(inter)
        cells.append(VoronoiCell(gens[i], int(i), ang, t, poly, float(caps[i]), clipped))
    return _trim_overlaps(cells)


def _trim_overlaps(cells: list[VoronoiCell]) -> list[VoronoiCell]:
    if len(cells) < 2:
        return cells
    shapes = [cl.polygon.shape for cl in cells]
    radii = np.array([cl.generator.radius for cl in cells])
    if np.all(radii == radii[0]):
        return cells
    tree = shapely.STRtree(shapes)
    out = []
    for k, cl in enumerate(cells):
        hits = [i for i in tree.query(shapes[k], predicate="intersects") if radii[i] < radii[k]]
        if not hits:
            out.append(cl)
            continue
        cut = shapely.difference(shapes[k], shapely.union_all([shapes[i] for i in hits]))
        if cut.is_empty:
            raise ExhaustionError(f"cell {cl.generator_id} vanished while trimming overlaps")
        if cut.geom_type == "MultiPolygon":
            lost = cut.area - max(g.area for g in cut.geoms)
            if lost > 1e-6 * cut.area:
                log.warning("cell %d split while trimming overlaps", cl.generator_id)
        out.append(replace(cl, polygon=polygon_from_shape(cut.buffer(0))))
    return out


def discard_near_boundary(cells: Sequence[VoronoiCell], prev_domain: ExhaustionStep | None,
                          delta: float, spec: CircleDomainSpec | None = None,
                          check_points: np.ndarray | None = None,
                          large_ids: Sequence[int] = ()) -> list[VoronoiCell]:
    """Mark cells whose closure meets the 10 delta-neighbourhood of Omega_{j-1}.

    ``check_points`` (samples of N_{10 delta}(complement)) must be covered by the surviving
    closed cells; cells of large disks (``large_ids``) must survive.
    """
    out = []
    prev_polys = prev_domain.polygons if prev_domain is not None else []
    # cheap lower bound: distance from the generator minus the cell's radial extent
    if prev_polys and cells:
        zg = np.array([cl.generator.center for cl in cells])
        dz = np.min([p.boundary_distance(zg) for p in prev_polys], axis=0)
        ext = np.array([float(np.abs(cl.polygon.vertices - cl.generator.center).max()) for cl in cells])
        sure = dz - ext >= 10 * delta
    else:
        sure = np.ones(len(cells), bool)
    for k, cl in enumerate(cells):
        bad = cl.clipped
        if not bad and prev_polys and not sure[k]:
            dmin = min(region_gap(cl.polygon, p, b_as_curve=True) for p in prev_polys)
            bad = dmin < 10 * delta
        out.append(replace(cl, discarded=bool(bad)))
    for cl in out:
        if cl.generator_id in large_ids and cl.discarded:
            raise ExhaustionError(f"large-disk cell {cl.generator_id} was discarded")
    if check_points is not None and len(check_points):
        z = as_points(check_points)
        covered = np.zeros(len(z), bool)
        ztree = cKDTree(to_xy(z))
        for cl in out:
            if not cl.discarded:
                g = cl.generator.center
                ext = float(np.abs(cl.polygon.vertices - g).max())
                near = np.asarray(ztree.query_ball_point([g.real, g.imag], ext * (1 + 1e-9)), dtype=int)
                if len(near):
                    covered[near] |= cl.polygon.contains(z[near])
        if not covered.all():
            raise ExhaustionError(f"{int((~covered).sum())} samples near the complement are not "
                                  "covered by surviving cells (discretization too coarse)")
    return out


# -- perturbation ----------------------------------------------------------------


def spiral_offsets(radius: float, rings: int = 8) -> np.ndarray:
    """0 followed by rings of 6k points at radii k * radius / rings."""
    pts = [0j]
    golden = math.pi * (3 - math.sqrt(5))
    for k in range(1, rings + 1):
        m = 6 * k
        th = golden * k + 2 * np.pi * np.arange(m) / m
        pts.extend(radius * k / rings * np.exp(1j * th))
    return np.array(pts, dtype=complex)


def _local_segments(cells, centers, reach):
    a = np.concatenate([cl.polygon.vertices for cl in cells])
    b = np.concatenate([np.roll(cl.polygon.vertices, -1) for cl in cells])
    tree = cKDTree(to_xy(0.5 * (a + b)))
    half = 0.5 * float(np.abs(b - a).max())
    out = []
    for zc, rr in zip(centers, reach):
        idx = np.asarray(tree.query_ball_point([zc.real, zc.imag], rr + half), dtype=int)
        if len(idx):
            d = point_segment_distance(zc, a[idx], b[idx])
            idx = idx[d <= rr]
        out.append((a[idx], b[idx]))
    return out


def perturb_to_qB(cells: Sequence[VoronoiCell], spec: CircleDomainSpec, delta: float,
                  j: int | None = None, inflation: dict | None = None,
                  rings: int = 8) -> tuple[dict, complex, float]:
    """Translate the kept cells by one small vector so no boundary touches the complement.

    Returns ``({generator_id: q_B}, z0, clearance)``. Candidates ``z0`` lie on a spiral of
    radius delta/2; each is scored by the smallest clearance from the translated boundaries to
    the complement components, where large disks are enlarged by ``inflation`` (their B-tilde).
    The best-scoring candidate that also passes the q_B inclusion checks is used.
    """
    kept = [cl for cl in cells if not cl.discarded]
    if not kept:
        raise ExhaustionError("no cells to perturb", j)
    comps = spec.components
    cen = np.array([c.center for c in comps], dtype=complex)
    rad = np.array([c.radius for c in comps])
    infl = np.array([(inflation or {}).get(i, 0.0) for i in range(len(comps))])
    req = rad + infl + delta / 100
    reach = req + delta / 2 + delta / 100
    segs = _local_segments(kept, cen, reach)
    offsets = spiral_offsets(delta / 2, rings)
    score = np.full(len(offsets), np.inf)
    for (a, b), zc, rq in zip(segs, cen, req):
        if len(a) == 0:
            continue
        # distance from translated boundary to the component = dist(zc - z0, boundary)
        chunk = max(1, 2_000_000 // len(a))
        for k in range(0, len(offsets), chunk):
            q = (zc - offsets[k:k + chunk])[:, None]
            d = point_segment_distance(q, a[None, :], b[None, :]).min(axis=1)
            score[k:k + chunk] = np.minimum(score[k:k + chunk], d - rq)
    order = np.argsort(-score, kind="stable")
    for k in order:
        if score[k] < 0:
            break
        z0 = complex(offsets[k])
        qs = {cl.generator_id: cl.polygon.translated(z0) for cl in kept}
        if _q_inclusions_ok(kept, qs, delta):
            clearance = float(score[k] + delta / 100) if np.isfinite(score[k]) else float(delta)
            return qs, z0, clearance
    raise ExhaustionError("translation search exhausted all candidates", j)


def _q_inclusions_ok(kept, qs, delta, n: int = DEFAULT_RESOLUTION) -> bool:
    for cl in kept:
        q = qs[cl.generator_id]
        g = cl.generator
        if np.abs(q.vertices - g.center).max() > (g.radius + 5 * delta) * (1 + 1e-12):
            return False
        if not q.contains(circle_points(g.center, g.radius / 2, n)).all():
            return False
    return True


def boundary_clearance(poly: PolyJordan, spec: CircleDomainSpec) -> np.ndarray:
    """Distance from the boundary of ``poly`` to each complement component."""
    return poly.boundary_distance(spec.centers()) - spec.radii()


def shrink_to_pB(q_list: dict, spec: CircleDomainSpec, generators: dict | None = None,
                 k_max: float = K_MAX) -> dict:
    """Inward offset of each q_B by a margin keeping boundaries in Omega and K <= k_max.

    Per region the margin is ``min(clearance, r_in (1 - K_q / k_max)) / 3`` where
    ``(r_in, K_q)`` is the certificate of q_B; with ``K_q <= 42`` this is at least
    ``min(clearance, r_in / 86) / 3``. Returns ``{id: (p_B, cert, margin)}``.
    """
    out = {}
    for gid, q in q_list.items():
        hint = [generators[gid].center] if generators else []
        qc = quasiround_certificate(q, hints=hint)
        clear = float(boundary_clearance(q, spec).min())
        if not clear > 0:
            raise ExhaustionError(f"boundary of q_{gid} touches the complement")
        mu = min(clear, qc.r_in * (1 - qc.K / k_max)) / 3
        if not mu > 0:
            raise ExhaustionError(f"q_{gid} is not {k_max}-quasiround (K = {qc.K:.3f})")
        shrunk = q.shape.buffer(-mu, join_style="mitre", mitre_limit=10.0)
        if shrunk.is_empty or shrunk.geom_type != "Polygon":
            raise ExhaustionError(f"inward offset of q_{gid} is not a single region")
        p = polygon_from_shape(shrunk)
        hints = [qc.center] + hint
        cert = quasiround_certificate(p, hints=hints)
        if cert.K > k_max:
            raise ExhaustionError(f"p_{gid} has K = {cert.K:.3f} > {k_max}")
        out[gid] = (p, cert, mu)
    return out


# -- driver -------------------------------------------------------------------------


def _disk_grid(center: complex, radius: float, mesh: float) -> np.ndarray:
    m = max(1, int(math.ceil(radius / mesh)))
    k = np.arange(-m, m + 1) * mesh
    g = (center + k[None, :] + 1j * k[:, None]).ravel()
    return g[np.abs(g - center) <= radius]


def build_step(spec: CircleDomainSpec, prev: ExhaustionStep, j: int,
               resolution: int = DEFAULT_RESOLUTION) -> ExhaustionStep:
    delta = compute_delta(spec, prev, j)
    comps = spec.components
    large = select_large_disks(spec, delta)
    n_large = len(large)
    small_idx = [i for i, c in enumerate(comps) if i >= n_large]
    gaps = spec.component_gaps()
    inflation = {i: min(delta / 4, gaps[i] / 4) for i in range(n_large)}

    prev_polys = prev.polygons
    lc = np.array([d.center for d in large], dtype=complex)
    lr = np.array([d.radius for d in large])

    def in_U(z):
        z = as_points(z)
        ok = np.zeros(len(z), bool)
        for p in prev_polys:
            ok |= shapely.contains_xy(p.shape, z.real, z.imag)
        if n_large:
            ok &= (np.abs(z[:, None] - lc[None, :]) > (lr + 2 * delta)[None, :]).all(axis=1)
        return ok

    # generators: large disks first, then the delta-packing near degenerate components
    seeds, samples, lattice = [], [], []
    for i in small_idx:
        c = comps[i]
        seeds.append(c.center)
        zone = MATERIAL_RADIUS * delta + c.radius
        samples.append(_disk_grid(c.center, zone, delta / 2))
        lat = hex_lattice((c.center.real - zone, c.center.imag - zone,
                           c.center.real + zone, c.center.imag + zone), 2 * delta * (1 + PACK_SLACK))
        lattice.append(lat[np.abs(lat - c.center) <= zone])
    small_centers = np.zeros(0, complex)
    if small_idx:
        seeds = as_points(seeds)
        seeds = seeds[in_U(seeds)]
        lat = np.concatenate(lattice)
        lat = lat[in_U(lat)]
        smp = np.concatenate(samples)
        smp = smp[in_U(smp)]
        small_centers = greedy_packing(np.concatenate([seeds, lat]), delta)
        small_centers = _fill_in(small_centers, smp, delta)
    generators = list(large) + [Disk(z, delta) for z in small_centers]

    build = list(range(n_large))
    if len(small_centers):
        sc = np.array([comps[i].center for i in small_idx])
        sr = np.array([comps[i].radius for i in small_idx])
        near = (np.abs(small_centers[:, None] - sc[None, :]) - sr[None, :] <= BUILD_RADIUS * delta).any(axis=1)
        build += [n_large + k for k in np.flatnonzero(near)]
    caps = np.array([g.radius + (LARGE_CAP if k < n_large else 4.0) * delta for k, g in enumerate(generators)])
    cells = build_voronoi_cells(generators, prev, delta, resolution, build=build, caps=caps)

    check = [_disk_grid(comps[i].center, 10 * delta + comps[i].radius, delta / 4) for i in small_idx]
    check = np.concatenate(check) if check else None
    if check is not None:
        check = check[_in_prev(prev_polys, check)]
    cells = discard_near_boundary(cells, prev, delta, spec, check, large_ids=range(n_large))

    qs, z0, clearance = perturb_to_qB(cells, spec, delta, j, inflation)
    members: dict[int, list[int]] = {}
    for i, c in enumerate(comps):
        hosts = [gid for gid, q in qs.items() if q.contains(c.center, closed=False)[0]]
        if len(hosts) != 1:
            raise ExhaustionError(f"component {i} lies in {len(hosts)} regions q_B", j)
        members.setdefault(hosts[0], []).append(i)
    chosen = {gid: qs[gid] for gid in sorted(members)}
    shrunk = shrink_to_pB(chosen, spec, {gid: generators[gid] for gid in chosen})
    components = tuple(
        Component(p, generators[gid], gid, cert, tuple(members[gid]), chosen[gid], mu)
        for gid, (p, cert, mu) in shrunk.items())
    log.info("step %d: delta=%.3g generators=%d cells=%d components=%d shift=%.3g",
             j, delta, len(generators), len(cells), len(components), abs(z0))
    return ExhaustionStep(j, delta, components, tuple(range(n_large)), tuple(cells), qs, z0,
                          tuple(generators))


def _in_prev(prev_polys, z):
    ok = np.zeros(len(z), bool)
    for p in prev_polys:
        ok |= shapely.contains_xy(p.shape, z.real, z.imag)
    return ok


def build_exhaustion(spec: CircleDomainSpec, J: int, resolution: int = DEFAULT_RESOLUTION,
                     verify: bool = True) -> list[ExhaustionStep]:
    """Steps ``Omega_1 .. Omega_J`` (the initial Omega_0 is not included)."""
    if not spec.infinity_interior:
        raise ExhaustionError("the point at infinity must be interior")
    if spec.is_empty:
        raise ExhaustionError("nothing to exhaust: the complement is empty")
    if spec.tangent_ok:
        raise ExhaustionError("touching disks are not valid exhaustion input")
    prev = initial_step(spec)
    steps = []
    for j in range(1, J + 1):
        try:
            step = build_step(spec, prev, j, resolution)
        except ExhaustionError as exc:
            if exc.step is None:
                raise ExhaustionError(str(exc), j) from exc
            raise
        except GeometryError as exc:
            raise ExhaustionError(str(exc), j) from exc
        if verify:
            from .certify import verify_step
            report = verify_step(spec, prev, step)
            if not report.ok:
                raise ExhaustionError("verification failed: " + "; ".join(report.failures), j)
        steps.append(step)
        prev = step
    return steps
