"""Planar and spherical primitives.

Points are complex numbers throughout; arrays of points are complex ndarrays.
The point at infinity is ``INF = complex(inf, 0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import Polygon

INF = complex(math.inf, 0.0)

DEFAULT_RESOLUTION = 256


class GeometryError(ValueError):
    """Invalid or degenerate geometric input."""


def is_infinite(z) -> np.ndarray:
    return ~np.isfinite(np.asarray(z, dtype=complex))


def as_points(z) -> np.ndarray:
    return np.atleast_1d(np.asarray(z, dtype=complex)).ravel()


def to_xy(z) -> np.ndarray:
    z = as_points(z)
    return np.column_stack([z.real, z.imag])


# ---------------------------------------------------------------------------
# Disks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    """Closed disk; radius 0 encodes a point component."""

    center: complex
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not math.isfinite(self.radius) or self.radius < 0:
            raise GeometryError(f"disk radius must be finite and >= 0, got {self.radius}")
        if not np.isfinite(self.center):
            raise GeometryError("disk center must be finite")

    @property
    def is_point(self) -> bool:
        return self.radius == 0.0

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def distance(self, z) -> np.ndarray:
        """Euclidean distance from ``z`` to the closed disk (0 inside)."""
        return np.maximum(np.abs(np.asarray(z, dtype=complex) - self.center) - self.radius, 0.0)

    def boundary_distance_estimate(self, z) -> np.ndarray:
        """Distance to the edges incident to the nearest vertices (an upper bound; exact when
        the nearest edges are local, which fails mainly for points deep inside fine polygons)."""
        z = as_points(z)
        n = len(self.vertices)
        if n <= 64 or len(z) * n <= 200_000:
            return self.boundary_distance(z)
        a, b = self.edges
        _, ik = self._kdtree.query(to_xy(z), k=min(24, n))
        seg = np.concatenate([ik, (ik - 1) % n], axis=1)
        return _point_segment_distance(z[:, None], a[seg], b[seg]).min(axis=1)

    def signed_distance(self, z) -> np.ndarray:
        return np.abs(np.asarray(z, dtype=complex) - self.center) - self.radius

    def contains(self, z, tol: float = 0.0) -> np.ndarray:
        return self.signed_distance(z) <= tol

    def scaled(self, factor: float) -> "Disk":
        """Concentric disk with radius multiplied by ``factor``."""
        return Disk(self.center, self.radius * factor)

    def boundary_samples(self, n: int = DEFAULT_RESOLUTION) -> np.ndarray:
        if self.is_point:
            return np.array([self.center])
        return circle_points(self.center, self.radius, n)

    def polygon(self, n: int = DEFAULT_RESOLUTION) -> "PolyJordan":
        return PolyJordan(circle_points(self.center, self.radius, n))


def circle_points(center: complex, radius: float, n: int = DEFAULT_RESOLUTION,
                  phase: float = 0.0) -> np.ndarray:
    theta = phase + 2.0 * np.pi * np.arange(n) / n
    return center + radius * np.exp(1j * theta)


def disks_disjoint(a: Disk, b: Disk, gap: float = 0.0) -> bool:
    return abs(a.center - b.center) > a.radius + b.radius + gap


# ---------------------------------------------------------------------------
# Polygons
# ---------------------------------------------------------------------------


def _signed_area(v: np.ndarray) -> float:
    v = v - v[0]  # local coordinates keep tiny polygons far from the origin accurate
    x, y = v.real, v.imag
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class PolyJordan:
    """Closed simple polygon, stored counterclockwise without repeating the first vertex."""

    vertices: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = as_points(self.vertices).copy()
        if len(v) > 1 and v[0] == v[-1]:
            v = v[:-1]
        if len(v) < 3:
            raise GeometryError("a Jordan polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("polygon vertices must be finite")
        area = _signed_area(v)
        if area < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if abs(area) <= 0.0:
            raise GeometryError("degenerate polygon (zero area)")
        if self.check and not self.shape.is_valid:
            raise GeometryError(f"polygon is not simple: {shapely.is_valid_reason(self.shape)}")

    def __len__(self) -> int:
        return len(self.vertices)

    @cached_property
    def shape(self) -> Polygon:
        poly = Polygon(to_xy(self.vertices))
        shapely.prepare(poly)
        return poly

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, np.roll(self.vertices, -1)

    @property
    def perimeter(self) -> float:
        a, b = self.edges
        return float(np.abs(b - a).sum())

    @cached_property
    def diameter(self) -> float:
        v = self.vertices
        if len(v) <= 512:
            return float(np.abs(v[:, None] - v[None, :]).max())
        hull = np.asarray(shapely.convex_hull(self.shape).exterior.coords)[:-1]
        return _convex_diameter(hull[:, 0] + 1j * hull[:, 1])

    @property
    def centroid(self) -> complex:
        c = self.shape.centroid
        return complex(c.x, c.y)

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return float(v.real.min()), float(v.imag.min()), float(v.real.max()), float(v.imag.max())

    @cached_property
    def _kdtree(self) -> cKDTree:
        return cKDTree(to_xy(self.vertices))

    @cached_property
    def _max_edge(self) -> float:
        a, b = self.edges
        return float(np.abs(b - a).max())

    def contains(self, z, closed: bool = True) -> np.ndarray:
        """Point-in-polygon test (vectorized)."""
        z = as_points(z)
        inside = shapely.contains_xy(self.shape, z.real, z.imag)
        if closed and not inside.all():
            x0, y0, x1, y1 = self.bbox
            tol = 1e-14 * max(1.0, abs(self.vertices).max())
            near = ~inside & (z.real >= x0 - tol) & (z.real <= x1 + tol) & (z.imag >= y0 - tol) & (z.imag <= y1 + tol)
            if near.any():
                inside[near] = self.boundary_distance(z[near]) <= tol
        return inside

    def boundary_distance(self, z) -> np.ndarray:
        """Exact distance from each point to the polygon boundary."""
        return segment_set_distance(as_points(z), *self.edges, tree=self._kdtree,
                                    max_edge=self._max_edge)

    def boundary_distance_estimate(self, z) -> np.ndarray:
        """Distance to the edges incident to the nearest vertices (an upper bound; exact when
        the nearest edges are local, which fails mainly for points deep inside fine polygons)."""
        z = as_points(z)
        n = len(self.vertices)
        if n <= 64 or len(z) * n <= 200_000:
            return self.boundary_distance(z)
        a, b = self.edges
        _, ik = self._kdtree.query(to_xy(z), k=min(24, n))
        seg = np.concatenate([ik, (ik - 1) % n], axis=1)
        return _point_segment_distance(z[:, None], a[seg], b[seg]).min(axis=1)

    def signed_distance(self, z) -> np.ndarray:
        """Negative inside, positive outside."""
        z = as_points(z)
        d = self.boundary_distance(z)
        return np.where(shapely.contains_xy(self.shape, z.real, z.imag), -d, d)

    def translated(self, shift: complex) -> "PolyJordan":
        return PolyJordan(self.vertices + shift, check=False)

    def scaled(self, factor: complex, origin: complex = 0.0) -> "PolyJordan":
        return PolyJordan(origin + factor * (self.vertices - origin), check=False)

    def resampled(self, n: int) -> np.ndarray:
        """``n`` points equally spaced in arc length along the boundary."""
        v = np.append(self.vertices, self.vertices[0])
        seg = np.abs(np.diff(v))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        t = np.arange(n) * (s[-1] / n)
        idx = np.clip(np.searchsorted(s, t, side="right") - 1, 0, len(seg) - 1)
        frac = (t - s[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
        return v[idx] + frac * (v[idx + 1] - v[idx])

    def sample_interior(self, mesh: float) -> np.ndarray:
        """Grid points of spacing ``mesh`` lying inside the polygon."""
        x0, y0, x1, y1 = self.bbox
        xs = np.arange(x0, x1 + mesh, mesh)
        ys = np.arange(y0, y1 + mesh, mesh)
        g = (xs[None, :] + 1j * ys[:, None]).ravel()
        return g[shapely.contains_xy(self.shape, g.real, g.imag)]


def _convex_diameter(h: np.ndarray) -> float:
    """Rotating calipers over a convex polygon (either orientation)."""
    if _signed_area(h) < 0:
        h = h[::-1]
    n = len(h)
    if n < 3:
        return float(np.abs(h[:, None] - h[None, :]).max())
    best, j = 0.0, 1
    for i in range(n):
        e = h[(i + 1) % n] - h[i]
        while True:
            f = h[(j + 1) % n] - h[j]
            if e.real * f.imag - e.imag * f.real > 0:
                j = (j + 1) % n
            else:
                break
        best = max(best, abs(h[i] - h[j]), abs(h[(i + 1) % n] - h[j]))
    return float(best)


def polygon_from_shape(shape) -> PolyJordan:
    """Convert a shapely polygon (largest part, exterior ring) to a PolyJordan."""
    if shape.is_empty:
        raise GeometryError("empty geometry")
    if shape.geom_type == "MultiPolygon":
        shape = max(shape.geoms, key=lambda g: g.area)
    coords = np.asarray(shape.exterior.coords)
    return PolyJordan(coords[:, 0] + 1j * coords[:, 1], check=False)


def segment_set_distance(z: np.ndarray, a: np.ndarray, b: np.ndarray,
                         tree: cKDTree | None = None, max_edge: float | None = None) -> np.ndarray:
    """Distance from points ``z`` to the union of segments ``[a_k, b_k]``.

    With a vertex KD-tree the candidate segments are those incident to the ``k`` nearest
    vertices. Any segment is at least (endpoint distance - longest edge / 2) away, so the
    candidate set is exact whenever the k-th neighbour is farther than the nearest one plus
    half the longest edge; points failing that test fall back to brute force.
    """
    z = as_points(z)
    n = len(a)
    if tree is None or n <= 64 or len(z) * n <= 200_000:
        return _brute_distance(z, a, b)
    if max_edge is None:
        max_edge = float(np.abs(b - a).max())
    k = min(24, n)
    dk, ik = tree.query(to_xy(z), k=k)
    seg = np.concatenate([ik, (ik - 1) % n], axis=1)
    d = _point_segment_distance(z[:, None], a[seg], b[seg]).min(axis=1)
    bad = dk[:, -1] < dk[:, 0] + 0.5 * max_edge * (1 + 1e-9)
    if bad.any():
        d[bad] = _brute_distance(z[bad], a, b)
    return d


def _brute_distance(z, a, b):
    out = np.empty(len(z))
    step = max(1, 2_000_000 // max(len(a), 1))
    for i in range(0, len(z), step):
        out[i:i + step] = _point_segment_distance(z[i:i + step, None], a[None, :], b[None, :]).min(axis=1)
    return out


def _point_segment_distance(z, a, b):
    ab = b - a
    denom = (ab.real ** 2 + ab.imag ** 2)
    t = ((z - a) * np.conj(ab)).real / np.where(denom > 0, denom, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.abs(z - (a + t * ab))


def point_segment_distance(z, a, b) -> np.ndarray:
    return _point_segment_distance(np.asarray(z, dtype=complex), np.asarray(a, dtype=complex),
                                   np.asarray(b, dtype=complex))


# ---------------------------------------------------------------------------
# Quasiroundness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuasiroundCert:
    center: complex
    r_in: float
    r_out: float

    @property
    def K(self) -> float:
        return self.r_out / self.r_in

    def verify(self, region: PolyJordan, n: int = DEFAULT_RESOLUTION) -> bool:
        """Vertices inside the outer disk and ``n`` inner-circle samples inside the region."""
        outer_ok = bool(np.all(np.abs(region.vertices - self.center) <= self.r_out * (1 + 1e-12)))
        inner_ok = bool(np.all(region.contains(circle_points(self.center, self.r_in, n))))
        return outer_ok and inner_ok


def _grid(x0, y0, x1, y1, n):
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    return (xs[None, :] + 1j * ys[:, None]).ravel()


def quasiround_certificate(region: PolyJordan, hints: Sequence[complex] = (),
                           grid: int = 17, rounds: int = 30) -> QuasiroundCert:
    """Certify ``D(a, r_in) ⊂ region ⊂ D(a, r_out)`` with small ``K = r_out / r_in``.

    Phase 1 locates the center of the largest inscribed disk by iterated grid refinement;
    among (near-)optimal centers the one with the smallest circumradius wins, ties broken
    lexicographically. Phase 2 sets ``r_out`` to the largest vertex distance. ``hints``
    are extra candidate centers (e.g. a known generator center); the overall certificate
    is the candidate with the smallest ``K``.
    """
    if not isinstance(region, PolyJordan):
        raise GeometryError("quasiround_certificate expects a PolyJordan")
    if region.area <= 0:
        raise GeometryError("invalid region: non-positive area")
    x0, y0, x1, y1 = region.bbox
    center = _chebyshev_center(region, (x0, y0, x1, y1), grid, rounds)
    best = _certificate_at(region, center)
    for h in hints:
        cand = _certificate_at(region, complex(h))
        if cand is not None and (best is None or cand.K < best.K):
            best = cand
    if best is None:
        raise GeometryError("no interior center found")
    return best


def _certificate_at(region: PolyJordan, c: complex) -> QuasiroundCert | None:
    if not region.contains(c, closed=False)[0]:
        return None
    r_in = float(region.boundary_distance(c)[0]) * (1 - 1e-9)
    if r_in <= 0:
        return None
    r_out = float(np.abs(region.vertices - c).max())
    return QuasiroundCert(c, r_in, r_out)


def _chebyshev_center(region: PolyJordan, bbox, grid: int, rounds: int) -> complex:
    n = len(region.vertices)
    if n > 512:
        # the search only steers the center; the certificate itself is exact
        region = PolyJordan(region.vertices[::-(-n // 512)], check=False)
    x0, y0, x1, y1 = bbox
    w, h = x1 - x0, y1 - y0
    stop = 1e-7 * max(w, h)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    best_c, best_key = None, None
    for _ in range(rounds):
        if best_c is not None and max(w, h) < stop:
            break
        pts = _grid(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, grid)
        inside = shapely.contains_xy(region.shape, pts.real, pts.imag)
        if not inside.any():
            w, h = w / 2, h / 2
            continue
        pts = pts[inside]
        d = _brute_distance(pts, *region.edges)
        top = d.max()
        near = pts[d >= top * (1 - 1e-9)]
        if len(near) > 1:
            rout = np.abs(region.vertices[None, :] - near[:, None]).max(axis=1)
            near = near[rout <= rout.min() * (1 + 1e-12)]
        order = np.lexsort((near.imag, near.real))
        c = near[order[0]]
        key = top
        if best_key is None or key > best_key * (1 + 1e-15):
            best_c, best_key = c, key
        cx, cy = best_c.real, best_c.imag
        w, h = w * 0.5, h * 0.5
    return best_c


def eccentricity_of(region: PolyJordan, grid: int = 21, rounds: int = 40) -> QuasiroundCert:
    """Center minimizing ``r_out / r_in`` over refined grids (upper bound of the infimum)."""
    cheb = quasiround_certificate(region)
    best = cheb
    cx, cy = best.center.real, best.center.imag
    x0, y0, x1, y1 = region.bbox
    w, h = (x1 - x0), (y1 - y0)
    for _ in range(rounds):
        pts = _grid(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, grid)
        inside = shapely.contains_xy(region.shape, pts.real, pts.imag)
        if inside.any():
            pts = pts[inside]
            rin = region.boundary_distance_estimate(pts)
            rout = np.abs(region.vertices[None, :] - pts[:, None]).max(axis=1)
            ok = rin > 0
            if ok.any():
                k = np.where(ok, rout / np.where(ok, rin, 1.0), np.inf)
                i = int(np.argmin(k))
                if k[i] < best.K:
                    best = QuasiroundCert(pts[i], float(rin[i]) * (1 - 1e-9), float(rout[i]))
        cx, cy = best.center.real, best.center.imag
        w, h = w * 0.35, h * 0.35
    exact = _certificate_at(region, best.center)
    return exact if exact is not None and exact.K <= cheb.K else cheb


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def hausdorff_distance(a, b) -> float:
    """Hausdorff distance between two finite point samples."""
    a, b = as_points(a), as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("hausdorff_distance needs non-empty samples")
    ta, tb = cKDTree(to_xy(a)), cKDTree(to_xy(b))
    dab, _ = tb.query(to_xy(a))
    dba, _ = ta.query(to_xy(b))
    return float(max(dab.max(), dba.max()))


def neighborhood_contains(a, eps: float, x) -> np.ndarray | bool:
    """Whether ``dist(x, A) < eps`` for a finite sample ``A``."""
    if eps <= 0:
        raise GeometryError("eps must be positive")
    a = as_points(a)
    xs = as_points(x)
    d, _ = cKDTree(to_xy(a)).query(to_xy(xs))
    out = d < eps
    return bool(out[0]) if np.ndim(x) == 0 else out


def spherical_distance(z, w):
    """Distance on the Riemann sphere for the metric ``2|dz| / (1 + |z|^2)``."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    zi, wi = is_infinite(z), is_infinite(w)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        chord = np.abs(z - w) / np.abs(1 + np.conj(z) * w)
        to_inf_z = 1.0 / np.abs(w)
        to_inf_w = 1.0 / np.abs(z)
    chord = np.where(zi & ~wi, to_inf_z, chord)
    chord = np.where(wi & ~zi, to_inf_w, chord)
    chord = np.where(zi & wi, 0.0, chord)
    out = 2.0 * np.arctan(chord)
    return float(out) if out.ndim == 0 else out


def spherical_derivative(g_value, z, g_prime):
    """``(1 + |z|^2) / (1 + |g(z)|^2) * |g'(z)|``."""
    g_value = np.asarray(g_value, dtype=complex)
    z = np.asarray(z, dtype=complex)
    out = (1 + np.abs(z) ** 2) / (1 + np.abs(g_value) ** 2) * np.abs(g_prime)
    return float(out) if np.ndim(out) == 0 else out


def spherical_diameter(points) -> float:
    p = as_points(points)
    if len(p) > 1500:
        p = p[np.linspace(0, len(p) - 1, 1500).astype(int)]
    return float(np.max(spherical_distance(p[:, None], p[None, :])))


def polygons_disjoint(polys: Iterable[PolyJordan]) -> bool:
    shapes = [p.shape for p in polys]
    tree = shapely.STRtree(shapes)
    for i, s in enumerate(shapes):
        for j in tree.query(s, predicate="intersects"):
            if j != i:
                return False
    return True


def region_gap(a: PolyJordan, b: PolyJordan, b_as_curve: bool = False) -> float:
    """Distance between two closed polygonal regions (or region ``a`` and the boundary curve
    of ``b``). Disjoint polylines attain their distance at a vertex of one of them."""
    other = b.shape.exterior if b_as_curve else b.shape
    if a.shape.intersects(other):
        return 0.0
    return float(min(a.boundary_distance(b.vertices).min(), b.boundary_distance(a.vertices).min()))
