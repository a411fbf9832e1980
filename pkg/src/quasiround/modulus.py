"""Discrete transboundary modulus.

A density is bilinear on the cells of a square grid (nonnegative node values) plus one weight
per complementary component. A sampled curve is admissible when

    int over its domain part of rho ds + sum of crossed weights >= 1.

With ``x`` = (node value * sqrt(lumped node area), weights) the energy is ``|x|^2`` and
admissibility reads ``G x >= 1`` for a nonnegative matrix ``G``; the optimum is a least-distance problem
whose dual ``max 2 sum(l) - |G^T l|^2, l >= 0`` has one unknown per curve and is solved
exactly by nonnegative least squares.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import shapely
from scipy import sparse
from scipy.linalg import cholesky, solve_triangular
from scipy.optimize import nnls

from .exhaust import CircleDomainSpec
from .geometry import Disk, GeometryError, PolyJordan, as_points, circle_points

LARGE_COUNT = 400


class ModulusError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------


def component_shape(comp, n: int = 512):
    """Shapely polygon of a Disk (n-gon) or PolyJordan; points give an empty geometry."""
    if isinstance(comp, Disk):
        if comp.radius == 0:
            return shapely.Point(comp.center.real, comp.center.imag)
        return shapely.Point(comp.center.real, comp.center.imag).buffer(comp.radius, quad_segs=n // 4)
    if isinstance(comp, PolyJordan):
        return comp.shape
    return comp


def annulus(center: complex, r_in: float, r_out: float, n: int = 1024, cover: bool = False):
    """Polygonal annulus inside the round one, or containing it when ``cover`` is set."""
    grow = 1 / math.cos(math.pi / n)
    outer = circle_points(center, r_out * (grow if cover else 1.0), n)
    inner = circle_points(center, r_in * (1.0 if cover else grow), n)
    return shapely.Polygon(np.c_[outer.real, outer.imag], [np.c_[inner.real, inner.imag][::-1]])


def disk_region(center: complex, r: float, n: int = 1024):
    v = circle_points(center, r, n)
    return shapely.Polygon(np.c_[v.real, v.imag])


def domain_minus(region, components: Mapping):
    shapes = [component_shape(c) for c in components.values()]
    shapes = [s for s in shapes if s.area > 0]
    if not shapes:
        return region
    return shapely.difference(region, shapely.union_all(shapes))


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuotientCurve:
    """Alternating pieces: ``("path", polyline array)`` in the domain or ``("comp", id)``."""

    pieces: tuple

    @property
    def paths(self) -> list[np.ndarray]:
        return [p for kind, p in self.pieces if kind == "path"]

    @property
    def crossed(self) -> frozenset:
        return frozenset(p for kind, p in self.pieces if kind == "comp")

    @property
    def length(self) -> float:
        return float(sum(np.abs(np.diff(p)).sum() for p in self.paths))

    def endpoints(self) -> tuple[complex, complex]:
        first, last = self.pieces[0], self.pieces[-1]
        a = first[1][0] if first[0] == "path" else np.nan
        b = last[1][-1] if last[0] == "path" else np.nan
        return complex(a), complex(b)


@dataclass(frozen=True, eq=False)
class CurveFamilySample:
    curves: tuple
    kind: str = "custom"

    def __post_init__(self):
        if not self.curves:
            raise ModulusError("empty curve family")

    def __len__(self):
        return len(self.curves)

    def __add__(self, other: "CurveFamilySample") -> "CurveFamilySample":
        return CurveFamilySample(self.curves + other.curves, self.kind)


def _segment_intervals(a: complex, b: complex, comp, shape) -> list[tuple[float, float]]:
    """Parameter intervals of the segment [a, b] lying in a closed component."""
    d = b - a
    if isinstance(comp, Disk):
        c, r = comp.center, comp.radius
        dd = abs(d) ** 2
        if dd == 0:
            return [(0.0, 1.0)] if abs(a - c) <= r else []
        t0 = ((c - a) * np.conj(d)).real / dd
        dist = abs(a + t0 * d - c)
        if r == 0:
            return [(t0, t0)] if 0 <= t0 <= 1 and dist <= 1e-12 * max(1.0, abs(c)) else []
        if dist > r:
            return []
        half = math.sqrt(max(r * r - dist * dist, 0.0) / dd)
        lo, hi = max(t0 - half, 0.0), min(t0 + half, 1.0)
        return [(lo, hi)] if lo <= hi else []
    seg = shapely.LineString([(a.real, a.imag), (b.real, b.imag)])
    inter = shapely.intersection(seg, shape)
    if inter.is_empty:
        return []
    out = []
    parts = getattr(inter, "geoms", [inter])
    dd = abs(d) ** 2
    for g in parts:
        pts = np.asarray(g.coords)
        ts = ((pts[:, 0] + 1j * pts[:, 1] - a) * np.conj(d)).real / dd
        out.append((float(ts.min()), float(ts.max())))
    return out


def quotient_curve(polyline, components: Mapping | None = None) -> QuotientCurve:
    """Split a polyline into domain paths and component crossings (in order)."""
    z = as_points(polyline)
    if len(z) < 2:
        raise ModulusError("a curve needs at least two points")
    comps = dict(components or {})
    shapes = {k: component_shape(c) for k, c in comps.items()}
    if comps:
        ext = [shapely.bounds(s) for s in shapes.values()]
        boxes = np.array(ext)
    pieces: list = []
    current: list[complex] = [complex(z[0])]

    def push_path():
        if len(current) >= 2 and abs(current[-1] - current[0]) + sum(
                abs(current[i + 1] - current[i]) for i in range(len(current) - 1)) > 0:
            pieces.append(("path", np.array(current)))

    ids = list(comps)
    for a, b in zip(z[:-1], z[1:]):
        a, b = complex(a), complex(b)
        hits = []
        if comps:
            xlo, xhi = min(a.real, b.real), max(a.real, b.real)
            ylo, yhi = min(a.imag, b.imag), max(a.imag, b.imag)
            cand = np.flatnonzero((boxes[:, 0] <= xhi) & (boxes[:, 2] >= xlo) &
                                  (boxes[:, 1] <= yhi) & (boxes[:, 3] >= ylo))
            for k in cand:
                for lo, hi in _segment_intervals(a, b, comps[ids[k]], shapes[ids[k]]):
                    hits.append((lo, hi, ids[k]))
        hits.sort(key=lambda h: (h[0], h[1]))
        for lo, hi, cid in hits:
            p = a + lo * (b - a)
            if lo > 0 or current[-1] != p:
                current.append(p)
            push_path()
            if not pieces or pieces[-1] != ("comp", cid):
                pieces.append(("comp", cid))
            current = [a + hi * (b - a)]
        current.append(b)
    push_path()
    if not pieces:
        raise ModulusError("curve lies entirely inside components")
    return QuotientCurve(tuple(pieces))


def radial_family(center: complex, r_in: float, r_out: float, n: int,
                  components: Mapping | None = None, avoid=(), phase: float = 0.0) -> CurveFamilySample:
    """Segments joining the two circles along ``n`` equally spaced directions."""
    out = []
    for th in phase + 2 * np.pi * np.arange(n) / n:
        u = np.exp(1j * th)
        qc = quotient_curve([center + r_in * u, center + r_out * u], components)
        if not (qc.crossed & set(avoid)):
            out.append(qc)
    return CurveFamilySample(tuple(out), "radial")


def circle_family(center: complex, r_in: float, r_out: float, n: int, vertices: int = 256,
                  components: Mapping | None = None) -> CurveFamilySample:
    """Concentric circles at the midpoints of ``n`` equal radial bins."""
    out = []
    for r in r_in + (np.arange(n) + 0.5) * (r_out - r_in) / n:
        v = circle_points(center, r, vertices)
        out.append(quotient_curve(np.append(v, v[0]), components))
    return CurveFamilySample(tuple(out), "separating")


def family_gamma(J: PolyJordan, W: Disk, p_bar, components: Mapping, n_curves: int) -> CurveFamilySample:
    """Curves from ``J`` to ``W`` that avoid the component ``p_bar``.

    Each curve starts at one of ``n_curves`` arc-length samples of ``J`` and heads for the
    nearest point of ``dW`` outside ``p_bar``; when the straight segment meets ``p_bar`` it is
    bent through a waypoint on the outward normal of ``dW`` (a perturbed geodesic).
    """
    avoid_shape = component_shape(components[p_bar]) if p_bar is not None else None
    avoid_disk = components[p_bar] if isinstance(components.get(p_bar), Disk) else None

    def blocked(path):
        if avoid_shape is None:
            return False
        line = shapely.LineString(np.c_[np.real(path), np.imag(path)])
        if avoid_disk is not None:
            return any(_segment_intervals(a, b, avoid_disk, avoid_shape)
                       for a, b in zip(path[:-1], path[1:]))
        return line.intersects(avoid_shape)

    th = 2 * np.pi * np.arange(720) / 720
    rim = W.center + W.radius * np.exp(1j * th)
    if avoid_shape is not None:
        keep = ~shapely.intersects_xy(avoid_shape, rim.real, rim.imag)
        rim = rim[keep]
    if len(rim) == 0:
        raise ModulusError("W lies inside the avoided component")
    curves = []
    for s in J.resampled(n_curves):
        e = rim[np.argmin(np.abs(rim - s))]
        path = np.array([s, e])
        if blocked(path):
            nrm = (e - W.center) / abs(e - W.center)
            for k in (1, 2, 4, 8):
                wp = e + nrm * W.radius * k
                path = np.array([s, wp, e])
                if not blocked(path):
                    break
            else:
                continue
        others = {k: c for k, c in components.items() if k != p_bar}
        curves.append(quotient_curve(path, others))
    if not curves:
        raise ModulusError("no curve avoids the component at this resolution")
    return CurveFamilySample(tuple(curves), "gamma")


def family_lambda(center: complex, R: float, components: Mapping, p_bar, n: int) -> CurveFamilySample:
    """Radial sample of the curves joining S(center, R) and S(center, R/2) off ``p_bar``."""
    others = dict(components)
    return radial_family(center, R / 2, R, n, others, avoid=() if p_bar is None else (p_bar,))


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


class _Grid:
    """Square grid with nodes ``x0 + i h, y0 + j h`` (``0 <= i <= nx``, ``0 <= j <= ny``)."""

    def __init__(self, bbox, h):
        self.x0, self.y0, x1, y1 = bbox
        self.h = h
        self.nx = int(round((x1 - self.x0) / h))
        self.ny = int(round((y1 - self.y0) / h))

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    def pieces(self, path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split a polyline at grid lines: (cell ix, cell iy, piece endpoints as (k, 2) complex)."""
        out_ix, out_iy, out_ab = [], [], []
        for a, b in zip(path[:-1], path[1:]):
            d = b - a
            if d == 0:
                continue
            ts = [np.array([0.0, 1.0])]
            for lo, hi, org, start, comp in ((a.real, b.real, self.x0, a.real, d.real),
                                             (a.imag, b.imag, self.y0, a.imag, d.imag)):
                if comp == 0:
                    continue
                k0 = math.ceil((min(lo, hi) - org) / self.h)
                k1 = math.floor((max(lo, hi) - org) / self.h)
                if k1 >= k0:
                    ts.append((org + self.h * np.arange(k0, k1 + 1) - start) / comp)
            t = np.unique(np.clip(np.concatenate(ts), 0.0, 1.0))
            t = t[np.r_[True, np.diff(t) > 0]]
            if len(t) < 2:
                continue
            mid = a + 0.5 * (t[:-1] + t[1:]) * d
            ix = np.floor((mid.real - self.x0) / self.h).astype(int)
            iy = np.floor((mid.imag - self.y0) / self.h).astype(int)
            if ((ix < 0) | (ix >= self.nx) | (iy < 0) | (iy >= self.ny)).any():
                raise ModulusError("curve leaves the grid bounding box")
            out_ix.append(ix)
            out_iy.append(iy)
            out_ab.append(np.c_[a + t[:-1] * d, a + t[1:] * d])
        if not out_ix:
            return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2), complex)
        return np.concatenate(out_ix), np.concatenate(out_iy), np.concatenate(out_ab)

    def hat_integrals(self, path) -> tuple[np.ndarray, np.ndarray]:
        """Node indices and ``int phi_node ds`` of the bilinear hat functions along a polyline.

        Along a straight piece inside one cell each hat function is quadratic in arc length,
        so Simpson's rule is exact.
        """
        ix, iy, ab = self.pieces(path)
        if len(ix) == 0:
            return np.zeros(0, int), np.zeros(0)
        L = np.abs(ab[:, 1] - ab[:, 0])
        pts = np.stack([ab[:, 0], 0.5 * (ab[:, 0] + ab[:, 1]), ab[:, 1]], axis=1)
        u = np.clip((pts.real - self.x0) / self.h - ix[:, None], 0.0, 1.0)
        v = np.clip((pts.imag - self.y0) / self.h - iy[:, None], 0.0, 1.0)
        wts = np.array([1.0, 4.0, 1.0]) / 6.0
        phis = [(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v]
        offs = [(0, 0), (1, 0), (0, 1), (1, 1)]
        idx, val = [], []
        for phi, (dx, dy) in zip(phis, offs):
            idx.append((iy + dy) * (self.nx + 1) + ix + dx)
            val.append(L * (phi @ wts))
        return np.concatenate(idx), np.concatenate(val)


@dataclass(eq=False)
class DensityGrid:
    """Bilinear density with nonnegative node values on a square grid, plus component weights.

    The energy uses the lumped mass matrix, ``sum(value^2 * node_area) + sum(weight^2)``, where
    ``node_area`` is a quarter of the area of every adjacent cell meeting the domain. For
    bilinear elements the lumped matrix dominates the consistent one, so this is an upper
    bound for the exact ``int rho^2``.
    """

    bbox: tuple
    h: float
    node_values: np.ndarray
    component_weights: dict = field(default_factory=dict)
    node_area: np.ndarray | None = None
    lower_bound: float | None = None

    def __post_init__(self):
        v = np.asarray(self.node_values, dtype=float)
        if not np.isfinite(v).all() or (v < 0).any():
            raise ModulusError("node values must be finite and nonnegative")
        self.node_values = v
        if self.node_area is None:
            self.node_area = _node_area(np.full((v.shape[0] - 1, v.shape[1] - 1), self.h ** 2), self.h)
        for k, w in self.component_weights.items():
            if not (np.isfinite(w) and w >= 0):
                raise ModulusError(f"weight of component {k} must be finite and nonnegative")

    @property
    def shape(self):
        return self.node_values.shape

    def energy(self) -> float:
        return float((self.node_values ** 2 * self.node_area).sum()
                     + sum(w * w for w in self.component_weights.values()))

    def __call__(self, z):
        """Point values (zero outside the grid)."""
        z = np.asarray(z, dtype=complex)
        g = _Grid(self.bbox, self.h)
        u = (z.real - g.x0) / g.h
        v = (z.imag - g.y0) / g.h
        inside = (u >= 0) & (u <= g.nx) & (v >= 0) & (v <= g.ny)
        i = np.clip(np.floor(u).astype(int), 0, g.nx - 1)
        j = np.clip(np.floor(v).astype(int), 0, g.ny - 1)
        fu, fv = np.clip(u - i, 0, 1), np.clip(v - j, 0, 1)
        V = self.node_values
        out = ((1 - fu) * (1 - fv) * V[j, i] + fu * (1 - fv) * V[j, i + 1]
               + (1 - fu) * fv * V[j + 1, i] + fu * fv * V[j + 1, i + 1])
        return np.where(inside, out, 0.0)

    def line_integral(self, curve: QuotientCurve) -> float:
        """Discrete ``int rho ds + sum of crossed weights``."""
        grid = _Grid(self.bbox, self.h)
        flat = self.node_values.ravel()
        total = 0.0
        for path in curve.paths:
            idx, w = grid.hat_integrals(path)
            total += float((flat[idx] * w).sum())
        total += sum(self.component_weights.get(p, 0.0) for p in curve.crossed)
        return total

    def admissibility(self, family: CurveFamilySample) -> np.ndarray:
        return np.array([self.line_integral(c) for c in family.curves])

    def scaled(self, s: float) -> "DensityGrid":
        return DensityGrid(self.bbox, self.h, self.node_values * s,
                           {k: w * s for k, w in self.component_weights.items()}, self.node_area)

    @property
    def cell_values(self) -> np.ndarray:
        """Cell averages of the bilinear density."""
        V = self.node_values
        return 0.25 * (V[:-1, :-1] + V[1:, :-1] + V[:-1, 1:] + V[1:, 1:])

    def support_cells(self) -> np.ndarray:
        V = self.node_values > 0
        return V[:-1, :-1] | V[1:, :-1] | V[:-1, 1:] | V[1:, 1:]


@dataclass(eq=False)
class RegionDensity:
    """Constant ``value`` on a shapely region plus component weights (exact integrals)."""

    region: object
    value: float
    component_weights: dict = field(default_factory=dict)

    def energy(self) -> float:
        return float(self.value ** 2 * self.region.area + sum(w * w for w in self.component_weights.values()))

    def line_integral(self, curve: QuotientCurve) -> float:
        total = 0.0
        for path in curve.paths:
            line = shapely.LineString(np.c_[path.real, path.imag])
            total += self.value * shapely.intersection(line, self.region).length
        return float(total + sum(self.component_weights.get(p, 0.0) for p in curve.crossed))

    def admissibility(self, family: CurveFamilySample) -> np.ndarray:
        return np.array([self.line_integral(c) for c in family.curves])


@dataclass(eq=False)
class DensitySum:
    """``sum c_k rho_k`` for densities with pairwise disjoint supports (energy adds up)."""

    terms: list

    def energy(self) -> float:
        return float(sum(c * c * r.energy() for c, r in self.terms))

    def line_integral(self, curve: QuotientCurve) -> float:
        return float(sum(c * r.line_integral(curve) for c, r in self.terms))

    def admissibility(self, family: CurveFamilySample) -> np.ndarray:
        return np.array([self.line_integral(c) for c in family.curves])


def average_densities(rhos: Sequence) -> DensitySum:
    """``rho = l^{-1} sum rho_k``; its energy is ``l^{-2} sum E(rho_k)`` when supports are disjoint."""
    rhos = list(rhos)
    if not rhos:
        raise ModulusError("nothing to average")
    _check_disjoint_supports(rhos)
    return DensitySum([(1.0 / len(rhos), r) for r in rhos])


def _support_shape(rho):
    if isinstance(rho, RegionDensity):
        return rho.region if rho.value > 0 else shapely.Polygon()
    x0, y0, _, _ = rho.bbox
    iy, ix = np.nonzero(rho.support_cells())
    h = rho.h
    return shapely.union_all(shapely.box(x0 + ix * h, y0 + iy * h, x0 + (ix + 1) * h, y0 + (iy + 1) * h))


def _check_disjoint_supports(rhos):
    shapes = [_support_shape(r) for r in rhos]
    for i in range(len(rhos)):
        for k in range(i + 1, len(rhos)):
            a, b = rhos[i].component_weights, rhos[k].component_weights
            if any(a[p] > 0 and b[p] > 0 for p in set(a) & set(b)):
                raise ModulusError("densities share a weighted component")
            if shapely.intersection(shapes[i], shapes[k]).area > 0:
                raise ModulusError("densities have overlapping supports")


def _node_area(cell_area: np.ndarray, h: float, lumping: str = "full") -> np.ndarray:
    """Lumped mass: a quarter of each adjacent cell's area inside the domain (``partial``) or
    a quarter of ``h^2`` for every adjacent cell meeting the domain (``full``)."""
    ny, nx = cell_area.shape
    if lumping == "full":
        q = (cell_area > 0) * (h * h / 4)
    elif lumping == "partial":
        q = cell_area / 4
    else:
        raise ValueError(f"unknown lumping {lumping!r}")
    area = np.zeros((ny + 1, nx + 1))
    area[:-1, :-1] += q
    area[1:, :-1] += q
    area[:-1, 1:] += q
    area[1:, 1:] += q
    return area


def make_grid(domain, h: float, margin: int = 1, bbox=None) -> tuple[tuple, np.ndarray]:
    """Grid snapped to multiples of ``h`` covering ``domain`` (or ``bbox``); returns
    (bbox, area of each cell inside the domain)."""
    if bbox is None:
        x0, y0, x1, y1 = domain.bounds
        bbox = (h * (math.floor(x0 / h) - margin), h * (math.floor(y0 / h) - margin),
                h * (math.ceil(x1 / h) + margin), h * (math.ceil(y1 / h) + margin))
    x0, y0, x1, y1 = bbox
    nx, ny = int(round((x1 - x0) / h)), int(round((y1 - y0) / h))
    X, Y = np.meshgrid(x0 + h * np.arange(nx), y0 + h * np.arange(ny))
    boxes = shapely.box(X.ravel(), Y.ravel(), X.ravel() + h, Y.ravel() + h)
    area = np.zeros(nx * ny)
    if not domain.is_empty:
        shapely.prepare(domain)
        hit = np.flatnonzero(shapely.intersects(domain, boxes))
        inner = shapely.contains(domain, boxes[hit])
        area[hit[inner]] = h * h
        edge = hit[~inner]
        if len(edge):
            area[edge] = shapely.area(shapely.intersection(boxes[edge], domain))
    return bbox, area.reshape(ny, nx)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def _constraint_matrix(family, grid: _Grid, comp_ids: list, domain):
    """Rows are curves; columns are grid nodes followed by components. Path integrals are
    taken over the part of each path inside ``domain``."""
    rows, cols, vals = [], [], []
    nn = grid.n_nodes
    col_of = {p: nn + k for k, p in enumerate(comp_ids)}
    for r, curve in enumerate(family.curves):
        for path in curve.paths:
            for sub in _inside_parts(path, domain):
                idx, w = grid.hat_integrals(sub)
                rows.append(np.full(len(idx), r))
                cols.append(idx)
                vals.append(w)
        for p in curve.crossed:
            if p in col_of:
                rows.append(np.array([r]))
                cols.append(np.array([col_of[p]]))
                vals.append(np.array([1.0]))
    m = len(family.curves)
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(m, nn + len(comp_ids)))
    A.sum_duplicates()
    return A


def _inside_parts(path, domain) -> list[np.ndarray]:
    if domain is None:
        return [path]
    line = shapely.LineString(np.c_[path.real, path.imag])
    if domain.contains(line):
        return [path]
    inter = shapely.intersection(line, domain)
    out = []
    for g in getattr(inter, "geoms", [inter]):
        if isinstance(g, shapely.LineString) and g.length > 0:
            c = np.asarray(g.coords)
            out.append(c[:, 0] + 1j * c[:, 1])
    return out


def solve_least_distance(G) -> tuple[np.ndarray, np.ndarray]:
    """``argmin |x|^2`` subject to ``G x >= 1`` for nonnegative ``G``; returns (x, dual l).

    The dual ``max 2 sum(l) - l^T Q l`` with ``Q = G G^T`` is the least-squares problem
    ``min |R l - R^{-T} 1|`` over ``l >= 0`` (``Q = R^T R``), and ``x = G^T l >= 0``.
    """
    G = sparse.csr_matrix(G)
    m = G.shape[0]
    norms = np.sqrt(np.asarray(G.multiply(G).sum(axis=1)).ravel())
    if (norms == 0).any():
        raise ModulusError(f"{int((norms == 0).sum())} curves have zero length and no crossings")
    Q = (G @ G.T).toarray()
    eps = 1e-13 * np.trace(Q) / m
    R = cholesky(Q + eps * np.eye(m), lower=False)
    b = solve_triangular(R, np.ones(m), trans="T", lower=False)
    lam, _ = nnls(R, b, maxiter=50 * m)
    x = np.asarray(G.T @ lam).ravel()
    return x, lam


def transboundary_modulus(domain, components: Mapping, family: CurveFamilySample, h: float,
                          bbox=None, lumping: str = "full") -> tuple[float, DensityGrid]:
    """Optimal discrete density for a sampled family; returns (energy, density).

    ``domain`` is a shapely region (complementary components removed) carrying the density.
    The density is rescaled so that the least discrete line integral is exactly 1, so the
    returned energy is that of an admissible density for the sample; ``lower_bound`` holds
    the dual value of the discrete problem.
    """
    if h <= 0:
        raise ModulusError("mesh must be positive")
    comp_ids = sorted({p for c in family.curves for p in c.crossed}, key=repr)
    for p in comp_ids:
        if p not in components:
            raise ModulusError(f"curve crosses unknown component {p!r}")
    bbox, cell_area = make_grid(domain, h, bbox=bbox)
    grid = _Grid(bbox, h)
    A = _constraint_matrix(family, grid, comp_ids, domain)
    nn = grid.n_nodes
    node_area = _node_area(cell_area, h, lumping).ravel()
    used = np.flatnonzero(np.asarray(A.getnnz(axis=0)).ravel() > 0)
    used = used[(used >= nn) | (node_area[np.minimum(used, nn - 1)] > 0)]
    scale = np.ones(len(used))
    nodes = used < nn
    scale[nodes] = 1.0 / np.sqrt(node_area[used[nodes]])
    G = A[:, used] @ sparse.diags(scale)
    x, lam = solve_least_distance(G)
    s = float(np.min(G @ x))
    if not s > 0:
        raise ModulusError("solver returned an inadmissible density")
    x = x / s
    values = np.zeros(nn)
    values[used[nodes]] = x[nodes] * scale[nodes]
    weights = {p: 0.0 for p in comp_ids}
    for col, xv in zip(used[~nodes], x[~nodes]):
        weights[comp_ids[col - nn]] = float(xv)
    rho = DensityGrid(bbox, h, values.reshape(grid.ny + 1, grid.nx + 1), weights,
                      node_area.reshape(grid.ny + 1, grid.nx + 1))
    gl = np.asarray(G.T @ lam).ravel()
    nrm = float(gl @ gl)
    rho.lower_bound = float(lam.sum() ** 2 / nrm) if nrm > 0 else 0.0
    return rho.energy(), rho

# ---------------------------------------------------------------------------
# Bounds from the convergence proof
# ---------------------------------------------------------------------------


def _component_radial_extent(comp, center: complex) -> tuple[float, float]:
    """(min, max) distance from ``center`` over a closed component."""
    if isinstance(comp, Disk):
        d = abs(comp.center - center)
        return max(d - comp.radius, 0.0), d + comp.radius
    poly = comp if isinstance(comp, PolyJordan) else None
    if poly is None:
        raise GeometryError("components must be Disks or PolyJordans")
    dmin = 0.0 if poly.contains(center)[0] else float(poly.boundary_distance(center)[0])
    return dmin, float(np.abs(poly.vertices - center).max())


def annuli_radii(spec, p_bar, R1: float = 1.0, center: complex = 0.0, count: int = 8,
                 floor: float = 1e-12) -> list[float]:
    """``R_1 = R1``; ``R_k`` is the largest value <= R_{k-1}/4 such that no component other than
    ``p_bar`` meets both the circle of radius ``R_{k-1}/2`` and the open disk of radius ``2 R_k``.

    A connected component meets the circle iff the circle radius lies in its radial extent
    ``[dmin, dmax]``, and misses the open disk iff ``2 R_k <= dmin``; so the maximum is explicit.
    ``spec`` is a CircleDomainSpec (``p_bar`` an index into ``components``) or a mapping of
    components. Stops after ``count`` radii or when the radius drops below ``floor``.
    """
    comps = dict(enumerate(spec.components)) if isinstance(spec, CircleDomainSpec) else dict(spec)
    ext = {k: _component_radial_extent(c, center) for k, c in comps.items() if k != p_bar}
    radii = [float(R1)]
    while len(radii) < count:
        half = radii[-1] / 2
        cap = radii[-1] / 4
        for dmin, dmax in ext.values():
            if dmin <= half <= dmax:
                cap = min(cap, dmin / 2)
        if cap < floor:
            break
        radii.append(cap)
    return radii


def lambda_energy_bound(K: float) -> float:
    return 4 * math.pi + LARGE_COUNT + 64 * K * K


def lambda_upper_bound(components: Mapping, p_bar, R: float, K: float, center: complex = 0.0,
                       n_curves: int = 180, check: bool = True, h: float | None = None):
    """Explicit admissible density for Lambda(j, k) and its energy.

    Value 1 on components of diameter > R/4 meeting the annulus R/2 < |z - center| < R, value
    ``2 diam / R`` on the other components meeting it and ``2 / R`` on the annulus part of the
    domain. Returns ``(energy, rho)``; with ``check`` the energy is compared with the bound
    ``4 pi + 400 + 64 K^2`` and admissibility is tested on a radial sample of the family; with
    a mesh ``h`` the solver estimate on that sample is also required to stay below the energy.
    """
    comps = dict(components)
    ring = annulus(center, R / 2, R, cover=True)
    shapes = {k: component_shape(c) for k, c in comps.items()}
    meets = {k for k, s in shapes.items() if k != p_bar and s.intersects(ring)}
    large, small = [], []
    for k in sorted(meets, key=repr):
        c = comps[k]
        diam = 2 * c.radius if isinstance(c, Disk) else c.diameter
        (large if diam > R / 4 else small).append((k, diam))
    if len(large) > LARGE_COUNT:
        raise GeometryError(f"{len(large)} large components meet the annulus (at most 400 fit)")
    if check:
        for k, diam in small:
            c = comps[k]
            area = math.pi * c.radius ** 2 if isinstance(c, Disk) else c.area
            if diam * diam > 4 * K * K * area / math.pi * (1 + 1e-9):
                raise GeometryError(f"component {k!r} is not {K}-quasiround")
    weights = {k: 1.0 for k, _ in large}
    weights.update({k: 2 * diam / R for k, diam in small})
    dom = domain_minus(ring, {k: comps[k] for k in meets | ({p_bar} if p_bar is not None else set())})
    rho = RegionDensity(dom, 2.0 / R, weights)
    energy = rho.energy()
    if check:
        bound = lambda_energy_bound(K)
        if energy > bound:
            raise GeometryError(f"explicit density energy {energy:.6g} exceeds {bound:.6g}")
        family = family_lambda(center, R, comps, p_bar, n_curves)
        if min(rho.admissibility(family)) < 1 - 1e-9:
            raise GeometryError("explicit density is not admissible on the sampled family")
        if h is not None:
            solve_dom = domain_minus(annulus(center, R / 2, R), comps)
            est, _ = transboundary_modulus(solve_dom, comps, family, h)
            if est > energy:
                raise GeometryError(f"solver estimate {est:.6g} exceeds the explicit energy {energy:.6g}")
    return energy, rho


def annuli_average(components: Mapping, p_bar, K: float, ell: int, R1: float = 1.0,
                   center: complex = 0.0, n_curves: int = 90):
    """Average of the explicit densities of the first ``ell`` annuli.

    Returns ``(rho, energies, M, radii)`` with ``M = max(energies)``. The annuli supports are
    disjoint (the radius rule keeps every component other than ``p_bar`` inside one annulus),
    so ``E(rho) = ell^{-2} sum(energies) <= M / ell``; ``rho`` is admissible for curves that
    join ``S(center, R1)`` to the disk of radius ``R_ell / 2`` off ``p_bar``.
    """
    radii = annuli_radii(dict(components), p_bar, R1, center, count=ell)
    if len(radii) < ell:
        raise ModulusError(f"only {len(radii)} annuli fit above the radius floor")
    parts, energies = [], []
    for R in radii:
        e, rho = lambda_upper_bound(components, p_bar, R, K, center, n_curves=n_curves)
        parts.append(rho)
        energies.append(e)
    avg = average_densities(parts)
    return avg, energies, max(energies), radii


def loewner_lower_bound(delta: float, L: float) -> float:
    """``delta^2 / (8 L^2)``."""
    if not (delta > 0 and L > 0):
        raise ValueError("delta and L must be positive")
    return delta * delta / (8 * L * L)


def loewner_family(disk: Disk, x: complex, J_radius: float, delta: float, components: Mapping,
                   n: int = 120, center: complex = 0.0) -> CurveFamilySample:
    """Segments ``I_t``: for ``0 < t < delta`` the line orthogonal to ``[y, x]`` through the point
    at distance ``t`` from ``y`` (the point of ``disk`` closest to ``x``), followed from that
    point to the circle ``|z - center| = J_radius`` on both sides."""
    u = (x - disk.center) / abs(x - disk.center)
    y = disk.center + disk.radius * u
    if abs(x - y) <= delta:
        raise ModulusError("x must be farther than delta from the disk")
    curves = []
    for t in (np.arange(n) + 0.5) * delta / n:
        zt = y + t * u
        for s in (1j, -1j):
            v = u * s
            # exit of zt + tau v from the circle of radius J_radius
            w = zt - center
            b = (w * np.conj(v)).real
            tau = -b + math.sqrt(b * b - (abs(w) ** 2 - J_radius ** 2))
            curves.append(quotient_curve([zt, zt + tau * v], components))
    return CurveFamilySample(tuple(curves), "loewner")
