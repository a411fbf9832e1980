"""Eccentric distortion, the transboundary upper-gradient check and Schottky reflections."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .geometry import (Disk, GeometryError, PolyJordan, circle_points, eccentricity_of,
                       spherical_derivative, spherical_distance)
from .modulus import QuotientCurve

BOUNDARY_TOL = 1e-9
DEFAULT_DEPTH = 40


class ClassificationError(RuntimeError):
    pass


class NotEvaluableError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Eccentricity
# ---------------------------------------------------------------------------


def eccentricity(A) -> float:
    """Upper bound of ``inf{H : B subset A subset HB}`` over concentric balls ``B``."""
    if not isinstance(A, PolyJordan):
        A = PolyJordan(A)
    return float(eccentricity_of(A).K)


@dataclass(frozen=True)
class DistortionSample:
    x: complex
    scales: tuple
    E_values: tuple
    estimate: float

    def __post_init__(self):
        want = min(max(a, b) for a, b in self.E_values)
        if abs(want - self.estimate) > 1e-12 * want or self.estimate < 1:
            raise ValueError("estimate must be min over scales of max(E(A), E(g(A))) and >= 1")


def eccentric_distortion(g: Callable, x: complex, scales: Sequence[float], n: int = 256) -> DistortionSample:
    """``min_s max(E(A_s), E(g(A_s)))`` for the disks ``A_s = D(x, s)`` (as ``n``-gons)."""
    x = complex(x)
    scales = tuple(float(s) for s in scales)
    if not scales or min(scales) <= 0:
        raise ValueError("scales must be positive")
    pairs = []
    for s in scales:
        A = circle_points(x, s, n)
        gA = np.asarray(g(A), dtype=complex)
        if not np.isfinite(gA).all():
            raise GeometryError("image of the test disk is unbounded")
        pairs.append((eccentricity(PolyJordan(A)), eccentricity(PolyJordan(gA, check=False))))
    est = min(max(a, b) for a, b in pairs)
    return DistortionSample(x, scales, tuple(pairs), est)


# ---------------------------------------------------------------------------
# Upper-gradient inequality
# ---------------------------------------------------------------------------


def _path_integral(g: Callable, path: np.ndarray, step: float) -> float:
    """Midpoint rule for ``int |Dg| ds`` with central differences along the path direction
    (spherical derivative against spherical arclength ``2 |dz| / (1 + |z|^2)``)."""
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        L = abs(b - a)
        if L == 0:
            continue
        k = max(int(np.ceil(L / step)), 4)
        u = (b - a) / L
        mids = a + u * L * (np.arange(k) + 0.5) / k
        eps = 0.25 * L / k
        gp = (np.asarray(g(mids + eps * u)) - np.asarray(g(mids - eps * u))) / (2 * eps * u)
        ds = 2.0 / (1.0 + np.abs(mids) ** 2) * L / k
        total += float(np.sum(spherical_derivative(g(mids), mids, gp) * ds))
    return total


def check_upper_gradient(g: Callable, gamma: QuotientCurve, component_image_diams: Mapping,
                         step: float = 1e-3) -> float:
    """Slack ``RHS - LHS`` of the transboundary upper-gradient inequality for ``g`` along ``gamma``.

    LHS is the spherical distance of the endpoint images; RHS is ``int |Dg| ds`` over the parts
    of ``gamma`` in the domain plus the spherical diameters of the images of crossed components.
    """
    a, b = gamma.endpoints()
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("curve endpoints must lie in the domain, not in a component")
    ga, gb = np.asarray(g(np.array([a, b])), dtype=complex)
    lhs = float(spherical_distance(ga, gb))
    rhs = sum(_path_integral(g, p, step) for p in gamma.paths)
    for q in gamma.crossed:
        if q not in component_image_diams:
            raise KeyError(f"no image diameter for component {q!r}")
        rhs += float(component_image_diams[q])
    return rhs - lhs


# ---------------------------------------------------------------------------
# Reflections and Schottky words
# ---------------------------------------------------------------------------


def reflect(circle: Disk, z):
    """``c + r^2 / conj(z - c)``; the center goes to ``inf``."""
    if circle.radius <= 0:
        raise ValueError("reflection needs a positive radius")
    z = np.asarray(z, dtype=complex)
    c, r = circle.center, circle.radius
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.conj(z - c)
        out = np.where(d == 0, complex(np.inf), c + r * r / np.where(d == 0, 1, d))
    out = np.where(np.isinf(z), c, out)
    return complex(out) if out.ndim == 0 else out


def reflect_disk(circle: Disk, disk: Disk) -> Disk:
    """Image of a closed disk not containing the reflection center (exact circle algebra)."""
    d = disk.center - circle.center
    den = abs(d) ** 2 - disk.radius ** 2
    if den <= 0:
        raise GeometryError("the disk contains the reflection center")
    r2 = circle.radius ** 2
    return Disk(circle.center + r2 * d / den, r2 * disk.radius / den)


@dataclass(frozen=True)
class ReflectionWord:
    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(a == b for a, b in zip(idx[:-1], idx[1:])):
            raise ValueError("reflection words must be reduced")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __mul__(self, other: "ReflectionWord") -> "ReflectionWord":
        """Composition ``self o other`` with free reduction."""
        out = list(self.indices)
        for i in other.indices:
            if out and out[-1] == i:
                out.pop()
            else:
                out.append(i)
        return ReflectionWord(tuple(out))

    def inverse(self) -> "ReflectionWord":
        return ReflectionWord(self.indices[::-1])

    def apply(self, circles: Sequence[Disk], z):
        """``R_{i1} o ... o R_{ik}`` applied to points."""
        for i in reversed(self.indices):
            z = reflect(circles[i], z)
        return z

    def apply_disk(self, circles: Sequence[Disk], disk: Disk) -> Disk:
        for i in reversed(self.indices):
            disk = reflect_disk(circles[i], disk)
        return disk


def word_count(n: int, L: int) -> int:
    return 1 + sum(n * (n - 1) ** (k - 1) for k in range(1, L + 1))


def enumerate_words(n_circles: int, max_len: int) -> list[ReflectionWord]:
    """All reduced words of length ``<= max_len`` in shortlex order."""
    if n_circles < 1 or max_len < 0:
        raise ValueError("need n_circles >= 1 and max_len >= 0")
    out = [ReflectionWord(())]
    layer = [()]
    for _ in range(max_len):
        layer = [w + (i,) for w in layer for i in range(n_circles) if not w or w[-1] != i]
        out.extend(ReflectionWord(w) for w in layer)
    return out


@dataclass(frozen=True)
class PointType:
    tag: str
    word: ReflectionWord
    evidence: tuple = field(default=())

    def __post_init__(self):
        if self.tag not in ("interior", "boundary", "buried"):
            raise ValueError(f"unknown tag {self.tag!r}")
        if self.tag == "buried":
            for a, b in zip(self.evidence[:-1], self.evidence[1:]):
                inner = abs(b.center - a.center) + b.radius <= a.radius * (1 + 1e-12)
                if not (inner and b.radius < a.radius):
                    raise ValueError("buried evidence must be strictly nested disks")


def _disks_of(spec) -> list[Disk]:
    comps = list(getattr(spec, "components", spec))
    return comps


def classify_point(spec, x: complex, max_depth: int = DEFAULT_DEPTH, tol: float = BOUNDARY_TOL) -> PointType:
    """Interior / boundary / buried type of ``x`` for the Schottky group of a circle domain.

    Level ``k`` holds the word ``T`` of length ``k`` with ``x`` in the open disk ``T'(D_i)``
    (``T = T' R_i``); the children are the disks ``T(D_j)``, ``j != i``. ``x`` lies in ``T(D)``
    when it is in no closed child and on ``T(dD)`` when it is on a child circle.
    """
    disks = _disks_of(spec)
    round_ = [d for d in disks if d.radius > 0]
    if not round_:
        raise ValueError("the domain needs a disk of positive radius")
    x = complex(x)
    word: tuple = ()
    nested: list[Disk] = []
    for _ in range(max_depth + 1):
        T = ReflectionWord(word)
        children = []
        for j, d in enumerate(disks):
            if word and j == word[-1]:
                continue
            if d.radius == 0:
                img = Disk(complex(T.apply(disks, d.center)), 0.0) if word else d
            else:
                img = T.apply_disk(disks, d)
            children.append((j, img))
        for j, img in children:
            # the absolute tolerance is capped relative to the radius once circles get tiny
            eff = min(tol, 1e-6 * img.radius) if img.radius > 0 else tol
            if abs(abs(x - img.center) - img.radius) <= eff:
                return PointType("boundary", T)
        inside = [(j, img) for j, img in children if img.radius > 0 and abs(x - img.center) < img.radius]
        if not inside:
            return PointType("interior", T)
        j, img = inside[0]
        if nested and img.radius >= nested[-1].radius:
            raise ClassificationError("nested disks stopped shrinking")
        nested.append(img)
        word = word + (j,)
    if len(nested) < 2:
        raise ClassificationError("depth cap reached without nesting progress")
    return PointType("buried", ReflectionWord(word[:-1]), tuple(nested))


def circle_through(a: complex, b: complex, c: complex) -> Disk:
    """Circumcircle of three points."""
    ax, ay, bx, by, cx, cy = a.real, a.imag, b.real, b.imag, c.real, c.imag
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0:
        raise GeometryError("collinear points have no circumcircle")
    ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) + (cx * cx + cy * cy) * (ay - by)) / d
    uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) + (cx * cx + cy * cy) * (bx - ax)) / d
    center = complex(ux, uy)
    return Disk(center, abs(a - center))


def image_circles(g: Callable, spec) -> list[Disk]:
    """``S_i* = g(S_i)`` from three boundary points per circle."""
    out = []
    for d in _disks_of(spec):
        if d.radius == 0:
            out.append(Disk(complex(np.asarray(g(np.array([d.center])))[0]), 0.0))
            continue
        p = np.asarray(g(circle_points(d.center, d.radius, 3)), dtype=complex)
        out.append(circle_through(*p))
    return out


def extend_map(g: Callable, spec, word: ReflectionWord, x, circles_star: Sequence[Disk] | None = None):
    """``T* o g o T^{-1}`` at points ``x`` of ``T(D)`` (or ``T(dD)``), where ``T*`` reflects in
    the image circles ``g(S_i)``."""
    disks = _disks_of(spec)
    if circles_star is None:
        circles_star = image_circles(g, spec)
    if any(disks[i].radius == 0 for i in word.indices):
        raise NotEvaluableError("words may not use point components")
    y = word.inverse().apply(disks, np.asarray(x, dtype=complex))
    return word.apply(circles_star, np.asarray(g(y), dtype=complex))


def extend_at(g: Callable, spec, x, max_depth: int = DEFAULT_DEPTH, circles_star=None):
    """Classify ``x`` and evaluate the extension; buried points are not evaluable by a word."""
    pt = classify_point(spec, x, max_depth)
    if pt.tag == "buried":
        raise NotEvaluableError("buried points are limits of nested disks")
    return complex(extend_map(g, spec, pt.word, np.array([x]), circles_star)[0]), pt


def mobius(a, b, c, d) -> Callable:
    """``z -> (a z + b) / (c z + d)`` on arrays (the pole maps to ``inf``, ``inf`` to ``a / c``)."""
    if a * d - b * c == 0:
        raise ValueError("degenerate Mobius coefficients")

    def g(z):
        z = np.asarray(z, dtype=complex)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = (a * z + b) / (c * z + d)
        at_inf = complex(np.inf) if c == 0 else a / c
        return np.where(np.isinf(z), at_inf, w)

    return g
