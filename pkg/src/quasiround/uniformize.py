"""Numerical Koebe uniformization of finitely connected polygonal domains.

The domain is the complement of finitely many disjoint polygonal holes (``inf`` is interior).
Koebe osculation cycles over the holes; each visit applies the exterior Riemann map of the
current image of one hole (``g(z) = z + O(1/z)``), which makes that hole round and moves the
others. The chain converges geometrically to the circle-domain map with hydrodynamic
normalization; a final affine map fixes two finite points ``a2, a3``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exhaust import CircleDomainSpec
from .geometry import (DEFAULT_RESOLUTION, Disk, GeometryError, PolyJordan, as_points,
                       circle_points, polygons_disjoint)
from .zipper import ExteriorZipper

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
MAX_ROUNDS = 200
# absolute residual floor relative to the domain scale (round-off of the composed chain)
ROUNDOFF = 1e-12


class UniformizeError(RuntimeError):
    def __init__(self, msg: str, history: Sequence[float] = ()):
        self.history = list(history)
        super().__init__(msg)


class DomainError(ValueError):
    """Evaluation point outside the source (or target) domain."""


# ---------------------------------------------------------------------------
# Domains and circle fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FinitelyConnectedDomain:
    """Complement in the sphere of finitely many disjoint closed polygonal holes."""

    holes: tuple

    def __post_init__(self):
        holes = tuple(h if isinstance(h, PolyJordan) else PolyJordan(h) for h in self.holes)
        object.__setattr__(self, "holes", holes)
        if not holes:
            raise GeometryError("a domain needs at least one hole")
        if not polygons_disjoint(holes):
            raise GeometryError("hole closures must be pairwise disjoint")

    @classmethod
    def from_spec(cls, spec: CircleDomainSpec, n: int = DEFAULT_RESOLUTION) -> "FinitelyConnectedDomain":
        """Polygonize a circle domain (disks only; points have no polygon)."""
        if spec.points:
            raise GeometryError("point components cannot be polygonized")
        return cls(tuple(PolyJordan(circle_points(d.center, d.radius, n), check=False) for d in spec.disks))

    @classmethod
    def from_step(cls, step) -> "FinitelyConnectedDomain":
        return cls(tuple(step.polygons))

    def __len__(self):
        return len(self.holes)

    @property
    def scale(self) -> float:
        v = np.concatenate([h.vertices for h in self.holes])
        return float(max(np.abs(v).max(), np.ptp(v.real), np.ptp(v.imag)))

    def contains(self, z) -> np.ndarray:
        """True for points of the (open) domain; ``inf`` is interior."""
        z = as_points(z)
        out = np.ones(len(z), bool)
        fin = np.isfinite(z)
        for h in self.holes:
            out[fin] &= ~h.contains(z[fin])
        return out

    def hole_of(self, z) -> np.ndarray:
        """Index of the hole containing each point (-1 in the domain)."""
        z = as_points(z)
        out = np.full(len(z), -1)
        for k, h in enumerate(self.holes):
            out[(out < 0) & h.contains(z)] = k
        return out


def fit_circle(z) -> tuple[complex, float]:
    """Algebraic (Kasa) fit refined by one Gauss-Newton step on the geometric residual."""
    z = as_points(z)
    m = z.mean()
    w = z - m
    s = max(float(np.abs(w).max()), 1e-300)
    w = w / s
    x, y = w.real, w.imag
    a = np.c_[x, y, np.ones_like(x)]
    sol, *_ = np.linalg.lstsq(a, -(x * x + y * y), rcond=None)
    c = complex(-sol[0] / 2, -sol[1] / 2)
    r = float(np.sqrt(max(abs(c) ** 2 - sol[2], 0.0)))
    d = np.abs(w - c)
    ok = d > 0
    if ok.all():
        jac = np.c_[-(w - c).real / d, -(w - c).imag / d, -np.ones_like(d)]
        step, *_ = np.linalg.lstsq(jac, -(d - r), rcond=None)
        c += complex(step[0], step[1])
        r += float(step[2])
    return m + s * c, s * r


def circularity(z) -> tuple[float, float, complex, float]:
    """(relative residual, absolute residual, center, radius) of the best-fit circle."""
    c, r = fit_circle(z)
    dev = float(np.abs(np.abs(as_points(z) - c) - r).max())
    return dev / r if r > 0 else np.inf, dev, c, r


# ---------------------------------------------------------------------------
# Simply connected engine
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RiemannMapSC:
    """Exterior map of one Jordan curve onto ``|w| > 1``, ``inf -> inf``, positive derivative there."""

    zipper: ExteriorZipper

    def __call__(self, z):
        return self.zipper.to_unit(z)

    def inverse(self, w):
        return self.zipper.from_unit(w)

    @property
    def capacity(self) -> float:
        return self.zipper.image_radius


def riemann_map_sc(boundary, anchor: complex | None = None, n: int | None = None) -> RiemannMapSC:
    """Riemann map of the exterior of a polygon onto the exterior of the unit disk.

    ``anchor`` is a point inside the curve (defaults to an interior center); the boundary is
    resampled to ``n`` points by arc length when ``n`` is given.
    """
    poly = boundary if isinstance(boundary, PolyJordan) else PolyJordan(boundary)
    if anchor is not None and not poly.contains(anchor, closed=False)[0]:
        raise GeometryError("anchor must lie inside the curve")
    pts = poly.resampled(n) if n else poly.vertices
    if len(pts) < 32:
        warnings.warn(f"only {len(pts)} boundary points; accuracy will be poor", RuntimeWarning,
                      stacklevel=2)
    return RiemannMapSC(ExteriorZipper(pts, anchor))


# ---------------------------------------------------------------------------
# Koebe osculation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConformalMapNumeric:
    """``f = A o g_N o ... o g_1`` with exterior osculation maps ``g_k`` and affine ``A``."""

    source: FinitelyConnectedDomain
    target: CircleDomainSpec
    chain: list
    normalization: tuple
    alpha: complex
    beta: complex
    component_images: dict
    residuals: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    tol: float = DEFAULT_TOL
    deviations: dict = field(default_factory=dict)
    floor: float = 0.0

    @property
    def converged(self) -> dict:
        """Per hole: relative residual below ``tol`` or absolute deviation at round-off level."""
        return {k: self.residuals[k] < self.tol or self.deviations.get(k, np.inf) < self.floor
                for k in self.residuals}

    def hydrodynamic(self, z):
        z = np.asarray(z, dtype=complex)
        for g in self.chain:
            z = g(z)
        return z

    def hydrodynamic_inverse(self, w):
        w = np.asarray(w, dtype=complex)
        for g in reversed(self.chain):
            w = g.inverse(w)
        return w

    def __call__(self, z):
        return evaluate(self, z)

    def inverse(self, w):
        return evaluate_inverse(self, w)


def koebe_uniformize(domain: FinitelyConnectedDomain, normalization: tuple | None = None,
                     tol: float = DEFAULT_TOL, n: int = DEFAULT_RESOLUTION,
                     max_rounds: int = MAX_ROUNDS) -> ConformalMapNumeric:
    """Koebe osculation onto a circle domain fixing ``inf, a2, a3``.

    Holes are visited round-robin by decreasing diameter; a hole is osculated when its
    circularity residual is at least ``tol``. Residuals are relative to the fitted radius,
    with an absolute floor of ``ROUNDOFF * scale`` for holes near round-off size.
    """
    if not isinstance(domain, FinitelyConnectedDomain):
        domain = FinitelyConnectedDomain(tuple(domain))
    scale = domain.scale
    if normalization is None:
        normalization = default_normalization(domain)
    if len(normalization) == 3:
        normalization = tuple(normalization[1:])
    a2, a3 = (complex(a) for a in normalization)
    if a2 == a3:
        raise GeometryError("normalization points must be distinct")
    if not domain.contains([a2, a3]).all():
        raise DomainError("normalization points must lie in the domain")
    floor = ROUNDOFF * scale
    samples = [h.resampled(n) for h in domain.holes]
    order = sorted(range(len(samples)), key=lambda k: (-domain.holes[k].diameter, k))
    chain: list[ExteriorZipper] = []
    history: list[float] = []

    def converged(k):
        rel, dev, _, _ = circularity(samples[k])
        return rel < tol or dev < floor, rel

    for rnd in range(max_rounds):
        status = [converged(k) for k in range(len(samples))]
        worst = max(s[1] for s in status)
        history.append(worst)
        if all(s[0] for s in status):
            break
        for k in order:
            ok, _ = converged(k)
            if ok:
                continue
            # samples always hold the true images of the source nodes and are the zipper
            # nodes themselves, so residuals describe the image of the source polygon
            g = ExteriorZipper(samples[k], fit_circle(samples[k])[0])
            chain.append(g)
            for i in range(len(samples)):
                samples[i] = g(_off_curve(samples[i]) if i == k else samples[i])
        log.debug("koebe round %d: worst residual %.3g, chain %d", rnd, worst, len(chain))
    else:
        raise UniformizeError(f"no convergence after {max_rounds} rounds "
                              f"(last residual {history[-1]:.3g})", history)

    # affine normalization A(w) = alpha w + beta with A(g(a_k)) = a_k
    ga2, ga3 = _chain(chain, np.array([a2, a3]))
    alpha = (a2 - a3) / (ga2 - ga3)
    beta = a2 - alpha * ga2
    images, residuals, deviations = {}, {}, {}
    for k, s in enumerate(samples):
        rel, dev, c, r = circularity(s)
        images[k] = Disk(alpha * c + beta, abs(alpha) * r)
        residuals[k] = rel
        deviations[k] = dev
    try:
        target = CircleDomainSpec.build(list(images.values()))
    except GeometryError as exc:
        raise UniformizeError(f"image disks overlap: {exc}", history) from exc
    return ConformalMapNumeric(domain, target, chain, (np.inf, a2, a3), alpha, beta, images,
                               residuals, history, tol, deviations, floor)


def _off_curve(z: np.ndarray, rel: float = 1e-10) -> np.ndarray:
    """Nodes of a counterclockwise curve pushed outward by ``rel`` times the local spacing
    (at least 64 ulp). Evaluating a zipper exactly on its own curve lands on branch cuts."""
    t = np.roll(z, -1) - np.roll(z, 1)
    sp = np.minimum(np.abs(np.roll(z, -1) - z), np.abs(z - np.roll(z, 1)))
    eps = np.maximum(rel * sp, 64 * np.finfo(float).eps * np.abs(z))
    return z - 1j * t / np.abs(t) * eps


def _chain(chain, z):
    z = np.asarray(z, dtype=complex)
    for g in chain:
        z = g(z)
    return z


def default_normalization(domain: FinitelyConnectedDomain) -> tuple:
    """Two deterministic domain points: far out on the positive axes of the hole bounding box."""
    v = np.concatenate([h.vertices for h in domain.holes])
    x1, y1 = v.real.max(), v.imag.max()
    span = max(np.ptp(v.real), np.ptp(v.imag), 1e-300)
    return (np.inf, complex(x1 + span, 0.5 * (v.imag.min() + y1)),
            complex(0.5 * (v.real.min() + x1), y1 + span))


def evaluate(fmap: ConformalMapNumeric, z):
    """``f(z)`` for points of the source domain (``inf`` maps to ``inf``)."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    fin = np.isfinite(flat)
    inside = fmap.source.hole_of(flat[fin]) >= 0
    if inside.any():
        raise DomainError(f"{int(inside.sum())} points lie in a hole of the source domain")
    out = flat.copy()
    out[fin] = fmap.alpha * fmap.hydrodynamic(flat[fin]) + fmap.beta
    return out.reshape(z.shape)


def evaluate_inverse(fmap: ConformalMapNumeric, w):
    """``f^{-1}(w)`` for points of the target circle domain."""
    w = np.asarray(w, dtype=complex)
    flat = w.ravel()
    fin = np.isfinite(flat)
    if fin.any() and fmap.component_images:
        c = np.array([d.center for d in fmap.component_images.values()])
        r = np.array([d.radius for d in fmap.component_images.values()])
        if (np.abs(flat[fin, None] - c[None, :]) <= r[None, :]).any():
            raise DomainError("points lie in a disk of the target domain")
    out = flat.copy()
    out[fin] = fmap.hydrodynamic_inverse((flat[fin] - fmap.beta) / fmap.alpha)
    return out.reshape(w.shape)


def image_component_disk(fmap: ConformalMapNumeric, hole_id: int) -> Disk:
    if hole_id not in fmap.component_images:
        raise KeyError(f"unknown hole id {hole_id}")
    return fmap.component_images[hole_id]

