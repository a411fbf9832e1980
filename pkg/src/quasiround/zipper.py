"""Geodesic zipper maps.

``InteriorZipper`` maps the interior of the curve through a cyclic point list onto the unit
disk (an interior anchor going to 0). The curve is the hyperbolic-geodesic interpolation of
the points, so every input point lands exactly on the unit circle.

``ExteriorZipper`` maps the exterior of a closed curve onto the exterior of a disk with the
hydrodynamic normalization ``g(z) = z + O(1/z)``; it is the simply connected building block of
Koebe osculation.
"""
from __future__ import annotations

import numpy as np

from .geometry import GeometryError, PolyJordan, as_points


class ZipperError(GeometryError):
    pass


def _csqrt(z):
    return np.sqrt(np.asarray(z, dtype=complex))


class InteriorZipper:
    """Conformal map of a Jordan region onto the unit disk.

    The elementary steps are stored as arrays so that evaluation is a short loop of vectorized
    operations over the points being mapped.
    """

    def __init__(self, points, anchor: complex):
        z = as_points(points)
        if len(z) < 3:
            raise ZipperError("need at least three boundary points")
        self.points = z
        self.anchor = complex(anchor)
        self.z0, self.z1 = z[0], z[1]
        n = len(z)
        # images of the not-yet-processed points plus the anchor (last entry)
        w = self._phi1(np.append(z[2:], self.anchor))
        invb = np.zeros(n - 2)
        cc = np.zeros(n - 2)
        zeta0 = np.inf  # image of z0 on the extended real line
        for k in range(n - 2):
            a = w[k]
            if not a.imag > 0:
                raise ZipperError(f"boundary point {k + 2} left the upper half-plane; "
                                  "curve too coarse or self-intersecting")
            m2 = a.real ** 2 + a.imag ** 2
            invb[k] = a.real / m2
            cc[k] = m2 / a.imag
            rest = w[k + 1:]
            rest = rest / (1.0 - rest * invb[k])
            w[k + 1:] = self._slit(rest, cc[k])
            w[k] = 0.0
            zeta0 = self._real_step(zeta0, invb[k], cc[k])
        self._invb, self._c = invb, cc
        if not np.isfinite(zeta0) or zeta0 == 0.0:
            raise ZipperError("degenerate closing arc")
        self._inv_zeta0 = 1.0 / zeta0
        a = w[-1]
        a = a / (1.0 - a * self._inv_zeta0)
        self._quad1 = a.real > 0
        a = a * a if self._quad1 else -a * a
        if not a.imag > 0:
            raise ZipperError("anchor is not inside the curve")
        self._A = a

    # elementary pieces -------------------------------------------------------
    def _phi1(self, z):
        return 1j * _csqrt((z - self.z1) / (z - self.z0))

    def _phi1_inv(self, w):
        s2 = (-1j * w) ** 2
        return (s2 * self.z0 - self.z1) / (s2 - 1.0)

    @staticmethod
    def _slit(z, c):
        return z * _csqrt(1.0 + (c * c) / (z * z))

    @staticmethod
    def _slit_inv(w, c):
        return w * _csqrt(1.0 - (c * c) / (w * w))

    @staticmethod
    def _real_step(x, invb, c):
        if np.isinf(x):
            x = -1.0 / invb if invb != 0 else x
        else:
            den = 1.0 - x * invb
            x = x / den if den != 0 else np.inf
        if np.isinf(x):
            return x
        return float(np.sign(x) * np.hypot(x, c))

    # evaluation --------------------------------------------------------------
    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        w = self._phi1(z.ravel())
        with np.errstate(divide="ignore", invalid="ignore"):
            for invb, c in zip(self._invb, self._c):
                w = w / (1.0 - w * invb)
                w = self._slit(w, c)
            w = w / (1.0 - w * self._inv_zeta0)
            w = w * w if self._quad1 else -w * w
            w = (w - self._A) / (w - np.conj(self._A))
        return w.reshape(shape)

    def inverse(self, w):
        w = np.asarray(w, dtype=complex)
        shape = w.shape
        w = w.ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (self._A - w * np.conj(self._A)) / (1.0 - w)
            z = _csqrt(z) if self._quad1 else -_csqrt(-z)
            z = z / (1.0 + z * self._inv_zeta0)
            for invb, c in zip(self._invb[::-1], self._c[::-1]):
                z = self._slit_inv(z, c)
                z = z / (1.0 + z * invb)
            z = self._phi1_inv(z)
        return z.reshape(shape)


class ExteriorZipper:
    """Map from the exterior of a closed curve onto the exterior of a disk.

    ``g(z) = z + O(1/z)`` near infinity; ``image_center`` and ``image_radius`` describe the
    image disk. ``to_unit`` gives the map onto the exterior of the unit disk with positive
    derivative at infinity.
    """

    def __init__(self, points, center: complex | None = None):
        z = as_points(points)
        if center is None:
            center = PolyJordan(z, check=False).centroid
            if not PolyJordan(z, check=False).contains(center, closed=False)[0]:
                from .geometry import quasiround_certificate
                center = quasiround_certificate(PolyJordan(z, check=False)).center
        self.c = complex(center)
        self.points = z
        self.inner = InteriorZipper(1.0 / (z - self.c), 0.0)
        rho = 0.5 / np.abs(z - self.c).max()
        m = 64
        u = rho * np.exp(2j * np.pi * np.arange(m) / m)
        coef = np.fft.fft(self.inner(u)) / m
        g1 = coef[1] / rho
        g2 = coef[2] / rho ** 2
        self.G1, self.G2 = g1, g2
        self.shift = self.c + g2 / g1
        self.image_center = self.shift
        self.image_radius = float(abs(g1))
        # Far from the curve the inverted-plane evaluation loses digits (the point sits near
        # the anchor, relative to a huge curve), so the far field uses Laurent series sampled
        # on circles of twice the curve (resp. image disk) radius.
        rh = float(np.abs(z - self.c).max())
        self._far_z = 4 * rh
        self._coef_z = self._laurent(self._near_call, self.c, 2 * rh)
        self._far_w = 4 * self.image_radius
        self._coef_w = self._laurent(self._near_inverse, self.shift, 2 * self.image_radius)

    LAURENT_TERMS = 64

    def _laurent(self, fn, center, radius):
        m = 2 * self.LAURENT_TERMS
        e = np.exp(2j * np.pi * np.arange(m) / m)
        f = fn(center + radius * e) - center - radius * e
        spec = np.fft.fft(f) / m
        k = np.arange(self.LAURENT_TERMS)
        return spec[(-k) % m] * radius ** k  # coefficients of (z - center)^(-k)

    @staticmethod
    def _series(coef, center, z):
        t = 1.0 / (z - center)
        acc = np.zeros_like(z)
        for b in coef[::-1]:
            acc = acc * t + b
        return z + acc

    def _near_call(self, z):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.G1 / self.inner(1.0 / (z - self.c)) + self.shift
            bad = ~np.isfinite(out) & np.isfinite(z)
            if bad.any():
                # the first two boundary points are branch points of the first step
                zz = z[bad] + (z[bad] - self.c) * 1e-10
                out[bad] = self.G1 / self.inner(1.0 / (zz - self.c)) + self.shift
        return out

    def _near_inverse(self, w):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.c + 1.0 / self.inner.inverse(self.G1 / (w - self.shift))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        out = z.copy()
        fin = np.isfinite(z)
        far = fin & (np.abs(z - self.c) >= self._far_z)
        near = fin & ~far
        if far.any():
            out[far] = self._series(self._coef_z, self.c, z[far])
        if near.any():
            out[near] = self._near_call(z[near])
        return out

    def inverse(self, w):
        w = np.asarray(w, dtype=complex)
        out = w.copy()
        fin = np.isfinite(w)
        far = fin & (np.abs(w - self.shift) >= self._far_w)
        near = fin & ~far
        if far.any():
            out[far] = self._series(self._coef_w, self.shift, w[far])
        if near.any():
            out[near] = self._near_inverse(w[near])
        return out

    def to_unit(self, z):
        """Exterior Riemann map onto ``|w| > 1`` with positive derivative at infinity."""
        return (np.asarray(self(z)) - self.image_center) / self.image_radius

    def from_unit(self, w):
        return self.inverse(self.image_center + self.image_radius * np.asarray(w, dtype=complex))
