import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasiround.geometry import (Disk, GeometryError, PolyJordan, circle_points, hausdorff_distance,
                                 neighborhood_contains, quasiround_certificate, region_gap,
                                 spherical_derivative, spherical_distance)

SQUARE = PolyJordan(np.array([-1 - 1j, 1 - 1j, 1 + 1j, -1 + 1j]))


def _grid_oracle_K(poly: PolyJordan, n: int = 81) -> float:
    """Exhaustive center search: r_in = boundary distance, r_out = max vertex distance."""
    x0, y0, x1, y1 = poly.bbox
    g = np.linspace(x0, x1, n)[None, :] + 1j * np.linspace(y0, y1, n)[:, None]
    g = g.ravel()
    g = g[poly.contains(g, closed=False)]
    r_in = poly.boundary_distance(g)
    r_out = np.abs(poly.vertices[None, :] - g[:, None]).max(axis=1)
    return float((r_out / r_in).min())


def test_circle_polygon_certificate():
    c = quasiround_certificate(PolyJordan(circle_points(0, 1, 64)))
    assert c.K <= 1.01


def test_square_certificate_matches_grid_oracle():
    c = quasiround_certificate(SQUARE)
    assert c.K == pytest.approx(math.sqrt(2), abs=0.01)
    assert c.K <= _grid_oracle_K(SQUARE) + 1e-6


def test_certificate_containments():
    poly = PolyJordan(np.array([0, 3, 3 + 1j, 1 + 2j, 0 + 1j]))
    c = quasiround_certificate(poly)
    assert c.K >= 1
    assert (np.abs(poly.vertices - c.center) <= c.r_out * (1 + 1e-12)).all()
    assert poly.contains(circle_points(c.center, c.r_in, 256)).all()


def test_degenerate_polygon_rejected():
    with pytest.raises(GeometryError):
        PolyJordan(np.array([0, 1, 2]))


def test_polygon_orientation_normalized():
    cw = PolyJordan(SQUARE.vertices[::-1])
    assert cw.area > 0
    z = cw.vertices
    signed = 0.5 * np.sum((z.real * np.roll(z.imag, -1)) - (np.roll(z.real, -1) * z.imag))
    assert signed > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(-5, 5))
def test_certificate_equivariance(lam, sx, sy):
    shift = complex(sx, sy)
    poly = PolyJordan(np.array([0, 2, 2 + 1j, 0.5 + 1.5j, 1j]))
    a = quasiround_certificate(poly)
    b = quasiround_certificate(poly.scaled(lam).translated(shift))
    assert b.K == pytest.approx(a.K, rel=1e-3)
    assert b.r_in == pytest.approx(lam * a.r_in, rel=1e-3)


def test_hausdorff_examples():
    u = circle_points(0, 1, 512)
    assert hausdorff_distance(u, u) == 0
    assert hausdorff_distance(u, circle_points(0, 2, 512)) == pytest.approx(1, abs=1e-12)
    assert hausdorff_distance(u, circle_points(3, 1, 512)) == pytest.approx(3, abs=1e-3)
    with pytest.raises(GeometryError):
        hausdorff_distance([], u)


points = st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                  min_size=1, max_size=12)


@settings(max_examples=50, deadline=None)
@given(points, points, points)
def test_hausdorff_metric_axioms(a, b, c):
    dab, dba = hausdorff_distance(a, b), hausdorff_distance(b, a)
    assert dab == dba >= 0
    assert hausdorff_distance(a, a) == 0
    assert hausdorff_distance(a, c) <= dab + hausdorff_distance(b, c) + 1e-9
    if set(a) != set(b):
        assert dab > 0


def test_spherical_distance_examples():
    assert spherical_distance(0, 0) == 0
    assert spherical_distance(0, complex(math.inf)) == pytest.approx(math.pi)
    # oracle: integrate the density 2/(1+t^2) along [0, 1]
    t = np.linspace(0, 1, 100001)
    y = 2 / (1 + t ** 2)
    geodesic = float(np.sum((y[1:] + y[:-1]) / 2) * (t[1] - t[0]))
    assert spherical_distance(0, 1) == pytest.approx(geodesic, abs=1e-9)
    assert spherical_distance(0, 1) == pytest.approx(math.pi / 2, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_spherical_distance_range_symmetry(z, w):
    d = spherical_distance(z, w)
    assert 0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(spherical_distance(w, z), abs=1e-12)


def test_spherical_derivative_examples():
    assert spherical_derivative(0, 0, 1) == 1
    assert spherical_derivative(0, 0, 2) == 2
    assert spherical_derivative(0.5, 2, -0.25) == pytest.approx(1, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_spherical_derivative_chain_rule(z):
    # f(z) = 2z + 1, g(w) = 1/w
    if abs(2 * z + 1) < 1e-3:
        return
    fz, fp = 2 * z + 1, 2
    gfz, gp = 1 / fz, -1 / fz ** 2
    whole = spherical_derivative(gfz, z, gp * fp)
    parts = spherical_derivative(fz, z, fp) * spherical_derivative(gfz, fz, gp)
    assert whole == pytest.approx(parts, rel=1e-12)


def test_neighborhood_examples():
    assert neighborhood_contains([0], 1, 0.5)
    assert not neighborhood_contains([0], 1, 1.5)
    assert neighborhood_contains(circle_points(0, 1, 256), 0.1, 1.05)


def test_disk_basics():
    d = Disk(1j, 2)
    assert d.contains(1j + 2)
    assert not d.contains(1j + 2.1)
    assert Disk(0, 0).is_point
    with pytest.raises(GeometryError):
        Disk(0, -1)


def test_region_gap():
    a = PolyJordan(circle_points(0, 1, 256))
    b = PolyJordan(circle_points(3, 1, 256))
    assert region_gap(a, b) == pytest.approx(1, abs=1e-3)
    assert region_gap(a, PolyJordan(circle_points(0.5, 1, 256))) == 0
    big = PolyJordan(circle_points(0, 5, 256))
    assert region_gap(a, big, b_as_curve=True) == pytest.approx(4, abs=1e-3)
