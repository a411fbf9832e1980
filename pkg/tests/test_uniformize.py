import math

import numpy as np
import pytest

from quasiround.exhaust import CircleDomainSpec
from quasiround.geometry import Disk, GeometryError, PolyJordan, circle_points
from quasiround.uniformize import (DomainError, FinitelyConnectedDomain, circularity, evaluate,
                                   evaluate_inverse, fit_circle, image_component_disk,
                                   koebe_uniformize, riemann_map_sc)

TOL = 1e-6
SQUARE = PolyJordan(np.array([-1 - 1j, 1 - 1j, 1 + 1j, -1 + 1j]))


def _outside_points(domain, n, seed=0, box=3.0):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-box, box, 8 * n) + 1j * rng.uniform(-box, box, 8 * n)
    dist = np.min([h.boundary_distance(z) for h in domain.holes], axis=0)
    z = z[domain.contains(z) & (dist > 0.05)]
    return z[:n]


def _ring_modulus(a: Disk, b: Disk) -> float:
    """Modulus log(R)/(2 pi) of the round ring Moebius-equivalent to the complement of two disks."""
    d = abs(a.center - b.center)
    inv = (d * d - a.radius ** 2 - b.radius ** 2) / (2 * a.radius * b.radius)
    return math.acosh(inv) / (2 * math.pi)


def test_fit_circle_exact():
    c, r = fit_circle(circle_points(1 + 2j, 0.5, 64))
    assert abs(c - (1 + 2j)) < 1e-12 and r == pytest.approx(0.5, abs=1e-12)
    assert circularity(circle_points(0, 1, 64))[0] < 1e-12


def test_riemann_map_unit_circle():
    m = riemann_map_sc(PolyJordan(circle_points(0, 1, 64)))
    z = circle_points(0, 2, 100)
    assert np.abs(m(z) - z).max() < 1e-3


def test_riemann_map_scaled_circle():
    m = riemann_map_sc(PolyJordan(circle_points(0, 2, 256)))
    assert abs(m(np.array([4.0]))[0] - 2) < 1e-3


def test_riemann_map_square_boundary():
    m = riemann_map_sc(SQUARE, n=1024)
    w = m(SQUARE.resampled(300) * (1 + 1e-9))
    assert np.abs(np.abs(w) - 1).max() < 1e-3
    z = np.array([3 + 1j, -2.5j])
    assert np.abs(m.inverse(m(z)) - z).max() < 1e-9


def test_riemann_map_anchor_checked():
    with pytest.raises(GeometryError):
        riemann_map_sc(SQUARE, anchor=5)


def test_circle_domain_identity():
    spec = CircleDomainSpec.build([Disk(0, 1), Disk(3, 0.5)])
    dom = FinitelyConnectedDomain.from_spec(spec)
    f = koebe_uniformize(dom, (math.inf, 1.5 + 2j, -2j), tol=TOL)
    z = _outside_points(dom, 100)
    assert len(z) == 100
    assert np.abs(f(z) - z).max() < 10 * TOL
    assert abs(f(np.array([1 + 1j]))[0] - (1 + 1j)) < TOL
    for k, d in enumerate(spec.disks):
        img = image_component_disk(f, k)
        assert abs(img.center - d.center) < 10 * TOL and abs(img.radius - d.radius) < 10 * TOL


def test_single_far_hole_identity():
    dom = FinitelyConnectedDomain((PolyJordan(circle_points(5, 3, 256)),))
    f = koebe_uniformize(dom, (math.inf, -4 + 0j, 5 + 6j), tol=TOL)
    z = _outside_points(dom, 50, box=10)
    assert np.abs(f(z) - z).max() < 10 * TOL


@pytest.fixture(scope="module")
def square_pair():
    dom = FinitelyConnectedDomain((SQUARE, PolyJordan(SQUARE.vertices * 0.5 + 3)))
    return dom, koebe_uniformize(dom, (math.inf, 2j, -3 + 0j), tol=TOL)


def test_normalization_fixed(square_pair):
    _, f = square_pair
    a = np.array([2j, -3 + 0j])
    assert np.abs(f(a) - a).max() < 10 * TOL
    assert np.isinf(f(np.array([complex(np.inf)]))[0])


def test_round_trip(square_pair):
    dom, f = square_pair
    z = _outside_points(dom, 100, seed=1)
    assert np.abs(f.inverse(f(z)) - z).max() < 10 * TOL


def test_square_holes_become_circles(square_pair):
    dom, f = square_pair
    assert max(f.residuals.values()) < TOL
    for k, h in enumerate(dom.holes):
        d = image_component_disk(f, k)
        c = h.centroid
        w = f(c + (h.resampled(256) - c) * (1 + 1e-9))
        assert np.abs(np.abs(w - d.center) - d.radius).max() < 1e-4 * max(d.radius, 1)
    with pytest.raises(KeyError):
        image_component_disk(f, 7)


def test_cauchy_riemann_residual(square_pair):
    dom, f = square_pair
    z = _outside_points(dom, 50, seed=2)
    h = 1e-3
    dx = (f(z + h) - f(z - h)) / (2 * h)
    dy = (f(z + 1j * h) - f(z - 1j * h)) / (2j * h)
    assert np.abs(dx - dy).max() < 100 * TOL


def test_idempotent_on_output(square_pair):
    _, f = square_pair
    spec = f.target
    g = koebe_uniformize(FinitelyConnectedDomain.from_spec(spec, 512), (math.inf, 2j, -3 + 0j), tol=TOL)
    for k, d in enumerate(spec.disks):
        e = g.component_images[k]
        assert abs(e.center - d.center) < 10 * TOL and abs(e.radius - d.radius) < 10 * TOL


def test_scaled_domain_equivariance(square_pair):
    dom, f = square_pair
    dom2 = FinitelyConnectedDomain(tuple(h.scaled(2) for h in dom.holes))
    g = koebe_uniformize(dom2, (math.inf, 4j, -6 + 0j), tol=TOL)
    for k in range(2):
        a, b = f.component_images[k], g.component_images[k]
        assert abs(b.center - 2 * a.center) < 1e-5 and abs(b.radius - 2 * a.radius) < 1e-5


def test_ring_modulus_stable_under_refinement(square_pair):
    dom, f = square_pair
    m1 = _ring_modulus(*f.component_images.values())
    fine = FinitelyConnectedDomain(tuple(PolyJordan(h.resampled(1024)) for h in dom.holes))
    g = koebe_uniformize(fine, (math.inf, 2j, -3 + 0j), tol=TOL)
    assert _ring_modulus(*g.component_images.values()) == pytest.approx(m1, rel=1e-2)


def test_domain_errors(square_pair):
    _, f = square_pair
    with pytest.raises(DomainError):
        evaluate(f, np.array([0j]))
    c = f.component_images[0].center
    with pytest.raises(DomainError):
        evaluate_inverse(f, np.array([c]))
    with pytest.raises(DomainError):
        koebe_uniformize(FinitelyConnectedDomain((SQUARE,)), (math.inf, 0j, 5 + 0j))
    with pytest.raises(GeometryError):
        FinitelyConnectedDomain((SQUARE, PolyJordan(SQUARE.vertices + 1)))
