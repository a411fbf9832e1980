import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import LineString, Point, box

from quasiround.exhaust import (K_MAX, CircleDomainSpec, ExhaustionError, build_exhaustion,
                                build_voronoi_cells, compute_delta, cover_5r, discard_near_boundary,
                                initial_step, perturb_to_qB, random_spec, select_large_disks,
                                shrink_to_pB)
from quasiround.geometry import Disk, GeometryError, PolyJordan, circle_points


def _spec(radii):
    return CircleDomainSpec.build([Disk(3 * k, r) for k, r in enumerate(radii)])


def test_compute_delta_examples():
    spec = _spec([1])
    assert compute_delta(spec, 0.5, 1) == pytest.approx(0.005)
    assert compute_delta(spec, 1.0, 10) == pytest.approx(0.001)
    assert compute_delta(spec, 2.0, 1) == pytest.approx(0.01)
    with pytest.raises(ExhaustionError):
        compute_delta(spec, 0.0, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 1e3), st.integers(1, 100))
def test_compute_delta_formula(dist, j):
    assert compute_delta(_spec([1]), dist, j) == min(1 / j, dist) / 100


def test_select_large_disks_examples():
    assert len(select_large_disks(_spec([1, 0.1, 0.001]), 0.01)) == 2
    assert select_large_disks(CircleDomainSpec.build([], [0j]), 0.1) == []
    assert select_large_disks(_spec([1]), 8) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1), min_size=1, max_size=8), st.floats(1e-3, 2))
def test_select_large_disks_is_prefix(radii, delta):
    spec = _spec(sorted(radii, reverse=True))
    big = select_large_disks(spec, delta)
    assert list(big) == list(spec.disks[:len(big)])
    assert all(d.radius >= delta / 4 for d in big)
    assert all(d.radius < delta / 4 for d in spec.disks[len(big):])


def _check_cover(disks, samples, delta):
    c = np.array([d.center for d in disks])
    assert all(d.radius == delta for d in disks)
    gaps = np.abs(c[:, None] - c[None, :]) + np.diag(np.full(len(c), np.inf))
    assert (gaps > 2 * delta).all()
    assert (np.abs(samples[:, None] - c[None, :]).min(axis=1) <= 5 * delta + 1e-12).all()


def test_cover_5r_examples():
    assert len(cover_5r(Point(0, 0), 0.1)) == 1
    seg = cover_5r(LineString([(0, 0), (1, 0)]), 0.3)
    assert len(seg) >= 2
    _check_cover(seg, np.linspace(0, 1, 1000).astype(complex), 0.3)
    assert len(cover_5r(box(0, 0, 1, 1), 10)) == 1


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 2), st.floats(0.2, 2), st.floats(0.05, 0.5))
def test_cover_5r_rectangle(w, h, delta):
    disks = cover_5r(box(0, 0, w, h), delta)
    m = delta / 4
    x, y = np.arange(0, w + m / 2, m), np.arange(0, h + m / 2, m)
    _check_cover(disks, (x[None, :] + 1j * y[:, None]).ravel(), delta)


def test_voronoi_symmetric_pair():
    left, right = build_voronoi_cells([Disk(-2, 1), Disk(2, 1)])
    assert left.polygon.vertices.real.max() <= 1e-12
    assert right.polygon.vertices.real.min() >= -1e-12


def test_voronoi_triangle_meets_at_centroid():
    gens = [Disk(6 / math.sqrt(3) * np.exp(2j * np.pi * k / 3), 1) for k in range(3)]
    cells = build_voronoi_cells(gens)
    assert all(c.polygon.boundary_distance(0)[0] < 1e-9 for c in cells)
    # brute-force nearest-generator labels agree with cell membership off the bisectors
    g = np.linspace(-3, 3, 61)
    z = (g[None, :] + 1j * g[:, None]).ravel()
    dist = np.array([np.abs(z - d.center) - d.radius for d in gens])
    label = dist.argmin(axis=0)
    second = np.sort(dist, axis=0)[1]
    clear = second - dist.min(axis=0) > 1e-2
    for k, c in enumerate(cells):
        inside = c.polygon.contains(z)
        assert (inside[clear] == (label[clear] == k)).all()


def test_voronoi_single_generator_and_cap():
    (cell,) = build_voronoi_cells([Disk(0, 1)], delta=0.1)
    assert cell.cap == pytest.approx(1.4)
    assert np.abs(cell.polygon.vertices).max() <= 1.4 + 1e-9
    assert cell.polygon.contains(circle_points(0, 1, 256)).all()
    r = cell.radial_profile(np.linspace(0, 2 * np.pi, 50))
    assert np.all(r > 1)


def test_voronoi_overlap_rejected():
    with pytest.raises(ExhaustionError):
        build_voronoi_cells([Disk(0, 1), Disk(1.5, 1)])


def test_discard_near_boundary():
    spec = CircleDomainSpec.build([Disk(0, 1)])
    prev = initial_step(spec)
    cells = build_voronoi_cells([Disk(0, 0.5), Disk(1.93, 0.01)], prev, delta=0.01)
    out = discard_near_boundary(cells, prev, 0.01)
    assert [c.discarded for c in out] == [False, True]
    far = discard_near_boundary(build_voronoi_cells([Disk(0, 0.5)], prev, delta=0.01), prev, 0.01)
    assert not far[0].discarded


def test_perturbation_moves_off_point_component():
    cells = build_voronoi_cells([Disk(0, 1)], delta=0.1)
    assert cells[0].polygon.boundary_distance(1.4)[0] == 0
    spec = CircleDomainSpec.build([Disk(0, 1)], [1.4])
    q, z0, clear = perturb_to_qB(cells, spec, 0.1)
    assert abs(z0) <= 0.05 + 1e-12
    assert q[0].boundary_distance(1.4)[0] > 0
    assert q[0].contains(circle_points(0, 0.5, 256)).all()
    q, z0, _ = perturb_to_qB(cells, CircleDomainSpec.build([Disk(0, 1)], [3]), 0.1)
    assert z0 == 0


def test_shrink_round_region():
    q = {0: PolyJordan(circle_points(0, 1, 256))}
    p, cert, margin = shrink_to_pB(q, CircleDomainSpec.build([Disk(0, 0.5)]))[0]
    assert cert.K <= 1.001
    assert margin > 0
    assert q[0].contains(p.vertices).all()


def test_one_disk_exhaustion():
    steps = build_exhaustion(CircleDomainSpec.build([Disk(0, 1)]), 3)
    assert [s.j for s in steps] == [1, 2, 3]
    for s in steps:
        assert len(s.components) == 1
        assert s.components[0].members == (0,)
        assert s.max_K <= K_MAX


def test_empty_spec_rejected():
    with pytest.raises(ExhaustionError):
        build_exhaustion(CircleDomainSpec(), 2)


def test_spec_validation():
    with pytest.raises(GeometryError):
        CircleDomainSpec.build([Disk(0, 1), Disk(1.5, 1)])
    with pytest.raises(GeometryError):
        CircleDomainSpec.build([Disk(0, 1)], [0.5])
    with pytest.raises(GeometryError):
        CircleDomainSpec((Disk(0, 0.1), Disk(3, 1)))
    assert CircleDomainSpec.build([Disk(0, 0.1), Disk(3, 1)]).radii()[0] == 1


def test_two_disks_five_points_monotone():
    spec = CircleDomainSpec.build([Disk(0, 0.5), Disk(1.5 + 0.5j, 0.3)],
                                  [2 - 1j, -1 + 1j, -1 - 1j, 0.9j, 1.2 - 0.3j])
    steps = build_exhaustion(spec, 4)
    g = np.linspace(-2.5, 3, 100)
    z = (g[None, :] + 1j * g[:, None]).ravel()
    in_omega = spec.in_domain(z)
    prev_out = ~initial_step(spec).complement_contains(z)
    for s in steps:
        assert len(s.components) <= 7
        assert s.max_K <= K_MAX
        out = ~s.complement_contains(z)
        assert not (prev_out & ~out).any()  # Omega_{j-1} in Omega_j
        assert not (out & ~in_omega).any()  # Omega_j in Omega
        prev_out = out


def test_exhaustion_deterministic():
    spec = random_spec(np.random.default_rng(5), 3, 2)
    a = build_exhaustion(spec, 2)
    b = build_exhaustion(spec, 2)
    for sa, sb in zip(a, b):
        assert sa.delta == sb.delta
        for pa, pb in zip(sa.polygons, sb.polygons):
            assert np.array_equal(pa.vertices, pb.vertices)


def test_random_spec_valid():
    spec = random_spec(np.random.default_rng(0), 5, 4)
    assert len(spec.disks) == 5 and len(spec.points) == 4
    assert spec.component_gaps().min() >= 0.05 - 1e-12
