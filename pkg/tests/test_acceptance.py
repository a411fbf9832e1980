"""Acceptance criteria C1..C9; each test records one pass/fail line for the terminal summary."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from quasiround import io as qio
from quasiround.analysis import (check_upper_gradient, classify_point,
                                 eccentric_distortion, enumerate_words, extend_map, image_circles,
                                 mobius, reflect, word_count)
from quasiround.certify import verify_step
from quasiround.exhaust import K_MAX, CircleDomainSpec, build_step, initial_step, random_spec
from quasiround.geometry import Disk, PolyJordan, spherical_diameter
from quasiround.harness import (choose_normalization, circle_avoidance_experiment,
                                counterexample_disks, run_pipeline, tangency_table)
from quasiround.modulus import (annuli_average, annulus, circle_family, disk_region, domain_minus,
                                family_lambda, lambda_upper_bound, loewner_family,
                                loewner_lower_bound, lambda_energy_bound, quotient_curve,
                                radial_family, transboundary_modulus)
from quasiround.uniformize import FinitelyConnectedDomain, koebe_uniformize

SPECS = Path(__file__).resolve().parents[1] / "specs"
BUDGET = 300.0

pytestmark = pytest.mark.acceptance


def record(name, ok, detail, t0):
    secs = time.perf_counter() - t0
    ok = bool(ok) and secs < BUDGET
    ACCEPTANCE[name] = (ok, f"{detail} [{secs:.1f}s]")
    print(f"{name}: {'PASS' if ok else 'FAIL'}  {detail} [{secs:.1f}s]")
    assert ok, detail


def test_c1_exhaustion_certification():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures, worst_K, n_comp = [], 1.0, 0
    for i in range(10):
        spec = random_spec(rng, int(rng.integers(1, 11)), int(rng.integers(0, 11)))
        prev = initial_step(spec)
        for j in range(1, 5):
            step = build_step(spec, prev, j)
            rep = verify_step(spec, prev, step)
            failures += [f"spec {i} step {j}: {f}" for f in rep.failures]
            worst_K = max(worst_K, step.max_K)
            n_comp += len(step.components)
            prev = step
    record("C1 exhaustion certification", not failures and worst_K <= K_MAX,
           f"{n_comp} components, max K {worst_K:.3f}, {len(failures)} failures", t0)


def test_c2_circle_domain_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst, steps = 0.0, 0
    for i in range(5):
        spec = random_spec(rng, int(rng.integers(2, 5)), 0, min_gap=0.2)
        # 128-gons: resampled nodes fall on the edges, so the holes really get osculated
        dom = FinitelyConnectedDomain.from_spec(spec, 128)
        f = koebe_uniformize(dom, choose_normalization(spec))
        steps += len(f.chain)
        z = []
        while len(z) < 100:
            w = complex(*rng.uniform(-3, 3, 2))
            if spec.complement_distance(np.array([w]))[0] > 0.05:
                z.append(w)
        z = np.array(z)
        worst = max(worst, float(np.abs(f(z) - z).max()))
    record("C2 uniformizer on circle domains", worst < 1e-3 and steps > 0,
           f"max |f(z) - z| = {worst:.2e} after {steps} osculations", t0)


def test_c3_convergence_experiment():
    t0 = time.perf_counter()
    spec, _ = qio.load_spec(SPECS / "three_disks_three_points.json")
    rep = run_pipeline(spec, J=4)
    dev = [r.get("deviation") for r in rep.records]
    hd = [r.get("hausdorff") for r in rep.records]
    record("C3 convergence experiment", rep.passed,
           "deviation " + ", ".join(f"{d:.2e}" for d in dev if d is not None)
           + "; hausdorff " + ", ".join(f"{d:.2e}" for d in hd if d is not None), t0)


def test_c4_modulus_closed_forms():
    t0 = time.perf_counter()
    ring = annulus(0, 1.0, 2.0)
    exact = {"radial": 2 * math.pi / math.log(2), "separating": math.log(2) / (2 * math.pi)}
    err = {}
    for h in (0.05, 0.025):
        n = max(360, math.ceil(2 * math.pi * 2 / h))
        fams = {"radial": radial_family(0, 1.0, 2.0, n),
                "separating": circle_family(0, 1.0, 2.0, max(math.ceil(1 / h), 8), vertices=1024)}
        for k, fam in fams.items():
            est, _ = transboundary_modulus(ring, {}, fam, h)
            err[k, h] = abs(est - exact[k]) / exact[k]
    ok = all(e < 0.05 for e in err.values())
    ratios = {k: err[k, 0.05] / err[k, 0.025] for k in exact}
    ok &= all(r >= 2 for r in ratios.values())
    record("C4 modulus closed forms", ok,
           "; ".join(f"{k} {err[k, 0.05]:.2%} -> {err[k, 0.025]:.2%} (x{ratios[k]:.2f})" for k in exact), t0)


def _random_disks(rng, n, lo, hi, rmax, gap=0.01, avoid=()):
    comps = {}
    while len(comps) < n:
        c, r = complex(*rng.uniform(-hi, hi, 2)), float(rng.uniform(0.005, rmax))
        if not lo + r < abs(c) < hi - r:
            continue
        if all(abs(c - d.center) > r + d.radius + gap for d in list(comps.values()) + list(avoid)):
            comps[len(comps)] = Disk(c, r)
    return comps


def test_c5_explicit_bounds():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    K = K_MAX
    bound = lambda_energy_bound(K)
    ok = bound == 4 * math.pi + 400 + 64 * K * K
    worst_gap, worst_avg = -np.inf, -np.inf
    for i in range(10):
        comps = _random_disks(rng, int(rng.integers(3, 9)), 0.3, 1.2, 0.12)
        energy, rho = lambda_upper_bound(comps, None, 1.0, K)
        ok &= energy <= bound
        fam = family_lambda(0, 1.0, comps, None, 90)
        est, _ = transboundary_modulus(domain_minus(annulus(0, 0.5, 1.0), comps), comps, fam, 0.05)
        worst_gap = max(worst_gap, est - energy)
    for ell in range(1, 6):
        comps = _random_disks(rng, 10, 0.01, 1.0, 0.02)
        avg, energies, M, _ = annuli_average(comps, None, K, ell, n_curves=60)
        worst_avg = max(worst_avg, avg.energy() - 3 * M / ell)
    ok &= worst_gap <= 0 and worst_avg <= 0
    record("C5 explicit density bounds", ok,
           f"max(estimate - explicit) = {worst_gap:.3g}, max(avg - 3M/l) = {worst_avg:.3g}", t0)


def test_c6_loewner_direction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    L, JR = 1.0, 0.9
    slack = []
    for trial in range(5):
        pb = Disk(complex(*rng.uniform(-0.3, 0.3, 2)), float(rng.uniform(0.1, 0.25)))
        u = np.exp(1j * rng.uniform(0, 2 * np.pi))
        x = pb.center + (pb.radius + rng.uniform(0.15, 0.35)) * u
        if abs(x) > 0.8:
            x = pb.center + (pb.radius + 0.1) * u
        delta = 0.5 * abs(x - pb.center) - 0.5 * pb.radius
        others = {}
        while len(others) < 7:
            c, r = complex(*rng.uniform(-0.8, 0.8, 2)), float(rng.uniform(0.01, 0.06))
            if abs(c) + r > JR - 0.02:
                continue
            if all(abs(c - d.center) > r + d.radius + 0.01 for d in [pb, *others.values()]):
                others[len(others)] = Disk(c, r)
        comps = {"pbar": pb, **others}
        fam = loewner_family(pb, x, JR, delta, others, n=100)
        est, _ = transboundary_modulus(domain_minus(disk_region(0, JR), comps), comps, fam, 0.02)
        slack.append(est - loewner_lower_bound(delta, L))
    record("C6 Loewner direction", min(slack) >= 0, f"min(estimate - bound) = {min(slack):.3g}", t0)


def test_c7_upper_gradient():
    t0 = time.perf_counter()
    sq = PolyJordan(np.array([0, 1, 1 + 1j, 1j]) * 0.8 + (-1.6 - 0.4j))
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    el = PolyJordan(1.2 + 0.5j + 0.6 * np.cos(t) + 0.3j * np.sin(t))
    tri = PolyJordan(np.array([0, 0.9, 0.45 + 0.7j]) + (-0.2 + 1.2j))
    dom = FinitelyConnectedDomain((sq, el, tri))
    f = koebe_uniformize(dom, None, tol=1e-6)
    disks = dict(f.component_images)
    diams = {k: spherical_diameter(dom.holes[k].vertices) for k in disks}
    rng = np.random.default_rng(7)
    slack = []
    while len(slack) < 200:
        a, b = (complex(*rng.uniform(-3, 3, 2)) for _ in range(2))
        if any(abs(z - d.center) <= d.radius for z in (a, b) for d in disks.values()):
            continue
        slack.append(check_upper_gradient(f.inverse, quotient_curve(np.array([a, b]), disks), diams))
    frac = float(np.mean(np.array(slack) >= -1e-3))
    record("C7 upper gradient", frac >= 0.99, f"{frac:.1%} of 200 segments, min slack {min(slack):.3g}", t0)


def test_c8_schottky():
    t0 = time.perf_counter()
    spec = CircleDomainSpec.build([Disk(-2, 1), Disk(2, 1), Disk(3j, 0.8)])
    rng = np.random.default_rng(8)
    inv = 0.0
    for _ in range(200):
        d = Disk(complex(*rng.uniform(-5, 5, 2)), float(rng.uniform(0.1, 3)))
        z = complex(*rng.uniform(-10, 10, 2))
        if abs(z - d.center) > 1e-3 * d.radius:
            inv = max(inv, abs(reflect(d, reflect(d, z)) - z) / max(1, abs(z)))
    counts = all(len(enumerate_words(n, L)) == word_count(n, L)
                 == 1 + sum(n * (n - 1) ** (k - 1) for k in range(1, L + 1))
                 for n in (2, 3, 4) for L in range(5))
    g = mobius(1, 0.5j, 0.1, 1)
    stars = image_circles(g, spec)
    ext, n_pts, nontrivial = 0.0, 0, 0
    while n_pts < 50:
        d = spec.disks[n_pts % 3] if n_pts % 5 else Disk(0.5j, 3)
        x = d.center + d.radius * np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        pt = classify_point(spec, x)
        if pt.tag == "buried":
            continue
        w = extend_map(g, spec, pt.word, np.array([x]), stars)[0]
        ext = max(ext, abs(w - g(x)) / max(1, abs(g(x))))
        n_pts += 1
        nontrivial += len(pt.word) > 0
    dist = []
    for x in (0.3 + 0.2j, -1 + 1j, 2 - 0.5j):
        dist.append(eccentric_distortion(g, x, [1e-4]).estimate)
    ok = inv <= 1e-12 and counts and ext <= 1e-9 and nontrivial > 0 and all(abs(e - 1) <= 0.02 for e in dist)
    record("C8 Schottky suite", ok,
           f"involution {inv:.1e}, extension {ext:.1e} ({nontrivial}/50 nontrivial words), "
           f"distortion max {max(dist):.4f}", t0)


def test_c9_counterexample():
    t0 = time.perf_counter()
    err = max(r["error"] for r in tangency_table())
    res = circle_avoidance_experiment(counterexample_disks(math.inf, 6), 50, 50)
    record("C9 counterexample", err < 1e-12 and res["all_blocked"],
           f"tangency error {err:.1e}, min penetration {res['min_penetration']:.3g} over "
           f"{res['candidates']} circles", t0)
