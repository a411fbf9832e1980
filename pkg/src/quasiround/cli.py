"""Command line: ``quasiround <verb> ...``.

Every verb prints a tab-delimited table to stdout; with ``--out DIR`` it also writes the
table, a JSON record and figures (deterministic SVG plus matplotlib PNG) into ``DIR``.
The exit code is 0 iff every verdict of the run passes.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io as qio
from .exhaust import DEFAULT_RESOLUTION, ExhaustionError, build_exhaustion
from .geometry import GeometryError
from .harness import (circle_avoidance_experiment, counterexample_disks, generate_counterexample,
                      run_pipeline, tangency_table)
from .modulus import annulus, circle_family, radial_family, transboundary_modulus
from .render import emit_svg, plot_convergence, plot_density, plot_geometry, report_layers
from .uniformize import DEFAULT_TOL, FinitelyConnectedDomain, UniformizeError, koebe_uniformize


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, name: str, rows: list[dict], record: dict) -> None:
    table = qio.dump_table(rows)
    sys.stdout.write(table)
    out = _out_dir(args)
    if out is not None:
        (out / f"{name}.tsv").write_text(table, encoding="utf-8")
        (out / f"{name}.json").write_text(qio.dump_json(record), encoding="utf-8")


def _parse_point(s: str) -> complex:
    return complex(s.replace(" ", ""))


def cmd_exhaust(args) -> int:
    spec, _ = qio.load_spec(args.spec)
    steps = build_exhaustion(spec, args.steps, args.resolution)
    rows = [{"j": s.j, "delta": s.delta, "components": len(s.components), "max_K": s.max_K,
             "certified": s.max_K <= 43} for s in steps]
    _emit(args, "exhaust", rows, {"steps": rows})
    out = _out_dir(args)
    if out is not None:
        layers = {"complement": list(spec.components), "steps": [s.polygons for s in steps]}
        emit_svg(layers, out / "exhaust.svg")
        plot_geometry(layers, out / "exhaust.png", "exhaustion")
    return 0 if all(r["certified"] for r in rows) else 1


def cmd_uniformize(args) -> int:
    spec, _ = qio.load_spec(args.spec)
    steps = build_exhaustion(spec, args.steps, args.resolution)
    norm = None if args.normalize is None else (math.inf, *map(_parse_point, args.normalize))
    f = koebe_uniformize(FinitelyConnectedDomain.from_step(steps[-1]), norm, tol=args.tol)
    rows = [{"hole": k, "cx": d.center.real, "cy": d.center.imag, "r": d.radius,
             "residual": f.residuals[k], "converged": f.converged[k]}
            for k, d in f.component_images.items()]
    _emit(args, "uniformize", rows, {"images": rows, "rounds": len(f.history),
                                     "osculations": len(f.chain)})
    out = _out_dir(args)
    if out is not None:
        layers = {"complement": list(spec.components), "steps": [steps[-1].polygons],
                  "images": list(f.component_images.values())}
        emit_svg(layers, out / "uniformize.svg")
        plot_geometry(layers, out / "uniformize.png", f"step {args.steps} and its circle domain")
    return 0 if all(f.converged.values()) else 1


def cmd_pipeline(args) -> int:
    spec, _ = qio.load_spec(args.spec)
    norm = None if args.normalize is None else (math.inf, *map(_parse_point, args.normalize))
    rep = run_pipeline(spec, args.steps, args.tol, args.resolution, norm, seed=args.seed)
    rows = [dict(r) for r in rep.records]
    _emit(args, "pipeline", rows, rep.to_dict())
    for k, v in rep.verdicts.items():
        sys.stdout.write(f"# {k}\t{'pass' if v else 'FAIL'}\n")
    out = _out_dir(args)
    if out is not None:
        emit_svg(rep, out / "pipeline.svg")
        plot_geometry(report_layers(rep), out / "pipeline.png", "exhaustion and image disks")
        plot_convergence(rep.records, out / "convergence.png")
    return 0 if rep.passed else 1


def cmd_modulus(args) -> int:
    exact = {"radial": 2 * math.pi / math.log(2), "separating": math.log(2) / (2 * math.pi)}
    ring = annulus(0, 1.0, 2.0)
    phase = float(np.random.default_rng(args.seed).uniform(0, 2 * math.pi / args.rays)) if args.seed else 0.0
    rows, dens = [], {}
    for kind in ("radial", "separating"):
        if kind == "radial":
            fam = radial_family(0, 1.0, 2.0, args.rays, phase=phase)
        else:
            fam = circle_family(0, 1.0, 2.0, max(int(math.ceil(1 / args.h)), 8), vertices=1024)
        est, rho = transboundary_modulus(ring, {}, fam, args.h)
        dens[kind] = rho
        rows.append({"family": kind, "h": args.h, "curves": len(fam), "estimate": est,
                     "dual_bound": rho.lower_bound, "closed_form": exact[kind],
                     "rel_error": abs(est - exact[kind]) / exact[kind]})
    _emit(args, "modulus", rows, {"ring": rows})
    out = _out_dir(args)
    if out is not None:
        for kind, rho in dens.items():
            plot_density(rho, out / f"density_{kind}.png", f"{kind} family, h = {args.h}")
    return 0 if all(r["rel_error"] < 0.05 for r in rows) else 1


def cmd_counterexample(args) -> int:
    k = math.inf if args.k in ("inf", "infinity") else float(args.k)
    spec = generate_counterexample(k, args.depth)
    tang = tangency_table(args.depth)
    exp = circle_avoidance_experiment(counterexample_disks(math.inf, max(args.depth, 12)),
                                      args.grid, args.grid)
    rows = [{"pair": r["pair"], "distance": r["distance"], "expected": r["expected"],
             "error": r["error"]} for r in tang]
    _emit(args, "counterexample", rows, {"disks": qio.spec_to_dict(spec), "tangency": tang,
                                         "avoidance": exp})
    sys.stdout.write(f"# candidates\t{exp['candidates']}\n# min_penetration\t{exp['min_penetration']!r}\n")
    out = _out_dir(args)
    if out is not None:
        emit_svg(spec, out / "counterexample.svg")
        plot_geometry({"complement": list(spec.components)}, out / "counterexample.png",
                      f"packing, k = {args.k}")
    ok = max(r["error"] for r in tang) < 1e-12 and exp["all_blocked"]
    return 0 if ok else 1


def cmd_render(args) -> int:
    spec, _ = qio.load_spec(args.spec)
    layers = {"complement": list(spec.components)}
    if args.steps:
        layers["steps"] = [s.polygons for s in build_exhaustion(spec, args.steps, args.resolution)]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.spec).stem
    emit_svg(layers, out / f"{stem}.svg")
    plot_geometry(layers, out / f"{stem}.png", stem)
    sys.stdout.write(qio.dump_table([{"file": str(out / f"{stem}.svg")}, {"file": str(out / f"{stem}.png")}]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quasiround", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, spec=True, steps=4):
        if spec:
            sp.add_argument("spec", help="domain spec file (JSON)")
        sp.add_argument("--steps", type=int, default=steps, help="exhaustion steps J")
        sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
        sp.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help="directory for tables and figures")

    common(sub.add_parser("exhaust", help="build and certify a quasiround exhaustion"))
    sp = sub.add_parser("uniformize", help="map the last exhaustion step onto a circle domain")
    common(sp)
    sp.add_argument("--normalize", nargs=2, metavar="A", help="two fixed points, e.g. 2.5+0j 0+2.5j")
    sp = sub.add_parser("pipeline", help="convergence of the uniformizers to the identity")
    common(sp)
    sp.add_argument("--normalize", nargs=2, metavar="A")
    sp = sub.add_parser("modulus", help="ring closed forms for the discrete modulus")
    common(sp, spec=False)
    sp.add_argument("--h", type=float, default=0.05, help="grid mesh")
    sp.add_argument("--rays", type=int, default=360)
    sp = sub.add_parser("counterexample", help="packing without round exhaustions")
    common(sp, spec=False)
    sp.add_argument("--k", default="10", help="shrink parameter (or inf)")
    sp.add_argument("--depth", type=int, default=6)
    sp.add_argument("--grid", type=int, default=50)
    common(sub.add_parser("render", help="draw a spec (and optionally its exhaustion)"), steps=0)
    return p


COMMANDS = {"exhaust": cmd_exhaust, "uniformize": cmd_uniformize, "pipeline": cmd_pipeline,
            "modulus": cmd_modulus, "counterexample": cmd_counterexample, "render": cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (qio.SpecFormatError, ExhaustionError, GeometryError, UniformizeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
