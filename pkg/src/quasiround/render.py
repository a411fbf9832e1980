"""Figures: a deterministic SVG writer and matplotlib summary plots."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Disk

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")
SIZE = 640


def _f(x: float) -> str:
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Frame:
    """World box to pixel map (y up in the world, down in the picture)."""

    def __init__(self, points: np.ndarray, pad: float = 0.05):
        if len(points) == 0:
            x0, y0, x1, y1 = -1.0, -1.0, 1.0, 1.0
        else:
            x0, x1 = points.real.min(), points.real.max()
            y0, y1 = points.imag.min(), points.imag.max()
        span = max(x1 - x0, y1 - y0, 1e-12) * (1 + 2 * pad)
        self.cx, self.cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        self.scale = SIZE / span

    def xy(self, z: complex) -> tuple[str, str]:
        return (_f(SIZE / 2 + (z.real - self.cx) * self.scale),
                _f(SIZE / 2 - (z.imag - self.cy) * self.scale))

    def length(self, r: float) -> str:
        return _f(r * self.scale)


def _extent(layers: dict) -> np.ndarray:
    pts = []
    for d in layers.get("complement", []):
        pts.extend([d.center - d.radius * (1 + 1j), d.center + d.radius * (1 + 1j)])
    for polys in layers.get("steps", []):
        for p in polys:
            pts.extend(p.vertices[[np.argmin(p.vertices.real), np.argmax(p.vertices.real),
                                   np.argmin(p.vertices.imag), np.argmax(p.vertices.imag)]])
    for d in layers.get("images", []):
        pts.extend([d.center - d.radius * (1 + 1j), d.center + d.radius * (1 + 1j)])
    return np.array(pts, dtype=complex)


def svg_text(layers: dict, title: str = "") -> str:
    """SVG for ``layers``: ``complement`` (Disks, gray), ``steps`` (one list of PolyJordans per
    step, colored by step) and ``images`` (Disks, dashed). Output depends only on the input."""
    fr = _Frame(_extent(layers))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
           f'viewBox="0 0 {SIZE} {SIZE}">',
           f'<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>']
    if title:
        out.append(f'<title>{title}</title>')
    out.append('<g id="complement" fill="#bbbbbb" stroke="#777777" stroke-width="0.5">')
    for d in layers.get("complement", []):
        x, y = fr.xy(d.center)
        out.append(f'<circle cx="{x}" cy="{y}" r="{fr.length(max(d.radius, 0.5 / fr.scale))}"/>')
    out.append('</g>')
    for j, polys in enumerate(layers.get("steps", []), start=1):
        color = PALETTE[(j - 1) % len(PALETTE)]
        out.append(f'<g id="step-{j}" fill="none" stroke="{color}" stroke-width="0.8">')
        for p in polys:
            v = p.vertices
            if len(v) > 2000:
                v = v[np.linspace(0, len(v) - 1, 2000).astype(int)]
            pts = " ".join(",".join(fr.xy(z)) for z in v)
            out.append(f'<polygon points="{pts}"/>')
        out.append('</g>')
    out.append('<g id="images" fill="none" stroke="black" stroke-width="0.8" stroke-dasharray="4,3">')
    for d in layers.get("images", []):
        x, y = fr.xy(d.center)
        out.append(f'<circle cx="{x}" cy="{y}" r="{fr.length(d.radius)}"/>')
    out.append('</g>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def report_layers(report) -> dict:
    layers = {"complement": list(report.spec.components),
              "steps": [s.polygons for s in report.steps]}
    if report.maps:
        layers["images"] = list(report.maps[-1].component_images.values())
    return layers


def emit_svg(obj, path) -> Path:
    """Write an SVG for a pipeline report, a spec, a list of steps or a layer dict."""
    if hasattr(obj, "records"):
        layers = report_layers(obj)
    elif hasattr(obj, "components") and hasattr(obj, "disks"):
        layers = {"complement": list(obj.components)}
    elif isinstance(obj, dict):
        layers = obj
    else:
        layers = {"complement": list(obj)}
    path = Path(path)
    try:
        path.write_text(svg_text(layers), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from exc
    return path


# ---------------------------------------------------------------------------
# matplotlib
# ---------------------------------------------------------------------------


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_geometry(layers: dict, path, title: str = "") -> Path:
    plt = _plt()
    from matplotlib.patches import Circle, Polygon

    fig, ax = plt.subplots(figsize=(6, 6))
    for d in layers.get("complement", []):
        ax.add_patch(Circle((d.center.real, d.center.imag), d.radius, color="0.7", zorder=1))
        if d.radius == 0:
            ax.plot([d.center.real], [d.center.imag], "k.", ms=3)
    for j, polys in enumerate(layers.get("steps", []), start=1):
        color = PALETTE[(j - 1) % len(PALETTE)]
        for i, p in enumerate(polys):
            ax.add_patch(Polygon(np.c_[p.vertices.real, p.vertices.imag], fill=False, ec=color, lw=0.7,
                                 label=f"step {j}" if i == 0 else None, zorder=2))
    for d in layers.get("images", []):
        ax.add_patch(Circle((d.center.real, d.center.imag), d.radius, fill=False, ls="--", ec="k", lw=0.8,
                            zorder=3))
    ext = _extent(layers)
    if len(ext):
        pad = 0.05 * max(np.ptp(ext.real), np.ptp(ext.imag), 1e-12)
        ax.set_xlim(ext.real.min() - pad, ext.real.max() + pad)
        ax.set_ylim(ext.imag.min() - pad, ext.imag.max() + pad)
    ax.set_aspect("equal")
    if layers.get("steps"):
        ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_convergence(records: Sequence[dict], path) -> Path:
    plt = _plt()
    ok = [r for r in records if r.get("error") is None]
    fig, ax = plt.subplots(figsize=(5, 4))
    if ok:
        j = [r["j"] for r in ok]
        ax.semilogy(j, [max(r["deviation"], 1e-300) for r in ok], "o-", label="max |f_j(z) - z|")
        ax.semilogy(j, [max(r["hausdorff"], 1e-300) for r in ok], "s--", label="image disk Hausdorff")
        ax.set_xticks(j)
    ax.set_xlabel("j")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_density(rho, path, title: str = "") -> Path:
    plt = _plt()
    x0, y0, x1, y1 = rho.bbox
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(rho.node_values, origin="lower", extent=(x0, x1, y0, y1), cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_disks(disks: Iterable[Disk], path, title: str = "") -> Path:
    return plot_geometry({"complement": list(disks)}, path, title)
