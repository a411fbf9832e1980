"""Domain spec files and report serialization.

A spec file is a JSON object with exactly the fields ``disks`` (list of ``{"cx", "cy", "r"}``),
``points`` (list of ``[x, y]``) and optional ``metadata`` (object). Anything else is rejected
with the location of the offending entry.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .exhaust import CircleDomainSpec
from .geometry import Disk, GeometryError

SPEC_FIELDS = {"disks", "points", "metadata"}
DISK_FIELDS = {"cx", "cy", "r"}


class SpecFormatError(ValueError):
    def __init__(self, msg: str, where: str = ""):
        super().__init__(f"{where}: {msg}" if where else msg)
        self.where = where


def _number(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SpecFormatError(f"expected a finite number, got {v!r}", where)
    return float(v)


def parse_spec(text: str, source: str = "<spec>") -> tuple[CircleDomainSpec, dict]:
    """Parse spec text into ``(spec, metadata)``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecFormatError(exc.msg, f"{source}:{exc.lineno}:{exc.colno}") from exc
    if not isinstance(data, dict):
        raise SpecFormatError("top level must be an object", source)
    extra = set(data) - SPEC_FIELDS
    if extra:
        raise SpecFormatError(f"unknown fields {sorted(extra)}", source)
    disks_raw = data.get("disks", [])
    points_raw = data.get("points", [])
    meta = data.get("metadata", {})
    if not isinstance(disks_raw, list) or not isinstance(points_raw, list):
        raise SpecFormatError("disks and points must be lists", source)
    if not isinstance(meta, dict):
        raise SpecFormatError("metadata must be an object", f"{source}:metadata")
    disks = []
    for i, d in enumerate(disks_raw):
        where = f"{source}:disks[{i}]"
        if not isinstance(d, dict):
            raise SpecFormatError("disk entries must be objects", where)
        if set(d) != DISK_FIELDS:
            raise SpecFormatError(f"disk fields must be exactly {sorted(DISK_FIELDS)}", where)
        r = _number(d["r"], where + ".r")
        if r <= 0:
            raise SpecFormatError("radius must be positive", where + ".r")
        disks.append(Disk(complex(_number(d["cx"], where + ".cx"), _number(d["cy"], where + ".cy")), r))
    points = []
    for i, p in enumerate(points_raw):
        where = f"{source}:points[{i}]"
        if not isinstance(p, list) or len(p) != 2:
            raise SpecFormatError("points must be [x, y] pairs", where)
        points.append(complex(_number(p[0], where), _number(p[1], where)))
    if not disks and not points:
        raise SpecFormatError("the spec has no complementary components", source)
    try:
        spec = CircleDomainSpec.build(disks, points)
    except GeometryError as exc:
        raise SpecFormatError(str(exc), source) from exc
    return spec, meta


def load_spec(path) -> tuple[CircleDomainSpec, dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecFormatError(f"cannot read spec: {exc.strerror}", str(path)) from exc
    return parse_spec(text, str(path))


def spec_to_dict(spec: CircleDomainSpec, metadata: dict | None = None) -> dict:
    out = {"disks": [{"cx": d.center.real, "cy": d.center.imag, "r": d.radius} for d in spec.disks],
           "points": [[p.real, p.imag] for p in spec.points]}
    if metadata:
        out["metadata"] = metadata
    return out


def dump_spec(spec: CircleDomainSpec, metadata: dict | None = None) -> str:
    return json.dumps(spec_to_dict(spec, metadata), indent=2, sort_keys=True) + "\n"


def _clean(v):
    if isinstance(v, complex):
        return [_clean(v.real), _clean(v.imag)]
    if isinstance(v, float):
        return v if math.isfinite(v) else str(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):
        return _clean(v.item())
    return v


def dump_json(obj) -> str:
    """Deterministic JSON (sorted keys, non-finite floats as strings)."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def dump_table(rows: list[dict], delimiter: str = "\t") -> str:
    """Delimited table with the union of keys as header (first-seen order)."""
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}j"
    return v
