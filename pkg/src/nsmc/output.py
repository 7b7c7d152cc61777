"""Plot-ready artifacts: histograms, empirical CDFs with confidence bands,
and decimated trajectories, serialized to CSV or JSON.

The trajectory filter is a streaming min/max-preserving cell decimation:
the time axis is split into R cells and each cell emits at most its first,
lowest, highest, and last point, so oscillations survive while output stays
bounded by 4R + 2 points regardless of input size.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, TextIO

from .stat import CpInterval, clopper_pearson

SCHEMA_VERSION = 1


class OutputError(Exception):
    pass


# ---------------------------------------------------------------------------
# Histogram


@dataclass(frozen=True)
class Histogram:
    origin: float
    width: float
    counts: tuple[int, ...]
    total: int
    mean: float
    sample_std: float

    def bucket_edges(self) -> list[tuple[float, float]]:
        return [
            (self.origin + i * self.width, self.origin + (i + 1) * self.width)
            for i in range(len(self.counts))
        ]


def build_histogram(
    values: Sequence[float],
    bucket_count: Optional[int] = None,
    width: Optional[float] = None,
) -> Histogram:
    """Fixed-width histogram anchored at the minimum value.

    Exactly one of bucket_count / width may be given; default is 20 buckets.
    """
    if not values:
        raise OutputError("cannot build a histogram from no values")
    lo = min(values)
    hi = max(values)
    n = len(values)
    if width is None:
        bucket_count = bucket_count or 20
        if bucket_count < 1:
            raise OutputError("bucket count must be >= 1")
        span = hi - lo
        width = span / bucket_count if span > 0 else 1.0
    elif width <= 0:
        raise OutputError("bucket width must be > 0")
    count = max(1, math.ceil((hi - lo) / width)) if hi > lo else 1
    counts = [0] * count
    for v in values:
        idx = min(int((v - lo) / width), count - 1)
        counts[idx] += 1
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1) if n > 1 else 0.0
    return Histogram(lo, width, tuple(counts), n, mean, math.sqrt(var))


# ---------------------------------------------------------------------------
# Empirical distribution with Clopper-Pearson bands


@dataclass(frozen=True)
class DistributionPoint:
    value: float
    cdf: float
    band: CpInterval
    pdf: Optional[float] = None


@dataclass(frozen=True)
class DistributionSeries:
    points: tuple[DistributionPoint, ...]
    total: int
    alpha: float


def build_cdf(values: Sequence[float], alpha: float = 0.05, with_pdf: bool = False) -> DistributionSeries:
    """Empirical CDF over the distinct sample values, each point carrying an
    exact binomial confidence band on P(X <= v)."""
    if not values:
        raise OutputError("cannot build a distribution from no values")
    n = len(values)
    ordered = sorted(values)
    points = []
    i = 0
    prev_cum = 0
    while i < n:
        v = ordered[i]
        j = i
        while j < n and ordered[j] == v:
            j += 1
        cum = j
        band = clopper_pearson(cum, n, alpha)
        pdf = (cum - prev_cum) / n if with_pdf else None
        points.append(DistributionPoint(v, cum / n, band, pdf))
        prev_cum = cum
        i = j
    return DistributionSeries(tuple(points), n, alpha)


# ---------------------------------------------------------------------------
# Trajectory decimation


@dataclass(frozen=True)
class TrajectorySeries:
    label: str
    points: tuple[tuple[float, float], ...]
    resolution: int
    t_range: tuple[float, float]
    v_range: tuple[float, float]


def filter_trajectory(
    points: Sequence[tuple[float, float]],
    resolution: int = 1000,
    label: str = "",
    t_range: Optional[tuple[float, float]] = None,
    v_range: Optional[tuple[float, float]] = None,
) -> TrajectorySeries:
    """Decimate a time-ordered series onto an R x R cell grid.

    Single pass with O(1) state per open cell: within each time cell only
    the first, minimum, maximum, and last points survive (deduplicated by
    value cell), so the result has at most 4R + 2 points, extrema are never
    flattened, and refiltering at the same resolution is the identity.
    """
    if resolution < 1:
        raise OutputError("resolution must be >= 1")
    if not points:
        return TrajectorySeries(label, (), resolution, (0.0, 0.0), (0.0, 0.0))
    if t_range is None:
        t_range = (points[0][0], points[-1][0])
    if v_range is None:
        vmin = min(p[1] for p in points)
        vmax = max(p[1] for p in points)
        v_range = (vmin, vmax)
    t_lo, t_hi = t_range
    v_lo, v_hi = v_range
    t_cell = (t_hi - t_lo) / resolution if t_hi > t_lo else 1.0
    v_cell = (v_hi - v_lo) / resolution if v_hi > v_lo else 1.0

    def t_index(t: float) -> int:
        return max(0, min(int((t - t_lo) / t_cell), resolution - 1))

    out: list[tuple[float, float]] = []

    def flush(cell: list[tuple[int, float, float]]):
        # cell entries: (arrival order, t, v); ties broken by order so that
        # refiltering the output reselects exactly the same representatives
        first = cell[0]
        last = cell[-1]
        low = min(cell, key=lambda p: (p[2], p[0]))
        high = max(cell, key=lambda p: (p[2], -p[0]))
        chosen = sorted({p[0] for p in (first, low, high, last)})
        by_order = {p[0]: p for p in (first, low, high, last)}
        for order in chosen:
            _, t, v = by_order[order]
            out.append((t, v))

    current_idx: Optional[int] = None
    cell: list[tuple[int, float, float]] = []
    for order, (t, v) in enumerate(points):
        idx = t_index(t)
        if current_idx is None or idx != current_idx:
            if cell:
                flush(cell)
            current_idx = idx
            cell = []
        cell.append((order, t, v))
    if cell:
        flush(cell)

    # first/last raw points always survive
    if out[0] != tuple(points[0]):
        out.insert(0, tuple(points[0]))
    if out[-1] != tuple(points[-1]):
        out.append(tuple(points[-1]))
    return TrajectorySeries(label, tuple(out), resolution, t_range, v_range)


# ---------------------------------------------------------------------------
# Export / import

_FLOAT = repr  # shortest round-tripping decimal form


def _write_meta_csv(fh: TextIO, kind: str, meta: dict):
    fh.write(f"# kind={kind}\n")
    fh.write(f"# schema_version={SCHEMA_VERSION}\n")
    for k, v in meta.items():
        fh.write(f"# {k}={v}\n")


def export(artifact, fmt: str, destination: str) -> str:
    """Write an artifact as CSV or JSON; returns the destination path.

    The schemas are documented in docs/formats.md and reimport via
    ``load_artifact`` reproduces the artifact exactly.
    """
    if fmt not in ("csv", "json"):
        raise OutputError(f"unknown format {fmt!r}")
    try:
        with open(destination, "w", encoding="utf-8", newline="") as fh:
            if fmt == "json":
                json.dump(_to_json(artifact), fh, indent=2)
                fh.write("\n")
            else:
                _to_csv(artifact, fh)
    except OSError as exc:
        raise OutputError(f"cannot write {destination}: {exc}") from exc
    return destination


def _to_json(artifact) -> dict:
    if isinstance(artifact, Histogram):
        return {
            "kind": "histogram",
            "schema_version": SCHEMA_VERSION,
            "origin": artifact.origin,
            "width": artifact.width,
            "counts": list(artifact.counts),
            "total": artifact.total,
            "mean": artifact.mean,
            "sample_std": artifact.sample_std,
        }
    if isinstance(artifact, DistributionSeries):
        return {
            "kind": "distribution",
            "schema_version": SCHEMA_VERSION,
            "total": artifact.total,
            "alpha": artifact.alpha,
            "points": [
                {
                    "value": p.value,
                    "cdf": p.cdf,
                    "band_lo": p.band.lo,
                    "band_hi": p.band.hi,
                    **({"pdf": p.pdf} if p.pdf is not None else {}),
                }
                for p in artifact.points
            ],
        }
    if isinstance(artifact, TrajectorySeries):
        return {
            "kind": "trajectory",
            "schema_version": SCHEMA_VERSION,
            "expr": artifact.label,
            "resolution": artifact.resolution,
            "t_range": list(artifact.t_range),
            "v_range": list(artifact.v_range),
            "points": [[t, v] for t, v in artifact.points],
        }
    raise OutputError(f"cannot export {type(artifact).__name__}")


def _to_csv(artifact, fh: TextIO):
    if isinstance(artifact, Histogram):
        _write_meta_csv(
            fh,
            "histogram",
            {
                "origin": _FLOAT(artifact.origin),
                "width": _FLOAT(artifact.width),
                "total": artifact.total,
                "mean": _FLOAT(artifact.mean),
                "sample_std": _FLOAT(artifact.sample_std),
            },
        )
        fh.write("bucket_lo,bucket_hi,count\n")
        for (lo, hi), c in zip(artifact.bucket_edges(), artifact.counts):
            fh.write(f"{_FLOAT(lo)},{_FLOAT(hi)},{c}\n")
    elif isinstance(artifact, DistributionSeries):
        _write_meta_csv(fh, "distribution", {"total": artifact.total, "alpha": _FLOAT(artifact.alpha)})
        has_pdf = any(p.pdf is not None for p in artifact.points)
        fh.write("value,cdf,band_lo,band_hi" + (",pdf\n" if has_pdf else "\n"))
        for p in artifact.points:
            row = f"{_FLOAT(p.value)},{_FLOAT(p.cdf)},{_FLOAT(p.band.lo)},{_FLOAT(p.band.hi)}"
            if has_pdf:
                row += f",{_FLOAT(p.pdf if p.pdf is not None else 0.0)}"
            fh.write(row + "\n")
    elif isinstance(artifact, TrajectorySeries):
        _write_meta_csv(
            fh,
            "trajectory",
            {
                "expr": artifact.label,
                "resolution": artifact.resolution,
                "t_lo": _FLOAT(artifact.t_range[0]),
                "t_hi": _FLOAT(artifact.t_range[1]),
                "v_lo": _FLOAT(artifact.v_range[0]),
                "v_hi": _FLOAT(artifact.v_range[1]),
            },
        )
        fh.write("time,value\n")
        for t, v in artifact.points:
            fh.write(f"{_FLOAT(t)},{_FLOAT(v)}\n")
    else:
        raise OutputError(f"cannot export {type(artifact).__name__}")


def load_artifact(path: str):
    """Reimport an exported artifact (both formats)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        return _from_json(json.loads(text))
    return _from_csv(text)


def _from_json(doc: dict):
    kind = doc.get("kind")
    if kind == "histogram":
        return Histogram(
            doc["origin"], doc["width"], tuple(doc["counts"]), doc["total"], doc["mean"], doc["sample_std"]
        )
    if kind == "distribution":
        pts = tuple(
            DistributionPoint(
                p["value"], p["cdf"], CpInterval(p["band_lo"], p["band_hi"]), p.get("pdf")
            )
            for p in doc["points"]
        )
        return DistributionSeries(pts, doc["total"], doc["alpha"])
    if kind == "trajectory":
        return TrajectorySeries(
            doc["expr"],
            tuple((t, v) for t, v in doc["points"]),
            doc["resolution"],
            tuple(doc["t_range"]),
            tuple(doc["v_range"]),
        )
    raise OutputError(f"unknown artifact kind {kind!r}")


def _from_csv(text: str):
    meta: dict = {}
    rows: list[list[str]] = []
    header: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v
        elif not header:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    kind = meta.get("kind")
    if kind == "histogram":
        counts = tuple(int(r[2]) for r in rows)
        return Histogram(
            float(meta["origin"]),
            float(meta["width"]),
            counts,
            int(meta["total"]),
            float(meta["mean"]),
            float(meta["sample_std"]),
        )
    if kind == "distribution":
        has_pdf = "pdf" in header
        pts = tuple(
            DistributionPoint(
                float(r[0]),
                float(r[1]),
                CpInterval(float(r[2]), float(r[3])),
                float(r[4]) if has_pdf else None,
            )
            for r in rows
        )
        return DistributionSeries(pts, int(meta["total"]), float(meta["alpha"]))
    if kind == "trajectory":
        return TrajectorySeries(
            meta["expr"],
            tuple((float(r[0]), float(r[1])) for r in rows),
            int(meta["resolution"]),
            (float(meta["t_lo"]), float(meta["t_hi"])),
            (float(meta["v_lo"]), float(meta["v_hi"])),
        )
    raise OutputError(f"unknown artifact kind {kind!r}")
