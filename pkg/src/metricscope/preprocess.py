"""Turn raw metric series into equidistant, gap-free, normalized series.

The pipeline is resample -> low-variance filter -> z-normalize. Resampling
fills gaps with a natural cubic spline on a fixed millisecond grid and never
extrapolates beyond the observed span. The variance filter works on min-max
scaled values so one absolute threshold is meaningful across metrics with
wildly different units. All statistics are population statistics (divide by n)
for determinism.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .ingest import MetricCatalog, MetricSeries


class PreprocessError(ValueError):
    """Series cannot be prepared (too short, degenerate, ...)."""


@dataclass(frozen=True, eq=False)
class UniformSeries:
    """A metric resampled onto a uniform grid: values[i] sits at start_ms + i*interval_ms."""

    component: str
    metric: str
    start_ms: int
    interval_ms: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.interval_ms <= 0:
            raise PreprocessError(f"interval_ms must be positive, got {self.interval_ms}")
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise PreprocessError(
                f"series {self.component}/{self.metric} needs a 1-d value array of length >= 2"
            )
        if not np.all(np.isfinite(arr)):
            raise PreprocessError(f"series {self.component}/{self.metric} has non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def key(self) -> tuple[str, str]:
        return (self.component, self.metric)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PreprocessConfig:
    interval_ms: int = 500
    variance_threshold: float = 0.002
    min_length: int = 8

    def __post_init__(self) -> None:
        if self.interval_ms <= 0:
            raise PreprocessError("interval_ms must be positive")
        if self.variance_threshold < 0:
            raise PreprocessError("variance_threshold must be >= 0")
        if self.min_length < 2:
            raise PreprocessError("min_length must be >= 2")


def resample(series: MetricSeries, cfg: PreprocessConfig | None = None) -> UniformSeries:
    """Interpolate raw samples onto the uniform grid with a natural cubic spline.

    The grid is anchored at the first sample's timestamp rounded down to a
    multiple of the interval, then trimmed to grid points inside the observed
    [first, last] span so the spline is never extrapolated.
    """
    cfg = cfg or PreprocessConfig()
    if len(series.samples) < 4:
        raise PreprocessError(
            f"series {series.component}/{series.metric}: cubic resampling needs >= 4 samples, "
            f"got {len(series.samples)}"
        )
    ts = np.array([s.timestamp_ms for s in series.samples], dtype=np.int64)
    vals = np.array([s.value for s in series.samples], dtype=float)
    span = int(ts[-1] - ts[0])
    if span < cfg.min_length * cfg.interval_ms:
        raise PreprocessError(
            f"series {series.component}/{series.metric}: span {span}ms shorter than "
            f"min_length*interval = {cfg.min_length * cfg.interval_ms}ms"
        )
    anchor = (int(ts[0]) // cfg.interval_ms) * cfg.interval_ms
    first = anchor + ((int(ts[0]) - anchor + cfg.interval_ms - 1) // cfg.interval_ms) * cfg.interval_ms
    grid = np.arange(first, int(ts[-1]) + 1, cfg.interval_ms, dtype=np.int64)
    spline = CubicSpline(ts.astype(float), vals, bc_type="natural")
    values = spline(grid.astype(float))
    # the interpolant passes through knots; snap grid points that coincide with
    # raw samples to the raw values to keep the identity case exact
    on_knot = np.isin(grid, ts)
    if on_knot.any():
        knot_map = {int(t): v for t, v in zip(ts, vals)}
        values[on_knot] = [knot_map[int(g)] for g in grid[on_knot]]
    return UniformSeries(
        component=series.component,
        metric=series.metric,
        start_ms=int(grid[0]),
        interval_ms=cfg.interval_ms,
        values=values,
    )


def minmax_scale(values: np.ndarray) -> np.ndarray | None:
    """Scale to [0, 1]; returns None for constant input."""
    lo = float(np.min(values))
    hi = float(np.max(values))
    if hi == lo:
        return None
    return (values - lo) / (hi - lo)


def scaled_variance(values: np.ndarray) -> float | None:
    """Population variance of the min-max scaled values; None if constant."""
    scaled = minmax_scale(np.asarray(values, dtype=float))
    if scaled is None:
        return None
    return float(np.mean((scaled - scaled.mean()) ** 2))


def filter_low_variance(
    series: list[UniformSeries], cfg: PreprocessConfig | None = None
) -> tuple[list[UniformSeries], list[UniformSeries]]:
    """Partition series into (kept, dropped) by scaled variance.

    Constant series are dropped outright; otherwise a series is dropped when the
    population variance of its min-max scaled values is <= the threshold. The
    partition is exhaustive and disjoint, and invariant to affine rescaling
    a*x + b (a > 0) of the inputs.
    """
    cfg = cfg or PreprocessConfig()
    kept: list[UniformSeries] = []
    dropped: list[UniformSeries] = []
    for u in series:
        var = scaled_variance(u.values)
        if var is None or var <= cfg.variance_threshold:
            dropped.append(u)
        else:
            kept.append(u)
    return kept, dropped


def zscore(values: np.ndarray) -> np.ndarray:
    """(x - mean) / population std; raises on constant input."""
    arr = np.asarray(values, dtype=float)
    mu = arr.mean()
    sigma = arr.std()
    if sigma == 0.0 or not math.isfinite(sigma):
        raise PreprocessError("cannot z-normalize a constant series (sigma = 0)")
    return (arr - mu) / sigma


def znormalize(u: UniformSeries) -> UniformSeries:
    """Z-normalized copy of the series; output has mean 0 and std 1 within 1e-9."""
    try:
        values = zscore(u.values)
    except PreprocessError:
        raise PreprocessError(
            f"series {u.component}/{u.metric} is constant; it should have been "
            "filtered before normalization"
        ) from None
    return replace(u, values=values)


def prepare_catalog(
    catalog: MetricCatalog, cfg: PreprocessConfig | None = None
) -> tuple[list[UniformSeries], list[dict]]:
    """Full preprocessing of a catalog: resample, filter, z-normalize.

    Returns the prepared (kept, z-normalized) series plus a diagnostics list
    recording every dropped series and the reason.
    """
    cfg = cfg or PreprocessConfig()
    resampled: list[UniformSeries] = []
    diagnostics: list[dict] = []
    for s in catalog.series:
        try:
            resampled.append(resample(s, cfg))
        except PreprocessError as exc:
            diagnostics.append(
                {"component": s.component, "metric": s.metric, "reason": str(exc)}
            )
    kept, dropped = filter_low_variance(resampled, cfg)
    for u in dropped:
        var = scaled_variance(u.values)
        reason = "constant series" if var is None else f"scaled variance {var:.6g} <= {cfg.variance_threshold}"
        diagnostics.append({"component": u.component, "metric": u.metric, "reason": reason})
    prepared = [znormalize(u) for u in kept]
    return prepared, diagnostics


def save_prepared(series: list[UniformSeries], path: str | Path) -> None:
    """Serialize prepared series to the JSON document format."""
    doc = {
        "series": [
            {
                "component": u.component,
                "metric": u.metric,
                "start_ms": u.start_ms,
                "interval_ms": u.interval_ms,
                "values": [float(v) for v in u.values],
            }
            for u in sorted(series, key=lambda u: u.key)
        ]
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_prepared(path: str | Path) -> list[UniformSeries]:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    return [
        UniformSeries(
            component=item["component"],
            metric=item["metric"],
            start_ms=int(item["start_ms"]),
            interval_ms=int(item["interval_ms"]),
            values=np.array(item["values"], dtype=float),
        )
        for item in doc["series"]
    ]
