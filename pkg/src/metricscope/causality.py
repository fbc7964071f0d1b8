"""Granger-causality testing between representative metrics of adjacent components.

Series are first checked for stationarity with an augmented Dickey-Fuller
regression (constant term, lag order floor((n-1)^(1/3)), MacKinnon critical
values); non-stationary series are first-differenced once and re-tested, and
excluded from causality testing if still non-stationary.

The Granger test fits two least-squares models per lag depth L: the restricted
model regresses y_t on a constant and y_{t-1..t-L}, the unrestricted model adds
x_{t-1..t-L}. The models are compared with an F statistic whose p-value comes
from the regularized incomplete beta function. The lag search keeps the L with
the smallest p-value; because the search inspects max_lag_steps candidate
lags, the reported p-value is the family-adjusted 1-(1-p_min)^m so that
comparing it against alpha keeps the test's false-positive rate at the nominal
level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import special

from .clustering import ClusterModel
from .ingest import CallGraph
from .preprocess import UniformSeries
from .util import parallel_map

# MacKinnon (2010) response-surface constants for the constant-only ADF
# regression: critical value = b0 + b1/n + b2/n^2 + b3/n^3.
_ADF_CRITICAL = {
    0.01: (-3.43035, -6.5393, -16.786, -79.433),
    0.05: (-2.86154, -2.8903, -4.234, -40.040),
    0.10: (-2.56677, -1.5384, -2.809, 0.0),
}


class CausalityError(ValueError):
    pass


@dataclass(frozen=True)
class CausalityConfig:
    alpha: float = 0.05
    max_lag_steps: int = 3
    interval_ms: int = 500

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise CausalityError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.max_lag_steps < 1:
            raise CausalityError("max_lag_steps must be >= 1")


@dataclass(frozen=True)
class StationarityReport:
    adf_statistic: float
    stationary: bool
    differenced: bool

    @property
    def excluded(self) -> bool:
        """Still non-stationary after one differencing pass."""
        return self.differenced and not self.stationary


@dataclass(frozen=True)
class GrangerResult:
    f_statistic: float
    p_value: float
    lag_steps: int
    significant: bool
    degenerate: bool = False


@dataclass(frozen=True)
class DependencyEdge:
    src_component: str
    src_metric: str
    dst_component: str
    dst_metric: str
    lag_ms: int
    p_value: float

    @property
    def sort_key(self) -> tuple[str, str, str, str]:
        return (self.src_component, self.src_metric, self.dst_component, self.dst_metric)


@dataclass(frozen=True)
class DependencyGraph:
    edges: tuple[DependencyEdge, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.sort_key)))

    def component_pairs(self) -> set[tuple[str, str]]:
        return {(e.src_component, e.dst_component) for e in self.edges}

    def metric_incidence(self) -> dict[tuple[str, str], list[float]]:
        """(component, metric) -> p-values of every edge it participates in."""
        out: dict[tuple[str, str], list[float]] = {}
        for e in self.edges:
            out.setdefault((e.src_component, e.src_metric), []).append(e.p_value)
            out.setdefault((e.dst_component, e.dst_metric), []).append(e.p_value)
        return out


def f_sf(f_stat: float, d1: int, d2: int) -> float:
    """Survival function of the F(d1, d2) distribution via the incomplete beta."""
    if d1 <= 0 or d2 <= 0:
        raise CausalityError(f"F degrees of freedom must be positive, got ({d1}, {d2})")
    if not np.isfinite(f_stat):
        return 0.0
    if f_stat <= 0.0:
        return 1.0
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f_stat)))


def _nearest_adf_level(alpha: float) -> float:
    return min(_ADF_CRITICAL, key=lambda lvl: (abs(lvl - alpha), lvl))


def adf_statistic(values: np.ndarray) -> tuple[float, int]:
    """ADF t-statistic (constant term, lag order floor((n-1)^(1/3))) and the
    number of regression observations."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n < 20:
        raise CausalityError(f"ADF needs at least 20 observations, got {n}")
    d = np.diff(v)
    p = int(np.floor((n - 1) ** (1.0 / 3.0)))
    y = d[p:]
    rows = len(y)
    X = np.empty((rows, 2 + p))
    X[:, 0] = 1.0
    X[:, 1] = v[p:-1]
    for i in range(1, p + 1):
        X[:, 1 + i] = d[p - i : len(d) - i]
    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = rows - X.shape[1]
    if dof <= 0:
        raise CausalityError("ADF regression has no residual degrees of freedom")
    sigma2 = float(resid @ resid) / dof
    gram_inv = np.linalg.inv(X.T @ X)
    se = float(np.sqrt(sigma2 * gram_inv[1, 1]))
    return float(beta[1]) / se, rows


def adf_critical_value(alpha: float, nobs: int) -> float:
    b0, b1, b2, b3 = _ADF_CRITICAL[_nearest_adf_level(alpha)]
    return b0 + b1 / nobs + b2 / nobs**2 + b3 / nobs**3


def adf_is_stationary(u: UniformSeries, alpha: float = 0.05) -> StationarityReport:
    """Classify a series as stationary when the ADF statistic falls below the
    MacKinnon critical value at the requested level (nearest of 1%/5%/10%)."""
    stat, nobs = adf_statistic(u.values)
    return StationarityReport(
        adf_statistic=stat,
        stationary=stat < adf_critical_value(alpha, nobs),
        differenced=False,
    )


def first_difference(u: UniformSeries) -> UniformSeries:
    return replace(
        u, start_ms=u.start_ms + u.interval_ms, values=np.diff(u.values)
    )


def prepare_stationary(
    u: UniformSeries, alpha: float = 0.05
) -> tuple[UniformSeries, StationarityReport]:
    """Return a stationary version of the series, differencing at most once.

    A series that is still non-stationary after differencing comes back with
    report.excluded set; it produces no dependency edges.
    """
    if len(u) < 21:
        raise CausalityError(
            f"series {u.component}/{u.metric} too short for stationarity handling"
        )
    report = adf_is_stationary(u, alpha)
    if report.stationary:
        return u, report
    diffed = first_difference(u)
    stat, nobs = adf_statistic(diffed.values)
    report = StationarityReport(
        adf_statistic=stat,
        stationary=stat < adf_critical_value(alpha, nobs),
        differenced=True,
    )
    return diffed, report


def _lagged_design(x: np.ndarray, y: np.ndarray, lag: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Target y_t and the restricted/unrestricted design matrices for one lag depth."""
    n = len(y)
    rows = n - lag
    target = y[lag:]
    restricted = np.empty((rows, 1 + lag))
    unrestricted = np.empty((rows, 1 + 2 * lag))
    restricted[:, 0] = 1.0
    unrestricted[:, 0] = 1.0
    for i in range(1, lag + 1):
        restricted[:, i] = y[lag - i : n - i]
        unrestricted[:, i] = y[lag - i : n - i]
        unrestricted[:, lag + i] = x[lag - i : n - i]
    return target, restricted, unrestricted


def granger(x: UniformSeries, y: UniformSeries, cfg: CausalityConfig | None = None) -> GrangerResult:
    """Test whether x Granger-causes y.

    Searches lag depths 1..max_lag_steps, keeps the depth with the smallest
    per-lag p-value and reports the family-adjusted p (see module docstring).
    Rank-deficient designs (x carrying no information beyond y's own history,
    e.g. an instantaneous copy) are reported as degenerate and never
    significant.
    """
    cfg = cfg or CausalityConfig()
    xv = np.asarray(x.values, dtype=float)
    yv = np.asarray(y.values, dtype=float)
    if len(xv) != len(yv):
        raise CausalityError(f"granger needs equal lengths, got {len(xv)} vs {len(yv)}")
    n = len(yv)
    if n < 10 * cfg.max_lag_steps:
        raise CausalityError(
            f"granger needs length >= {10 * cfg.max_lag_steps}, got {n}"
        )
    best: tuple[float, int, float] | None = None  # (p, lag, F)
    any_valid = False
    for lag in range(1, cfg.max_lag_steps + 1):
        target, restricted, unrestricted = _lagged_design(xv, yv, lag)
        rows = len(target)
        dof = rows - (2 * lag + 1)
        if dof <= 0:
            continue
        beta_u, _, rank_u, _ = np.linalg.lstsq(unrestricted, target, rcond=None)
        if rank_u < unrestricted.shape[1]:
            continue  # singular design for this lag depth
        beta_r, _, _, _ = np.linalg.lstsq(restricted, target, rcond=None)
        rss_r = float(np.sum((target - restricted @ beta_r) ** 2))
        rss_u = float(np.sum((target - unrestricted @ beta_u) ** 2))
        any_valid = True
        if rss_u <= 0.0:
            f_stat = np.inf if rss_r > rss_u else 0.0
        else:
            f_stat = max(((rss_r - rss_u) / lag) / (rss_u / dof), 0.0)
        p = f_sf(f_stat, lag, dof)
        if best is None or p < best[0]:  # ties keep the smaller lag (ascending sweep)
            best = (p, lag, f_stat)
    if not any_valid or best is None:
        return GrangerResult(
            f_statistic=0.0, p_value=1.0, lag_steps=1, significant=False, degenerate=True
        )
    p_min, lag, f_stat = best
    p_adj = float(1.0 - (1.0 - p_min) ** cfg.max_lag_steps)
    return GrangerResult(
        f_statistic=f_stat,
        p_value=p_adj,
        lag_steps=lag,
        significant=p_adj < cfg.alpha,
        degenerate=False,
    )


@dataclass
class CausalityDiagnostics:
    tested_pairs: int = 0
    excluded: list[dict] | None = None
    degenerate: list[dict] | None = None
    bidirectional_removed: list[dict] | None = None

    def as_dict(self) -> dict:
        return {
            "tested_pairs": self.tested_pairs,
            "excluded": self.excluded or [],
            "degenerate": self.degenerate or [],
            "bidirectional_removed": self.bidirectional_removed or [],
        }


def _align_prepared(a: UniformSeries, b: UniformSeries) -> tuple[UniformSeries, UniformSeries]:
    """Trim two prepared series (possibly differenced) to a shared grid window."""
    if a.interval_ms != b.interval_ms:
        raise CausalityError(
            f"interval mismatch: {a.key} at {a.interval_ms}ms vs {b.key} at {b.interval_ms}ms"
        )
    start = max(a.start_ms, b.start_ms)
    off_a = (start - a.start_ms) // a.interval_ms
    off_b = (start - b.start_ms) // b.interval_ms
    length = min(len(a) - off_a, len(b) - off_b)
    if length < 2:
        raise CausalityError(f"series {a.key} and {b.key} do not overlap")
    a2 = replace(a, start_ms=start, values=a.values[off_a : off_a + length])
    b2 = replace(b, start_ms=start, values=b.values[off_b : off_b + length])
    return a2, b2


def infer_dependencies(
    models: dict[str, ClusterModel],
    callgraph: CallGraph,
    prepared: list[UniformSeries],
    cfg: CausalityConfig | None = None,
    threads: int = 1,
) -> tuple[DependencyGraph, CausalityDiagnostics]:
    """Granger-test every representative-metric pair of call-adjacent components.

    Both directions of every adjacent pair are tested; metric pairs significant
    in both directions are filtered out (a marker for a hidden confounder). The
    returned edge list is deduplicated and deterministically sorted.
    """
    cfg = cfg or CausalityConfig()
    diag = CausalityDiagnostics(excluded=[], degenerate=[], bidirectional_removed=[])
    intervals = {u.interval_ms for u in prepared}
    if len(intervals) > 1:
        raise CausalityError(f"prepared series mix intervals {sorted(intervals)}")
    if intervals and intervals != {cfg.interval_ms}:
        raise CausalityError(
            f"prepared series run at {intervals.pop()}ms but the causality config "
            f"says {cfg.interval_ms}ms; lag_ms would be wrong"
        )
    for node in sorted(callgraph.nodes):
        if node not in models:
            raise CausalityError(f"component {node} has no cluster model")

    by_key = {u.key: u for u in prepared}
    stationary: dict[tuple[str, str], UniformSeries] = {}
    for component in sorted(callgraph.nodes):
        for rep in models[component].representatives:
            key = (component, rep)
            if key not in by_key:
                raise CausalityError(f"representative {component}/{rep} missing from prepared data")
            series, report = prepare_stationary(by_key[key], cfg.alpha)
            if report.excluded:
                diag.excluded.append(
                    {"component": component, "metric": rep, "adf_statistic": report.adf_statistic}
                )
            else:
                stationary[key] = series

    tasks = []
    for comp_a, comp_b in callgraph.adjacent_pairs():
        for rep_a in sorted(models[comp_a].representatives):
            for rep_b in sorted(models[comp_b].representatives):
                ka, kb = (comp_a, rep_a), (comp_b, rep_b)
                if ka in stationary and kb in stationary:
                    tasks.append((ka, kb))

    def run_pair(pair: tuple[tuple[str, str], tuple[str, str]]) -> tuple:
        ka, kb = pair
        a, b = _align_prepared(stationary[ka], stationary[kb])
        fwd = granger(a, b, cfg)
        rev = granger(b, a, cfg)
        return ka, kb, fwd, rev

    results = parallel_map(run_pair, tasks, threads)

    edges: list[DependencyEdge] = []
    for ka, kb, fwd, rev in results:
        diag.tested_pairs += 2
        for r, (src, dst) in ((fwd, (ka, kb)), (rev, (kb, ka))):
            if r.degenerate:
                diag.degenerate.append(
                    {"src": "/".join(src), "dst": "/".join(dst)}
                )
        if fwd.significant and rev.significant:
            diag.bidirectional_removed.append(
                {"a": "/".join(ka), "b": "/".join(kb), "p_ab": fwd.p_value, "p_ba": rev.p_value}
            )
            continue
        for r, (src, dst) in ((fwd, (ka, kb)), (rev, (kb, ka))):
            if r.significant:
                edges.append(
                    DependencyEdge(
                        src_component=src[0],
                        src_metric=src[1],
                        dst_component=dst[0],
                        dst_metric=dst[1],
                        lag_ms=r.lag_steps * cfg.interval_ms,
                        p_value=r.p_value,
                    )
                )
    return DependencyGraph(edges=tuple(edges)), diag


def build_dependency_graph(
    models: dict[str, ClusterModel],
    callgraph: CallGraph,
    prepared: list[UniformSeries],
    cfg: CausalityConfig | None = None,
) -> DependencyGraph:
    graph, _ = infer_dependencies(models, callgraph, prepared, cfg)
    return graph


def save_graph(graph: DependencyGraph, path: str | Path) -> None:
    doc = {
        "edges": [
            {
                "src_component": e.src_component,
                "src_metric": e.src_metric,
                "dst_component": e.dst_component,
                "dst_metric": e.dst_metric,
                "lag_ms": e.lag_ms,
                "p_value": e.p_value,
            }
            for e in graph.edges
        ]
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_graph(path: str | Path) -> DependencyGraph:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    return DependencyGraph(
        edges=tuple(
            DependencyEdge(
                src_component=e["src_component"],
                src_metric=e["src_metric"],
                dst_component=e["dst_component"],
                dst_metric=e["dst_metric"],
                lag_ms=int(e["lag_ms"]),
                p_value=float(e["p_value"]),
            )
            for e in doc["edges"]
        )
    )
