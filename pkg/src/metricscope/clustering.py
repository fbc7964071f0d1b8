"""Per-component metric clustering with k-Shape under shape-based distance.

Each component's z-normalized metrics are clustered for every candidate k in
[k_min, min(k_max, n-1)]; the model with the best mean silhouette (SBD as the
dissimilarity) wins, ties going to the smallest k. Initial assignments come
from metric-name similarity (Jaro) by default, which only speeds up
convergence; a seeded random init is available and must produce equivalent
partitions on well-separated data.

Centroids are computed by shape extraction: the principal eigenvector of the
shift-aligned members' centered scatter matrix, found by power iteration with
the sign chosen to correlate positively with the previous centroid. If power
iteration fails to converge within 200 steps the cluster falls back to its
medoid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .distance import sbd_matrix, sbd_to_centroids, shift_align
from .preprocess import UniformSeries, zscore

_POWER_STEPS = 200
_POWER_TOL = 1e-12


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusteringConfig:
    k_min: int = 2
    k_max: int = 7
    max_iterations: int = 100
    seed: int = 0
    name_init: bool = True
    n_init: int = 3  # random-init restarts per k; name init is deterministic

    def __post_init__(self) -> None:
        if not (1 <= self.k_min <= self.k_max):
            raise ClusteringError(f"need 1 <= k_min <= k_max, got {self.k_min}..{self.k_max}")
        if self.max_iterations < 1:
            raise ClusteringError("max_iterations must be >= 1")
        if self.n_init < 1:
            raise ClusteringError("n_init must be >= 1")


@dataclass(frozen=True, eq=False)
class Cluster:
    id: int
    members: frozenset[str]
    centroid: np.ndarray
    representative: str | None = None

    def __post_init__(self) -> None:
        if not self.members:
            raise ClusteringError(f"cluster {self.id} has no members")
        if self.representative is not None and self.representative not in self.members:
            raise ClusteringError(
                f"representative {self.representative!r} is not a member of cluster {self.id}"
            )


@dataclass(frozen=True, eq=False)
class ClusterModel:
    component: str
    clusters: tuple[Cluster, ...]
    silhouette: float
    converged: bool = True

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def members(self) -> frozenset[str]:
        return frozenset(m for c in self.clusters for m in c.members)

    @property
    def representatives(self) -> list[str]:
        return [c.representative for c in self.clusters if c.representative is not None]

    def cluster_of(self, metric: str) -> Cluster:
        for c in self.clusters:
            if metric in c.members:
                return c
        raise KeyError(f"{metric} not in any cluster of {self.component}")

    def labels(self) -> dict[str, int]:
        return {m: c.id for c in self.clusters for m in c.members}


def jaro(a: str, b: str) -> float:
    """Standard Jaro similarity in [0, 1]; 1.0 when both strings are empty."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    window = max(max(len(a), len(b)) // 2 - 1, 0)
    matched_a = [False] * len(a)
    matched_b = [False] * len(b)
    matches = 0
    for i, ch in enumerate(a):
        lo = max(0, i - window)
        hi = min(len(b), i + window + 1)
        for j in range(lo, hi):
            if not matched_b[j] and b[j] == ch:
                matched_a[i] = matched_b[j] = True
                matches += 1
                break
    if matches == 0:
        return 0.0
    seq_a = [ch for i, ch in enumerate(a) if matched_a[i]]
    seq_b = [ch for j, ch in enumerate(b) if matched_b[j]]
    transpositions = sum(ca != cb for ca, cb in zip(seq_a, seq_b)) / 2.0
    m = float(matches)
    return (m / len(a) + m / len(b) + (m - transpositions) / m) / 3.0


def _name_merge_partitions(metrics: list[str]) -> dict[int, list[int]]:
    """Assignments for every group count from n down to 1, by one agglomerative pass.

    Group similarity is the average pairwise Jaro between members, maintained
    incrementally (the weighted-average update is exact). Ties break
    lexicographically on the smallest member names of the candidate pair.
    """
    n = len(metrics)
    sim = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = jaro(metrics[i], metrics[j])
    np.fill_diagonal(sim, -np.inf)
    alive = list(range(n))
    size = [1] * n
    min_name = list(metrics)
    groups: dict[int, list[int]] = {i: [i] for i in range(n)}

    def snapshot() -> list[int]:
        ordered = sorted(groups.values(), key=lambda g: min(metrics[i] for i in g))
        assignment = [0] * n
        for gid, group in enumerate(ordered):
            for i in group:
                assignment[i] = gid
        return assignment

    partitions = {n: snapshot()}
    while len(alive) > 1:
        sub = sim[np.ix_(alive, alive)]
        best = float(np.max(sub))
        ii, jj = np.nonzero(sub >= best - 1e-15)
        candidates = [
            (tuple(sorted((min_name[alive[a]], min_name[alive[b]]))), alive[a], alive[b])
            for a, b in zip(ii, jj)
            if a < b
        ]
        _, gi, gj = min(candidates)
        for h in alive:
            if h in (gi, gj):
                continue
            merged = (size[gi] * sim[gi, h] + size[gj] * sim[gj, h]) / (size[gi] + size[gj])
            sim[gi, h] = sim[h, gi] = merged
        size[gi] += size[gj]
        min_name[gi] = min(min_name[gi], min_name[gj])
        groups[gi] = groups[gi] + groups[gj]
        del groups[gj]
        alive.remove(gj)
        sim[gj, :] = -np.inf
        sim[:, gj] = -np.inf
        partitions[len(alive)] = snapshot()
    return partitions


def initial_assignment_by_name(metrics: list[str], k: int) -> list[int]:
    """Agglomerative grouping of metric names into k groups by average Jaro.

    Starting from singletons, the two groups with the highest average pairwise
    similarity merge until k groups remain; deterministic tie-breaking makes
    the grouping reproducible.
    """
    n = len(metrics)
    if k > n:
        raise ClusteringError(f"cannot form {k} groups from {n} metrics")
    return _name_merge_partitions(metrics)[k]


def _extract_shape(members: np.ndarray, prev_centroid: np.ndarray) -> np.ndarray | None:
    """Principal eigenvector of the aligned members' centered scatter.

    Members must already be shift-aligned to the previous centroid. Returns the
    z-normalized centroid, or None if power iteration did not converge.
    """
    sz = members.shape[1]
    scatter = members.T @ members
    # center the scatter: M = Q S Q with Q = I - 11'/sz
    col_mean = scatter.mean(axis=0)
    m = scatter - col_mean[None, :] - col_mean[:, None] + col_mean.mean()
    if np.linalg.norm(prev_centroid) > 0:
        v = prev_centroid / np.linalg.norm(prev_centroid)
    else:
        v = np.full(sz, 1.0 / np.sqrt(sz))
    converged = False
    for _ in range(_POWER_STEPS):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return None
        w /= norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < _POWER_TOL:
            v = w
            converged = True
            break
        v = w
    if not converged:
        return None
    if np.linalg.norm(prev_centroid) > 0:
        if float(v @ prev_centroid) < 0:
            v = -v
    elif float(v @ members.sum(axis=0)) < 0:
        v = -v
    if np.ptp(v) == 0.0:
        return None
    return zscore(v)


def _medoid(indices: list[int], dist: np.ndarray) -> int:
    sums = dist[np.ix_(indices, indices)].sum(axis=1)
    return indices[int(np.argmin(sums))]


def kshape(
    series: list[UniformSeries],
    k: int,
    cfg: ClusteringConfig | None = None,
    initial: list[int] | None = None,
) -> list[Cluster]:
    """Cluster z-normalized series of equal length into k shape clusters.

    Iterates SBD assignment against shape-extracted centroids until the
    assignment is stable or max_iterations is hit (the last assignment is then
    returned and the model is flagged as not converged via
    :func:`kshape_with_flag`). Empty clusters are repaired by moving in the
    globally worst-fitting series.
    """
    clusters, _ = kshape_with_flag(series, k, cfg, initial)
    return clusters


def kshape_with_flag(
    series: list[UniformSeries],
    k: int,
    cfg: ClusteringConfig | None = None,
    initial: list[int] | None = None,
) -> tuple[list[Cluster], bool]:
    cfg = cfg or ClusteringConfig(k_min=1)
    n = len(series)
    if k > n:
        raise ClusteringError(f"k={k} exceeds number of series {n}")
    lengths = {len(s) for s in series}
    if len(lengths) != 1:
        raise ClusteringError(f"series lengths differ: {sorted(lengths)}")
    names = [s.metric for s in series]
    X = np.stack([s.values for s in series])
    sz = X.shape[1]

    if initial is not None:
        labels = np.asarray(initial, dtype=int).copy()
    elif cfg.name_init:
        labels = np.asarray(initial_assignment_by_name(names, k), dtype=int)
    else:
        rng = np.random.default_rng(cfg.seed)
        labels = rng.integers(0, k, size=n)
        for cid in range(k):  # every cluster starts non-empty
            if not np.any(labels == cid):
                labels[rng.integers(0, n)] = cid

    pair_dist: np.ndarray | None = None  # lazily built, only for medoid fallback
    centroids = np.zeros((k, sz))
    converged = False
    for _ in range(cfg.max_iterations):
        for cid in range(k):
            idx = np.nonzero(labels == cid)[0]
            if idx.size == 0:
                continue
            if np.linalg.norm(centroids[cid]) == 0.0:
                aligned = X[idx]  # no reference shape yet, use members as-is
            else:
                _, shifts = sbd_to_centroids(X[idx], centroids[cid][None, :])
                aligned = np.stack(
                    [shift_align(X[i], -int(s)) for i, s in zip(idx, shifts[:, 0])]
                )
            extracted = _extract_shape(aligned, centroids[cid])
            if extracted is None:
                if pair_dist is None:
                    pair_dist = sbd_matrix(X)
                centroids[cid] = X[_medoid(list(idx), pair_dist)]
            else:
                centroids[cid] = extracted

        dist, _ = sbd_to_centroids(X, centroids)
        new_labels = np.argmin(dist, axis=1)
        new_labels = _repair_empty(new_labels, dist, k, names)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels

    clusters = []
    for cid in range(k):
        members = frozenset(names[i] for i in np.nonzero(labels == cid)[0])
        clusters.append(Cluster(id=cid, members=members, centroid=centroids[cid].copy()))
    return clusters, converged


def _repair_empty(labels: np.ndarray, dist: np.ndarray, k: int, names: list[str]) -> np.ndarray:
    """Move the globally worst-fitting series into each empty cluster."""
    labels = labels.copy()
    for cid in range(k):
        if np.any(labels == cid):
            continue
        counts = np.bincount(labels, minlength=k)
        movable = [i for i in range(len(labels)) if counts[labels[i]] > 1]
        if not movable:
            continue
        fits = [(-dist[i, labels[i]], names[i], i) for i in movable]
        fits.sort()
        labels[fits[0][2]] = cid
    return labels


def silhouette_from_matrix(dist: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points; singleton-cluster points score 0."""
    n = len(labels)
    unique = np.unique(labels)
    if len(unique) < 2:
        return 0.0
    total = 0.0
    for i in range(n):
        own = labels[i]
        own_idx = np.nonzero(labels == own)[0]
        if own_idx.size == 1:
            continue  # contributes 0
        a = dist[i, own_idx[own_idx != i]].mean()
        b = np.inf
        for other in unique:
            if other == own:
                continue
            other_idx = np.nonzero(labels == other)[0]
            b = min(b, dist[i, other_idx].mean())
        denom = max(a, b)
        total += 0.0 if denom == 0.0 else (b - a) / denom
    return total / n


def select_k(series: list[UniformSeries], cfg: ClusteringConfig | None = None) -> ClusterModel:
    """Sweep k over [k_min, min(k_max, n-1)] and keep the best-silhouette model.

    A single series yields the trivial one-cluster model with silhouette
    recorded as 1. Ties on the silhouette go to the smallest k. Under random
    initialization each k gets n_init seeded restarts (best silhouette wins),
    which irons out the local optima that single random assignments fall into;
    name-based initialization is deterministic and runs once.
    """
    cfg = cfg or ClusteringConfig()
    if not series:
        raise ClusteringError("no series to cluster")
    component = series[0].component
    if any(s.component != component for s in series):
        raise ClusteringError("select_k clusters one component at a time")
    series = sorted(series, key=lambda s: s.metric)
    names = [s.metric for s in series]
    n = len(series)
    if n == 1:
        cluster = Cluster(id=0, members=frozenset(names), centroid=series[0].values.copy())
        return ClusterModel(component=component, clusters=(cluster,), silhouette=1.0)

    dist = sbd_matrix(np.stack([s.values for s in series]))
    ks = list(range(cfg.k_min, min(cfg.k_max, n - 1) + 1))
    if not ks:
        ks = [min(cfg.k_max, n - 1, cfg.k_min)]
    name_partitions = _name_merge_partitions(names) if cfg.name_init else None
    restarts = 1 if cfg.name_init else cfg.n_init
    best: tuple[float, int, list[Cluster], bool] | None = None
    for k in ks:
        for restart in range(restarts):
            if name_partitions is not None:
                initial = name_partitions[k]
                run_cfg = cfg
            else:
                initial = None
                run_cfg = replace(cfg, seed=cfg.seed + 1_000_003 * restart)
            clusters, converged = kshape_with_flag(series, k, run_cfg, initial=initial)
            label_of = {m: c.id for c in clusters for m in c.members}
            labels = np.array([label_of[name] for name in names])
            score = silhouette_from_matrix(dist, labels)
            if best is None or score > best[0] + 1e-12:
                best = (score, k, clusters, converged)
    score, _, clusters, converged = best
    return ClusterModel(
        component=component, clusters=tuple(clusters), silhouette=score, converged=converged
    )


def representatives(model: ClusterModel, series: list[UniformSeries]) -> ClusterModel:
    """Pick each cluster's representative: the member nearest its centroid.

    Ties break lexicographically on the metric name.
    """
    by_name = {s.metric: s for s in series if s.component == model.component}
    new_clusters = []
    for cluster in model.clusters:
        members = sorted(cluster.members)
        X = np.stack([by_name[m].values for m in members])
        dist, _ = sbd_to_centroids(X, cluster.centroid[None, :])
        d = dist[:, 0]
        best = min(range(len(members)), key=lambda i: (d[i], members[i]))
        new_clusters.append(replace(cluster, representative=members[best]))
    return replace(model, clusters=tuple(new_clusters))


def cluster_validity(
    model: ClusterModel, series: list[UniformSeries], threshold: float = 0.3
) -> dict:
    """Report members whose SBD to their cluster centroid exceeds the threshold.

    Violations are surfaced per cluster; the overall fraction of members within
    the threshold acts as the model's validity score.
    """
    by_name = {s.metric: s for s in series if s.component == model.component}
    per_cluster = []
    ok = 0
    total = 0
    for cluster in model.clusters:
        members = sorted(cluster.members)
        X = np.stack([by_name[m].values for m in members])
        dist, _ = sbd_to_centroids(X, cluster.centroid[None, :])
        d = dist[:, 0]
        violations = [
            {"metric": m, "distance": float(dd)} for m, dd in zip(members, d) if dd > threshold
        ]
        ok += int(np.sum(d <= threshold))
        total += len(members)
        per_cluster.append({"cluster": cluster.id, "violations": violations})
    return {
        "component": model.component,
        "threshold": threshold,
        "fraction_within": ok / total if total else 1.0,
        "clusters": per_cluster,
    }


def cluster_component(
    series: list[UniformSeries], cfg: ClusteringConfig | None = None
) -> ClusterModel:
    """select_k followed by representative selection."""
    model = select_k(series, cfg)
    return representatives(model, series)


def save_models(models: list[ClusterModel], path: str | Path) -> None:
    doc = {
        "models": [
            {
                "component": m.component,
                "k": m.k,
                "silhouette": float(m.silhouette),
                "converged": m.converged,
                "clusters": [
                    {
                        "id": c.id,
                        "members": sorted(c.members),
                        "representative": c.representative,
                        "centroid": [float(v) for v in c.centroid],
                    }
                    for c in m.clusters
                ],
            }
            for m in sorted(models, key=lambda m: m.component)
        ]
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_models(path: str | Path) -> list[ClusterModel]:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    models = []
    for item in doc["models"]:
        clusters = tuple(
            Cluster(
                id=int(c["id"]),
                members=frozenset(c["members"]),
                centroid=np.array(c["centroid"], dtype=float),
                representative=c.get("representative"),
            )
            for c in item["clusters"]
        )
        models.append(
            ClusterModel(
                component=item["component"],
                clusters=clusters,
                silhouette=float(item["silhouette"]),
                converged=bool(item.get("converged", True)),
            )
        )
    return models
