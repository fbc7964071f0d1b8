from __future__ import annotations

import numpy as np
import pytest

from metricscope.causality import DependencyEdge, DependencyGraph
from metricscope.clustering import Cluster, ClusterModel
from metricscope.evaluate import EvaluateError, ami, edge_prf, reduction_ratio

sklearn_metrics = pytest.importorskip("sklearn.metrics", reason="AMI oracle needs sklearn")


def labeling(labels):
    return {f"item{i}": l for i, l in enumerate(labels)}


class TestAmi:
    def test_identical_partitions(self):
        a = labeling([0, 0, 1, 1, 2])
        assert ami(a, dict(a)) == pytest.approx(1.0, abs=1e-12)

    def test_label_renaming_invariant(self):
        a = labeling([0, 0, 1, 1, 2, 2])
        b = labeling(["x", "x", "y", "y", "z", "z"])
        assert ami(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_independent_random_labelings_near_zero(self):
        rng = np.random.default_rng(8)
        scores = []
        for _ in range(5):
            a = labeling(rng.integers(0, 5, size=1000))
            b = labeling(rng.integers(0, 5, size=1000))
            scores.append(ami(a, b))
        assert all(abs(s) < 0.05 for s in scores)

    def test_symmetry(self, rng):
        a = labeling(rng.integers(0, 3, size=60))
        b = labeling(rng.integers(0, 4, size=60))
        assert ami(a, b) == pytest.approx(ami(b, a), abs=1e-12)

    def test_matches_sklearn_arithmetic_mean(self, rng):
        for seed in range(10):
            r = np.random.default_rng(seed)
            x = r.integers(0, 4, size=120)
            y = r.integers(0, 3, size=120)
            mine = ami(labeling(x), labeling(y))
            ref = sklearn_metrics.adjusted_mutual_info_score(x, y, average_method="arithmetic")
            assert mine == pytest.approx(ref, abs=1e-9)

    def test_item_mismatch_errors(self):
        with pytest.raises(EvaluateError):
            ami({"a": 0}, {"b": 0})


def graph(pairs):
    return DependencyGraph(edges=tuple(
        DependencyEdge(src_component=a, src_metric="m", dst_component=b, dst_metric="n",
                       lag_ms=500, p_value=0.01)
        for a, b in pairs
    ))


class TestEdgePrf:
    def test_perfect_match(self):
        g = graph([("A", "B"), ("B", "C")])
        assert edge_prf(g, g) == (1.0, 1.0, 1.0)

    def test_empty_inferred_conventions(self):
        truth = graph([("A", "B")])
        p, r, f1 = edge_prf(truth, graph([]))
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_one_extra_edge(self):
        truth = graph([("A", "B"), ("B", "C"), ("C", "D"), ("D", "E")])
        inferred = graph([("A", "B"), ("B", "C"), ("C", "D"), ("D", "E"), ("E", "A")])
        p, r, f1 = edge_prf(truth, inferred)
        assert p == pytest.approx(0.8)
        assert r == pytest.approx(1.0)

    def test_direction_matters(self):
        assert edge_prf(graph([("A", "B")]), graph([("B", "A")]))[1] == 0.0


def fake_models(rep_counts):
    models = []
    for i, reps in enumerate(rep_counts):
        clusters = tuple(
            Cluster(id=j, members=frozenset({f"m{i}_{j}"}), centroid=np.arange(4.0),
                    representative=f"m{i}_{j}")
            for j in range(reps)
        )
        models.append(ClusterModel(component=f"c{i}", clusters=clusters, silhouette=0.5))
    return models


class TestReductionRatio:
    def test_deployment_scale_fixture(self):
        # recorded deployment scale: 889 monitored metrics reduced to 65 representatives
        models = fake_models([13] * 5)
        assert sum(len(m.representatives) for m in models) == 65
        assert reduction_ratio(889, models) == pytest.approx(13.68, abs=0.01)

    def test_k_equals_n_ratio_one(self):
        models = fake_models([4, 4])
        assert reduction_ratio(8, models) == 1.0

    def test_accepts_series_list(self):
        models = fake_models([2])
        assert reduction_ratio(["s"] * 10, models) == 5.0
