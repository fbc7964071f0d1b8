from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from conftest import make_uniform
from metricscope.causality import (
    CausalityConfig,
    CausalityError,
    DependencyEdge,
    DependencyGraph,
    adf_is_stationary,
    build_dependency_graph,
    f_sf,
    granger,
    infer_dependencies,
    load_graph,
    prepare_stationary,
    save_graph,
)
from metricscope.clustering import ClusteringConfig, cluster_component
from metricscope.ingest import CallGraph
from metricscope.preprocess import prepare_catalog
from metricscope.synth import SynthSpec, generate


def white_noise(seed, n=500):
    return make_uniform(np.random.default_rng(seed).normal(size=n), metric=f"wn{seed}")


def random_walk(seed, n=500):
    return make_uniform(np.cumsum(np.random.default_rng(seed).normal(size=n)),
                        metric=f"rw{seed}")


def ar1(seed, coeff=0.5, n=500):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n)
    x = np.zeros(n)
    for t in range(1, n):
        x[t] = coeff * x[t - 1] + e[t]
    return make_uniform(x, metric=f"ar{seed}")


class TestAdf:
    def test_white_noise_stationary_rate(self):
        hits = sum(adf_is_stationary(white_noise(s)).stationary for s in range(100))
        assert hits >= 95

    def test_random_walk_nonstationary_rate(self):
        hits = sum(not adf_is_stationary(random_walk(1000 + s)).stationary for s in range(100))
        assert hits >= 95

    def test_ar1_stationary_rate(self):
        hits = sum(adf_is_stationary(ar1(2000 + s)).stationary for s in range(100))
        assert hits >= 90

    def test_too_short_errors(self):
        with pytest.raises(CausalityError, match="at least 20"):
            adf_is_stationary(make_uniform(np.arange(10.0)))


class TestPrepareStationary:
    def test_random_walk_differenced_to_stationary(self):
        out, report = prepare_stationary(random_walk(7))
        assert report.differenced
        assert report.stationary
        assert not report.excluded
        assert len(out) == 499

    def test_stationary_series_unchanged(self):
        u = white_noise(9)
        out, report = prepare_stationary(u)
        assert not report.differenced
        assert np.array_equal(out.values, u.values)

    def test_doubly_integrated_excluded(self):
        inner = np.cumsum(np.random.default_rng(3).normal(size=500))
        u = make_uniform(np.cumsum(inner), metric="i2")
        out, report = prepare_stationary(u)
        assert report.differenced
        assert not report.stationary
        assert report.excluded

    def test_differenced_start_shifts(self):
        u = random_walk(11)
        out, report = prepare_stationary(u)
        assert out.start_ms == u.start_ms + u.interval_ms


def oracle_f_sf(f_stat, d1, d2):
    """F-distribution tail probability by numerical quadrature of the density."""
    if f_stat <= 0:
        return 1.0
    log_beta = math.lgamma(d1 / 2) + math.lgamma(d2 / 2) - math.lgamma((d1 + d2) / 2)

    def pdf(x):
        log_num = (d1 / 2) * math.log(d1) + (d2 / 2) * math.log(d2) + (d1 / 2 - 1) * math.log(x)
        log_den = ((d1 + d2) / 2) * math.log(d1 * x + d2)
        return math.exp(log_num - log_den - log_beta)

    value, _ = integrate.quad(pdf, f_stat, np.inf, limit=200)
    return min(max(value, 0.0), 1.0)


def oracle_granger(x, y, max_lag):
    """Brute-force Granger oracle: explicit row-by-row designs, normal
    equations, quadrature F tail, and the same lag-family adjustment."""
    n = len(x)
    best = None
    for lag in range(1, max_lag + 1):
        rows = []
        target = []
        for t in range(lag, n):
            target.append(y[t])
            rows.append(
                [1.0]
                + [y[t - i] for i in range(1, lag + 1)]
                + [x[t - i] for i in range(1, lag + 1)]
            )
        design = np.array(rows)
        tvec = np.array(target)
        restricted = design[:, : 1 + lag]

        def rss(mat):
            beta = np.linalg.solve(mat.T @ mat, mat.T @ tvec)
            resid = tvec - mat @ beta
            return float(resid @ resid)

        rss_u = rss(design)
        rss_r = rss(restricted)
        dof = len(tvec) - (2 * lag + 1)
        f_stat = ((rss_r - rss_u) / lag) / (rss_u / dof)
        p = oracle_f_sf(f_stat, lag, dof)
        if best is None or p < best[0]:
            best = (p, lag, f_stat)
    p_min, lag, f_stat = best
    return 1.0 - (1.0 - p_min) ** max_lag, lag, f_stat


class TestFDistribution:
    def test_p_at_zero_is_one(self):
        assert f_sf(0.0, 3, 40) == 1.0

    def test_monotone_decreasing_in_f(self):
        values = [f_sf(f, 2, 50) for f in np.linspace(0.0, 30.0, 40)]
        assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))

    def test_matches_quadrature(self):
        for f_stat, d1, d2 in [(1.3, 1, 30), (2.7, 3, 100), (0.4, 2, 17), (9.0, 5, 60)]:
            assert f_sf(f_stat, d1, d2) == pytest.approx(
                oracle_f_sf(f_stat, d1, d2), abs=1e-9
            )


class TestGranger:
    def test_matches_brute_force_oracle(self):
        cfg = CausalityConfig(alpha=0.05, max_lag_steps=3)
        mismatches = 0
        for seed in range(50):
            rng = np.random.default_rng(40_000 + seed)
            x = rng.normal(size=200)
            # mix of null and causal instances
            if seed % 2 == 0:
                y = rng.normal(size=200)
            else:
                y = np.zeros(200)
                y[1:] = 0.6 * x[:-1] + rng.normal(size=199)
            got = granger(make_uniform(x), make_uniform(y), cfg)
            p_exp, lag_exp, f_exp = oracle_granger(x, y, 3)
            assert got.lag_steps == lag_exp
            assert got.f_statistic == pytest.approx(f_exp, abs=1e-6, rel=1e-6)
            assert got.p_value == pytest.approx(p_exp, abs=1e-6)
        assert mismatches == 0

    def test_planted_lag_detected(self):
        cfg = CausalityConfig()
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(10_000 + seed)
            x = rng.normal(size=1000)
            e = rng.normal(size=1000)
            y = np.zeros(1000)
            y[1:] = 0.8 * x[:-1] + e[1:]
            fwd = granger(make_uniform(x), make_uniform(y), cfg)
            rev = granger(make_uniform(y), make_uniform(x), cfg)
            if fwd.significant and fwd.lag_steps == 1 and fwd.p_value < 0.01 \
                    and fwd.p_value < rev.p_value:
                hits += 1
        assert hits >= 95

    def test_false_positive_rate_on_independent_noise(self):
        cfg = CausalityConfig(alpha=0.05)
        false_positives = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=200)
            y = rng.normal(size=200)
            false_positives += granger(make_uniform(x), make_uniform(y), cfg).significant
        assert false_positives / 200 <= 0.10

    def test_instantaneous_copy_degenerate_not_significant(self, rng):
        x = rng.normal(size=300)
        got = granger(make_uniform(x), make_uniform(x.copy()), CausalityConfig())
        assert got.degenerate
        assert not got.significant
        assert got.p_value == 1.0

    def test_significance_iff_p_below_alpha(self, rng):
        cfg = CausalityConfig(alpha=0.05)
        for seed in range(20):
            r = np.random.default_rng(seed)
            got = granger(
                make_uniform(r.normal(size=120)), make_uniform(r.normal(size=120)), cfg
            )
            assert got.significant == (got.p_value < cfg.alpha)

    def test_length_mismatch_error(self, rng):
        with pytest.raises(CausalityError, match="equal lengths"):
            granger(make_uniform(rng.normal(size=50)), make_uniform(rng.normal(size=51)),
                    CausalityConfig())


def _pipeline_models(catalog, k_max=2, seed=0):
    prepared, _ = prepare_catalog(catalog)
    by_comp = {}
    for u in prepared:
        by_comp.setdefault(u.component, []).append(u)
    models = {
        c: cluster_component(s, ClusteringConfig(k_min=1, k_max=k_max, seed=seed))
        for c, s in by_comp.items()
    }
    return prepared, models


class TestDependencyGraph:
    def test_three_component_chain_recovered(self):
        spec = SynthSpec(
            components=3,
            latents_per_component=2,
            metrics_per_component=4,
            planted_edges=((0, 1, 1, 0.9), (1, 2, 1, 0.9)),
            noise_sigma=0.1,
            length=1000,
            seed=904,
        )
        catalog, truth = generate(spec)
        prepared, models = _pipeline_models(catalog)
        cfg = CausalityConfig(alpha=0.002, max_lag_steps=3)
        graph, diag = infer_dependencies(models, truth.call_graph(), prepared, cfg)
        assert graph.component_pairs() == {("comp00", "comp01"), ("comp01", "comp02")}

    def test_bidirectional_pair_filtered(self):
        # coupled VAR: x and y genuinely cause each other
        rng = np.random.default_rng(5)
        n = 800
        x = np.zeros(n)
        y = np.zeros(n)
        ex = rng.normal(size=n)
        ey = rng.normal(size=n)
        for t in range(1, n):
            x[t] = 0.3 * x[t - 1] + 0.6 * y[t - 1] + ex[t]
            y[t] = 0.3 * y[t - 1] + 0.6 * x[t - 1] + ey[t]
        cfg = CausalityConfig()
        fwd = granger(make_uniform(x), make_uniform(y), cfg)
        rev = granger(make_uniform(y), make_uniform(x), cfg)
        assert fwd.significant and rev.significant

        from metricscope.clustering import Cluster, ClusterModel
        from metricscope.preprocess import UniformSeries, zscore

        def snap(comp, metric, values):
            return UniformSeries(component=comp, metric=metric, start_ms=0,
                                 interval_ms=500, values=zscore(values))

        prepared = [snap("A", "mx", x), snap("B", "my", y)]
        models = {
            "A": ClusterModel(
                component="A",
                clusters=(Cluster(id=0, members=frozenset({"mx"}),
                                  centroid=prepared[0].values.copy(), representative="mx"),),
                silhouette=1.0,
            ),
            "B": ClusterModel(
                component="B",
                clusters=(Cluster(id=0, members=frozenset({"my"}),
                                  centroid=prepared[1].values.copy(), representative="my"),),
                silhouette=1.0,
            ),
        }
        callgraph = CallGraph(nodes=frozenset({"A", "B"}), edges=(("A", "B", 1),))
        graph, diag = infer_dependencies(models, callgraph, prepared, cfg)
        assert graph.edges == ()
        assert len(diag.bidirectional_removed) == 1

    def test_non_adjacent_never_tested(self):
        spec = SynthSpec(
            components=3,
            latents_per_component=1,
            metrics_per_component=2,
            planted_edges=((0, 1, 1, 0.9),),
            noise_sigma=0.05,
            length=600,
            seed=77,
        )
        catalog, truth = generate(spec)
        prepared, models = _pipeline_models(catalog, k_max=1)
        callgraph = CallGraph(nodes=frozenset({"comp00", "comp01", "comp02"}),
                              edges=(("comp00", "comp01", 3),))
        graph, diag = infer_dependencies(models, callgraph, prepared, CausalityConfig())
        # one adjacent pair, one rep per side, both directions
        assert diag.tested_pairs == 2
        for e in graph.edges:
            assert {e.src_component, e.dst_component} == {"comp00", "comp01"}

    def test_missing_model_errors(self):
        callgraph = CallGraph(nodes=frozenset({"A", "B"}), edges=(("A", "B", 1),))
        with pytest.raises(CausalityError, match="no cluster model"):
            build_dependency_graph({}, callgraph, [], CausalityConfig())

    def test_interval_mismatch_errors(self, rng):
        callgraph = CallGraph(nodes=frozenset({"A", "B"}), edges=(("A", "B", 1),))
        prepared = [make_uniform(rng.normal(size=64), component="A", metric="m",
                                 interval_ms=250)]
        with pytest.raises(CausalityError, match="lag_ms would be wrong"):
            build_dependency_graph({}, callgraph, prepared, CausalityConfig(interval_ms=500))

    def test_edge_count_bounded_by_tested_pairs(self):
        spec = SynthSpec(
            components=4,
            latents_per_component=2,
            metrics_per_component=4,
            planted_edges=((0, 1, 1, 0.9), (0, 2, 2, 0.9), (2, 3, 1, 0.9)),
            noise_sigma=0.1,
            length=800,
            seed=31,
        )
        catalog, truth = generate(spec)
        prepared, models = _pipeline_models(catalog)
        graph, diag = infer_dependencies(models, truth.call_graph(), prepared,
                                         CausalityConfig(alpha=0.002))
        assert len(graph.edges) <= diag.tested_pairs
        bound = sum(
            len(models[a].representatives) * len(models[b].representatives) * 2
            for a, b in truth.call_graph().adjacent_pairs()
        )
        assert diag.tested_pairs <= bound

    def test_serialization_deterministic_and_sorted(self, tmp_path):
        edges = (
            DependencyEdge("B", "m2", "C", "m3", 500, 0.001),
            DependencyEdge("A", "m1", "B", "m2", 1000, 0.002),
        )
        graph = DependencyGraph(edges=edges)
        assert [e.src_component for e in graph.edges] == ["A", "B"]
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_graph(graph, p1)
        save_graph(load_graph(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
