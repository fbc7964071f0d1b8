"""Command line pipeline orchestration.

Subcommands compose the library stages over JSON/CSV artifacts:

    preprocess  metrics.csv -> prepared.json
    cluster     prepared.json -> clusters.json
    deps        prepared.json + clusters.json + callgraph.csv -> depgraph.json
    run         all of the above plus report.json, in one deterministic pass
    rca         two run directories -> ranked root-cause report
    autoscale   derive a scaling rule from a trace / replay a rule over one
    synth       generate datasets with known ground truth / inject faults
    eval        ami | edges | reduction scoring
    report      figures + CSV tables for a run directory

Options can come from a single JSON config (--config); explicit flags win over
config values, which win over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .autoscale import (
    AutoscaleError,
    ScalingRule,
    SlaSpec,
    derive_thresholds,
    load_rule,
    load_trace,
    replay,
    save_replay,
    save_rule,
    select_guiding_metric,
)
from .causality import (
    CausalityConfig,
    infer_dependencies,
    load_graph,
    save_graph,
)
from .clustering import (
    ClusteringConfig,
    cluster_component,
    cluster_validity,
    load_models,
    save_models,
)
from .evaluate import ami, edge_prf, reduction_ratio
from .ingest import (
    build_call_graph,
    load_call_graph,
    load_events,
    load_metrics,
    save_call_graph,
    save_metrics,
)
from .preprocess import PreprocessConfig, load_prepared, prepare_catalog, save_prepared
from .rca import RcaConfig, format_report_table, load_snapshot, rca_report, save_report
from .report import render_replay, render_run_reports
from .synth import Fault, generate, inject_fault, load_spec, load_truth, save_truth
from .util import parallel_map


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


_CONFIG_FIELDS = {
    "interval_ms": int,
    "variance_threshold": float,
    "min_length": int,
    "k_min": int,
    "k_max": int,
    "max_iterations": int,
    "seed": int,
    "name_init": bool,
    "alpha": float,
    "max_lag_steps": int,
    "similarity_threshold": float,
    "novelty_threshold": int,
    "threads": int,
}

_DEFAULTS = {
    "interval_ms": 500,
    "variance_threshold": 0.002,
    "min_length": 8,
    "k_min": 2,
    "k_max": 7,
    "max_iterations": 100,
    "seed": 0,
    "name_init": True,
    "alpha": 0.05,
    "max_lag_steps": 3,
    "similarity_threshold": 0.50,
    "novelty_threshold": 1,
    "threads": 1,
}


def _settings(args: argparse.Namespace) -> dict:
    """Defaults, overlaid by --config, overlaid by explicit flags."""
    merged = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        with Path(config_path).open(encoding="utf-8") as fh:
            loaded = json.load(fh)
        for key, value in loaded.items():
            if key in _CONFIG_FIELDS:
                merged[key] = _CONFIG_FIELDS[key](value)
    for key in _CONFIG_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _pre_cfg(s: dict) -> PreprocessConfig:
    return PreprocessConfig(
        interval_ms=s["interval_ms"],
        variance_threshold=s["variance_threshold"],
        min_length=s["min_length"],
    )


def _clu_cfg(s: dict) -> ClusteringConfig:
    return ClusteringConfig(
        k_min=s["k_min"],
        k_max=s["k_max"],
        max_iterations=s["max_iterations"],
        seed=s["seed"],
        name_init=s["name_init"],
    )


def _cau_cfg(s: dict) -> CausalityConfig:
    return CausalityConfig(
        alpha=s["alpha"],
        max_lag_steps=s["max_lag_steps"],
        interval_ms=s["interval_ms"],
    )


def _write_json(doc: dict, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_call_graph(args: argparse.Namespace):
    if getattr(args, "events", None):
        return build_call_graph(load_events(args.events))
    return load_call_graph(args.callgraph)


def _cmd_preprocess(args: argparse.Namespace) -> int:
    s = _settings(args)
    try:
        catalog = load_metrics(args.metrics)
        prepared, dropped = prepare_catalog(catalog, _pre_cfg(s))
    except Exception as exc:
        raise StageError("preprocess", str(exc)) from exc
    save_prepared(prepared, args.out)
    if not prepared:
        print("warning: every series was filtered out", file=sys.stderr)
    print(f"prepared {len(prepared)} series ({len(dropped)} dropped) -> {args.out}")
    return 0


def _cluster_all(prepared, cfg: ClusteringConfig, threads: int):
    by_component: dict[str, list] = {}
    for u in prepared:
        by_component.setdefault(u.component, []).append(u)
    components = sorted(by_component)
    models = parallel_map(
        lambda c: cluster_component(by_component[c], cfg), components, threads
    )
    return models


def _cmd_cluster(args: argparse.Namespace) -> int:
    s = _settings(args)
    try:
        prepared = load_prepared(args.prepared)
        models = _cluster_all(prepared, _clu_cfg(s), s["threads"])
    except Exception as exc:
        raise StageError("cluster", str(exc)) from exc
    save_models(models, args.out)
    total = sum(len(m.members) for m in models)
    reps = sum(len(m.representatives) for m in models)
    print(f"clustered {total} metrics into {reps} representatives -> {args.out}")
    return 0


def _cmd_deps(args: argparse.Namespace) -> int:
    s = _settings(args)
    try:
        prepared = load_prepared(args.prepared)
        models = {m.component: m for m in load_models(args.clusters)}
        callgraph = _load_call_graph(args)
        graph, diag = infer_dependencies(models, callgraph, prepared, _cau_cfg(s), s["threads"])
    except Exception as exc:
        raise StageError("deps", str(exc)) from exc
    save_graph(graph, args.out)
    if args.report:
        _write_json(diag.as_dict(), Path(args.report))
    print(f"{len(graph.edges)} dependency edges ({diag.tested_pairs} pairs tested) -> {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    s = _settings(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report: dict = {"settings": {k: s[k] for k in sorted(s)}}

    try:
        catalog = load_metrics(args.metrics)
        prepared, dropped = prepare_catalog(catalog, _pre_cfg(s))
    except Exception as exc:
        raise StageError("preprocess", str(exc)) from exc
    save_prepared(prepared, outdir / "prepared.json")
    report["preprocess"] = {
        "series_in": len(catalog.series),
        "series_kept": len(prepared),
        "dropped": dropped,
    }

    try:
        models = _cluster_all(prepared, _clu_cfg(s), s["threads"])
        validity = [cluster_validity(m, prepared) for m in models]
    except Exception as exc:
        raise StageError("cluster", str(exc)) from exc
    save_models(models, outdir / "clusters.json")
    report["clustering"] = {
        "models": [
            {
                "component": m.component,
                "k": m.k,
                "silhouette": m.silhouette,
                "converged": m.converged,
                "representatives": sorted(m.representatives),
            }
            for m in sorted(models, key=lambda m: m.component)
        ],
        "validity": validity,
    }

    try:
        callgraph = _load_call_graph(args)
        graph, diag = infer_dependencies(
            {m.component: m for m in models}, callgraph, prepared, _cau_cfg(s), s["threads"]
        )
    except Exception as exc:
        raise StageError("deps", str(exc)) from exc
    save_graph(graph, outdir / "depgraph.json")
    report["causality"] = diag.as_dict()
    report["causality"]["edges"] = len(graph.edges)

    _write_json(report, outdir / "report.json")
    print(f"pipeline complete -> {outdir}")
    return 0


def _cmd_rca(args: argparse.Namespace) -> int:
    s = _settings(args)
    cfg = RcaConfig(
        similarity_threshold=s["similarity_threshold"],
        novelty_threshold=s["novelty_threshold"],
    )
    try:
        snap_c = load_snapshot("C", args.correct)
        snap_f = load_snapshot("F", args.faulty)
        report = rca_report(snap_c, snap_f, cfg)
    except Exception as exc:
        raise StageError("rca", str(exc)) from exc
    save_report(report, args.out)
    table = format_report_table(report)
    if args.table:
        Path(args.table).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _cmd_autoscale(args: argparse.Namespace) -> int:
    sla = SlaSpec(percentile=args.sla_percentile, bound_ms=args.sla_bound_ms)
    if args.autoscale_cmd == "derive":
        try:
            trace = load_trace(args.trace)
            metric = args.metric
            if metric is None:
                if not args.depgraph:
                    raise AutoscaleError("pass --metric or --depgraph to name the guiding metric")
                metric = select_guiding_metric(load_graph(args.depgraph))
            up, down = derive_thresholds(trace, sla)
        except Exception as exc:
            raise StageError("autoscale-derive", str(exc)) from exc
        rule = ScalingRule(
            metric=metric,
            up_threshold=up,
            down_threshold=down,
            min_instances=args.min_instances,
            max_instances=args.max_instances,
            cooldown_intervals=args.cooldown,
        )
        save_rule(rule, args.out)
        print(f"derived thresholds up={up:.4g} down={down:.4g} for {metric} -> {args.out}")
        return 0

    try:
        rule = load_rule(args.rule)
        trace = load_trace(args.trace)
        result = replay(rule, trace, args.initial_instances, sla)
    except Exception as exc:
        raise StageError("autoscale-replay", str(exc)) from exc
    save_replay(result, args.out)
    if args.figure:
        render_replay(rule, trace, result, sla, args.figure)
    print(
        f"replayed {result.samples} intervals: {result.violations} violations, "
        f"{len(result.actions)} actions, mean instances {result.mean_instances:.2f}"
    )
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.synth_cmd == "generate":
        try:
            spec = load_spec(args.spec)
            catalog, truth = generate(spec, seed=args.seed)
        except Exception as exc:
            raise StageError("synth-generate", str(exc)) from exc
        save_metrics(catalog, outdir / "metrics.csv")
        save_call_graph(truth.call_graph(), outdir / "callgraph.csv")
        save_truth(truth, outdir / "truth.json")
        print(f"generated {len(catalog.series)} series over "
              f"{len(catalog.components)} components -> {outdir}")
        return 0

    try:
        catalog = load_metrics(Path(args.indir) / "metrics.csv")
        truth = load_truth(Path(args.indir) / "truth.json")
        params = json.loads(args.params) if args.params else {}
        fault = Fault(component=args.component, kind=args.kind, params=params)
        catalog2, truth2 = inject_fault(catalog, truth, fault)
    except Exception as exc:
        raise StageError("synth-inject", str(exc)) from exc
    save_metrics(catalog2, outdir / "metrics.csv")
    save_call_graph(truth2.call_graph(), outdir / "callgraph.csv")
    save_truth(truth2, outdir / "truth.json")
    print(f"injected {args.kind} into {args.component} -> {outdir}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        if args.eval_cmd == "ami":
            with Path(args.truth).open(encoding="utf-8") as fh:
                a = json.load(fh)
            with Path(args.pred).open(encoding="utf-8") as fh:
                b = json.load(fh)
            out = {"ami": ami(a, b)}
        elif args.eval_cmd == "edges":
            p, r, f1 = edge_prf(load_graph(args.truth), load_graph(args.inferred))
            out = {"precision": p, "recall": r, "f1": f1}
        else:
            prepared = load_prepared(args.prepared)
            models = load_models(args.clusters)
            out = {"reduction_ratio": reduction_ratio(len(prepared), models)}
    except Exception as exc:
        raise StageError(f"eval-{args.eval_cmd}", str(exc)) from exc
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.out:
        _write_json(out, Path(args.out))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rundir = Path(args.rundir)
    outdir = Path(args.out) if args.out else rundir / "reports"
    try:
        prepared = load_prepared(rundir / "prepared.json")
        models = load_models(rundir / "clusters.json")
        graph = load_graph(rundir / "depgraph.json")
        paths = render_run_reports(models, prepared, graph, outdir)
    except Exception as exc:
        raise StageError("report", str(exc)) from exc
    for p in paths:
        print(p)
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    parser.add_argument("--interval-ms", dest="interval_ms", type=int)
    parser.add_argument("--variance-threshold", dest="variance_threshold", type=float)
    parser.add_argument("--min-length", dest="min_length", type=int)
    parser.add_argument("--k-min", dest="k_min", type=int)
    parser.add_argument("--k-max", dest="k_max", type=int)
    parser.add_argument("--max-iterations", dest="max_iterations", type=int)
    parser.add_argument("--seed", dest="seed", type=int)
    parser.add_argument(
        "--no-name-init", dest="name_init", action="store_const", const=False
    )
    parser.add_argument("--alpha", dest="alpha", type=float)
    parser.add_argument("--max-lag-steps", dest="max_lag_steps", type=int)
    parser.add_argument("--similarity-threshold", dest="similarity_threshold", type=float)
    parser.add_argument("--novelty-threshold", dest="novelty_threshold", type=int)
    parser.add_argument("--threads", dest="threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metricscope",
        description="Offline metric analytics: reduce, relate, diagnose, autoscale",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("preprocess", help="resample, filter, z-normalize raw metrics")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    _add_common_flags(p)
    p.set_defaults(handler=_cmd_preprocess)

    p = sub.add_parser("cluster", help="cluster each component's metrics")
    p.add_argument("--prepared", required=True)
    p.add_argument("--out", required=True)
    _add_common_flags(p)
    p.set_defaults(handler=_cmd_cluster)

    p = sub.add_parser("deps", help="infer the cross-component dependency graph")
    p.add_argument("--prepared", required=True)
    p.add_argument("--clusters", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--callgraph", help="call graph CSV (caller,callee,count)")
    src.add_argument("--events", help="communication events CSV to aggregate instead")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write causality diagnostics JSON here")
    _add_common_flags(p)
    p.set_defaults(handler=_cmd_deps)

    p = sub.add_parser("run", help="preprocess + cluster + deps into a run directory")
    p.add_argument("--metrics", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--callgraph", help="call graph CSV (caller,callee,count)")
    src.add_argument("--events", help="communication events CSV to aggregate instead")
    p.add_argument("--outdir", required=True)
    _add_common_flags(p)
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("rca", help="diff two run directories for root causes")
    p.add_argument("--correct", required=True)
    p.add_argument("--faulty", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="also write the text table here")
    _add_common_flags(p)
    p.set_defaults(handler=_cmd_rca)

    p = sub.add_parser("autoscale", help="derive or replay threshold scaling rules")
    asub = p.add_subparsers(dest="autoscale_cmd", required=True)
    pd = asub.add_parser("derive", help="derive thresholds from a calibration trace")
    pd.add_argument("--trace", required=True)
    pd.add_argument("--out", required=True)
    pd.add_argument("--metric", help="guiding metric name (component/metric)")
    pd.add_argument("--depgraph", help="pick the guiding metric from this graph")
    pd.add_argument("--sla-percentile", type=float, default=0.90)
    pd.add_argument("--sla-bound-ms", type=float, default=1000.0)
    pd.add_argument("--min-instances", type=int, default=1)
    pd.add_argument("--max-instances", type=int, default=10)
    pd.add_argument("--cooldown", type=int, default=12)
    pd.set_defaults(handler=_cmd_autoscale)
    pr = asub.add_parser("replay", help="replay a rule over a trace")
    pr.add_argument("--rule", required=True)
    pr.add_argument("--trace", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--initial-instances", type=int, default=1)
    pr.add_argument("--sla-percentile", type=float, default=0.90)
    pr.add_argument("--sla-bound-ms", type=float, default=1000.0)
    pr.add_argument("--figure", help="render the replay timeline PNG here")
    pr.set_defaults(handler=_cmd_autoscale)

    p = sub.add_parser("synth", help="generate synthetic datasets / inject faults")
    ssub = p.add_subparsers(dest="synth_cmd", required=True)
    pg = ssub.add_parser("generate")
    pg.add_argument("--spec", required=True, help="synth spec JSON")
    pg.add_argument("--outdir", required=True)
    pg.add_argument("--seed", type=int)
    pg.set_defaults(handler=_cmd_synth)
    pi = ssub.add_parser("inject")
    pi.add_argument("--indir", required=True, help="directory from synth generate")
    pi.add_argument("--outdir", required=True)
    pi.add_argument("--component", required=True)
    pi.add_argument("--kind", required=True,
                    choices=["ADD_METRIC", "DROP_METRIC", "CHANGE_LAG"])
    pi.add_argument("--params", help="fault params as JSON")
    pi.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("eval", help="score pipeline outputs")
    esub = p.add_subparsers(dest="eval_cmd", required=True)
    pa = esub.add_parser("ami")
    pa.add_argument("--truth", required=True, help="JSON {item: label}")
    pa.add_argument("--pred", required=True)
    pa.add_argument("--out")
    pa.set_defaults(handler=_cmd_eval)
    pe = esub.add_parser("edges")
    pe.add_argument("--truth", required=True)
    pe.add_argument("--inferred", required=True)
    pe.add_argument("--out")
    pe.set_defaults(handler=_cmd_eval)
    pq = esub.add_parser("reduction")
    pq.add_argument("--prepared", required=True)
    pq.add_argument("--clusters", required=True)
    pq.add_argument("--out")
    pq.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("report", help="render figures and CSV tables for a run directory")
    p.add_argument("--rundir", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
