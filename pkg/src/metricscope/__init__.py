"""Offline metric analytics for microservice monitoring dumps.

The pipeline reduces a component's monitored metrics to a few shape clusters
with representative metrics, infers a cross-component dependency graph by
Granger-causality testing between representatives of call-adjacent components,
and drives two workflows on top: root-cause diffing of two application
versions and autoscaling-rule synthesis with offline replay.
"""

__version__ = "0.1.0"

from .autoscale import (
    ReplayResult,
    ReplayTrace,
    ScalingRule,
    SlaSpec,
    derive_thresholds,
    replay,
    select_guiding_metric,
)
from .causality import (
    CausalityConfig,
    DependencyEdge,
    DependencyGraph,
    GrangerResult,
    StationarityReport,
    adf_is_stationary,
    build_dependency_graph,
    granger,
    infer_dependencies,
    prepare_stationary,
)
from .clustering import (
    Cluster,
    ClusterModel,
    ClusteringConfig,
    cluster_component,
    cluster_validity,
    initial_assignment_by_name,
    jaro,
    kshape,
    representatives,
    select_k,
)
from .distance import SbdResult, sbd, sbd_matrix
from .evaluate import ami, edge_prf, reduction_ratio
from .ingest import (
    CallGraph,
    CommEvent,
    MetricCatalog,
    MetricSeries,
    RawSample,
    build_call_graph,
    load_call_graph,
    load_events,
    load_metrics,
)
from .preprocess import (
    PreprocessConfig,
    UniformSeries,
    filter_low_variance,
    prepare_catalog,
    resample,
    znormalize,
)
from .rca import (
    EdgeEvent,
    EventKind,
    NoveltyScore,
    RcaConfig,
    RcaReport,
    VersionSnapshot,
    cluster_similarity,
    edge_filter,
    match_clusters,
    metric_diff,
    rank_novelty,
    rca_report,
)
from .synth import Fault, GroundTruth, SynthSpec, generate, inject_fault
