"""Verification evaluation: pairs, threshold calibration, FAR-constrained metrics,
cross-dataset heatmaps and identity clustering."""

from .cluster import Clustering, cluster_identities, clusters_per_identity, mixed_clusters, purity
from .heatmap import HEATMAP_COLUMNS, HeatmapGrid, heatmap
from .metrics import (
    GRID,
    Counts,
    Decision,
    FarDefinition,
    FarThreshold,
    MetricsReport,
    ProtocolResult,
    ThresholdCalibration,
    calibrate,
    calibrate_on,
    confusion,
    decide,
    evaluate,
    evaluate_protocol,
    make_grid,
    max_accuracy_threshold,
    stratified_folds,
    sweep,
    threshold_at_far,
)
from .pairs import (
    Label,
    VerificationPair,
    generate_pairs,
    pair_distances,
    pair_labels,
    read_pairs,
    write_pairs,
)

__all__ = [
    "GRID",
    "HEATMAP_COLUMNS",
    "Clustering",
    "Counts",
    "Decision",
    "FarDefinition",
    "FarThreshold",
    "HeatmapGrid",
    "Label",
    "MetricsReport",
    "ProtocolResult",
    "ThresholdCalibration",
    "VerificationPair",
    "calibrate",
    "calibrate_on",
    "cluster_identities",
    "clusters_per_identity",
    "confusion",
    "decide",
    "evaluate",
    "evaluate_protocol",
    "generate_pairs",
    "make_grid",
    "heatmap",
    "max_accuracy_threshold",
    "mixed_clusters",
    "pair_distances",
    "pair_labels",
    "purity",
    "read_pairs",
    "stratified_folds",
    "sweep",
    "threshold_at_far",
    "write_pairs",
]
