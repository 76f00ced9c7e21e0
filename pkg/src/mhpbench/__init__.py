"""Multi-human parsing benchmark toolkit.

Scene model, dataset I/O, the AP^p / AP^p_vol / PCP / AP^r scoring engine,
interaction-intensity subsets, location-vector encoding with spectral
instance clustering, and a synthetic data harness.
"""

from .clustering import (
    ClusterConfig,
    InstanceLabeling,
    LocationEncoder,
    LocationMap,
    SpectralInstanceClusterer,
    cluster_instances,
    encode_locations,
    labeling_to_scene,
    round_instance_count,
)
from .exceptions import DatasetError, MHPError, PlacementError, ValidationError
from .labels import DEFAULT_LABELS, LabelSpec, load_label_spec, mhp_v2_labels, pascal_person_part_labels
from .metrics import (
    APResult,
    MatchResult,
    MetricReport,
    StatsReport,
    ap_p,
    ap_p_vol,
    ap_r,
    ap_r_vol,
    average_precision,
    dataset_stats,
    evaluate,
    interaction_intensity,
    mask_iou,
    match_instances,
    part_iou,
    pcp,
    region_iou,
    select_subset,
)
from .scene import (
    BoundingBox,
    ImageSize,
    InstanceMask,
    SceneAnnotation,
    ScoredScene,
    SemanticMap,
    bounding_box,
    flatten,
    validate,
)
from .synth import CorruptionSpec, SynthConfig, corrupt, corrupt_dataset, synth_generate

__version__ = "0.1.0"

__all__ = [
    "ClusterConfig",
    "InstanceLabeling",
    "LocationEncoder",
    "LocationMap",
    "SpectralInstanceClusterer",
    "cluster_instances",
    "encode_locations",
    "labeling_to_scene",
    "round_instance_count",
    "DatasetError",
    "MHPError",
    "PlacementError",
    "ValidationError",
    "DEFAULT_LABELS",
    "LabelSpec",
    "load_label_spec",
    "mhp_v2_labels",
    "pascal_person_part_labels",
    "APResult",
    "MatchResult",
    "MetricReport",
    "StatsReport",
    "ap_p",
    "ap_p_vol",
    "ap_r",
    "ap_r_vol",
    "average_precision",
    "dataset_stats",
    "evaluate",
    "interaction_intensity",
    "mask_iou",
    "match_instances",
    "part_iou",
    "pcp",
    "region_iou",
    "select_subset",
    "BoundingBox",
    "ImageSize",
    "InstanceMask",
    "SceneAnnotation",
    "ScoredScene",
    "SemanticMap",
    "bounding_box",
    "flatten",
    "validate",
    "CorruptionSpec",
    "SynthConfig",
    "corrupt",
    "corrupt_dataset",
    "synth_generate",
]
