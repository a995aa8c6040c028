"""Cross-platform 3D detection adaptation at desk scale.

Synthetic multi-platform lidar scenes, jitter augmentation of source data,
a geometric anchor-prior detector, thresholded pseudo-label self-training,
and 40-point interpolated 3D AP evaluation.
"""
from .cja import JitterParams, JitterRange, apply_cja, augment_batch, sample_jitter
from .detector import (
    ClassAnchor,
    DetectorModel,
    GroundModel,
    NoGroundError,
    cluster_voxels,
    detect_dataset,
    detect_scene,
    fit_detector,
    fit_ground_ransac,
    fit_oriented_box,
    remove_ground,
    score_against_anchor,
)
from .evaluation import EvalConfig, average_precision, challenge_score, evaluate, match_frame
from .geometry import CLASSES, Box3D, ObjectClass, iou_3d, iou_bev, nms_bev, rotate_points, rotation_from_jitter
from .io import (
    DatasetManifest,
    Domain,
    LabelSet,
    PointCloud,
    Provenance,
    load_cloud,
    load_label_dir,
    load_labels,
    load_manifest,
    save_cloud,
    save_labels,
)
from .selftrain import PHASE1, PHASE2, ThresholdConfig, filter_pseudo_labels, memory_update, self_train
from .simgen import DRONE, QUADRUPED, VEHICLE, PlatformProfile, SceneSpec, generate_dataset, generate_scene

__version__ = "0.1.0"

__all__ = [
    "Box3D",
    "CLASSES",
    "ClassAnchor",
    "DRONE",
    "DatasetManifest",
    "DetectorModel",
    "Domain",
    "EvalConfig",
    "GroundModel",
    "JitterParams",
    "JitterRange",
    "LabelSet",
    "NoGroundError",
    "ObjectClass",
    "PHASE1",
    "PHASE2",
    "PlatformProfile",
    "PointCloud",
    "Provenance",
    "QUADRUPED",
    "SceneSpec",
    "ThresholdConfig",
    "VEHICLE",
    "apply_cja",
    "augment_batch",
    "average_precision",
    "challenge_score",
    "cluster_voxels",
    "detect_dataset",
    "detect_scene",
    "evaluate",
    "filter_pseudo_labels",
    "fit_detector",
    "fit_ground_ransac",
    "fit_oriented_box",
    "generate_dataset",
    "generate_scene",
    "iou_3d",
    "iou_bev",
    "load_cloud",
    "load_label_dir",
    "load_labels",
    "load_manifest",
    "match_frame",
    "memory_update",
    "nms_bev",
    "remove_ground",
    "rotate_points",
    "rotation_from_jitter",
    "sample_jitter",
    "save_cloud",
    "save_labels",
    "score_against_anchor",
    "self_train",
]
