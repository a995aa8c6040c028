"""Cross-platform jitter alignment (CJA) augmentation.

Each source frame gets a random pitch/roll tilt applied to the whole point
cloud. Box centers follow the rotation; box dims and yaw stay exactly as
annotated.
"""
from __future__ import annotations

import math
import shutil
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from ._runtime import frame_rng, parallel_map
from .geometry import rotate_points, rotation_from_jitter, transform_box_center
from .io import (
    DatasetManifest,
    Domain,
    LabelSet,
    PointCloud,
    load_cloud,
    load_labels,
    save_manifest,
    write_frame,
)

DEFAULT_RANGE_DEG = 5.0
DEFAULT_PROBABILITY = 0.5


class DomainError(ValueError):
    """Raised when target-domain data is handed to a source-only operation."""


@dataclass(frozen=True)
class JitterRange:
    max_abs_pitch: float = math.radians(DEFAULT_RANGE_DEG)
    max_abs_roll: float = math.radians(DEFAULT_RANGE_DEG)

    def __post_init__(self):
        for v in (self.max_abs_pitch, self.max_abs_roll):
            if not 0.0 <= v <= math.pi / 4:
                raise ValueError(f"jitter range must lie in [0, pi/4], got {v}")

    @classmethod
    def from_degrees(cls, pitch_deg: float, roll_deg: float | None = None) -> "JitterRange":
        roll_deg = pitch_deg if roll_deg is None else roll_deg
        return cls(math.radians(pitch_deg), math.radians(roll_deg))


@dataclass(frozen=True)
class JitterParams:
    delta_pitch: float
    delta_roll: float
    rotation: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", rotation_from_jitter(self.delta_roll, self.delta_pitch))

    @property
    def is_identity(self) -> bool:
        return self.delta_pitch == 0.0 and self.delta_roll == 0.0


def sample_jitter(jrange: JitterRange, rng) -> JitterParams:
    """Draw pitch then roll, each uniform on its symmetric range.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    pitch = float(rng.uniform(-jrange.max_abs_pitch, jrange.max_abs_pitch)) if jrange.max_abs_pitch else 0.0
    roll = float(rng.uniform(-jrange.max_abs_roll, jrange.max_abs_roll)) if jrange.max_abs_roll else 0.0
    return JitterParams(delta_pitch=pitch, delta_roll=roll)


def apply_cja(cloud: PointCloud, labels: LabelSet, jitter: JitterParams) -> tuple[PointCloud, LabelSet]:
    if labels.frame_id and cloud.frame_id and labels.frame_id != cloud.frame_id:
        raise ValueError(f"labels for {labels.frame_id!r} do not belong to cloud {cloud.frame_id!r}")
    if jitter.is_identity:
        return cloud, labels
    R = jitter.rotation
    points = rotate_points(cloud.points, R)
    boxes = [transform_box_center(b, R) for b in labels.boxes]
    return PointCloud(points, cloud.frame_id), LabelSet(labels.frame_id, boxes, labels.provenance)


def _augment_frame(frame_id, manifest, jrange, probability, seed, out_root):
    rng = frame_rng(seed, frame_id, "cja")
    cloud = load_cloud(manifest.cloud_path(frame_id))
    labels = load_labels(manifest.label_path(frame_id))
    apply = probability > 0 and rng.random() < probability
    if apply:
        cloud, labels = apply_cja(cloud, labels, sample_jitter(jrange, rng))
    write_frame(out_root, frame_id, cloud, labels)
    return apply


def augment_batch(
    manifest: DatasetManifest,
    jrange: JitterRange,
    probability: float = DEFAULT_PROBABILITY,
    seed: int = 0,
    out_root=None,
    jobs: int | None = 1,
) -> DatasetManifest:
    """Write an augmented copy of a labelled source dataset.

    The copy goes to ``out_root`` (default: ``<root>_cja`` beside the
    original). Every frame is tilted independently with ``probability``;
    frames are keyed by their id so results do not depend on ``jobs``.
    """
    if manifest.domain is not Domain.SOURCE:
        raise DomainError("CJA only augments source-domain data")
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    root = Path(manifest.root)
    out_root = Path(out_root) if out_root is not None else root.with_name(root.name + "_cja")
    if out_root.resolve() == root.resolve():
        raise ValueError("augmented output would overwrite the input dataset")
    if out_root.exists():
        shutil.rmtree(out_root)
    work = partial(_augment_frame, manifest=manifest, jrange=jrange, probability=probability,
                   seed=seed, out_root=out_root)
    parallel_map(work, manifest.frames, jobs)
    out = DatasetManifest(root=out_root, split=manifest.split, frames=manifest.frames, domain=manifest.domain)
    save_manifest(out)
    return out
