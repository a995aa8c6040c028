"""Synthetic multi-platform lidar scenes with controlled domain shift.

Objects are surface-sampled cuboids whose point density falls off with the
square of their range; the ground is a rough disk. Each frame is then moved
into the sensor frame of a platform with its own mount height and Gaussian
per-frame tilt, and the ground-truth boxes follow the same rigid transform.
"""
from __future__ import annotations

import json
import math
import shutil
from dataclasses import asdict, dataclass, fields
from functools import partial
from pathlib import Path

import numpy as np

from ._runtime import frame_rng, parallel_map
from .geometry import Box3D, ObjectClass, bev_intersection, rotation_from_jitter
from .io import DatasetManifest, Domain, LabelSet, PointCloud, save_manifest, write_frame

REFERENCE_RANGE = 10.0
GROUND_INNER_RADIUS = 1.0


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    mount_height: float
    jitter_std_pitch: float
    jitter_std_roll: float
    density_coefficient: float = 100.0
    max_range: float = 40.0
    ground_density_ratio: float = 0.05

    def __post_init__(self):
        if self.mount_height <= 0:
            raise ValueError("mount_height must be positive")
        if self.jitter_std_pitch < 0 or self.jitter_std_roll < 0:
            raise ValueError("jitter stds must be non-negative")
        if self.density_coefficient <= 0 or self.max_range <= 0:
            raise ValueError("density_coefficient and max_range must be positive")

    def sample_tilt(self, rng: np.random.Generator) -> tuple[float, float]:
        """(pitch, roll) in radians, clipped well inside (-pi/2, pi/2)."""
        pitch = float(np.clip(rng.normal(0.0, self.jitter_std_pitch), -1.0, 1.0)) if self.jitter_std_pitch else 0.0
        roll = float(np.clip(rng.normal(0.0, self.jitter_std_roll), -1.0, 1.0)) if self.jitter_std_roll else 0.0
        return pitch, roll


VEHICLE = PlatformProfile("vehicle", 1.7, math.radians(0.5), math.radians(0.5))
QUADRUPED = PlatformProfile("quadruped", 0.5, math.radians(3.0), math.radians(3.0))
DRONE = PlatformProfile("drone", 20.0, math.radians(2.0), math.radians(2.0), density_coefficient=25.0)
PROFILES = {p.name: p for p in (VEHICLE, QUADRUPED, DRONE)}


# (mean dims, log std) of unlabelled distractor shapes
CLUTTER_KINDS = (
    ((1.4, 1.2, 1.1), 0.2),    # bush
    ((0.3, 0.3, 3.0), 0.15),   # pole
    ((5.0, 0.4, 1.5), 0.25),   # wall segment
    ((1.0, 0.8, 1.0), 0.15),   # bin
    ((5.5, 2.1, 2.3), 0.1),    # van
    ((0.5, 0.4, 1.2), 0.15),   # sign
)


@dataclass(frozen=True)
class SceneSpec:
    n_cars: int = 6
    n_pedestrians: int = 6
    n_clutter: int = 6
    placement_range: tuple[float, float] = (6.0, 30.0)
    ground_roughness: float = 0.02
    car_dims: tuple[float, float, float] = (4.0, 1.7, 1.6)
    car_log_std: float = 0.06
    pedestrian_dims: tuple[float, float, float] = (0.7, 0.7, 1.7)
    pedestrian_log_std: float = 0.06
    min_gap: float = 0.6

    def __post_init__(self):
        if min(self.n_cars, self.n_pedestrians, self.n_clutter) < 0:
            raise ValueError("object counts must be non-negative")
        lo, hi = self.placement_range
        if not 0 <= lo < hi:
            raise ValueError("placement_range must be (min, max) with 0 <= min < max")
        object.__setattr__(self, "placement_range", (float(lo), float(hi)))


def profile_from_dict(d: dict) -> PlatformProfile:
    return PlatformProfile(**d)


def spec_from_dict(d: dict) -> SceneSpec:
    d = dict(d)
    for name in ("placement_range", "car_dims", "pedestrian_dims"):
        if name in d:
            d[name] = tuple(d[name])
    known = {f.name for f in fields(SceneSpec)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown scene spec fields: {sorted(unknown)}")
    return SceneSpec(**d)


def cuboid_surface_area(dims) -> float:
    """Area of the four sides plus the top (the bottom rests on the ground)."""
    l, w, h = dims
    return l * w + 2.0 * h * (l + w)


def _sample_dims(rng, mean, log_std):
    return tuple(float(m * math.exp(rng.normal(0.0, log_std))) for m in mean)


def _place_objects(rng, spec: SceneSpec):
    """Rejection-place boxes on the ground (z = 0 world frame) without footprint overlap."""
    kinds = ([("car", None)] * spec.n_cars + [("ped", None)] * spec.n_pedestrians
             + [("clutter", int(k)) for k in rng.integers(0, len(CLUTTER_KINDS), spec.n_clutter)])
    lo, hi = spec.placement_range
    placed: list[tuple[Box3D, bool]] = []
    for kind, sub in kinds:
        if kind == "car":
            dims, cls = _sample_dims(rng, spec.car_dims, spec.car_log_std), ObjectClass.CAR
        elif kind == "ped":
            dims, cls = _sample_dims(rng, spec.pedestrian_dims, spec.pedestrian_log_std), ObjectClass.PEDESTRIAN
        else:
            mean, std = CLUTTER_KINDS[sub]
            dims, cls = _sample_dims(rng, mean, std), ObjectClass.CAR
        for _ in range(200):
            r = math.sqrt(rng.uniform(lo * lo, hi * hi))
            az = rng.uniform(-math.pi, math.pi)
            box = Box3D(center=(r * math.cos(az), r * math.sin(az), 0.5 * dims[2]), dims=dims,
                        yaw=rng.uniform(-math.pi, math.pi), cls=cls)
            grown = box.replace(dims=(dims[0] + spec.min_gap, dims[1] + spec.min_gap, dims[2]))
            if all(bev_intersection(grown, other) == 0.0 for other, _ in placed):
                placed.append((box, kind != "clutter"))
                break
    return placed


def _sample_cuboid_surface(rng, box: Box3D, density: float, face_min: bool = True) -> np.ndarray:
    l, w, h = box.dims
    # (area, sampler(n) -> local xyz) for the four sides and the top
    faces = [
        (w * h, lambda n: np.column_stack([np.full(n, l / 2), rng.uniform(-w / 2, w / 2, n), rng.uniform(-h / 2, h / 2, n)])),
        (w * h, lambda n: np.column_stack([np.full(n, -l / 2), rng.uniform(-w / 2, w / 2, n), rng.uniform(-h / 2, h / 2, n)])),
        (l * h, lambda n: np.column_stack([rng.uniform(-l / 2, l / 2, n), np.full(n, w / 2), rng.uniform(-h / 2, h / 2, n)])),
        (l * h, lambda n: np.column_stack([rng.uniform(-l / 2, l / 2, n), np.full(n, -w / 2), rng.uniform(-h / 2, h / 2, n)])),
        (l * w, lambda n: np.column_stack([rng.uniform(-l / 2, l / 2, n), rng.uniform(-w / 2, w / 2, n), np.full(n, h / 2)])),
    ]
    chunks = []
    for i, (area, sampler) in enumerate(faces):
        n = int(rng.poisson(density * area))
        if i == 4 and face_min:
            n = max(n, 1)   # every object keeps at least one return
        if n:
            chunks.append(sampler(n))
    local = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array(box.center)


def _sample_ground(rng, profile: PlatformProfile, roughness: float) -> np.ndarray:
    r0, r1 = GROUND_INNER_RADIUS, profile.max_range
    density10 = profile.ground_density_ratio * profile.density_coefficient * REFERENCE_RANGE ** 2
    # density ~ 1/r^2 over the disk integrates to 2*pi*k*ln(r1/r0)
    n = int(rng.poisson(2.0 * math.pi * density10 * math.log(r1 / r0)))
    r = r0 * (r1 / r0) ** rng.uniform(0.0, 1.0, n)
    az = rng.uniform(-math.pi, math.pi, n)
    z = rng.normal(0.0, roughness, n) if roughness > 0 else np.zeros(n)
    return np.column_stack([r * np.cos(az), r * np.sin(az), z])


def generate_scene(spec: SceneSpec, profile: PlatformProfile, seed, frame_id: str = "") -> tuple[PointCloud, LabelSet]:
    """One frame in the platform's sensor frame plus its ground-truth labels."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sensor = np.array([0.0, 0.0, profile.mount_height])
    placed = _place_objects(rng, spec)
    chunks = [_with_intensity(rng, _sample_ground(rng, profile, spec.ground_roughness), 0.0, 0.3)]
    for box, _ in placed:
        r = float(np.linalg.norm(np.array(box.center) - sensor))
        density = profile.density_coefficient * (REFERENCE_RANGE / max(r, 1e-6)) ** 2
        chunks.append(_with_intensity(rng, _sample_cuboid_surface(rng, box, density), 0.2, 0.9))
    world = np.concatenate(chunks)

    pitch, roll = profile.sample_tilt(rng)
    R = rotation_from_jitter(roll, pitch)
    pts = world.copy()
    pts[:, :3] = (world[:, :3] - sensor) @ R.T

    boxes = []
    for box, labelled in placed:
        if not labelled:
            continue
        c = R @ (np.array(box.center) - sensor)
        heading = R @ np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
        boxes.append(box.replace(center=tuple(c), yaw=math.atan2(heading[1], heading[0])))
    return PointCloud(pts, frame_id), LabelSet(frame_id, boxes)


def _with_intensity(rng, xyz, lo, hi):
    return np.column_stack([xyz, rng.uniform(lo, hi, len(xyz))])


def frame_ids(n_frames: int) -> list[str]:
    return [f"{i:06d}" for i in range(n_frames)]


def _gen_frame(frame_id, spec, profile, seed, out_root, label_dir):
    cloud, labels = generate_scene(spec, profile, frame_rng(seed, frame_id, "scene"), frame_id)
    write_frame(out_root, frame_id, cloud, labels, label_dir)
    return len(labels)


def generate_dataset(n_frames: int, spec: SceneSpec, profile: PlatformProfile, out_root, seed: int = 0,
                     domain: Domain = Domain.SOURCE, split: str = "train", jobs: int | None = 1) -> DatasetManifest:
    """Write ``n_frames`` scenes under ``out_root`` and return their manifest.

    Source datasets keep labels in ``labels/``; target datasets put them in
    ``gt_eval/`` so that only evaluation ever reads them.
    """
    domain = Domain(domain)
    out_root = Path(out_root)
    if out_root.exists():
        shutil.rmtree(out_root)
    (out_root / "clouds").mkdir(parents=True)
    label_dir = "labels" if domain is Domain.SOURCE else "gt_eval"
    (out_root / label_dir).mkdir()
    ids = frame_ids(n_frames)
    parallel_map(partial(_gen_frame, spec=spec, profile=profile, seed=seed, out_root=out_root,
                         label_dir=label_dir), ids, jobs)
    manifest = DatasetManifest(root=out_root, split=split, frames=ids, domain=domain)
    save_manifest(manifest)
    (out_root / "generator.json").write_text(
        json.dumps({"profile": asdict(profile), "spec": asdict(spec), "seed": seed}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifest
