"""Geometric 3D detector: ground removal, voxel clustering, box fitting, anchor scoring.

The learnable state is small: one size anchor per class (geometric mean and
log-spread of annotated dims) plus a score temperature calibrated from how
the box fitter's output deviates from the anchors on training clouds.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.ndimage import gaussian_filter
from scipy.spatial import ConvexHull, QhullError

from ._runtime import parallel_map
from .geometry import CLASSES, Box3D, ObjectClass, iou_bev, nms_bev
from .io import DatasetManifest, LabelSet, PointCloud, load_cloud, load_labels

log = logging.getLogger(__name__)

MIN_BOX_DIM = 0.1
LOG_STD_FLOOR = 0.05
MIN_POINTS_PENALTY = 0.5
GROUND_PERCENTILE = 30.0
MIN_NORMAL_Z = 0.8
HEADS = ("anchor", "center")


class NoGroundError(RuntimeError):
    pass


@dataclass(frozen=True)
class GroundModel:
    """Plane ``a x + b y + c z + d = 0`` with unit normal pointing up."""

    plane: tuple[float, float, float, float]
    inlier_tolerance: float = 0.1

    def __post_init__(self):
        a, b, c, d = (float(v) for v in self.plane)
        norm = math.sqrt(a * a + b * b + c * c)
        if not norm > 0:
            raise ValueError("plane normal must be non-zero")
        if c < 0:
            a, b, c, d = -a, -b, -c, -d
        if abs(norm - 1.0) > 1e-12:
            a, b, c, d = a / norm, b / norm, c / norm, d / norm
        if c <= MIN_NORMAL_Z:
            raise ValueError(f"ground normal z-component {c:.3f} is not near-horizontal")
        object.__setattr__(self, "plane", (a, b, c, d))

    @classmethod
    def flat(cls, z: float = 0.0) -> "GroundModel":
        return cls((0.0, 0.0, 1.0, -z))

    @property
    def normal(self) -> np.ndarray:
        return np.array(self.plane[:3])

    def signed_distance(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz)[:, :3] @ self.normal + self.plane[3]

    def height_at(self, x: float, y: float) -> float:
        a, b, c, d = self.plane
        return -(a * x + b * y + d) / c


@dataclass(frozen=True)
class ClassAnchor:
    cls: ObjectClass
    mean_dims: tuple[float, float, float]
    dims_log_std: tuple[float, float, float]
    min_points: int = 10

    def __post_init__(self):
        object.__setattr__(self, "cls", ObjectClass(self.cls))
        object.__setattr__(self, "mean_dims", tuple(float(v) for v in self.mean_dims))
        object.__setattr__(self, "dims_log_std", tuple(float(v) for v in self.dims_log_std))
        if min(self.mean_dims) <= 0 or min(self.dims_log_std) <= 0:
            raise ValueError("anchor dims and log-std must be positive")


DEFAULT_ANCHORS = {
    ObjectClass.CAR: ClassAnchor(ObjectClass.CAR, (4.0, 1.7, 1.6), (0.08, 0.08, 0.08), 10),
    ObjectClass.PEDESTRIAN: ClassAnchor(ObjectClass.PEDESTRIAN, (0.7, 0.7, 1.7), (0.08, 0.08, 0.08), 10),
}


@dataclass(frozen=True)
class DetectorModel:
    anchors: dict = field(default_factory=lambda: dict(DEFAULT_ANCHORS))
    voxel_size: float = 0.2
    cluster_min_points: int = 10
    score_temperature: float = 1.0
    head: str = "anchor"
    nms_threshold: float = 0.3
    score_floor: float = 0.05
    ground_iterations: int = 100
    ground_tolerance: float = 0.1
    ground_margin: float = 0.15
    center_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        anchors = {ObjectClass(k): v for k, v in self.anchors.items()}
        if set(anchors) != set(CLASSES):
            raise ValueError("detector needs exactly one anchor per class")
        if any(a.cls is not k for k, a in anchors.items()):
            raise ValueError("anchor keyed under the wrong class")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if not self.score_temperature > 0:
            raise ValueError("score_temperature must be positive")
        object.__setattr__(self, "anchors", {c: anchors[c] for c in CLASSES})


def model_to_dict(model: DetectorModel) -> dict:
    d = asdict(model)
    d["anchors"] = {
        c.value: {
            "mean_dims": list(a.mean_dims),
            "dims_log_std": list(a.dims_log_std),
            "min_points": a.min_points,
        }
        for c, a in model.anchors.items()
    }
    return d


def model_from_dict(d: dict) -> DetectorModel:
    d = dict(d)
    d["anchors"] = {
        ObjectClass(k): ClassAnchor(ObjectClass(k), tuple(v["mean_dims"]), tuple(v["dims_log_std"]),
                                    int(v["min_points"]))
        for k, v in d["anchors"].items()
    }
    return DetectorModel(**d)


def model_to_json(model: DetectorModel) -> str:
    return json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n"


def model_from_json(text: str) -> DetectorModel:
    return model_from_dict(json.loads(text))


def save_model(model: DetectorModel, path) -> None:
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model_to_json(model), encoding="utf-8")


def load_model(path) -> DetectorModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())


# ---------------------------------------------------------------------------
# ground
# ---------------------------------------------------------------------------

def _xyz(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.xyz
    return np.asarray(cloud, dtype=np.float64)[:, :3]


def fit_ground_ransac(cloud, iterations: int = 100, tolerance: float = 0.1, seed: int = 0) -> GroundModel:
    """RANSAC plane over the lowest 30% of points, refined by least squares on its inliers."""
    xyz = _xyz(cloud)
    if len(xyz) < 3:
        raise NoGroundError(f"need at least 3 points, got {len(xyz)}")
    cand = xyz[xyz[:, 2] <= np.percentile(xyz[:, 2], GROUND_PERCENTILE)]
    if len(cand) < 3:
        raise NoGroundError(f"only {len(cand)} ground candidates")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(cand), size=(iterations, 3))
    p0, p1, p2 = cand[idx[:, 0]], cand[idx[:, 1]], cand[idx[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    normals[ok] /= norms[ok, None]
    normals[normals[:, 2] < 0] *= -1
    ok &= normals[:, 2] > MIN_NORMAL_Z
    if not ok.any():
        raise NoGroundError("no near-horizontal plane hypothesis")
    normals, p0 = normals[ok], p0[ok]
    offsets = -np.einsum("ij,ij->i", normals, p0)
    counts = (np.abs(cand @ normals.T + offsets) <= tolerance).sum(axis=0)
    best = int(np.argmax(counts))
    n, d = normals[best], offsets[best]

    inliers = cand[np.abs(cand @ n + d) <= tolerance]
    if len(inliers) >= 3:
        centroid = inliers.mean(axis=0)
        _, _, vt = np.linalg.svd(inliers - centroid, full_matrices=False)
        refined = vt[-1] if vt[-1][2] >= 0 else -vt[-1]
        if refined[2] > MIN_NORMAL_Z:
            n, d = refined, -float(refined @ centroid)
    return GroundModel((n[0], n[1], n[2], d), tolerance)


def remove_ground(cloud: PointCloud, ground: GroundModel, margin: float = 0.15) -> PointCloud:
    if len(cloud) == 0:
        return cloud
    return cloud.subset(ground.signed_distance(cloud.xyz) > margin)


# ---------------------------------------------------------------------------
# clustering and box fitting
# ---------------------------------------------------------------------------

_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
                     if (i, j, k) > (0, 0, 0)])


def cluster_voxels(cloud, voxel_size: float = 0.2, min_points: int = 10) -> list[np.ndarray]:
    """26-connected components of occupied voxels.

    Returns arrays of point indices, largest cluster first; equal sizes are
    ordered by their smallest voxel (lexicographic in x, y, z).
    """
    xyz = _xyz(cloud)
    if len(xyz) == 0:
        return []
    vox = np.floor(xyz / voxel_size).astype(np.int64)
    vox -= vox.min(axis=0) - 1
    span = vox.max(axis=0) + 2
    keys = (vox[:, 0] * span[1] + vox[:, 1]) * span[2] + vox[:, 2]
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.ravel()
    nv = len(uniq)
    rows, cols = [np.arange(nv)], [np.arange(nv)]
    for dx, dy, dz in _OFFSETS:
        nk = uniq + (dx * span[1] + dy) * span[2] + dz
        pos = np.searchsorted(uniq, nk)
        pos[pos == nv] = 0
        hit = uniq[pos] == nk
        rows.append(np.nonzero(hit)[0])
        cols.append(pos[hit])
    r, c = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(nv, nv)).tocsr()
    _, vlabel = connected_components(graph, directed=False)
    plabel = vlabel[inverse]
    sizes = np.bincount(plabel)
    # smallest voxel of each component = first occurrence in the sorted voxel list
    comp_ids, first_voxel = np.unique(vlabel, return_index=True)
    keep = [cid for cid in comp_ids if sizes[cid] >= min_points]
    keep.sort(key=lambda cid: (-sizes[cid], first_voxel[cid]))
    order = np.argsort(plabel, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)])
    return [order[starts[cid]:starts[cid + 1]] for cid in keep]


def _wrap_half_pi(yaw: float) -> float:
    """Fold a direction onto (-pi/2, pi/2], i.e. an undirected axis facing +x."""
    y = math.fmod(yaw, math.pi)
    if y > math.pi / 2:
        y -= math.pi
    elif y <= -math.pi / 2:
        y += math.pi
    return y


def min_area_rectangle(xy: np.ndarray) -> tuple[float, float, float, float, float]:
    """Minimum-area enclosing rectangle by rotating calipers over the convex hull.

    Returns (cx, cy, length, width, yaw) with length along yaw.
    """
    xy = np.asarray(xy, dtype=np.float64)
    try:
        hull = xy[ConvexHull(xy).vertices]
    except (QhullError, ValueError):
        hull = None
    if hull is None:
        # fewer than 3 points or collinear: align with the longest span
        far = int(np.argmax(np.linalg.norm(xy - xy[0], axis=1)))
        dx, dy = xy[far] - xy[0]
        angles = np.array([math.atan2(dy, dx) if far else 0.0])
        hull = xy
    else:
        edges = np.roll(hull, -1, axis=0) - hull
        angles = np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2)
    c, s = np.cos(angles), np.sin(angles)
    u = hull[:, 0:1] * c + hull[:, 1:2] * s
    v = -hull[:, 0:1] * s + hull[:, 1:2] * c
    eu = u.max(axis=0) - u.min(axis=0)
    ev = v.max(axis=0) - v.min(axis=0)
    k = int(np.argmin(eu * ev))
    th = float(angles[k])
    uc = 0.5 * (u[:, k].max() + u[:, k].min())
    vc = 0.5 * (v[:, k].max() + v[:, k].min())
    cx = uc * math.cos(th) - vc * math.sin(th)
    cy = uc * math.sin(th) + vc * math.cos(th)
    if eu[k] >= ev[k]:
        length, width, yaw = float(eu[k]), float(ev[k]), th
    else:
        length, width, yaw = float(ev[k]), float(eu[k]), th + math.pi / 2
    return cx, cy, length, width, _wrap_half_pi(yaw)


def fit_oriented_box(cloud, cluster) -> Box3D:
    """Box around the cluster: min-area BEV rectangle and the full z extent.

    Dims are clamped to at least 0.1 m; the score is left at 0.
    """
    pts = _xyz(cloud)[np.asarray(cluster)]
    if len(pts) == 0:
        raise ValueError("empty cluster")
    cx, cy, length, width, yaw = min_area_rectangle(pts[:, :2])
    z0, z1 = float(pts[:, 2].min()), float(pts[:, 2].max())
    dims = (max(length, MIN_BOX_DIM), max(width, MIN_BOX_DIM), max(z1 - z0, MIN_BOX_DIM))
    return Box3D(center=(cx, cy, 0.5 * (z0 + z1)), dims=dims, yaw=yaw, score=0.0)


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

def anchor_distance2(dims, anchor: ClassAnchor) -> float:
    """Squared Mahalanobis distance of log dims from the anchor."""
    z = (np.log(np.asarray(dims)) - np.log(np.asarray(anchor.mean_dims))) / np.asarray(anchor.dims_log_std)
    return float(z @ z)


def _penalize(score: float, point_count: int, anchor: ClassAnchor) -> float:
    if point_count < anchor.min_points:
        score *= MIN_POINTS_PENALTY
    return min(1.0, max(0.0, score))


def score_against_anchor(box: Box3D, anchor: ClassAnchor, point_count: int, temperature: float = 1.0) -> float:
    score = math.exp(-anchor_distance2(box.dims, anchor) / (2.0 * temperature))
    return _penalize(score, point_count, anchor)


def density_peak(xy: np.ndarray, cell: float, smoothing: float = 1.0) -> np.ndarray:
    """Peak of the Gaussian-smoothed BEV occupancy heatmap (ties: first cell in row-major order).

    ``smoothing`` is the kernel std in meters; without it the peak of a
    surface-sampled object sits on one of its walls rather than near its middle.
    """
    xy = np.asarray(xy, dtype=float)
    pad = 3.0 * smoothing
    lo = np.floor((xy.min(axis=0) - pad) / cell) * cell
    ij = np.floor((xy - lo) / cell).astype(np.int64)
    shape = tuple(ij.max(axis=0) + int(math.ceil(pad / cell)) + 1)
    heat = np.zeros(shape)
    np.add.at(heat, (ij[:, 0], ij[:, 1]), 1.0)
    heat = gaussian_filter(heat, smoothing / cell, mode="constant")
    k = np.unravel_index(int(np.argmax(heat)), heat.shape)
    return lo + (np.array(k) + 0.5) * cell


class Proposal(NamedTuple):
    box: Box3D
    n_points: int
    peak_xy: np.ndarray


def propose(cloud: PointCloud, model: DetectorModel) -> list[Proposal]:
    """Class-agnostic boxes from ground-removed clusters, bottoms extended to the ground."""
    if len(cloud) == 0:
        return []
    try:
        ground = fit_ground_ransac(cloud, model.ground_iterations, model.ground_tolerance, model.seed)
    except NoGroundError:
        ground = GroundModel.flat(0.0)
    objects = remove_ground(cloud, ground, model.ground_margin)
    out = []
    for idx in cluster_voxels(objects, model.voxel_size, model.cluster_min_points):
        box = fit_oriented_box(objects, idx)
        z0, z1 = box.z_range
        zg = ground.height_at(box.center[0], box.center[1])
        if zg < z0:
            z0 = zg
        box = box.replace(center=(box.center[0], box.center[1], 0.5 * (z0 + z1)),
                          dims=(box.dims[0], box.dims[1], max(z1 - z0, MIN_BOX_DIM)))
        out.append(Proposal(box, len(idx), density_peak(objects.xyz[idx, :2], model.voxel_size, 2.0 * model.center_sigma)))
    return out


def score_proposal(prop: Proposal, model: DetectorModel) -> Box3D | None:
    """Assign the best-matching class and a confidence; ``None`` below the score floor."""
    scores = [score_against_anchor(prop.box, model.anchors[c], prop.n_points, model.score_temperature)
              for c in CLASSES]
    k = int(np.argmax(scores))
    cls = CLASSES[k]
    score = scores[k]
    if model.head == "center":
        dist2 = float(np.sum((prop.peak_xy - np.array(prop.box.center[:2])) ** 2))
        raw = math.exp(-dist2 / (2.0 * model.score_temperature * model.center_sigma ** 2))
        score = _penalize(raw, prop.n_points, model.anchors[cls])
    if score < model.score_floor:
        return None
    return prop.box.replace(cls=cls, score=score)


def detect_scene(cloud: PointCloud, model: DetectorModel) -> list[Box3D]:
    boxes = [b for b in (score_proposal(p, model) for p in propose(cloud, model)) if b is not None]
    return nms_bev(boxes, model.nms_threshold)


def _detect_frame(frame_id, manifest, model):
    return detect_scene(load_cloud(manifest.cloud_path(frame_id)), model)


def detect_dataset(manifest: DatasetManifest, model: DetectorModel, jobs: int | None = 1) -> dict[str, list[Box3D]]:
    results = parallel_map(partial(_detect_frame, manifest=manifest, model=model), manifest.frames, jobs)
    return dict(zip(manifest.frames, results))


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _fstd(values) -> float:
    values = list(values)
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))


def fit_anchors(label_sets, defaults: dict | None = None, min_points: int | None = None) -> dict:
    """Per-class geometric-mean dims and log-dim spread (floored) from labels.

    Classes without labels fall back to ``defaults`` with a warning.
    Sums use ``math.fsum`` so the result does not depend on frame order.
    """
    defaults = DEFAULT_ANCHORS if defaults is None else defaults
    logs = {c: [] for c in CLASSES}
    for ls in label_sets:
        for b in ls.boxes:
            logs[b.cls].append([math.log(v) for v in b.dims])
    anchors = {}
    for c in CLASSES:
        base = defaults[c]
        mp = base.min_points if min_points is None else min_points
        if not logs[c]:
            log.warning("no %s labels; using default anchor %s", c.value, base.mean_dims)
            anchors[c] = replace(base, min_points=mp)
            continue
        cols = list(zip(*logs[c]))
        mean = tuple(math.exp(math.fsum(col) / len(col)) for col in cols)
        std = tuple(max(LOG_STD_FLOOR, _fstd(col)) for col in cols)
        anchors[c] = ClassAnchor(c, mean, std, mp)
    return anchors


def _match_labels(proposals: list[Proposal], labels: LabelSet, iou_thr: float = 0.5):
    """Greedy label-to-proposal matching by BEV IoU."""
    used, pairs = set(), []
    for gt in labels.boxes:
        best, best_iou = None, iou_thr
        for j, p in enumerate(proposals):
            if j in used:
                continue
            iou = iou_bev(gt, p.box)
            if iou >= best_iou:
                best, best_iou = j, iou
        if best is not None:
            used.add(best)
            pairs.append((gt, proposals[best]))
    return pairs


def _calibration_terms(frame_id, manifest, model):
    cloud = load_cloud(manifest.cloud_path(frame_id))
    labels = load_labels(manifest.label_path(frame_id))
    props = propose(cloud, model)
    return [anchor_distance2(p.box.dims, model.anchors[gt.cls]) for gt, p in _match_labels(props, labels)]


def calibrate_temperature(manifest: DatasetManifest, model: DetectorModel, jobs: int | None = 1,
                          floor: float = 1.0) -> float:
    """Temperature making the fitter's matched boxes chi-square(3)-like under the anchors.

    If fitted boxes scattered around the anchors exactly as the labels do,
    the mean squared log-distance would be 3; any excess (tilted or partial
    views on the training clouds) widens the score kernel proportionally.
    """
    terms = parallel_map(partial(_calibration_terms, manifest=manifest, model=model), manifest.frames, jobs)
    d2 = [v for frame in terms for v in frame]
    if not d2:
        return floor
    return max(floor, math.fsum(d2) / (3.0 * len(d2)))


def fit_detector(manifest: DatasetManifest, base: DetectorModel | None = None, calibrate: bool = True,
                 jobs: int | None = 1) -> DetectorModel:
    """Stage-1 supervised fit on a labelled dataset."""
    base = DetectorModel() if base is None else base
    label_sets = [load_labels(manifest.label_path(f)) for f in manifest.frames]
    model = replace(base, anchors=fit_anchors(label_sets, base.anchors))
    if calibrate:
        model = replace(model, score_temperature=calibrate_temperature(manifest, model, jobs,
                                                                       floor=base.score_temperature))
    return model
