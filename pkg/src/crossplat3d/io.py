"""Point clouds, label sets and dataset manifests on disk.

Layout of a dataset root::

    <root>/manifest.json
    <root>/clouds/<frame_id>.bin      little-endian float32 (x, y, z, intensity)
    <root>/labels/<frame_id>.jsonl    one box per line
    <root>/gt_eval/<frame_id>.jsonl   target-domain ground truth, read by evaluation only
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .geometry import Box3D, ObjectClass

CLOUD_DTYPE = np.dtype("<f4")
RECORD_BYTES = 16
LABEL_FIELDS = ("frame_id", "class", "cx", "cy", "cz", "l", "w", "h", "yaw", "score", "provenance")


class SceneIOError(Exception):
    """Base class for file-format problems."""


class MalformedFileError(SceneIOError):
    pass


class ValidationError(SceneIOError):
    pass


class Provenance(str, Enum):
    GROUND_TRUTH = "GroundTruth"
    PSEUDO = "Pseudo"


class Domain(str, Enum):
    SOURCE = "Source"
    TARGET = "Target"


@dataclass
class PointCloud:
    """One scene. ``points`` is an (N, 4) float64 array of x, y, z, intensity."""

    points: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValidationError(f"points must have shape (N, 4), got {pts.shape}")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def subset(self, mask_or_index) -> "PointCloud":
        return PointCloud(self.points[mask_or_index], self.frame_id)


@dataclass
class LabelSet:
    frame_id: str
    boxes: list[Box3D] = field(default_factory=list)
    provenance: Provenance = Provenance.GROUND_TRUTH

    def __post_init__(self):
        self.provenance = Provenance(self.provenance)
        self.boxes = list(self.boxes)
        if self.provenance is Provenance.GROUND_TRUTH:
            for b in self.boxes:
                if b.score != 1.0:
                    raise ValidationError(f"ground-truth box in {self.frame_id!r} has score {b.score}")

    def __len__(self):
        return len(self.boxes)


@dataclass
class DatasetManifest:
    root: Path
    split: str
    frames: list[str]
    domain: Domain = Domain.SOURCE

    def __post_init__(self):
        self.root = Path(self.root)
        self.domain = Domain(self.domain)
        self.frames = list(self.frames)
        if len(set(self.frames)) != len(self.frames):
            raise ValidationError("manifest frame ids must be unique")

    def cloud_path(self, frame_id: str) -> Path:
        return self.root / "clouds" / f"{frame_id}.bin"

    def label_path(self, frame_id: str) -> Path:
        return self.root / "labels" / f"{frame_id}.jsonl"

    def gt_eval_path(self, frame_id: str) -> Path:
        return self.root / "gt_eval" / f"{frame_id}.jsonl"

    def has_labels(self) -> bool:
        return all(self.label_path(f).exists() for f in self.frames)


# ---------------------------------------------------------------------------
# clouds
# ---------------------------------------------------------------------------

def load_cloud(path, frame_id: str | None = None) -> PointCloud:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % RECORD_BYTES:
        raise MalformedFileError(f"{path}: size {len(raw)} is not a multiple of {RECORD_BYTES}")
    arr = np.frombuffer(raw, dtype=CLOUD_DTYPE).reshape(-1, 4)
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise ValidationError(f"{path}: non-finite value in point {int(np.argmax(bad))}")
    return PointCloud(arr.astype(np.float64), frame_id if frame_id is not None else path.stem)


def save_cloud(cloud: PointCloud, path) -> None:
    """Write as float32 quadruplets; values not representable in float32 are rounded."""
    pts = np.asarray(cloud.points)
    if not np.isfinite(pts).all():
        raise ValidationError("refusing to write non-finite points")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(pts, dtype=CLOUD_DTYPE).tobytes())


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------

def box_to_record(box: Box3D, frame_id: str, provenance: Provenance) -> dict:
    return {
        "frame_id": frame_id,
        "class": box.cls.value,
        "cx": box.center[0],
        "cy": box.center[1],
        "cz": box.center[2],
        "l": box.dims[0],
        "w": box.dims[1],
        "h": box.dims[2],
        "yaw": box.yaw,
        "score": box.score,
        "provenance": Provenance(provenance).value,
    }


def _parse_line(line: str, lineno: int, path) -> tuple[str, Box3D, Provenance]:
    where = f"{path}:{lineno}"
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ValidationError(f"{where}: expected an object")
    for name in LABEL_FIELDS:
        if name not in rec:
            raise ValidationError(f"{where}: missing field {name!r}")
    for name in ("cx", "cy", "cz", "l", "w", "h", "yaw", "score"):
        v = rec[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"{where}: field {name!r} must be a finite number")
    for name in ("l", "w", "h"):
        if rec[name] <= 0:
            raise ValidationError(f"{where}: field {name!r} must be positive")
    try:
        cls = ObjectClass(rec["class"])
    except ValueError:
        raise ValidationError(f"{where}: field 'class' has unknown value {rec['class']!r}") from None
    try:
        prov = Provenance(rec["provenance"])
    except ValueError:
        raise ValidationError(f"{where}: field 'provenance' has unknown value {rec['provenance']!r}") from None
    if not 0.0 <= rec["score"] <= 1.0:
        raise ValidationError(f"{where}: field 'score' outside [0, 1]")
    if prov is Provenance.GROUND_TRUTH and rec["score"] != 1.0:
        raise ValidationError(f"{where}: field 'score' must be 1.0 for ground truth")
    frame_id = rec["frame_id"]
    if not isinstance(frame_id, str):
        raise ValidationError(f"{where}: field 'frame_id' must be a string")
    box = Box3D(
        center=(rec["cx"], rec["cy"], rec["cz"]),
        dims=(rec["l"], rec["w"], rec["h"]),
        yaw=rec["yaw"],
        cls=cls,
        score=rec["score"],
    )
    return frame_id, box, prov


def _iter_records(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield _parse_line(line, lineno, path)


def load_labels(path, provenance: Provenance = Provenance.GROUND_TRUTH) -> LabelSet:
    """Read a single-frame label file.

    An empty file yields an empty set whose frame id is the file stem and
    whose provenance is ``provenance``.
    """
    path = Path(path)
    frame_id, prov, boxes = None, None, []
    for lineno, (fid, box, p) in enumerate(_iter_records(path), start=1):
        if frame_id is None:
            frame_id, prov = fid, p
        elif fid != frame_id or p is not prov:
            raise ValidationError(f"{path}:{lineno}: mixed frame_id/provenance in a single-frame file")
        boxes.append(box)
    if frame_id is None:
        return LabelSet(path.stem, [], provenance)
    return LabelSet(frame_id, boxes, prov)


def _dump(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def save_labels(labels: LabelSet, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(box_to_record(b, labels.frame_id, labels.provenance) for b in labels.boxes),
                    encoding="utf-8")


def save_label_collection(sets: list[LabelSet], path) -> None:
    """Write several frames into one JSON-lines file (frame order preserved)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        _dump(box_to_record(b, s.frame_id, s.provenance) for s in sets for b in s.boxes),
        encoding="utf-8",
    )


def load_label_collection(path, provenance: Provenance = Provenance.PSEUDO) -> dict[str, LabelSet]:
    out: dict[str, LabelSet] = {}
    for fid, box, prov in _iter_records(path):
        if fid not in out:
            out[fid] = LabelSet(fid, [], prov)
        out[fid].boxes.append(box)
    return out


def load_label_dir(directory, frames=None, provenance: Provenance = Provenance.GROUND_TRUTH) -> dict[str, LabelSet]:
    """Load ``<directory>/<frame_id>.jsonl`` for the given frames (or every file present)."""
    directory = Path(directory)
    if frames is None:
        frames = sorted(p.stem for p in directory.glob("*.jsonl"))
    out = {}
    for fid in frames:
        path = directory / f"{fid}.jsonl"
        if not path.exists():
            raise SceneIOError(f"missing label file {path}")
        ls = load_labels(path, provenance)
        if ls.frame_id != fid:
            raise ValidationError(f"{path}: frame_id {ls.frame_id!r} does not match file name")
        out[fid] = ls
    return out


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def manifest_to_dict(manifest: DatasetManifest, relative_to: Path | None = None) -> dict:
    root = str(manifest.root) if relative_to is None else relative_or_absolute(manifest.root, relative_to)
    return {
        "root": root,
        "split": manifest.split,
        "domain": manifest.domain.value,
        "frames": list(manifest.frames),
    }


def save_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path is not None else manifest.root / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    # root stored relative to the manifest so relocated datasets stay byte-identical
    rec = manifest_to_dict(manifest, relative_to=path.parent.resolve())
    path.write_text(json.dumps(rec, indent=2) + "\n", encoding="utf-8")
    return path


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read ``manifest.json`` (a directory path resolves to the file inside it).

    A relative ``root`` is resolved against the manifest's directory.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        rec = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
    for name in ("root", "split", "domain", "frames"):
        if name not in rec:
            raise ValidationError(f"{path}: missing field {name!r}")
    root = Path(rec["root"])
    if not root.is_absolute():
        root = path.parent / root
    try:
        manifest = DatasetManifest(root=root, split=rec["split"], frames=rec["frames"], domain=rec["domain"])
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if check_files:
        for fid in manifest.frames:
            if not manifest.cloud_path(fid).exists():
                raise ValidationError(f"{path}: frame {fid!r} has no cloud file")
    return manifest


def write_frame(root, frame_id: str, cloud: PointCloud, labels: LabelSet | None, label_dir: str = "labels") -> None:
    root = Path(root)
    save_cloud(cloud, root / "clouds" / f"{frame_id}.bin")
    if labels is not None:
        save_labels(labels, root / label_dir / f"{frame_id}.jsonl")


def relative_or_absolute(path: Path, start: Path) -> str:
    try:
        return os.path.relpath(Path(path).resolve(), start)
    except ValueError:
        return str(path)
