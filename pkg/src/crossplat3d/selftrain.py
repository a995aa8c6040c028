"""Thresholded pseudo-label self-training on an unlabelled target domain.

Each refresh round runs the current detector over every target frame,
keeps confident detections as pseudo-labels (per-class thresholds), merges
them into a per-frame memory, and refits the detector's anchors on that
memory.
"""
from __future__ import annotations

import csv
import io as _io
import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .detector import DetectorModel, detect_dataset, fit_anchors
from .geometry import CLASSES, Box3D, ObjectClass, iou_bev
from .io import DatasetManifest, LabelSet, Provenance, load_labels, save_label_collection

MATCH_IOU = 0.5
GRACE_ROUNDS = 1


class ZeroPseudoLabelError(RuntimeError):
    """The first refresh produced no positives anywhere: thresholds too strict for this domain."""


@dataclass(frozen=True)
class ThresholdConfig:
    pos_threshold: dict = field(default_factory=lambda: {c: 0.7 for c in CLASSES})
    neg_threshold: float = 0.2
    refresh_every: int = 4
    total_rounds: int = 5

    def __post_init__(self):
        pos = {ObjectClass(k): float(v) for k, v in self.pos_threshold.items()}
        if set(pos) != set(CLASSES):
            raise ValueError("need a positive threshold for every class")
        if any(not 0.0 < v <= 1.0 for v in pos.values()):
            raise ValueError("positive thresholds must lie in (0, 1]")
        if not 0.0 <= self.neg_threshold < 1.0:
            raise ValueError("negative threshold must lie in [0, 1)")
        if self.neg_threshold >= min(pos.values()):
            raise ValueError("negative threshold must be below every positive threshold")
        if self.refresh_every < 1 or self.total_rounds < 0:
            raise ValueError("refresh_every must be >= 1 and total_rounds >= 0")
        object.__setattr__(self, "pos_threshold", pos)

    def is_refresh_round(self, r: int) -> bool:
        return (r - 1) % self.refresh_every == 0


PHASE1 = ThresholdConfig({ObjectClass.CAR: 0.7, ObjectClass.PEDESTRIAN: 0.7}, 0.2)
PHASE2 = ThresholdConfig({ObjectClass.CAR: 0.85, ObjectClass.PEDESTRIAN: 0.55}, 0.20)
PRESETS = {"phase1": PHASE1, "phase2": PHASE2}


def filter_pseudo_labels(detections: list[Box3D], cfg: ThresholdConfig) -> tuple[list[Box3D], list[Box3D]]:
    """Split detections into positives and ignored; anything below the negative threshold is background.

    Positive thresholds are inclusive.
    """
    positives, ignored = [], []
    for b in detections:
        if b.score >= cfg.pos_threshold[b.cls]:
            positives.append(b)
        elif b.score >= cfg.neg_threshold:
            ignored.append(b)
    return positives, ignored


@dataclass
class MemoryEntry:
    box: Box3D
    missed: int = 0


@dataclass
class PseudoLabelMemory:
    frames: dict = field(default_factory=dict)         # frame_id -> list[MemoryEntry]
    round_updated: dict = field(default_factory=dict)  # frame_id -> round

    def boxes(self, frame_id: str) -> list[Box3D]:
        return [e.box for e in self.frames.get(frame_id, [])]

    def label_sets(self, frame_order=None) -> list[LabelSet]:
        order = sorted(self.frames) if frame_order is None else [f for f in frame_order if f in self.frames]
        return [LabelSet(f, self.boxes(f), Provenance.PSEUDO) for f in order]

    def total(self) -> int:
        return sum(len(v) for v in self.frames.values())


def memory_update(memory: PseudoLabelMemory, frame_id: str, new_positives: list[Box3D], round_: int,
                  match_iou: float = MATCH_IOU) -> PseudoLabelMemory:
    """Merge one frame's new positives into the memory (in place; also returned).

    New boxes, visited by descending score, claim the unclaimed stored box of
    highest BEV IoU above ``match_iou``; the higher-scoring box of a pair is
    kept. Unmatched new boxes are added. A stored box left unmatched survives
    one update and is dropped if it is unmatched again.
    """
    old = memory.frames.get(frame_id, [])
    claimed = [False] * len(old)
    result: list[MemoryEntry] = []
    order = sorted(range(len(new_positives)), key=lambda i: (-new_positives[i].score, i))
    for i in order:
        nb = new_positives[i]
        best, best_iou = -1, match_iou
        for j, entry in enumerate(old):
            if claimed[j]:
                continue
            v = iou_bev(nb, entry.box)
            if v > best_iou:
                best, best_iou = j, v
        if best < 0:
            result.append(MemoryEntry(nb))
            continue
        claimed[best] = True
        keep = old[best].box if old[best].box.score >= nb.score else nb
        result.append(MemoryEntry(keep))
    for j, entry in enumerate(old):
        if not claimed[j] and entry.missed < GRACE_ROUNDS:
            result.append(MemoryEntry(entry.box, entry.missed + 1))
    memory.frames[frame_id] = result
    memory.round_updated[frame_id] = round_
    return memory


def refit_from_memory(model: DetectorModel, memory: PseudoLabelMemory, extra_labels=()) -> DetectorModel:
    """Move anchor means to the pseudo-label statistics without narrowing their spread.

    Pseudo-labels are selected by score, so their spread is truncated by
    construction; the incoming spread and temperature are kept as floors.
    """
    sets = [s for s in itertools.chain(memory.label_sets(), extra_labels) if s.boxes]
    if not sets:
        return model
    present = {b.cls for s in sets for b in s.boxes}
    fitted = fit_anchors(sets, model.anchors)
    anchors = {}
    for c in CLASSES:
        old = model.anchors[c]
        if c not in present:
            anchors[c] = old
            continue
        new = fitted[c]
        spread = tuple(max(a, b) for a, b in zip(new.dims_log_std, old.dims_log_std))
        anchors[c] = replace(new, dims_log_std=spread, min_points=old.min_points)
    return replace(model, anchors=anchors)


def _round_metrics(r: int, memory: PseudoLabelMemory) -> list[dict]:
    rows = []
    for c in CLASSES:
        scores = [b.score for f in memory.frames for b in memory.boxes(f) if b.cls is c]
        rows.append({"round": r, "class": c.value, "count": len(scores),
                     "mean_score": math.fsum(scores) / len(scores) if scores else 0.0})
    return rows


def self_train(model: DetectorModel, target: DatasetManifest, cfg: ThresholdConfig, seed: int | None = None,
               jobs: int | None = 1, out_dir=None, source: DatasetManifest | None = None):
    """Stage-2 adaptation. Returns ``(model, memory, metrics)``.

    ``source``, when given, mixes the source labels into every refit.
    Target labels are never read. With ``out_dir`` set, the memory of each
    round goes to ``labels_pseudo_round<r>.jsonl``.
    """
    memory = PseudoLabelMemory()
    metrics: list[dict] = []
    if cfg.total_rounds == 0:
        return model, memory, metrics
    if seed is not None:
        model = replace(model, seed=seed)
    extra = [load_labels(source.label_path(f)) for f in source.frames] if source is not None else []
    for r in range(1, cfg.total_rounds + 1):
        if cfg.is_refresh_round(r):
            detections = detect_dataset(target, model, jobs)
            for fid in target.frames:
                positives, _ = filter_pseudo_labels(detections[fid], cfg)
                memory_update(memory, fid, positives, r)
            if r == 1 and memory.total() == 0:
                raise ZeroPseudoLabelError(
                    "no detection reached the positive thresholds "
                    + ", ".join(f"{c.value}={v}" for c, v in cfg.pos_threshold.items())
                )
        model = refit_from_memory(model, memory, extra)
        metrics.extend(_round_metrics(r, memory))
        if out_dir is not None:
            save_label_collection(memory.label_sets(target.frames), Path(out_dir) / f"labels_pseudo_round{r}.jsonl")
    return model, memory, metrics


def metrics_to_csv(metrics: list[dict]) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["round", "class", "count", "mean_score"], lineterminator="\n")
    w.writeheader()
    for row in metrics:
        w.writerow({**row, "mean_score": f"{row['mean_score']:.6f}"})
    return buf.getvalue()
