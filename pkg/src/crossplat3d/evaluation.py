"""3D average precision with 40-point recall interpolation, and the challenge score."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box3D, ObjectClass, iou_3d, iou_bev

DEFAULT_THRESHOLDS = {
    ObjectClass.CAR: (0.5, 0.7),
    ObjectClass.PEDESTRIAN: (0.25, 0.5),
}


class SchemaMismatchError(ValueError):
    """Detections and ground truth do not describe the same frames."""


@dataclass(frozen=True)
class EvalConfig:
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    recall_points: int = 40
    bev: bool = False  # diagnostic only: match on BEV IoU instead of 3D IoU

    def __post_init__(self):
        th = {}
        for cls, values in self.thresholds.items():
            values = tuple(float(v) for v in values)
            if any(not 0.0 < v <= 1.0 for v in values):
                raise ValueError("IoU thresholds must lie in (0, 1]")
            if list(values) != sorted(values):
                raise ValueError("IoU thresholds must be sorted ascending")
            th[ObjectClass(cls)] = values
        object.__setattr__(self, "thresholds", th)
        if self.recall_points < 1:
            raise ValueError("recall_points must be positive")


@dataclass
class APResult:
    cls: ObjectClass
    iou_threshold: float
    ap: float
    precision: np.ndarray
    recall: np.ndarray


def match_frame(dets: list[Box3D], gts: list[Box3D], cls: ObjectClass, iou_thr: float, bev: bool = False):
    """Greedy TP/FP assignment for one frame and one class.

    Returns ``(scores, tp_flags, n_gt)`` with detections in descending score
    order (ties keep input order). Each detection takes the unmatched GT of
    highest IoU >= ``iou_thr``; equal IoUs go to the lower GT index.
    """
    iou = iou_bev if bev else iou_3d
    cls = ObjectClass(cls)
    d = [b for b in dets if b.cls is cls]
    g = [b for b in gts if b.cls is cls]
    order = sorted(range(len(d)), key=lambda i: -d[i].score)
    taken = [False] * len(g)
    scores, flags = [], []
    for i in order:
        best, best_iou = -1, iou_thr
        for j, gt in enumerate(g):
            if taken[j]:
                continue
            v = iou(d[i], gt)
            if v > best_iou or (v == best_iou and best < 0):
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        scores.append(d[i].score)
        flags.append(best >= 0)
    return scores, flags, len(g)


def average_precision(frames, total_gt: int, cls=ObjectClass.CAR, iou_threshold: float = 0.5,
                      recall_points: int = 40) -> APResult:
    """Interpolated AP over recall levels 1/N, 2/N, ..., 1.

    ``frames`` is an iterable of ``(scores, tp_flags)`` pairs. Detections are
    ranked across frames by descending score, ties in frame order.
    """
    scores, flags = [], []
    for s, f in frames:
        scores.extend(s)
        flags.extend(f)
    if total_gt <= 0 or not scores:
        return APResult(ObjectClass(cls), iou_threshold, 0.0, np.zeros(0), np.zeros(0))
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(flags, dtype=np.float64)[order]
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / total_gt
    # envelope: best precision at or beyond each rank
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(1, recall_points + 1) / recall_points
    pos = np.searchsorted(recall, levels - 1e-12, side="left")
    interp = np.where(pos < len(recall), envelope[np.minimum(pos, len(recall) - 1)], 0.0)
    ap = float(np.sum(interp) / recall_points)
    return APResult(ObjectClass(cls), iou_threshold, min(1.0, ap), precision, recall)


def challenge_score(car_ap_05: float, ped_ap_05: float) -> float:
    """Leaderboard score: mean of Car AP@0.5 and Pedestrian AP@0.5 (same units as input)."""
    return (car_ap_05 + ped_ap_05) / 2.0


def _as_boxes(entry):
    return entry.boxes if hasattr(entry, "boxes") else list(entry)


def evaluate(det_labels: dict, gt_labels: dict, cfg: EvalConfig | None = None) -> dict:
    """Full report over frame-keyed detections and ground truth.

    Values are percentages rounded to two decimals. The frame sets must match.
    """
    cfg = EvalConfig() if cfg is None else cfg
    if set(det_labels) != set(gt_labels):
        missing = sorted(set(gt_labels) - set(det_labels))[:5]
        extra = sorted(set(det_labels) - set(gt_labels))[:5]
        raise SchemaMismatchError(f"frame sets differ (missing {missing}, extra {extra})")
    frames = sorted(gt_labels)
    results = {}
    for cls, thresholds in cfg.thresholds.items():
        for thr in thresholds:
            per_frame, total = [], 0
            for fid in frames:
                s, f, n = match_frame(_as_boxes(det_labels[fid]), _as_boxes(gt_labels[fid]), cls, thr, cfg.bev)
                per_frame.append((s, f))
                total += n
            results[(cls, thr)] = average_precision(per_frame, total, cls, thr, cfg.recall_points)
    car = results.get((ObjectClass.CAR, 0.5))
    ped = results.get((ObjectClass.PEDESTRIAN, 0.5))
    score = challenge_score(100.0 * car.ap, 100.0 * ped.ap) if car and ped else None
    return {
        "ap": {
            cls.value: {f"{thr:g}": round(100.0 * results[(cls, thr)].ap, 2) for thr in ths}
            for cls, ths in cfg.thresholds.items()
        },
        "score": None if score is None else round(score, 2),
        "n_frames": len(frames),
        "n_gt": {cls.value: sum(1 for fid in frames for b in _as_boxes(gt_labels[fid]) if b.cls is cls)
                 for cls in cfg.thresholds},
        "matching": "bev" if cfg.bev else "3d",
        "recall_points": cfg.recall_points,
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou_threshold", "ap"])
    for cls, by_thr in report["ap"].items():
        for thr, ap in by_thr.items():
            w.writerow([cls, thr, f"{ap:.2f}"])
    w.writerow(["Score", "", "" if report["score"] is None else f"{report['score']:.2f}"])
    return buf.getvalue()


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pj, pc = out_dir / "report.json", out_dir / "report.csv"
    pj.write_text(report_to_json(report), encoding="utf-8")
    pc.write_text(report_to_csv(report), encoding="utf-8")
    return pj, pc
