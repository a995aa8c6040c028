"""Two-stage training pipeline: source pre-training (optionally with CJA), target self-training.

Every stage reads and writes the on-disk formats from :mod:`crossplat3d.io`
and returns a small JSON-serialisable summary.
"""
from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import cja as cja_mod
from . import detector, evaluation, selftrain, simgen
from .geometry import ObjectClass
from .io import (
    Domain,
    LabelSet,
    Provenance,
    SceneIOError,
    load_label_collection,
    load_label_dir,
    load_manifest,
    save_labels,
)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    source_root: str | None = None
    target_root: str | None = None
    out: str | None = None
    seed: int = 0
    jobs: int | None = None
    # stage 1
    cja: bool = True
    cja_range_deg: float = cja_mod.DEFAULT_RANGE_DEG
    cja_prob: float = cja_mod.DEFAULT_PROBABILITY
    head: str = "anchor"
    voxel_size: float = 0.2
    cluster_min_points: int = 10
    nms_threshold: float = 0.3
    # stage 2
    threshold_preset: str = "phase2"
    pos_thresh_car: float | None = None
    pos_thresh_ped: float | None = None
    neg_thresh: float | None = None
    rounds: int | None = None
    refresh_every: int | None = None
    mix_source: bool = False
    # dataset generation (gen / ablation)
    n_source: int = 200
    n_target: int = 100
    source_profile: str = "vehicle"
    target_profile: str = "quadruped"
    scene: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc.msg}") from None
        return cls().merged(data)

    def merged(self, overrides: dict) -> "PipelineConfig":
        names = {f.name for f in fields(self)}
        unknown = set(overrides) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def jitter_range(self) -> cja_mod.JitterRange:
        try:
            return cja_mod.JitterRange.from_degrees(self.cja_range_deg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def thresholds(self) -> selftrain.ThresholdConfig:
        if self.threshold_preset not in selftrain.PRESETS:
            raise ConfigError(f"unknown threshold preset {self.threshold_preset!r}")
        base = selftrain.PRESETS[self.threshold_preset]
        pos = dict(base.pos_threshold)
        if self.pos_thresh_car is not None:
            pos[ObjectClass.CAR] = self.pos_thresh_car
        if self.pos_thresh_ped is not None:
            pos[ObjectClass.PEDESTRIAN] = self.pos_thresh_ped
        try:
            return selftrain.ThresholdConfig(
                pos,
                base.neg_threshold if self.neg_thresh is None else self.neg_thresh,
                base.refresh_every if self.refresh_every is None else self.refresh_every,
                base.total_rounds if self.rounds is None else self.rounds,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def detector_base(self) -> detector.DetectorModel:
        try:
            return detector.DetectorModel(head=self.head, voxel_size=self.voxel_size,
                                          cluster_min_points=self.cluster_min_points,
                                          nms_threshold=self.nms_threshold, seed=self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"--{name.replace('_', '-')} is required")
            if name.endswith("_root") and not (Path(value) / "manifest.json").exists():
                raise ConfigError(f"{name} {value} has no manifest.json")


def _profile(name_or_path: str) -> simgen.PlatformProfile:
    if name_or_path in simgen.PROFILES:
        return simgen.PROFILES[name_or_path]
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError(f"unknown platform profile {name_or_path!r}")
    try:
        return simgen.profile_from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"profile {path}: {exc}") from None


def _scene_spec(cfg: PipelineConfig) -> simgen.SceneSpec:
    try:
        return simgen.spec_from_dict(cfg.scene)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scene spec: {exc}") from None


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def run_gen(cfg: PipelineConfig, profile: str, n_frames: int, domain: Domain) -> dict:
    cfg.require("out")
    man = simgen.generate_dataset(n_frames, _scene_spec(cfg), _profile(profile), cfg.out, cfg.seed,
                                  Domain(domain), jobs=cfg.jobs)
    return {"command": "gen", "root": str(man.root), "frames": len(man.frames), "domain": man.domain.value}


def run_augment(cfg: PipelineConfig) -> dict:
    cfg.require("source_root", "out")
    src = load_manifest(cfg.source_root)
    try:
        man = cja_mod.augment_batch(src, cfg.jitter_range(), cfg.cja_prob, cfg.seed, cfg.out, cfg.jobs)
    except cja_mod.DomainError as exc:
        raise ConfigError(str(exc)) from None
    return {"command": "augment", "root": str(man.root), "frames": len(man.frames)}


def run_pretrain(cfg: PipelineConfig) -> dict:
    cfg.require("source_root", "out")
    out = Path(cfg.out)
    src = load_manifest(cfg.source_root)
    if src.domain is not Domain.SOURCE:
        raise ConfigError("pre-training needs a source-domain dataset")
    train = src
    if cfg.cja:
        train = cja_mod.augment_batch(src, cfg.jitter_range(), cfg.cja_prob, cfg.seed, out / "source_cja", cfg.jobs)
    model = detector.fit_detector(train, cfg.detector_base(), jobs=cfg.jobs)
    path = out / "model_stage1.json"
    detector.save_model(model, path)
    return {"command": "pretrain", "model": str(path), "cja": cfg.cja,
            "score_temperature": model.score_temperature}


def run_selftrain(cfg: PipelineConfig, model_path) -> dict:
    cfg.require("target_root", "out")
    thresholds = cfg.thresholds()
    out = Path(cfg.out)
    tgt = load_manifest(cfg.target_root)
    src = None
    if cfg.mix_source:
        cfg.require("source_root")
        src = load_manifest(cfg.source_root)
    model = detector.load_model(model_path)
    model, memory, metrics = selftrain.self_train(model, tgt, thresholds, None, cfg.jobs,
                                                  out / "pseudo", source=src)
    path = out / "model_stage2.json"
    detector.save_model(model, path)
    (out / "selftrain_metrics.csv").write_text(selftrain.metrics_to_csv(metrics), encoding="utf-8")
    return {"command": "selftrain", "model": str(path), "pseudo_labels": memory.total(),
            "rounds": thresholds.total_rounds}


def run_detect(cfg: PipelineConfig, model_path, root=None) -> dict:
    root = root or cfg.target_root
    cfg.require("out")
    if root is None or not (Path(root) / "manifest.json").exists():
        raise ConfigError("detect needs --target-root (or --root) with a manifest.json")
    man = load_manifest(root)
    model = detector.load_model(model_path)
    dets = detector.detect_dataset(man, model, cfg.jobs)
    out = Path(cfg.out) / "detections"
    for fid in man.frames:
        save_labels(LabelSet(fid, dets[fid], Provenance.PSEUDO), out / f"{fid}.jsonl")
    return {"command": "detect", "detections": str(out), "frames": len(man.frames),
            "boxes": sum(len(v) for v in dets.values())}


def _load_label_source(path, provenance):
    path = Path(path)
    if path.is_dir():
        return load_label_dir(path, provenance=provenance)
    if path.is_file():
        return load_label_collection(path, provenance)
    raise SceneIOError(f"label path {path} does not exist")


def run_eval(cfg: PipelineConfig, dets_path, gt_path, bev: bool = False) -> dict:
    cfg.require("out")
    gts = _load_label_source(gt_path, Provenance.GROUND_TRUTH)
    dets = _load_label_source(dets_path, Provenance.PSEUDO)
    if Path(dets_path).is_file():
        # a collection file omits frames without boxes
        for fid in gts:
            dets.setdefault(fid, LabelSet(fid, [], Provenance.PSEUDO))
    report = evaluation.evaluate(dets, gts, evaluation.EvalConfig(bev=bev))
    evaluation.write_report(report, cfg.out)
    return {"command": "eval", "score": report["score"], "ap": report["ap"],
            "report": str(Path(cfg.out) / "report.json")}


ABLATION_COLUMNS = ["Detector", "CJA", "ST3D", "Car AP@0.5", "Car AP@0.7", "Ped. AP@0.5", "Ped. AP@0.25", "Score"]


def run_ablation(cfg: PipelineConfig) -> dict:
    """{CJA off/on} x {ST3D off/on} on one shared pair of datasets."""
    cfg.require("out")
    out = Path(cfg.out)
    spec = _scene_spec(cfg)
    if cfg.source_root is None:
        simgen.generate_dataset(cfg.n_source, spec, _profile(cfg.source_profile), out / "data" / "source",
                                cfg.seed, Domain.SOURCE, jobs=cfg.jobs)
        cfg = replace(cfg, source_root=str(out / "data" / "source"))
    if cfg.target_root is None:
        simgen.generate_dataset(cfg.n_target, spec, _profile(cfg.target_profile), out / "data" / "target",
                                cfg.seed + 1, Domain.TARGET, split="val", jobs=cfg.jobs)
        cfg = replace(cfg, target_root=str(out / "data" / "target"))
    cfg.require("source_root", "target_root")
    tgt = load_manifest(cfg.target_root)
    gts = load_label_dir(Path(tgt.root) / "gt_eval", tgt.frames)

    rows, runs = [], {}
    for use_cja in (False, True):
        stage1 = run_pretrain(replace(cfg, cja=use_cja, out=str(out / "runs" / f"cja{int(use_cja)}")))
        for use_st in (False, True):
            name = f"cja{int(use_cja)}_st3d{int(use_st)}"
            run_dir = out / "runs" / name
            model_path = stage1["model"]
            if use_st:
                model_path = run_selftrain(replace(cfg, out=str(run_dir)), model_path)["model"]
            model = detector.load_model(model_path)
            dets = detector.detect_dataset(tgt, model, cfg.jobs)
            report = evaluation.evaluate(dets, gts)
            evaluation.write_report(report, run_dir)
            ap = report["ap"]
            rows.append({
                "Detector": f"geometric-{cfg.head}",
                "CJA": "yes" if use_cja else "-",
                "ST3D": "yes" if use_st else "-",
                "Car AP@0.5": ap["Car"]["0.5"],
                "Car AP@0.7": ap["Car"]["0.7"],
                "Ped. AP@0.5": ap["Pedestrian"]["0.5"],
                "Ped. AP@0.25": ap["Pedestrian"]["0.25"],
                "Score": report["score"],
            })
            runs[name] = report["score"]
    # table order: baseline, +ST3D, +CJA, +CJA+ST3D
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in row.items()})
    (out / "ablation.csv").write_text(buf.getvalue(), encoding="utf-8")
    return {"command": "ablation", "table": str(out / "ablation.csv"), "scores": runs,
            "ordering_holds": runs["cja0_st3d0"] < runs["cja1_st3d0"] <= runs["cja1_st3d1"]}

