"""
Adapting to the target platform with pseudo-labels
==================================================

Self-training runs the detector over unlabelled target scans, keeps
confident detections as pseudo-labels (stricter for cars than for
pedestrians) and refits class size anchors on them. The ground truth is
only read at the very end, for scoring.
"""
import tempfile
from pathlib import Path

from crossplat3d import (
    PHASE2,
    Domain,
    JitterRange,
    ObjectClass,
    SceneSpec,
    augment_batch,
    detect_dataset,
    evaluate,
    fit_detector,
    generate_dataset,
    load_label_dir,
    self_train,
)
from crossplat3d.selftrain import metrics_to_csv
from crossplat3d.simgen import QUADRUPED, VEHICLE

work = Path(tempfile.mkdtemp())
source = generate_dataset(60, SceneSpec(), VEHICLE, work / "source", seed=0)
target = generate_dataset(30, SceneSpec(), QUADRUPED, work / "target", seed=1, domain=Domain.TARGET)
truth = load_label_dir(target.root / "gt_eval", target.frames)

model = fit_detector(augment_batch(source, JitterRange.from_degrees(5.0), 0.5, seed=0, out_root=work / "aug"))
print("thresholds:", {c.value: t for c, t in PHASE2.pos_threshold.items()}, "negative", PHASE2.neg_threshold)
print(f"{PHASE2.total_rounds} rounds, pseudo-labels refreshed every {PHASE2.refresh_every}")

adapted, memory, metrics = self_train(model, target, PHASE2, out_dir=work / "pseudo")
print(metrics_to_csv(metrics))
print("pseudo-labels kept:", memory.total())

for name, m in (("before", model), ("after", adapted)):
    report = evaluate(detect_dataset(target, m), truth)
    print(f"{name:6s} Car AP@0.5 {report['ap']['Car']['0.5']:6.2f}  "
          f"Ped AP@0.5 {report['ap']['Pedestrian']['0.5']:6.2f}  Score {report['score']:6.2f}")

# the pedestrian anchor moved towards what the target scans actually show
ped = ObjectClass.PEDESTRIAN
print("pedestrian anchor dims:", [round(v, 3) for v in model.anchors[ped].mean_dims],
      "->", [round(v, 3) for v in adapted.anchors[ped].mean_dims])
