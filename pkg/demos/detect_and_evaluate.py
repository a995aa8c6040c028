"""
Fitting the geometric detector and scoring it on a new platform
===============================================================

Train on vehicle-mounted scans, then evaluate on scans from a low,
wobbly quadruped robot. Jitter augmentation during training widens the
detector's size tolerance, which recovers much of the lost accuracy.
"""
import tempfile
from pathlib import Path

from crossplat3d import (
    Domain,
    JitterRange,
    SceneSpec,
    augment_batch,
    detect_dataset,
    evaluate,
    fit_detector,
    generate_dataset,
    load_label_dir,
)
from crossplat3d.simgen import QUADRUPED, VEHICLE

work = Path(tempfile.mkdtemp())
spec = SceneSpec()

# a labelled source domain and a held-out target domain
source = generate_dataset(60, spec, VEHICLE, work / "source", seed=0)
target = generate_dataset(30, spec, QUADRUPED, work / "target", seed=1, domain=Domain.TARGET, split="val")
truth = load_label_dir(target.root / "gt_eval", target.frames)


def score(model):
    dets = detect_dataset(target, model)
    return evaluate(dets, truth)


# plain supervised fit on the source scans
plain = fit_detector(source)
print("score temperature without augmentation:", round(plain.score_temperature, 3))
report = score(plain)
print("target AP:", report["ap"], "Score:", report["score"])

# the same fit on a jitter-augmented copy
augmented = augment_batch(source, JitterRange.from_degrees(5.0), probability=0.5, seed=0, out_root=work / "aug")
jittered = fit_detector(augmented)
print("score temperature with augmentation:", round(jittered.score_temperature, 3))
report = score(jittered)
print("target AP:", report["ap"], "Score:", report["score"])
