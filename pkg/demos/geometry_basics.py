"""
Oriented boxes, overlap and suppression
=======================================

Boxes are upright cuboids with a heading angle. Overlap is measured on
the ground plane (BEV) or in full 3D, and greedy NMS keeps the best of
each overlapping group.
"""
import math

import numpy as np

from crossplat3d import Box3D, ObjectClass, iou_3d, iou_bev, nms_bev, rotation_from_jitter

# two 2 x 2 squares shifted by 1 m share a third of their union
a = Box3D((0.0, 0.0, 0.0), (2.0, 2.0, 1.0), 0.0)
b = Box3D((1.0, 0.0, 0.0), (2.0, 2.0, 1.0), 0.0)
print("BEV IoU of shifted squares:", iou_bev(a, b))

# lifting one box by half its height halves the 3D overlap
lifted = b.replace(center=(1.0, 0.0, 0.5))
print("3D IoU after lifting:", round(iou_3d(a, lifted), 4))

# headings matter: a rotated car overlaps its axis-aligned twin less
car = Box3D((10.0, 2.0, -0.9), (4.0, 1.7, 1.6), 0.0, ObjectClass.CAR)
for deg in (0, 15, 45, 90):
    turned = car.replace(yaw=math.radians(deg))
    print(f"  yaw {deg:2d} deg -> IoU {iou_bev(car, turned):.3f}")

# NMS over a cluster of noisy duplicates
rng = np.random.default_rng(0)
dups = [car.replace(center=tuple(np.array(car.center) + rng.normal(0, 0.3, 3)), score=float(s))
        for s in rng.uniform(0.3, 0.9, 6)]
kept = nms_bev(dups + [car.replace(center=(30.0, 0.0, -0.9), score=0.5)], 0.3)
print("NMS keeps", len(kept), "of", len(dups) + 1, "boxes; scores", [round(k.score, 2) for k in kept])

# the tilt rotation used for sensor jitter: roll about x, then pitch about y
R = rotation_from_jitter(math.radians(2.0), math.radians(-3.0))
print("tilt rotation is orthonormal:", np.allclose(R.T @ R, np.eye(3)))
print("forward axis after a -3 deg pitch:", np.round(R @ [1.0, 0.0, 0.0], 4))
