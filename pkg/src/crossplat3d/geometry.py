"""Rigid-transform math and oriented-box overlap primitives.

Frame convention: right-handed sensor frame, x forward, y left, z up.
Boxes are gravity aligned, so only their yaw is free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Clipping tolerances (metres / square metres).
VERTEX_MERGE_EPS = 1e-9
AREA_EPS = 1e-12


class ObjectClass(str, Enum):
    CAR = "Car"
    PEDESTRIAN = "Pedestrian"


CLASSES = (ObjectClass.CAR, ObjectClass.PEDESTRIAN)


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]; in-range values are returned unchanged."""
    if -math.pi < yaw <= math.pi:
        return yaw
    y = math.pi - math.fmod(math.pi - yaw, 2.0 * math.pi)
    if y <= -math.pi:
        y += 2.0 * math.pi
    elif y > math.pi:
        y -= 2.0 * math.pi
    return y


@dataclass(frozen=True)
class Box3D:
    """Yaw-oriented 3D box. ``dims`` is (length, width, height); length runs along yaw."""

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float
    cls: ObjectClass = ObjectClass.CAR
    score: float = 1.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims must have three components")
        if not all(math.isfinite(v) for v in center + dims + (self.yaw, self.score)):
            raise ValueError("box fields must be finite")
        if min(dims) <= 0.0:
            raise ValueError(f"box dims must be strictly positive, got {dims}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))
        object.__setattr__(self, "cls", ObjectClass(self.cls))
        object.__setattr__(self, "score", float(self.score))

    def replace(self, **changes) -> "Box3D":
        fields = dict(center=self.center, dims=self.dims, yaw=self.yaw, cls=self.cls, score=self.score)
        fields.update(changes)
        return Box3D(**fields)

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def z_range(self) -> tuple[float, float]:
        half = 0.5 * self.dims[2]
        return self.center[2] - half, self.center[2] + half

    def bev_corners(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape (4, 2)."""
        l, w = 0.5 * self.dims[0], 0.5 * self.dims[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[l, w], [-l, w], [-l, -w], [l, -w]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array(self.center[:2])

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        """Boolean mask of points (N, 3) lying inside the box."""
        xyz = np.asarray(xyz, dtype=np.float64)
        d = xyz[:, :3] - np.array(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx = c * d[:, 0] + s * d[:, 1]
        ly = -s * d[:, 0] + c * d[:, 1]
        half = np.array(self.dims) * 0.5
        return (np.abs(lx) <= half[0]) & (np.abs(ly) <= half[1]) & (np.abs(d[:, 2]) <= half[2])


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------

def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_jitter(roll_rad: float, pitch_rad: float) -> np.ndarray:
    """Composite tilt ``R = R_pitch @ R_roll`` about the sensor origin.

    Roll turns about the sensor x axis, pitch about the sensor y axis; the
    roll is applied to a point first.
    """
    if not (math.isfinite(roll_rad) and math.isfinite(pitch_rad)):
        raise ValueError("jitter angles must be finite")
    if abs(roll_rad) >= math.pi / 2 or abs(pitch_rad) >= math.pi / 2:
        raise ValueError("jitter angles must satisfy |angle| < pi/2")
    if roll_rad == 0.0 and pitch_rad == 0.0:
        return np.eye(3)
    return rot_y(pitch_rad) @ rot_x(roll_rad)


def is_rotation(R: np.ndarray, tol: float = 1e-10) -> bool:
    R = np.asarray(R, dtype=np.float64)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def rotate_points(points: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Apply ``R`` to the xyz columns of an (N, >=3) array; extra columns ride along."""
    points = np.asarray(points, dtype=np.float64)
    if not is_rotation(R, tol=1e-8):
        raise ValueError("R is not a proper rotation")
    out = points.copy()
    out[:, :3] = points[:, :3] @ np.asarray(R, dtype=np.float64).T
    return out


def transform_box_center(box: Box3D, R: np.ndarray) -> Box3D:
    """Rotate only the box center, leaving dims, yaw, class and score untouched."""
    c = np.asarray(R, dtype=np.float64) @ np.array(box.center)
    return Box3D(center=tuple(c), dims=box.dims, yaw=box.yaw, cls=box.cls, score=box.score)


# ---------------------------------------------------------------------------
# polygon clipping
# ---------------------------------------------------------------------------

def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _merge_close(pts: list) -> list:
    out = []
    for p in pts:
        if not out or math.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) > VERTEX_MERGE_EPS:
            out.append(p)
    while len(out) > 1 and math.hypot(out[0][0] - out[-1][0], out[0][1] - out[-1][1]) <= VERTEX_MERGE_EPS:
        out.pop()
    return out


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0.0:
                if s_prev < 0.0:
                    t = s_prev / (s_prev - s_cur)
                    output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                output.append(cur)
            elif s_prev >= 0.0:
                t = s_prev / (s_prev - s_cur)
                output.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, s_prev = cur, s_cur
        output = _merge_close(output)
    if len(output) < 3:
        return np.zeros((0, 2))
    return np.array(output)


def _bev_params(box: Box3D):
    return box.center[0], box.center[1], box.dims[0], box.dims[1], box.yaw


def bev_intersection(a: Box3D, b: Box3D) -> float:
    """Area of the overlap of the two yaw-rotated footprints."""
    ra = 0.5 * math.hypot(a.dims[0], a.dims[1])
    rb = 0.5 * math.hypot(b.dims[0], b.dims[1])
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    if _bev_params(a) == _bev_params(b):
        return a.dims[0] * a.dims[1]
    poly = clip_convex(a.bev_corners(), b.bev_corners())
    area = abs(polygon_area(poly))
    return area if area >= AREA_EPS else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection(a, b)
    if inter == 0.0:
        return 0.0
    area_a = a.dims[0] * a.dims[1]
    area_b = b.dims[0] * b.dims[1]
    if _bev_params(a) == _bev_params(b):
        return 1.0
    return min(1.0, inter / (area_a + area_b - inter))


def iou_3d(a: Box3D, b: Box3D) -> float:
    a0, a1 = a.z_range
    b0, b1 = b.z_range
    dz = min(a1, b1) - max(a0, b0)
    if dz <= 0.0:
        return 0.0
    inter_bev = bev_intersection(a, b)
    if inter_bev == 0.0:
        return 0.0
    if _bev_params(a) == _bev_params(b) and (a0, a1) == (b0, b1):
        return 1.0
    inter = inter_bev * dz
    return min(1.0, inter / (a.volume + b.volume - inter))


def nms_bev(boxes: list[Box3D], iou_threshold: float) -> list[Box3D]:
    """Greedy BEV non-maximum suppression.

    Boxes are visited by descending score, ties going to the lower input
    index; a box survives unless a previously kept box overlaps it with BEV
    IoU >= ``iou_threshold``.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[Box3D] = []
    for i in order:
        cand = boxes[i]
        if all(iou_bev(cand, k) < iou_threshold for k in kept):
            kept.append(cand)
    return kept
