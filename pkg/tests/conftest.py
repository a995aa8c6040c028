import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crossplat3d.geometry import Box3D, ObjectClass  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_box(rng, cls=None, score=None, spread=3.0):
    return Box3D(
        center=tuple(rng.uniform(-spread, spread, 3)),
        dims=tuple(rng.uniform(0.5, 4.0, 3)),
        yaw=float(rng.uniform(-math.pi, math.pi)),
        cls=cls if cls is not None else (ObjectClass.CAR if rng.random() < 0.5 else ObjectClass.PEDESTRIAN),
        score=float(rng.random()) if score is None else score,
    )


def cuboid_points(rng, center, dims, yaw, per_m2=200.0):
    """Surface samples on the four sides and top of an upright box."""
    l, w, h = dims
    pts = []
    for area, make in (
        (w * h, lambda n: np.c_[np.full(n, l / 2), rng.uniform(-w / 2, w / 2, n), rng.uniform(-h / 2, h / 2, n)]),
        (w * h, lambda n: np.c_[np.full(n, -l / 2), rng.uniform(-w / 2, w / 2, n), rng.uniform(-h / 2, h / 2, n)]),
        (l * h, lambda n: np.c_[rng.uniform(-l / 2, l / 2, n), np.full(n, w / 2), rng.uniform(-h / 2, h / 2, n)]),
        (l * h, lambda n: np.c_[rng.uniform(-l / 2, l / 2, n), np.full(n, -w / 2), rng.uniform(-h / 2, h / 2, n)]),
        (l * w, lambda n: np.c_[rng.uniform(-l / 2, l / 2, n), rng.uniform(-w / 2, w / 2, n), np.full(n, h / 2)]),
    ):
        pts.append(make(max(1, int(area * per_m2))))
    local = np.vstack(pts)
    c, s = math.cos(yaw), math.sin(yaw)
    xy = local[:, :2] @ np.array([[c, s], [-s, c]])
    return np.c_[xy + np.asarray(center[:2]), local[:, 2] + center[2]]


def flat_ground(rng, z=-1.7, radius=25.0, n=6000, noise=0.02):
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    az = rng.uniform(-math.pi, math.pi, n)
    return np.c_[r * np.cos(az), r * np.sin(az), z + rng.normal(0, noise, n)]


def with_intensity(xyz):
    return np.c_[xyz, np.full(len(xyz), 0.5)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
