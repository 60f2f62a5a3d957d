#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.geometry

planar SE(2) pose algebra and the relative-pose featurization

"""
from __future__ import annotations

import math
from typing import NamedTuple
from typing import Sequence

import numpy as np

__all__ = [
    "Pose",
    "FEATURE_DIM",
    "normalize_angle",
    "compose",
    "invert",
    "relative_pose",
    "featurize",
    "pose_from_feature",
    "rotation",
    "relative_features",
]

FEATURE_DIM = 4
_TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """wrap an angle to (-pi, pi]"""
    a = math.remainder(theta, _TWO_PI)
    if a <= -math.pi:
        a += _TWO_PI
    return a


class Pose(NamedTuple):
    """planar pose: x, y in meters and theta in radians"""

    x: float
    y: float
    theta: float

    @classmethod
    def of(cls, x: float, y: float, theta: float = 0.0) -> Pose:
        """construct with a normalized angle and a finiteness check"""
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(theta)):
            raise ValueError(f"pose fields must be finite, got: {(x, y, theta)!r}")
        return cls(float(x), float(y), normalize_angle(float(theta)))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.theta]


def rotation(theta: float) -> np.ndarray:
    """2x2 rotation matrix"""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose(a: Pose, b: Pose) -> Pose:
    """pose b given in the frame of a, expressed in the world frame"""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        normalize_angle(a.theta + b.theta),
    )


def invert(p: Pose) -> Pose:
    """inverse transform: compose(p, invert(p)) is the identity"""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose(-c * p.x - s * p.y, s * p.x - c * p.y, normalize_angle(-p.theta))


def relative_pose(a: Pose, b: Pose) -> Pose:
    """pose of b expressed in the frame of a"""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose(c * dx + s * dy, -s * dx + c * dy, normalize_angle(b.theta - a.theta))


def featurize(p: Pose) -> np.ndarray:
    """(dx, dy, cos dtheta, sin dtheta)"""
    return np.array([p.x, p.y, math.cos(p.theta), math.sin(p.theta)])


def pose_from_feature(f: Sequence[float]) -> Pose:
    """inverse of featurize; the angle is read off the (cos, sin) direction"""
    return Pose(float(f[0]), float(f[1]), normalize_angle(math.atan2(f[3], f[2])))


def relative_features(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """vectorized featurize(relative_pose(a_i, b_i)) for (n, 3) pose arrays"""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    # R(-theta_a) @ (b - a), written out per row
    rot = np.stack([np.stack([c, s], axis=-1), np.stack([-s, c], axis=-1)], axis=1)
    d = np.einsum("nij,nj->ni", rot, b[:, :2] - a[:, :2])
    dtheta = b[:, 2] - a[:, 2]
    return np.column_stack([d, np.cos(dtheta), np.sin(dtheta)])
