#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import math

import numpy as np
import pytest

from rcrplan.geometry import Pose
from rcrplan.geometry import compose
from rcrplan.geometry import featurize
from rcrplan.geometry import invert
from rcrplan.geometry import normalize_angle
from rcrplan.geometry import pose_from_feature
from rcrplan.geometry import relative_features
from rcrplan.geometry import relative_pose


def test_relative_pose_quarter_turn():
    p = relative_pose(Pose(0, 0, math.pi / 2), Pose(0, 1, math.pi / 2))
    assert p.x == pytest.approx(1.0)
    assert p.y == pytest.approx(0.0, abs=1e-12)
    assert p.theta == pytest.approx(0.0)


@pytest.mark.parametrize("theta", [math.pi, -math.pi])
def test_normalize_angle_half_open(theta):
    assert normalize_angle(theta) == math.pi


def test_normalize_angle_range():
    for theta in np.linspace(-20, 20, 401):
        a = normalize_angle(theta)
        assert -math.pi < a <= math.pi
        assert math.cos(a) == pytest.approx(math.cos(theta))
        assert math.sin(a) == pytest.approx(math.sin(theta))


def test_pose_of_rejects_nan():
    with pytest.raises(ValueError):
        Pose.of(float("nan"), 0.0)


def test_compose_invert_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = Pose.of(*rng.uniform(-2, 2, size=2), rng.uniform(-4, 4))
        ident = compose(p, invert(p))
        assert np.allclose(ident, (0.0, 0.0, 0.0), atol=1e-12)


def test_compose_undoes_relative_pose():
    a, b = Pose(0.3, -0.2, 1.1), Pose(-0.5, 0.4, -2.0)
    back = compose(a, relative_pose(a, b))
    assert np.allclose(back, b, atol=1e-12)


def test_feature_inverse():
    p = Pose(0.1, -0.3, 2.5)
    assert np.allclose(pose_from_feature(featurize(p)), p)


def test_relative_features_match_matrix_composition():
    rng = np.random.default_rng(1)
    a = rng.uniform(-1, 1, size=(100, 3)) * [1, 1, math.pi]
    b = rng.uniform(-1, 1, size=(100, 3)) * [1, 1, math.pi]
    got = relative_features(a, b)
    for i in range(len(a)):
        c, s = math.cos(a[i, 2]), math.sin(a[i, 2])
        rot = np.array([[c, -s], [s, c]])
        d = rot.T @ (b[i, :2] - a[i, :2])
        dtheta = b[i, 2] - a[i, 2]
        expected = [d[0], d[1], math.cos(dtheta), math.sin(dtheta)]
        assert np.allclose(got[i], expected, atol=1e-9)
