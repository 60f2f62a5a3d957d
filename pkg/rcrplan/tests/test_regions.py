#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np
import pytest

from rcrplan.errors import ArtifactError
from rcrplan.errors import EmptyInputError
from rcrplan.models import CriticalityParams
from rcrplan.regions import Mixture
from rcrplan.regions import OccupancyGrid
from rcrplan.regions import _threshold
from rcrplan.regions import build_occupancy
from rcrplan.regions import collect_features
from rcrplan.regions import fit_gmm
from rcrplan.regions import label_components
from rcrplan.regions import learn_predictors
from rcrplan.regions import rcr_membership
from rcrplan.regions import rcr_sample
from rcrplan.regions import read_predictors
from rcrplan.regions import write_predictors

PAIR = ("gripper", "can")


@pytest.fixture(scope="module")
def hover_predictors(hover_demos):
    return learn_predictors(hover_demos, [PAIR], CriticalityParams())


# === occupancy ===


def test_occupancy_counts_trajectories_not_states():
    params = CriticalityParams(resolution=4)
    feats = {
        PAIR: [
            np.array([[0.0, 0.0, 1.0, 0.0]] * 5 + [[1.0, 1.0, 1.0, 0.0]]),
            np.array([[0.0, 0.0, 1.0, 0.0]]),
        ]
    }
    grid = build_occupancy(feats, params)[PAIR]
    assert grid.resolution == (4, 4, 1, 1)
    assert grid.n_trajectories == 2
    assert grid.fraction[0, 0, 0, 0] == 1.0
    assert grid.fraction[3, 3, 0, 0] == 0.5
    assert grid.fraction.sum() == 1.5


def test_occupancy_matches_recount():
    rng = np.random.default_rng(0)
    params = CriticalityParams(resolution=6)
    per_traj = [rng.uniform(-1, 1, size=(rng.integers(1, 30), 4)) for _ in range(10)]
    grid = build_occupancy({PAIR: per_traj}, params)[PAIR]
    counts = np.zeros(grid.resolution)
    for f in per_traj:
        for cell in {tuple(c) for c in grid.cell_of(f)}:
            counts[cell] += 1
    assert np.array_equal(grid.fraction, counts / len(per_traj))
    assert np.all(grid.lower < np.min(np.concatenate(per_traj), axis=0))


def test_occupancy_needs_trajectories():
    with pytest.raises(EmptyInputError):
        build_occupancy({PAIR: []}, CriticalityParams())


# === components ===


def _flood_fill(mask: np.ndarray) -> set[frozenset]:
    seen = np.zeros_like(mask, dtype=bool)
    parts = set()
    for start in zip(*np.nonzero(mask)):
        if seen[start]:
            continue
        stack, part = [start], set()
        seen[start] = True
        while stack:
            cell = stack.pop()
            part.add(tuple(int(c) for c in cell))
            for axis, d in itertools.product(range(mask.ndim), (-1, 1)):
                nb = list(cell)
                nb[axis] += d
                nb = tuple(nb)
                if 0 <= nb[axis] < mask.shape[axis] and mask[nb] and not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
        parts.add(frozenset(part))
    return parts


def _grid(fraction: np.ndarray) -> OccupancyGrid:
    d = fraction.ndim
    return OccupancyGrid(PAIR, np.zeros(d), np.ones(d), fraction.shape, fraction, 1)


def test_labeling_matches_flood_fill():
    rng = np.random.default_rng(5)
    for i in range(200):
        shape = (9, 9) if i % 2 else (5, 4, 6)
        mask = rng.uniform(size=shape) < 0.45
        comps = label_components(_grid(mask.astype(float)), 1.0)
        got = {
            frozenset(tuple(int(c) for c in cell) for cell in comp.cells)
            for comp in comps
        }
        assert got == _flood_fill(mask)
        assert [c.id for c in comps] == list(range(1, len(comps) + 1))


def test_diagonal_cells_are_separate_components():
    fraction = np.array([[1.0, 0.0], [0.0, 1.0]])
    comps = label_components(_grid(fraction), 0.6)
    assert len(comps) == 2
    assert [tuple(c.cells[0]) for c in comps] == [(0, 0), (1, 1)]


def test_threshold_above_every_cell():
    assert label_components(_grid(np.full((3, 3), 0.5)), 0.6) == []


# === mixtures ===


def _two_blobs(n: int = 2000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    means = np.array([[0.0, 0.0], [1.0, 1.0]])
    comp = rng.integers(0, 2, size=n)
    return means, means[comp] + rng.normal(0.0, 0.1, size=(n, 2))


def test_em_is_monotone():
    _, x = _two_blobs()
    for seed in range(5):
        mix = fit_gmm(x, 3, 1e-6, seed=seed)
        assert np.all(np.diff(mix.trace) >= -1e-7)


def test_em_recovers_means():
    truth, x = _two_blobs()
    mix = fit_gmm(x, 2, 1e-6, seed=1)
    errors = [
        max(np.linalg.norm(mix.means[list(p)] - truth, axis=1))
        for p in itertools.permutations(range(2))
    ]
    assert min(errors) < 0.05
    assert mix.weights.sum() == pytest.approx(1.0)


def test_em_respects_covariance_floor():
    _, x = _two_blobs(n=400)
    mix = fit_gmm(x, 2, 0.05, seed=0)
    for cov in mix.covs:
        assert np.linalg.eigvalsh(cov).min() >= 0.05 - 1e-12


def test_em_constant_samples():
    x = np.tile([0.3, -0.2, 1.0, 0.0], (20, 1))
    mix = fit_gmm(x, 2, 1e-6)
    assert mix.k == 1
    assert np.allclose(mix.means[0], x[0])


def test_em_needs_enough_samples():
    with pytest.raises(ValueError):
        fit_gmm(np.random.default_rng(0).normal(size=(5, 2)), 2, 1e-6)


def test_mixture_sample_mean():
    mix = Mixture(
        np.array([0.3, 0.7]),
        np.array([[0.0, 1.0], [2.0, -1.0]]),
        np.array([np.eye(2) * 0.04, np.eye(2) * 0.01]),
    )
    draws = mix.sample(np.random.default_rng(2), 100_000)
    mean = 0.3 * mix.means[0] + 0.7 * mix.means[1]
    stderr = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * stderr)


# === predictors ===


def test_hover_demos_give_one_region(hover_predictors):
    assert [p.component_id for p in hover_predictors[PAIR]] == [1]


def test_predictor_closure(hover_predictors):
    p = hover_predictors[PAIR][0]
    rng = np.random.default_rng(11)
    feats = rcr_sample(p, rng, 10_000)
    rate = np.mean(p.log_density(feats) >= p.eps)
    assert rate >= 1 - CriticalityParams().eps_quantile - 0.02
    # draws outside the region are redrawn
    assert rate == 1.0


def test_threshold_is_a_member_quantile():
    rng = np.random.default_rng(5)
    member = rng.normal(0.0, 0.1, size=(1000, 2))
    mix = fit_gmm(member, 1, 1e-6, seed=0)
    for q in (0.02, 0.1, 0.5):
        eps = _threshold(mix, member, q)
        below = np.mean(mix.log_density(member) < eps)
        assert below == pytest.approx(q, abs=2e-3)


def test_predictor_accepts_the_hover_offset(hover_predictors):
    p = hover_predictors[PAIR][0]
    assert rcr_membership(p, np.array([0.035, 0.0, 1.0, 0.0]))
    assert not rcr_membership(p, np.array([-0.1, 0.1, 1.0, 0.0]))


def test_samples_have_unit_direction(hover_predictors):
    feats = rcr_sample(hover_predictors[PAIR][0], np.random.default_rng(0), 50)
    assert np.allclose(np.hypot(feats[:, 2], feats[:, 3]), 1.0)


def test_failed_demos_are_skipped(hover_demos):
    failed = [replace(d, success=False) for d in hover_demos]
    assert collect_features(failed, [PAIR]) == {PAIR: []}
    feats = collect_features(failed, [PAIR], include_failed=True)
    assert len(feats[PAIR]) == len(hover_demos)


def test_learning_is_deterministic(hover_demos, hover_predictors):
    again = learn_predictors(hover_demos, [PAIR], CriticalityParams())
    a, b = again[PAIR][0], hover_predictors[PAIR][0]
    assert np.array_equal(a.mixture.means, b.mixture.means)
    assert a.eps == b.eps


def test_bundle_file(tmp_path, hover_predictors):
    path = tmp_path / "predictors.json"
    write_predictors(path, hover_predictors)
    loaded = read_predictors(path)
    p, q = loaded[PAIR][0], hover_predictors[PAIR][0]
    feat = np.array([0.035, 0.0, 1.0, 0.0])
    assert p.log_density(feat)[0] == pytest.approx(q.log_density(feat)[0])
    assert p.eps == q.eps


def test_malformed_bundle(tmp_path):
    path = tmp_path / "predictors.json"
    path.write_text('[{"pair": ["a", "b"]}]')
    with pytest.raises(ArtifactError):
        read_predictors(path)
