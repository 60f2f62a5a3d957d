#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.regions

relational critical regions: occupancy grids over relative pose features,
criticality thresholding, connected components and gaussian mixtures

A predictor bundle is stored as a json array with one entry per type pair:

    [{"pair": [type_i, type_j],
      "components": [{"weights": [...], "means": [[...]],
                      "covs": [[[...]]], "eps": float}]}]

"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from functools import cached_property
from typing import Iterable
from typing import Mapping
from typing import Sequence
from typing import Tuple

import numpy as np
import orjson
import scipy.linalg
from scipy import ndimage
from scipy.special import logsumexp

from rcrplan.errors import ArtifactError
from rcrplan.errors import EmptyInputError
from rcrplan.geometry import FEATURE_DIM
from rcrplan.models import CriticalityParams
from rcrplan.state import Trajectory
from rcrplan.state import xi_transform

__all__ = [
    "OccupancyGrid",
    "Component",
    "Mixture",
    "RcrPredictor",
    "PredictorMap",
    "collect_features",
    "build_occupancy",
    "label_components",
    "fit_gmm",
    "learn_predictors",
    "rcr_membership",
    "rcr_sample",
    "read_predictors",
    "write_predictors",
    "predictors_to_json",
    "predictors_from_json",
]

_log = logging.getLogger(__name__)

TypePair = Tuple[str, str]

#: relative margin added to the observed bounding box on every side
BOUNDS_MARGIN = 0.05
#: half extent given to axes on which every observed feature is identical
_MIN_HALF_EXTENT = 1e-3
#: redraw rounds for mixture draws outside the region
SAMPLE_ROUNDS = 64


# === occupancy ==============================================================


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """per cell fraction of trajectories visiting the cell"""

    pair: TypePair
    lower: np.ndarray
    upper: np.ndarray
    resolution: tuple[int, ...]
    fraction: np.ndarray
    n_trajectories: int

    @property
    def widths(self) -> np.ndarray:
        return (self.upper - self.lower) / np.asarray(self.resolution)

    def cell_of(self, feats: np.ndarray, factor: int = 1) -> np.ndarray:
        """integer cell indices of (n, d) features, optionally on a finer grid"""
        res = np.asarray(self.resolution) * _axis_factor(self.resolution, factor)
        unit = (np.asarray(feats) - self.lower) / (self.upper - self.lower)
        idx = np.floor(unit * res)
        return np.clip(idx.astype(int), 0, res - 1)

    def cell_center(self, cells: np.ndarray) -> np.ndarray:
        return self.lower + (np.asarray(cells) + 0.5) * self.widths


def _axis_factor(resolution: Sequence[int], factor: int) -> np.ndarray:
    # degenerate axes stay a single cell at every resolution
    return np.array([factor if r > 1 else 1 for r in resolution])


def collect_features(
    demos: Iterable[Trajectory],
    type_pairs: Iterable[tuple[str, str]],
    include_failed: bool = False,
) -> dict[TypePair, list[np.ndarray]]:
    """per type pair, one (m, 4) array per trajectory pooling all instance pairs"""
    type_pairs = [tuple(p) for p in type_pairs]
    out: dict[TypePair, list[np.ndarray]] = {p: [] for p in type_pairs}
    for traj in demos:
        if not (traj.success or include_failed):
            continue
        types = traj.types()
        for tp in type_pairs:
            inst = [
                (a, b)
                for a in sorted(types)
                for b in sorted(types)
                if a != b and types[a] == tp[0] and types[b] == tp[1]
            ]
            if not inst:
                continue
            feats = xi_transform(traj, inst)
            out[tp].append(np.concatenate([feats[p] for p in inst]))
    return out


def build_occupancy(
    features: Mapping[TypePair, Sequence[np.ndarray]], params: CriticalityParams
) -> dict[TypePair, OccupancyGrid]:
    """visit fraction grids, one per type pair"""
    if not any(len(v) for v in features.values()):
        raise EmptyInputError("no successful trajectories to build occupancy from")
    grids = {}
    for pair, per_traj in features.items():
        per_traj = [
            np.asarray(f, dtype=float).reshape(-1, FEATURE_DIM) for f in per_traj
        ]
        per_traj = [f for f in per_traj if len(f)]
        if not per_traj:
            continue
        allf = np.concatenate(per_traj)
        lo, hi = allf.min(axis=0), allf.max(axis=0)
        span = hi - lo
        degenerate = span < 1e-9
        pad = np.where(degenerate, _MIN_HALF_EXTENT, span * BOUNDS_MARGIN)
        lower, upper = lo - pad, hi + pad
        resolution = tuple(1 if d else params.resolution for d in degenerate)
        counts = np.zeros(int(np.prod(resolution)), dtype=np.int64)
        grid = OccupancyGrid(pair, lower, upper, resolution, np.empty(0), len(per_traj))
        for f in per_traj:
            flat = np.ravel_multi_index(grid.cell_of(f).T, resolution)
            counts[np.unique(flat)] += 1
        fraction = (counts / len(per_traj)).reshape(resolution)
        grids[pair] = replace(grid, fraction=fraction)
        _log.debug(
            f"occupancy {pair}: {len(per_traj)} trajectories, "
            f"{int((counts > 0).sum())} visited cells"
        )
    return grids


# === components =============================================================


@dataclass(frozen=True, eq=False)
class Component:
    id: int
    cells: np.ndarray  # (m, d) member cell indices, lexicographically sorted

    def __len__(self) -> int:
        return len(self.cells)


def _label(mask: np.ndarray) -> list[np.ndarray]:
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    labels, n = ndimage.label(mask, structure=structure)
    blobs = []
    for k in range(1, n + 1):
        cells = np.argwhere(labels == k)
        blobs.append(cells[np.lexsort(cells.T[::-1])])
    blobs.sort(key=lambda c: tuple(c[0]))
    return blobs


def label_components(grid: OccupancyGrid, theta: float) -> list[Component]:
    """maximal face connected sets of cells with visit fraction >= theta"""
    if grid.fraction.size == 0:
        return []
    blobs = _label(grid.fraction >= theta)
    return [Component(i, cells) for i, cells in enumerate(blobs, start=1)]


def _fine_blob_count(
    grid: OccupancyGrid,
    comp: Component,
    per_traj: Sequence[np.ndarray],
    params: CriticalityParams,
) -> int:
    """number of critical sub blobs of comp at fine_factor times the resolution"""
    factor = _axis_factor(grid.resolution, params.fine_factor)
    member = np.zeros(grid.resolution, dtype=bool)
    member[tuple(comp.cells.T)] = True
    origin = comp.cells.min(axis=0) * factor
    shape = (comp.cells.max(axis=0) + 1) * factor - origin
    counts = np.zeros(tuple(shape), dtype=np.int64)
    for f in per_traj:
        coarse = grid.cell_of(f)
        keep = member[tuple(coarse.T)]
        if not keep.any():
            continue
        fine = np.clip(grid.cell_of(f[keep], params.fine_factor) - origin, 0, shape - 1)
        flat = np.unique(np.ravel_multi_index(fine.T, counts.shape))
        counts.flat[flat] += 1
    k = len(_label(counts / grid.n_trajectories >= params.theta))
    return max(1, k)


# === gaussian mixtures ======================================================


@dataclass(frozen=True, eq=False)
class Mixture:
    """gaussian mixture with full covariances"""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    #: total log likelihood after every em iteration, empty when not fitted
    trace: tuple = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return len(self.weights)

    @cached_property
    def chols(self) -> list[np.ndarray]:
        return _cholesky(self.covs)

    def component_log_density(self, x: np.ndarray) -> np.ndarray:
        """(n, k) log of weight_k * N(x | mean_k, cov_k)"""
        x = np.atleast_2d(x)
        return _weighted_log_probs(x, self.weights, self.means, self.chols)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_density(x), axis=1)

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        comps = rng.choice(self.k, size=n, p=self.weights)
        out = np.empty((n, self.means.shape[1]))
        for j in range(self.k):
            sel = comps == j
            if sel.any():
                out[sel] = rng.multivariate_normal(
                    self.means[j], self.covs[j], size=int(sel.sum()), method="cholesky"
                )
        return out

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


def _cholesky(covs: np.ndarray) -> list[np.ndarray]:
    return [scipy.linalg.cholesky(c, lower=True) for c in covs]


def _weighted_log_probs(x, weights, means, chols) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, len(weights)))
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    for j in range(len(weights)):
        chol = chols[j]
        sol = scipy.linalg.solve_triangular(chol, (x - means[j]).T, lower=True)
        out[:, j] = (
            log_w[j]
            - 0.5 * d * math.log(2 * math.pi)
            - np.sum(np.log(np.diag(chol)))
            - 0.5 * np.sum(sol**2, axis=0)
        )
    return out


def _floor_cov(cov: np.ndarray, reg: float) -> np.ndarray:
    """closest covariance with every eigenvalue >= reg (eigenvalue clipping)"""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, reg)
    return (vecs * vals) @ vecs.T


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def fit_gmm(
    samples: np.ndarray,
    k: int,
    reg: float,
    *,
    seed: int = 0,
    max_iter: int = 50,
    tol: float = 1e-9,
) -> Mixture:
    """em fit of a k component mixture

    Covariances are constrained to eigenvalues >= reg; the m-step solves the
    constrained problem exactly so the log likelihood never decreases.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"samples must be 2d, got shape: {x.shape!r}")
    n, d = x.shape
    if k < 1:
        raise ValueError(f"k must be >= 1, got: {k}")
    if np.all(np.ptp(x, axis=0) == 0):
        return Mixture(np.ones(1), x[:1].copy(), reg * np.eye(d)[None], trace=())
    if n < 4 * k:
        raise ValueError(f"need >= {4 * k} samples for k={k}, got: {n}")

    rng = np.random.default_rng(seed)
    means = _kmeanspp(x, k, rng)
    nearest = np.argmin(((x[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    weights = np.empty(k)
    covs = np.empty((k, d, d))
    glob = _floor_cov(np.cov(x.T, bias=True).reshape(d, d), reg)
    for j in range(k):
        members = x[nearest == j]
        weights[j] = max(len(members), 1)
        if len(members) > d:
            covs[j] = _floor_cov(np.cov(members.T, bias=True), reg)
        else:
            covs[j] = glob
    weights /= weights.sum()

    trace = []
    for it in range(max_iter):
        log_p = _weighted_log_probs(x, weights, means, _cholesky(covs))
        log_norm = logsumexp(log_p, axis=1, keepdims=True)
        trace.append(float(log_norm.sum()))
        if it and trace[-1] - trace[-2] < tol:
            break
        resp = np.exp(log_p - log_norm)
        nk = resp.sum(axis=0)
        for j in range(k):
            if nk[j] <= 1e-12:
                continue
            means[j] = resp[:, j] @ x / nk[j]
            diff = x - means[j]
            covs[j] = _floor_cov((resp[:, j, None] * diff).T @ diff / nk[j], reg)
        weights = nk / nk.sum()
    _log.debug(f"em k={k} n={n}: {len(trace)} iterations, loglik {trace[-1]:.6g}")
    return Mixture(weights, means, covs, trace=tuple(trace))


# === predictors =============================================================


@dataclass(frozen=True, eq=False)
class RcrPredictor:
    """classifier and generative sampler for one critical region"""

    pair: TypePair
    component_id: int
    mixture: Mixture
    eps: float

    def log_density(self, feat: np.ndarray) -> np.ndarray:
        return self.mixture.log_density(np.atleast_2d(feat))

    def to_dict(self) -> dict:
        return {**self.mixture.to_dict(), "eps": self.eps}


PredictorMap = Mapping[TypePair, Sequence[RcrPredictor]]


def rcr_membership(p: RcrPredictor, feat: np.ndarray) -> bool:
    """is the feature inside the region"""
    return bool(p.log_density(feat)[0] >= p.eps)


def _renormalize(feats: np.ndarray) -> np.ndarray:
    feats = np.array(feats, dtype=float)
    norm = np.hypot(feats[:, 2], feats[:, 3])
    zero = norm < 1e-12
    feats[zero, 2], feats[zero, 3], norm[zero] = 1.0, 0.0, 1.0
    feats[:, 2:4] /= norm[:, None]
    return feats


def rcr_sample(
    p: RcrPredictor, rng: np.random.Generator, n: int | None = None
) -> np.ndarray:
    """draw a feature, or n features, with a unit (cos, sin) direction

    Mixture draws that fall below the membership threshold are redrawn for
    up to ``SAMPLE_ROUNDS`` rounds, so samples lie inside the region.
    """
    feats = _renormalize(p.mixture.sample(rng, 1 if n is None else n))
    for _ in range(SAMPLE_ROUNDS):
        outside = p.log_density(feats) < p.eps
        if not outside.any():
            break
        feats[outside] = _renormalize(p.mixture.sample(rng, int(outside.sum())))
    return feats[0] if n is None else feats


def _member_samples(
    grid: OccupancyGrid,
    comp: Component,
    params: CriticalityParams,
    rng: np.random.Generator,
) -> np.ndarray:
    centers = grid.cell_center(comp.cells)
    half = params.cell_spread * grid.widths
    u = rng.uniform(-1.0, 1.0, size=(len(centers), params.samples_per_cell, len(half)))
    return (centers[:, None, :] + u * half).reshape(-1, len(half))


def _threshold(mix: Mixture, member: np.ndarray, q: float) -> float:
    """q quantile of the member sample log likelihoods"""
    return float(np.quantile(mix.log_density(member), q))


def learn_predictors(
    demos: Sequence[Trajectory],
    type_pairs: Iterable[tuple[str, str]],
    params: CriticalityParams,
) -> dict[TypePair, list[RcrPredictor]]:
    """occupancy, components and one fitted mixture per component, per type pair"""
    features = collect_features(demos, type_pairs, params.include_failed)
    grids = build_occupancy(features, params)
    out: dict[TypePair, list[RcrPredictor]] = {}
    for pair, per_traj in features.items():
        out[pair] = []
        if pair not in grids:
            continue
        grid = grids[pair]
        for comp in label_components(grid, params.theta):
            seq = np.random.SeedSequence([params.seed, len(out), comp.id])
            seed = int(seq.generate_state(1)[0])
            rng = np.random.default_rng(seed)
            k = _fine_blob_count(grid, comp, per_traj, params)
            samples = _member_samples(grid, comp, params, rng)
            k = min(k, max(1, len(samples) // 4))
            mix = fit_gmm(
                samples,
                k,
                params.regularization,
                seed=seed,
                max_iter=params.em_iters,
                tol=params.em_tol,
            )
            eps = _threshold(mix, samples, params.eps_quantile)
            out[pair].append(RcrPredictor(pair, comp.id, mix, eps))
        _log.info(f"learned {len(out[pair])} predictors for {pair}")
    return out


# === bundle io ==============================================================


def predictors_to_json(predictors: PredictorMap) -> list[dict]:
    return [
        {"pair": list(pair), "components": [p.to_dict() for p in preds]}
        for pair, preds in predictors.items()
    ]


def predictors_from_json(data: Sequence[Mapping]) -> dict[TypePair, list[RcrPredictor]]:
    out = {}
    for entry in data:
        pair = tuple(entry["pair"])
        preds = []
        for i, c in enumerate(entry["components"], start=1):
            mix = Mixture(
                np.asarray(c["weights"], dtype=float),
                np.asarray(c["means"], dtype=float),
                np.asarray(c["covs"], dtype=float),
            )
            preds.append(RcrPredictor(pair, i, mix, float(c["eps"])))
        out[pair] = preds
    return out


def write_predictors(path: str | os.PathLike, predictors: PredictorMap) -> None:
    with open(path, "wb") as f:
        data = predictors_to_json(predictors)
        f.write(orjson.dumps(data, option=orjson.OPT_INDENT_2))


def read_predictors(path: str | os.PathLike) -> dict[TypePair, list[RcrPredictor]]:
    try:
        with open(path, "rb") as f:
            return predictors_from_json(orjson.loads(f.read()))
    except OSError as err:
        raise ArtifactError(
            f"cannot read predictors: {err}", path=os.fspath(path)
        ) from err
    except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise ArtifactError(
            f"malformed predictor bundle: {err}", path=os.fspath(path)
        ) from err
