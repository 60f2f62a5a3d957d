#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.models

Configuration and report models for worlds, demonstrations, learning,
refinement and pipeline runs.

"""
from __future__ import annotations

import enum
import math
import sys
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

from pydantic import BaseModel
from pydantic import Extra
from pydantic import Field
from pydantic import root_validator
from pydantic import validator

if sys.version_info >= (3, 10):
    from typing import TypeAlias
else:
    from typing_extensions import TypeAlias

__all__ = [
    "Domain",
    "Geometry",
    "WorldConfig",
    "DemoScript",
    "CriticalityParams",
    "RefinementBudget",
    "TaskSpec",
    "RunManifest",
    "Metrics",
    "SolveReport",
]

Extent: TypeAlias = Tuple[float, float, float, float]
Vec2: TypeAlias = Tuple[float, float]
Band: TypeAlias = Tuple[float, float]


class _BaseModel(BaseModel):
    """rcrplan basemodel"""

    class Config:
        extra = Extra.forbid
        allow_population_by_field_name = True


class Domain(str, enum.Enum):
    PACKING = "packing"
    CAFE = "cafe"


class Geometry(_BaseModel):
    """planar geometry of a world, lengths in meters, angles in radians"""

    table_center: Vec2 = (0.0, 0.0)
    table_size: Vec2 = (0.8, 0.5)
    box_size: Vec2 = (0.05, 0.18)
    surface_size: Vec2 = (0.3, 0.2)
    surface_centers: List[Vec2] = [(-0.5, 0.5), (0.0, 0.5), (0.5, 0.5)]
    freight_size: Vec2 = (0.16, 0.16)
    can_radius: float = Field(0.02, gt=0)
    gripper_radius: float = Field(0.008, gt=0)
    grasp_band: Band = (0.02, 0.05)
    #: distance gripper center -> can center when grasping
    standoff: float = Field(0.035, gt=0)
    #: distance range of the free waypoints behind a grasp pose
    approach_band: Band = (0.05, 0.12)
    #: gripper orientation offset used while approaching / retreating
    misalign: float = 0.05
    #: radius of the arc of waypoints in front of a placement target
    ring_radius: float = Field(0.08, gt=0)
    ring_half_angle: float = Field(math.pi / 4, ge=0)
    retreat_radius: float = Field(0.15, gt=0)
    #: gripper pose in the freight frame when tucked
    tuck_offset: Vec2 = (0.0, 0.1)
    #: freight pose in the surface frame when docked
    dock_offset: Vec2 = (0.0, -0.34)
    step_cap: float = Field(0.01, gt=0)
    rot_cap: float = Field(0.05, gt=0)
    #: sampling extents (xmin, xmax, ymin, ymax) for initial placements
    can_region: Extent = (-0.22, -0.06, -0.15, 0.15)
    box_region: Extent = (0.06, 0.18, -0.05, 0.05)
    gripper_region: Extent = (-0.38, -0.3, -0.15, 0.15)
    freight_region: Extent = (-0.7, 0.7, -0.25, -0.15)
    #: minimum center distance between initially placed cans
    min_separation: float = Field(0.07, gt=0)

    @validator("grasp_band", "approach_band")
    def _band_ordered(cls, v):
        r_min, r_max = v
        if not 0 <= r_min < r_max:
            raise ValueError(f"band must satisfy 0 <= r_min < r_max, got: {v!r}")
        return v

    @root_validator(skip_on_failure=True)
    def _standoff_in_band(cls, values):
        r_min, r_max = values["grasp_band"]
        if not r_min <= values["standoff"] <= r_max:
            raise ValueError("standoff must lie inside the grasp band")
        return values

    def box_capacity(self) -> int:
        """number of non-overlapping cans that fit entirely inside the box

        Can centers live in a (w - 2r) x (h - 2r) rectangle and keep 2r apart.
        Strips narrower than sqrt(3) r hold a zigzag column, which is optimal;
        wider boxes report the square grid count, a lower bound.
        """
        r = self.can_radius
        u, v = sorted(s - 2.0 * r for s in self.box_size)
        if u < 0:
            return 0
        d = 2.0 * r
        if u < math.sqrt(3) / 2 * d:
            return int(math.floor(v / math.sqrt(d * d - u * u) + 1e-9)) + 1
        cols = int(math.floor(u / d + 1e-9)) + 1
        rows = int(math.floor(v / d + 1e-9)) + 1
        return cols * rows


class WorldConfig(_BaseModel):
    """world instantiation parameters"""

    domain: Domain = Domain.PACKING
    counts: Dict[str, int] = {"can": 1}
    geometry: Geometry = Geometry()
    type_pairs: List[Tuple[str, str]] = [("gripper", "can"), ("can", "surface")]
    agent_types: List[str] = ["gripper"]
    #: types living on the floor layer; they only collide with each other
    floor_types: List[str] = []
    #: cafe: index of the surface holding the cans initially / the target
    source_surface: int = 0
    target_surface: int = 2
    rng_seed: int = 0

    @validator("counts")
    def _counts_nonnegative(cls, v):
        for key, value in v.items():
            if value < 0:
                raise ValueError(f"count for {key!r} must be >= 0, got: {value}")
        return v

    @classmethod
    def packing(cls, cans: int = 1, rng_seed: int = 0, **kwargs) -> WorldConfig:
        """single gripper, a table, a small box and `cans` cans"""
        return cls(
            domain=Domain.PACKING, counts={"can": cans}, rng_seed=rng_seed, **kwargs
        )

    @classmethod
    def cafe(cls, cans: int = 1, rng_seed: int = 0, **kwargs) -> WorldConfig:
        """mobile base with a gripper serving cans between three surfaces"""
        kwargs.setdefault(
            "type_pairs",
            [
                ("freight", "surface"),
                ("gripper", "can"),
                ("freight", "gripper"),
                ("can", "surface"),
                ("freight", "can"),
            ],
        )
        kwargs.setdefault("agent_types", ["freight", "gripper"])
        kwargs.setdefault("floor_types", ["freight"])
        return cls(
            domain=Domain.CAFE, counts={"can": cans}, rng_seed=rng_seed, **kwargs
        )


class DemoScript(_BaseModel):
    """scripted demonstration policy"""

    policy: str = "pick-place"
    noise_xy: float = Field(0.01, ge=0)
    noise_theta: float = Field(0.0, ge=0)
    failure_rate: float = Field(0.0, ge=0, le=1)


class CriticalityParams(_BaseModel):
    """relational critical region learning parameters"""

    theta: float = Field(0.6, gt=0, le=1)
    resolution: int = Field(24, ge=4)
    fine_factor: int = Field(2, ge=1)
    eps_quantile: float = Field(0.02, ge=0, lt=1)
    regularization: float = Field(1e-6, gt=0)
    #: uniform samples drawn per member cell for the mixture fit
    samples_per_cell: int = Field(64, ge=1)
    #: half-width of the sampling box around a cell center, in cell widths
    cell_spread: float = Field(0.75, gt=0)
    em_iters: int = Field(50, ge=1)
    em_tol: float = Field(1e-9, ge=0)
    seed: int = 0
    include_failed: bool = False


class RefinementBudget(_BaseModel):
    """budgets of the interleaved refinement loop"""

    samples: int = Field(50, ge=1)
    restarts: int = Field(5, ge=1)
    k: int = Field(10, ge=1)
    max_level: int = Field(2, ge=0)
    node_budget: int = Field(1_000_000, ge=1)
    seed: int = 0


class TaskSpec(_BaseModel):
    """serializable test task: a world and a goal over invented relations"""

    task_id: str
    world: WorldConfig
    goal: List[Tuple[str, ...]]
    check_geometry: bool = True
    horizon: int = Field(20_000, gt=0)


class RunManifest(_BaseModel):
    """files produced by a pipeline run"""

    run_id: str
    config_paths: Dict[str, str] = {}
    seeds: Dict[str, int] = {}
    artifacts: Dict[str, str] = {}


class Metrics(_BaseModel):
    success_rate: float
    mean_plan_length: Optional[float]
    mean_refine_samples: Optional[float]
    generalization_factor: Optional[float]
    wall_ms: float


class SolveReport(_BaseModel):
    """outcome of one solve attempt"""

    task_id: str
    success: bool
    level: Optional[int] = None
    plan: List[Tuple[str, ...]] = []
    samples: int = 0
    primitive_steps: int = 0
    #: failure class and step per "level:plan index", or per level without plans
    failures: Dict[str, str] = {}
    wall_ms: float = 0.0
