"""Planning scenarios: workspace, obstacles, target region, tissue map.

A scenario holds the in-body pose where backward planning starts, the
insertion-site target ball (orientation-free), the workspace box, obstacles
(spheres, axis-aligned boxes, optional voxel occupancy grid), and tissue
parameters with optional box-shaped regional overrides. Everything is
immutable after loading; all queries are read-only.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .forces import TissueParams
from .kinematics import ArcSegment, NeedlePath, Pose, arc_positions, path_pose_at, pose_from_dict, segment_sample_s


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario input; message names the field."""


# ---------------------------------------------------------------------------
# Geometry containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box; used for workspace bounds, obstacles, overrides."""

    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min_corner, dtype=float).reshape(3)
        hi = np.array(self.max_corner, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"box min {lo.tolist()} must be strictly below max {hi.tolist()}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(p >= self.min_corner) and np.all(p <= self.max_corner))

    def contains_many(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=1)


@dataclass(frozen=True)
class InsertionRegion:
    """Insertion-site target: a closed ball, unconstrained in orientation."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(3)
        if not np.all(np.isfinite(c)) or not math.isfinite(self.radius):
            raise ValueError("target region must be finite")
        if self.radius <= 0.0:
            raise ValueError(f"target radius must be > 0, got {self.radius}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)


def in_target(region: InsertionRegion, p: np.ndarray) -> bool:
    """Closed-ball membership; points exactly on the boundary count."""
    return bool(np.linalg.norm(np.asarray(p, dtype=float) - region.center) <= region.radius)


# ---------------------------------------------------------------------------
# Voxel occupancy grids
# ---------------------------------------------------------------------------

VOXEL_MAGIC = b"NVOX"
_VOXEL_HEADER = struct.Struct("<4s3I3dd")


class VoxelGrid:
    """Binary occupancy grid. occupancy has shape (nx, ny, nz), C-order; the
    center of cell (i, j, k) is origin + (i+0.5, j+0.5, k+0.5)*spacing."""

    def __init__(self, origin: np.ndarray, spacing: float, occupancy: np.ndarray):
        origin = np.array(origin, dtype=float).reshape(3)
        if not np.all(np.isfinite(origin)) or not math.isfinite(spacing):
            raise ValueError("voxel grid origin and spacing must be finite")
        if spacing <= 0.0:
            raise ValueError(f"voxel spacing must be > 0, got {spacing}")
        occupancy = np.asarray(occupancy, dtype=bool)
        if occupancy.ndim != 3:
            raise ValueError("voxel occupancy must be a 3-d array")
        origin.setflags(write=False)
        occupancy = occupancy.copy()
        occupancy.setflags(write=False)
        self.origin = origin
        self.spacing = float(spacing)
        self.occupancy = occupancy

    @property
    def dimensions(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    def occupied_centers(self) -> np.ndarray:
        idx = np.argwhere(self.occupancy)
        return self.origin + (idx + 0.5) * self.spacing


def save_voxel_grid(grid: VoxelGrid, path) -> None:
    nx, ny, nz = grid.dimensions
    header = _VOXEL_HEADER.pack(VOXEL_MAGIC, nx, ny, nz, *grid.origin, grid.spacing)
    bits = np.packbits(grid.occupancy.reshape(-1).astype(np.uint8))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def load_voxel_grid(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _VOXEL_HEADER.size:
        raise ScenarioError(f"voxel grid {path}: truncated header")
    magic, nx, ny, nz, ox, oy, oz, spacing = _VOXEL_HEADER.unpack_from(raw)
    if magic != VOXEL_MAGIC:
        raise ScenarioError(f"voxel grid {path}: bad magic {magic!r}")
    count = nx * ny * nz
    body = np.frombuffer(raw, dtype=np.uint8, offset=_VOXEL_HEADER.size)
    if body.size != (count + 7) // 8:
        raise ScenarioError(f"voxel grid {path}: expected {(count + 7) // 8} payload bytes, got {body.size}")
    occ = np.unpackbits(body, count=count).astype(bool).reshape(nx, ny, nz)
    try:
        return VoxelGrid((ox, oy, oz), spacing, occ)
    except ValueError as exc:
        raise ScenarioError(f"voxel grid {path}: {exc}") from None


# ---------------------------------------------------------------------------
# Obstacles and clearance
# ---------------------------------------------------------------------------

class ObstacleSet:
    """Immutable obstacle collection with vectorized clearance queries."""

    def __init__(self, spheres=(), boxes=(), voxel_grid: Optional[VoxelGrid] = None):
        sph = []
        for i, (center, radius) in enumerate(spheres):
            c = np.array(center, dtype=float).reshape(3)
            r = float(radius)
            if not np.all(np.isfinite(c)) or not math.isfinite(r) or r <= 0.0:
                raise ValueError(f"sphere {i}: center must be finite and radius > 0")
            sph.append((c, r))
        self.spheres = tuple(sph)
        self.boxes = tuple(b if isinstance(b, Box) else Box(*b) for b in boxes)
        self.voxel_grid = voxel_grid
        if sph:
            self._sphere_centers = np.array([c for c, _ in sph])
            self._sphere_radii = np.array([r for _, r in sph])
        else:
            self._sphere_centers = None
            self._sphere_radii = None
        if self.boxes:
            self._box_mins = np.array([b.min_corner for b in self.boxes])
            self._box_maxs = np.array([b.max_corner for b in self.boxes])
        else:
            self._box_mins = None
            self._box_maxs = None
        # distance to an occupied cell is measured to its center, then
        # shrunk by the half diagonal so the whole cell is covered
        self._voxel_tree = None
        self._voxel_margin = 0.0
        if voxel_grid is not None:
            centers = voxel_grid.occupied_centers()
            if centers.shape[0]:
                self._voxel_tree = cKDTree(centers)
                self._voxel_margin = voxel_grid.spacing * math.sqrt(3.0) / 2.0

    def is_empty(self) -> bool:
        return not self.spheres and not self.boxes and self._voxel_tree is None


def points_clearance(obstacles: ObstacleSet, pts: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest obstacle surface.

    Negative inside an obstacle; +inf for an empty obstacle set. Voxel cells
    are covered conservatively: distance to the nearest occupied center minus
    half the cell diagonal.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    out = np.full(pts.shape[0], math.inf)
    if obstacles._sphere_centers is not None:
        d = np.linalg.norm(pts[:, None, :] - obstacles._sphere_centers[None, :, :], axis=2)
        out = np.minimum(out, (d - obstacles._sphere_radii[None, :]).min(axis=1))
    if obstacles._box_mins is not None:
        q = np.maximum(
            obstacles._box_mins[None, :, :] - pts[:, None, :],
            pts[:, None, :] - obstacles._box_maxs[None, :, :],
        )
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=2)
        inside = np.minimum(q.max(axis=2), 0.0)
        out = np.minimum(out, (outside + inside).min(axis=1))
    if obstacles._voxel_tree is not None:
        d, _ = obstacles._voxel_tree.query(pts)
        out = np.minimum(out, d - obstacles._voxel_margin)
    return out


def point_clearance(obstacles: ObstacleSet, p: np.ndarray) -> float:
    return float(points_clearance(obstacles, np.asarray(p, dtype=float).reshape(1, 3))[0])


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    start_pose: Pose
    target_region: InsertionRegion
    obstacles: ObstacleSet
    bounds: Box
    tissue: TissueParams
    tissue_overrides: tuple = ()  # (Box, TissueParams), first listed wins
    needle_radius: float = 0.001
    kappa_max: float = 20.0

    def __post_init__(self):
        if not math.isfinite(self.needle_radius) or self.needle_radius < 0.0:
            raise ScenarioError(f"needle_radius must be >= 0, got {self.needle_radius}")
        if not math.isfinite(self.kappa_max) or self.kappa_max <= 0.0:
            raise ScenarioError(f"kappa_max must be > 0, got {self.kappa_max}")
        if not self.bounds.contains(self.start_pose.position):
            raise ScenarioError("start_pose: position outside workspace bounds")
        if point_clearance(self.obstacles, self.start_pose.position) < self.needle_radius:
            raise ScenarioError("start_pose: position collides with an obstacle at needle_radius")
        if not self.bounds.contains(self.target_region.center):
            raise ScenarioError("target: center outside workspace bounds")


def segment_collision_free(
    scenario: Scenario, start: Pose, seg: ArcSegment, check_resolution: float
) -> bool:
    """True iff every arc sample at the given resolution (endpoints always
    included) stays inside the workspace box with obstacle clearance of at
    least needle_radius. Sampled, not exact; resolution controls conservatism.
    """
    if check_resolution <= 0.0:
        raise ValueError(f"check_resolution must be > 0, got {check_resolution}")
    svals = segment_sample_s(seg.length, check_resolution)
    pts = arc_positions(start, seg, svals)
    if not np.all(np.isfinite(pts)):
        return False
    if not np.all(scenario.bounds.contains_many(pts)):
        return False
    if scenario.obstacles.is_empty():
        return True
    return bool(np.all(points_clearance(scenario.obstacles, pts) >= scenario.needle_radius))


def tissue_params_at(scenario: Scenario, p: np.ndarray) -> TissueParams:
    """Tissue parameters at a point: first override box containing it wins,
    else the homogeneous default. Override boxes are closed."""
    p = np.asarray(p, dtype=float)
    for box, params in scenario.tissue_overrides:
        if box.contains(p):
            return params
    return scenario.tissue


def segment_params_for_path(scenario: Scenario, path: NeedlePath) -> list[TissueParams]:
    """Per-segment tissue parameters, looked up at each segment midpoint.

    Piecewise-constant coefficients keep the closed-form force solution
    applicable in heterogeneous tissue.
    """
    out = []
    for i in range(len(path.segments)):
        mid = 0.5 * (path.boundaries[i] + path.boundaries[i + 1])
        out.append(tissue_params_at(scenario, path_pose_at(path, float(mid)).position))
    return out


# ---------------------------------------------------------------------------
# Scenario document parsing
# ---------------------------------------------------------------------------

def _check_fields(obj, allowed: set, required: set, ctx: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{ctx}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"{ctx}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ScenarioError(f"{ctx}: missing field(s) {sorted(missing)}")


def _vec3(value, ctx: str) -> np.ndarray:
    try:
        v = np.array(value, dtype=float).reshape(3)
    except Exception:
        raise ScenarioError(f"{ctx}: expected 3 numbers") from None
    if not np.all(np.isfinite(v)):
        raise ScenarioError(f"{ctx}: values must be finite")
    return v


def _number(value, ctx: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(float(value)):
        raise ScenarioError(f"{ctx}: expected a finite number")
    return float(value)


def _parse_box(obj, ctx: str) -> Box:
    _check_fields(obj, {"min", "max"}, {"min", "max"}, ctx)
    try:
        return Box(_vec3(obj["min"], f"{ctx}.min"), _vec3(obj["max"], f"{ctx}.max"))
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from None


def _parse_tissue(obj, ctx: str) -> tuple[TissueParams, tuple]:
    _check_fields(obj, {"c", "mu", "fp", "overrides"}, set(), ctx)
    try:
        base = TissueParams(
            c_friction=_number(obj.get("c", 83.75), f"{ctx}.c"),
            mu=_number(obj.get("mu", 0.32), f"{ctx}.mu"),
            piercing_force=_number(obj.get("fp", 0.4), f"{ctx}.fp"),
        )
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from None
    overrides = []
    for i, raw in enumerate(obj.get("overrides", [])):
        octx = f"{ctx}.overrides[{i}]"
        _check_fields(raw, {"min", "max", "c", "mu", "fp"}, {"min", "max"}, octx)
        box = _parse_box({"min": raw["min"], "max": raw["max"]}, octx)
        try:
            params = TissueParams(
                c_friction=_number(raw.get("c", base.c_friction), f"{octx}.c"),
                mu=_number(raw.get("mu", base.mu), f"{octx}.mu"),
                piercing_force=_number(raw.get("fp", base.piercing_force), f"{octx}.fp"),
            )
        except ValueError as exc:
            raise ScenarioError(f"{octx}: {exc}") from None
        overrides.append((box, params))
    return base, tuple(overrides)


def _parse_obstacles(obj, ctx: str, base_dir: Optional[str]) -> ObstacleSet:
    _check_fields(obj, {"spheres", "boxes", "voxel_grid_file"}, set(), ctx)
    spheres = []
    for i, raw in enumerate(obj.get("spheres", [])):
        sctx = f"{ctx}.spheres[{i}]"
        _check_fields(raw, {"center", "radius"}, {"center", "radius"}, sctx)
        spheres.append((_vec3(raw["center"], f"{sctx}.center"), _number(raw["radius"], f"{sctx}.radius")))
    boxes = [_parse_box(raw, f"{ctx}.boxes[{i}]") for i, raw in enumerate(obj.get("boxes", []))]
    voxel = None
    if "voxel_grid_file" in obj:
        rel = obj["voxel_grid_file"]
        if not isinstance(rel, str):
            raise ScenarioError(f"{ctx}.voxel_grid_file: expected a string path")
        full = rel if os.path.isabs(rel) or base_dir is None else os.path.join(base_dir, rel)
        if not os.path.exists(full):
            raise ScenarioError(f"{ctx}.voxel_grid_file: file not found: {full}")
        voxel = load_voxel_grid(full)
    try:
        return ObstacleSet(spheres, boxes, voxel)
    except ValueError as exc:
        raise ScenarioError(f"{ctx}: {exc}") from None


def load_scenario(text: str, base_dir: Optional[str] = None) -> Scenario:
    """Parse and fully validate a scenario document (JSON).

    Unknown fields are rejected at every level; invariant violations name the
    offending field. Relative voxel grid paths resolve against base_dir.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from None
    _check_fields(
        doc,
        {"start_pose", "target", "bounds", "obstacles", "tissue", "needle_radius", "kappa_max"},
        {"start_pose", "target", "bounds"},
        "scenario",
    )
    try:
        start = pose_from_dict(doc["start_pose"], "start_pose")
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    _check_fields(doc["target"], {"center", "radius"}, {"center", "radius"}, "target")
    try:
        target = InsertionRegion(
            _vec3(doc["target"]["center"], "target.center"),
            _number(doc["target"]["radius"], "target.radius"),
        )
    except ValueError as exc:
        raise ScenarioError(f"target: {exc}") from None
    bounds = _parse_box(doc["bounds"], "bounds")
    obstacles = _parse_obstacles(doc.get("obstacles", {}), "obstacles", base_dir)
    tissue, overrides = _parse_tissue(doc.get("tissue", {}), "tissue")
    kwargs = {}
    if "needle_radius" in doc:
        kwargs["needle_radius"] = _number(doc["needle_radius"], "needle_radius")
    if "kappa_max" in doc:
        kwargs["kappa_max"] = _number(doc["kappa_max"], "kappa_max")
    return Scenario(
        start_pose=start,
        target_region=target,
        obstacles=obstacles,
        bounds=bounds,
        tissue=tissue,
        tissue_overrides=overrides,
        **kwargs,
    )


def load_scenario_file(path) -> Scenario:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from None
    return load_scenario(text, base_dir=os.path.dirname(os.path.abspath(path)))
