"""Constant-curvature needle path geometry.

A needle pose carries a position and a unit quaternion; the local +z axis is
the needle tangent. An arc segment first rolls about the tangent, then bends
toward the rolled local +x axis along a circle of radius 1/curvature. Paths
are chains of such segments, parameterized by arc length from the base
(s = 0) to the tip (s = L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Segments shorter than this are degenerate and rejected at construction.
MIN_SEGMENT_LENGTH = 1e-9

# Tolerance used to merge near-identical arc-length samples.
BOUNDARY_TOL = 1e-12


# ---------------------------------------------------------------------------
# Quaternion helpers ([w, x, y, z] convention, Hamilton product)
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b of two [w, x, y, z] quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_about_x(angle: float) -> np.ndarray:
    h = 0.5 * angle
    return np.array([math.cos(h), math.sin(h), 0.0, 0.0])


def quat_about_y(angle: float) -> np.ndarray:
    h = 0.5 * angle
    return np.array([math.cos(h), 0.0, math.sin(h), 0.0])


def quat_about_z(angle: float) -> np.ndarray:
    h = 0.5 * angle
    return np.array([math.cos(h), 0.0, 0.0, math.sin(h)])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (columns are the local axes)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Distance between unit quaternions, insensitive to the q/-q double cover."""
    return min(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))


def wrap_angle(angle: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid pose of a needle cross-section.

    The local +z axis of ``orientation`` is the needle tangent; bending with
    zero roll curves toward the local +x axis. Positions are meters,
    orientations unit quaternions [w, x, y, z]. Instances are immutable.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        q = np.array(self.orientation, dtype=float).reshape(4)
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(q)):
            raise ValueError("pose has non-finite entries")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"orientation quaternion norm {norm:.9g} is not 1")
        q = q / norm
        pos.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def _trusted(position: np.ndarray, orientation: np.ndarray) -> "Pose":
        """Wrap arrays known to be finite and unit-norm without re-validating;
        the planner propagates poses millions of times."""
        pose = object.__new__(Pose)
        position.setflags(write=False)
        orientation.setflags(write=False)
        object.__setattr__(pose, "position", position)
        object.__setattr__(pose, "orientation", orientation)
        return pose

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def tangent(self) -> np.ndarray:
        """Unit tangent of the needle at this pose (local +z in world frame)."""
        return self.rotation_matrix()[:, 2]

    def flipped(self) -> "Pose":
        """Same position with the tangent reversed (rotate pi about local +x)."""
        return Pose(self.position, quat_multiply(self.orientation, quat_about_x(math.pi)))


@dataclass(frozen=True)
class ArcSegment:
    """One constant-curvature piece of a needle path.

    roll is applied about the tangent before bending and is wrapped into
    [-pi, pi); curvature is in 1/m (>= 0); length in m (> 0). A segment with
    zero curvature translates along the tangent; its roll still composes into
    the end orientation.
    """

    roll: float
    curvature: float
    length: float

    def __post_init__(self):
        if not (
            math.isfinite(self.roll)
            and math.isfinite(self.curvature)
            and math.isfinite(self.length)
        ):
            raise ValueError("arc segment has non-finite parameters")
        if self.curvature < 0.0:
            raise ValueError(f"curvature must be >= 0, got {self.curvature}")
        if self.length <= MIN_SEGMENT_LENGTH:
            raise ValueError(f"segment length must exceed {MIN_SEGMENT_LENGTH} m, got {self.length}")
        object.__setattr__(self, "roll", wrap_angle(self.roll))


class NeedlePath:
    """A chain of constant-curvature segments with a base pose at s = 0.

    Immutable after construction. Segment boundaries and the pose at each
    boundary are precomputed so arc-length queries cost one propagation.
    """

    def __init__(self, base_pose: Pose, segments: Sequence[ArcSegment]):
        segments = tuple(segments)
        if not segments:
            raise ValueError("a needle path needs at least one segment")
        self.base_pose = base_pose
        self.segments = segments
        boundaries = np.concatenate(([0.0], np.cumsum([seg.length for seg in segments])))
        boundaries.setflags(write=False)
        self.boundaries = boundaries
        poses = [base_pose]
        for seg in segments:
            poses.append(propagate_pose(poses[-1], seg))
        self.node_poses = tuple(poses)

    @property
    def total_length(self) -> float:
        return float(self.boundaries[-1])

    def __repr__(self):
        return f"NeedlePath({len(self.segments)} segments, L={self.total_length:.6g} m)"


# ---------------------------------------------------------------------------
# Pose propagation and path queries
# ---------------------------------------------------------------------------

def propagate_pose(pose: Pose, seg: ArcSegment) -> Pose:
    """Pose at the far end of an arc segment starting at ``pose``.

    The roll is applied about the local +z first; the arc then bends toward
    the rolled +x axis. In that rolled frame the end offset is
    ((1-cos(k*l))/k, 0, sin(k*l)/k) and the orientation picks up a rotation
    of k*l about the local +y axis. The returned quaternion is renormalized.

    Scalar arithmetic throughout: this is the planner's innermost geometry
    call, and small-array quaternion algebra costs an order of magnitude
    more here.
    """
    aw, ax, ay, az = pose.orientation
    h = 0.5 * seg.roll
    bw, bz = math.cos(h), math.sin(h)
    # q1 = q * quat_about_z(roll)
    q1w = aw * bw - az * bz
    q1x = ax * bw + ay * bz
    q1y = ay * bw - ax * bz
    q1z = aw * bz + az * bw

    alpha = seg.curvature * seg.length
    if seg.curvature > 0.0:
        vx = (1.0 - math.cos(alpha)) / seg.curvature
        vz = math.sin(alpha) / seg.curvature
    else:
        vx = 0.0
        vz = seg.length
    # p + R(q1) @ (vx, 0, vz)
    px, py, pz = pose.position
    position = np.array(
        [
            px + vx * (1.0 - 2.0 * (q1y * q1y + q1z * q1z)) + vz * 2.0 * (q1x * q1z + q1w * q1y),
            py + vx * 2.0 * (q1x * q1y + q1w * q1z) + vz * 2.0 * (q1y * q1z - q1w * q1x),
            pz + vx * 2.0 * (q1x * q1z - q1w * q1y) + vz * (1.0 - 2.0 * (q1x * q1x + q1y * q1y)),
        ]
    )
    # q1 * quat_about_y(alpha), renormalized
    h = 0.5 * alpha
    cw, cy = math.cos(h), math.sin(h)
    qw = q1w * cw - q1y * cy
    qx = q1x * cw - q1z * cy
    qy = q1w * cy + q1y * cw
    qz = q1z * cw + q1x * cy
    inv = 1.0 / math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    orientation = np.array([qw * inv, qx * inv, qy * inv, qz * inv])
    return Pose._trusted(position, orientation)


def _segment_index_at(path: NeedlePath, s: float) -> tuple[int, float]:
    """Segment index containing s and the local arc length into it.

    An interior boundary resolves to the distal segment, so curvature lookups
    are total; the pose there is identical either way (the path is pose
    continuous by construction).
    """
    L = path.total_length
    if not math.isfinite(s) or s < -BOUNDARY_TOL or s > L + BOUNDARY_TOL:
        raise ValueError(f"arc length {s} outside [0, {L}]")
    s = min(max(s, 0.0), L)
    idx = int(np.searchsorted(path.boundaries, s, side="right")) - 1
    idx = min(max(idx, 0), len(path.segments) - 1)
    return idx, s - float(path.boundaries[idx])


def path_pose_at(path: NeedlePath, s: float) -> Pose:
    """Pose of the path at arc length s (0 <= s <= L)."""
    idx, local = _segment_index_at(path, s)
    seg = path.segments[idx]
    if local <= BOUNDARY_TOL:
        return path.node_poses[idx]
    if local >= seg.length - BOUNDARY_TOL:
        return path.node_poses[idx + 1]
    return propagate_pose(path.node_poses[idx], ArcSegment(seg.roll, seg.curvature, local))


def curvature_at(path: NeedlePath, s: float) -> float:
    """Curvature (1/m) at arc length s; interior boundaries take the distal value."""
    idx, _ = _segment_index_at(path, s)
    return path.segments[idx].curvature


def segment_sample_s(length: float, resolution: float) -> np.ndarray:
    """Local sample positions for one segment: multiples of ``resolution``
    plus both endpoints, deduplicated.
    """
    if resolution <= 0.0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    count = int(math.floor(length / resolution))
    grid = np.arange(count + 1) * resolution
    grid = grid[grid < length - BOUNDARY_TOL]
    if grid.size == 0 or grid[0] > BOUNDARY_TOL:
        grid = np.concatenate(([0.0], grid[grid > BOUNDARY_TOL]))
    return np.concatenate((grid, [length]))


def arc_positions(pose: Pose, seg: ArcSegment, local_s: np.ndarray) -> np.ndarray:
    """Positions along one segment at the given local arc lengths, vectorized.

    Matches propagate_pose applied to truncated segments, but only computes
    positions; used by collision checking where orientations are not needed.
    """
    aw, ax, ay, az = pose.orientation
    h = 0.5 * seg.roll
    bw, bz = math.cos(h), math.sin(h)
    qw = aw * bw - az * bz
    qx = ax * bw + ay * bz
    qy = ay * bw - ax * bz
    qz = aw * bz + az * bw
    local_s = np.asarray(local_s, dtype=float)
    if seg.curvature > 0.0:
        alpha = seg.curvature * local_s
        vx = (1.0 - np.cos(alpha)) / seg.curvature
        vz = np.sin(alpha) / seg.curvature
    else:
        vx = 0.0
        vz = local_s
    # bending stays in the rolled x-z plane, so only two matrix columns matter
    out = np.empty((local_s.shape[0], 3))
    px, py, pz = pose.position
    out[:, 0] = px + vx * (1.0 - 2.0 * (qy * qy + qz * qz)) + vz * (2.0 * (qx * qz + qw * qy))
    out[:, 1] = py + vx * (2.0 * (qx * qy + qw * qz)) + vz * (2.0 * (qy * qz - qw * qx))
    out[:, 2] = pz + vx * (2.0 * (qx * qz - qw * qy)) + vz * (1.0 - 2.0 * (qx * qx + qy * qy))
    return out


def discretize_path(path: NeedlePath, resolution: float) -> list[tuple[float, Pose]]:
    """Sample (s, pose) along the path.

    Samples sit at global multiples of ``resolution`` and at every segment
    boundary including s = 0 and s = L, so consecutive spacing never exceeds
    the resolution. Near-coincident samples (within 1e-12 m) collapse onto
    the boundary value.
    """
    if resolution <= 0.0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    L = path.total_length
    bounds = path.boundaries
    count = int(math.floor(L / resolution))
    grid = np.arange(count + 1) * resolution
    # keep only grid points clear of every boundary
    pos = np.searchsorted(bounds, grid)
    below = np.abs(grid - bounds[np.clip(pos - 1, 0, len(bounds) - 1)])
    above = np.abs(bounds[np.clip(pos, 0, len(bounds) - 1)] - grid)
    keep = (np.minimum(below, above) > BOUNDARY_TOL) & (grid < L)
    svals = np.sort(np.concatenate((bounds, grid[keep])))

    samples: list[tuple[float, Pose]] = []
    for s in svals:
        samples.append((float(s), path_pose_at(path, float(s))))
    return samples


# ---------------------------------------------------------------------------
# Serialization (shared with the CLI and planner output)
# ---------------------------------------------------------------------------

def path_to_dict(path: NeedlePath) -> dict:
    return {
        "base_pose": {
            "position": [float(v) for v in path.base_pose.position],
            "orientation": [float(v) for v in path.base_pose.orientation],
        },
        "segments": [
            {"roll": seg.roll, "curvature": seg.curvature, "length": seg.length}
            for seg in path.segments
        ],
    }


def _require_fields(obj: dict, allowed: set[str], required: set[str], context: str) -> None:
    if not isinstance(obj, dict):
        raise ValueError(f"{context}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"{context}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValueError(f"{context}: missing field(s) {sorted(missing)}")


def pose_from_dict(obj: dict, context: str = "pose") -> Pose:
    _require_fields(obj, {"position", "orientation"}, {"position", "orientation"}, context)
    return Pose(np.asarray(obj["position"], dtype=float), np.asarray(obj["orientation"], dtype=float))


def path_from_dict(obj: dict) -> NeedlePath:
    _require_fields(obj, {"base_pose", "segments"}, {"base_pose", "segments"}, "path")
    base = pose_from_dict(obj["base_pose"], "path.base_pose")
    segs = []
    for i, raw in enumerate(obj["segments"]):
        _require_fields(raw, {"roll", "curvature", "length"}, {"roll", "curvature", "length"}, f"path.segments[{i}]")
        segs.append(ArcSegment(float(raw["roll"]), float(raw["curvature"]), float(raw["length"])))
    return NeedlePath(base, segs)
