"""Anytime bottleneck-cost planner over needle arc primitives.

The planner searches backward: the tree is rooted at the in-body pose with
the tangent reversed, so the force profile of the portion already planned
(the distal end of the eventual insertion) never changes as the tree grows.
Each tree extension appends one constant-curvature arc; the internal needle
force propagates across it in closed form, and the running maximum of the
tissue normal force is the node's bottleneck cost. An edge whose cost
exceeds the current bound c_max is invalid, which keeps pruning admissible
because the cost is monotone along any root-to-leaf chain.

The outer anytime loop plans repeatedly: whenever a solution of cost c is
found, the bound tightens to c / (1 + epsilon) and the search restarts, so
reported costs decrease by at least that factor each improvement.

Time accounting is deterministic: a virtual clock charges a fixed
nanosecond price per unit of work (iterations, nearest-neighbor scans,
collision samples), calibrated to real time on a desktop core. Identical
(scenario, config, seed) runs therefore consume identical budgets and
produce byte-identical logs, which real wall clocks cannot guarantee.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .environment import Scenario, in_target, segment_collision_free, segment_params_for_path, tissue_params_at
from .forces import ForceProfile, SaturationError, TissueParams, internal_force_profile, segment_backstep
from .kinematics import ArcSegment, NeedlePath, Pose, path_to_dict, propagate_pose

PROFILE_RESOLUTION = 0.001  # m, for solution force profiles

COST_MODES = ("force", "length")

# Virtual-clock prices in integer nanoseconds, fixed for reproducibility.
# Calibrated against real timings of the two-sphere benchmark on one
# desktop core; the virtual clock runs slightly fast, so a stated budget
# never claims more real computation than it performed.
NS_ITER = 13_000          # per planner iteration: sampling, steering, bookkeeping
NS_NN = 12                # per tree node scanned in a nearest-neighbor query
NS_CC_BASE = 22_000       # per collision-checked candidate segment
NS_CC_SAMPLE = 1_700      # per collision sample point along a candidate
NS_CC_KD = 1_500          # extra per sample when a voxel lookup tree is queried
NS_ADD = 8_000            # per accepted tree node
NS_SOLVE = 400_000        # per solution extraction (reversal + profile)


class VirtualClock:
    """Deterministic work-proportional clock (integer nanoseconds)."""

    __slots__ = ("ns",)

    def __init__(self):
        self.ns = 0

    def charge(self, ns: int) -> None:
        self.ns += ns

    @property
    def seconds(self) -> float:
        return self.ns * 1e-9


@dataclass(frozen=True)
class PlannerConfig:
    """Planner knobs; defaults chosen for the desk-scale benchmarks.

    kappa_max None defers to the scenario's curvature bound. rgrrt_fraction
    is the probability of a steered extension toward the sample; the
    remainder are uniform random controls, whose interleaving restores
    probabilistic completeness. epsilon is the anytime bound-tightening
    factor. Budgets are in virtual seconds (see module docstring).
    """

    kappa_max: Optional[float] = None
    arc_length_range: tuple[float, float] = (0.005, 0.03)
    goal_bias: float = 0.05
    rgrrt_fraction: float = 0.9
    check_resolution: float = 0.001
    max_iterations: Optional[int] = None
    rng_seed: int = 0
    epsilon: float = 0.0001
    cost_mode: str = "force"

    def __post_init__(self):
        l_min, l_max = self.arc_length_range
        if not (0.0 < l_min <= l_max) or not math.isfinite(l_max):
            raise ValueError(f"arc_length_range must satisfy 0 < min <= max, got {self.arc_length_range}")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError(f"goal_bias must be in [0, 1], got {self.goal_bias}")
        if not 0.0 <= self.rgrrt_fraction <= 1.0:
            raise ValueError(f"rgrrt_fraction must be in [0, 1], got {self.rgrrt_fraction}")
        if self.check_resolution <= 0.0:
            raise ValueError(f"check_resolution must be > 0, got {self.check_resolution}")
        if self.kappa_max is not None and not self.kappa_max > 0.0:
            raise ValueError(f"kappa_max must be > 0, got {self.kappa_max}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.epsilon >= 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.cost_mode not in COST_MODES:
            raise ValueError(f"cost_mode must be one of {COST_MODES}, got {self.cost_mode!r}")
        if not isinstance(self.rng_seed, int) or self.rng_seed < 0:
            raise ValueError(f"rng_seed must be a non-negative integer, got {self.rng_seed!r}")

    def effective_kappa_max(self, scenario: Scenario) -> float:
        return scenario.kappa_max if self.kappa_max is None else self.kappa_max


@dataclass(slots=True)
class TreeNode:
    """Backward-search tree node.

    The root sits at the in-body pose with reversed tangent and carries the
    piercing force; every child's internal force is one closed-form backstep
    from its parent, and bottleneck_cost is the running maximum of
    curvature * internal force along the chain, so it never decreases
    toward the leaves.
    """

    pose: Pose
    parent: Optional["TreeNode"]
    incoming_segment: Optional[ArcSegment]
    n_internal: float
    bottleneck_cost: float
    path_length: float


@dataclass(frozen=True)
class PlanResult:
    """A forward (insertion-site to target) plan with its force summary.

    profile is None only when the force model saturated along the plan,
    which a length-optimizing run can legitimately return.
    """

    path: NeedlePath
    bottleneck_cost: float
    length: float
    profile: Optional[ForceProfile]
    iterations: int
    wall_time: float


@dataclass(frozen=True)
class ConvergenceEntry:
    wall_time: float
    iteration: int
    cost: float
    path_id: int


@dataclass
class ConvergenceLog:
    """Improvement history of one anytime run; costs strictly decrease by a
    factor of at least (1 + epsilon) between consecutive entries."""

    cost_mode: str
    entries: list[ConvergenceEntry] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------

def steer_arc(
    pose: Pose, sample: np.ndarray, kappa_max: float, l_min: float, l_max: float
) -> Optional[ArcSegment]:
    """Arc primitive from ``pose`` toward a sampled position.

    The roll aligns the bending plane with the sample; the curvature is that
    of the circle through the pose (tangent to its +z axis) and the sample,
    saturated at kappa_max; the length runs to the sample along that circle,
    clamped to [l_min, l_max] (l_max when saturated). Returns None only for
    a sample coincident with the pose position.
    """
    vx, vy, vz = np.asarray(sample, dtype=float) - pose.position
    w, x, y, z = pose.orientation
    # local frame: rows of R(q)^T
    dx = vx * (1.0 - 2.0 * (y * y + z * z)) + vy * (2.0 * (x * y + w * z)) + vz * (2.0 * (x * z - w * y))
    dy = vx * (2.0 * (x * y - w * z)) + vy * (1.0 - 2.0 * (x * x + z * z)) + vz * (2.0 * (y * z + w * x))
    dz = vx * (2.0 * (x * z + w * y)) + vy * (2.0 * (y * z - w * x)) + vz * (1.0 - 2.0 * (x * x + y * y))
    rho = math.hypot(dx, dy)
    r2 = rho * rho + dz * dz
    if r2 < 1e-24:
        return None
    roll = math.atan2(dy, dx)
    kappa_req = 2.0 * rho / r2
    if kappa_req > kappa_max:
        return ArcSegment(roll, kappa_max, l_max)
    if kappa_req < 1e-12:
        # sample on the tangent axis: straight ahead or unreachable behind
        if dz <= 0.0:
            return ArcSegment(roll, kappa_max, l_max)
        return ArcSegment(roll, 0.0, min(max(dz, l_min), l_max))
    alpha = math.atan2(kappa_req * dz, 1.0 - kappa_req * rho) % (2.0 * math.pi)
    length = min(max(alpha / kappa_req, l_min), l_max)
    return ArcSegment(roll, kappa_req, length)


def incremental_cost(parent: TreeNode, seg: ArcSegment, params: TissueParams, mode: str = "force") -> float:
    """Cost of the tree path through ``parent`` extended by ``seg``.

    Force mode: running maximum of the tissue normal force, via one
    closed-form backstep (+inf on saturation). Length mode: accumulated arc
    length. Both are monotone along tree paths, so pruning against a cost
    bound is admissible.
    """
    if mode == "length":
        return parent.path_length + seg.length
    if mode != "force":
        raise ValueError(f"cost_mode must be one of {COST_MODES}, got {mode!r}")
    return _force_after(parent.n_internal, parent.bottleneck_cost, seg, params)[1]


def _force_after(parent_n: float, parent_bottleneck: float, seg: ArcSegment, params: TissueParams) -> tuple[float, float]:
    if not math.isfinite(parent_n):
        return math.inf, math.inf
    try:
        state = segment_backstep(parent_n, seg, params)
    except SaturationError:
        return math.inf, math.inf
    return state.n_proximal, max(parent_bottleneck, state.f_t_max)


def reverse_plan(chain: Sequence[TreeNode]) -> NeedlePath:
    """Forward needle path for a root-to-leaf chain of the backward tree.

    The leaf pose (the insertion site) flips its tangent to become the
    forward base. Reversing an arc keeps its curvature and length; the roll
    of backward segment i reappears on the NEXT emitted forward segment
    (the first emitted segment rolls 0), which is the involution
    R_x(pi) R_y(beta) R_x(pi) = R_y(-beta) worked out over the chain. The
    forward path traces the identical centerline, ending at the root
    position.
    """
    chain = list(chain)
    if len(chain) < 2:
        raise ValueError("chain must contain the root and at least one extension")
    if chain[0].parent is not None or chain[0].incoming_segment is not None:
        raise ValueError("chain must start at the tree root")
    back = [node.incoming_segment for node in chain[1:]]
    rolls = [0.0] + [seg.roll for seg in back[:0:-1]]
    forward = [
        ArcSegment(roll, seg.curvature, seg.length)
        for roll, seg in zip(rolls, back[::-1])
    ]
    return NeedlePath(chain[-1].pose.flipped(), forward)


# ---------------------------------------------------------------------------
# Inner planner (one tree, one cost bound)
# ---------------------------------------------------------------------------

class _Tree:
    """Node store with an amortized-growth position matrix for NN scans."""

    def __init__(self, root: TreeNode):
        self.nodes = [root]
        self._pos = np.empty((256, 3))
        self._pos[0] = root.pose.position

    def __len__(self):
        return len(self.nodes)

    def add(self, node: TreeNode) -> None:
        n = len(self.nodes)
        if n == self._pos.shape[0]:
            grown = np.empty((2 * n, 3))
            grown[:n] = self._pos
            self._pos = grown
        self._pos[n] = node.pose.position
        self.nodes.append(node)

    def nearest(self, point: np.ndarray) -> TreeNode:
        n = len(self.nodes)
        diff = self._pos[:n] - point
        return self.nodes[int(np.argmin(np.einsum("ij,ij->i", diff, diff)))]


def _collision_charge(length: float, resolution: float, sample_ns: int) -> int:
    return NS_CC_BASE + sample_ns * (int(length / resolution) + 2)


def inner_plan(
    scenario: Scenario,
    config: PlannerConfig,
    c_max: float = math.inf,
    rng: Optional[np.random.Generator] = None,
    *,
    clock: Optional[VirtualClock] = None,
    deadline_s: Optional[float] = None,
    iteration_offset: int = 0,
) -> Optional[PlanResult]:
    """Grow one backward tree until a node reaches the insertion target.

    Each iteration samples a position (the target center with probability
    goal_bias, else uniform in bounds), then either steers the nearest node
    toward it (probability rgrrt_fraction) or applies a uniform random
    control at a uniform random node. Extensions that collide, leave the
    workspace, or cost more than c_max are rejected. The first node whose
    position enters the target ball is reversed into a forward PlanResult;
    None means the iteration or time budget expired first.

    The rng is consumed in a fixed draw order, so a shared generator keeps
    an entire anytime run reproducible. clock/deadline_s/iteration_offset
    let that outer loop meter its total budget through the inner runs.
    """
    if not c_max > 0.0:
        raise ValueError(f"c_max must be > 0, got {c_max}")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(config.rng_seed))
    if clock is None:
        clock = VirtualClock()
    if in_target(scenario.target_region, scenario.start_pose.position):
        raise ValueError("start_pose already lies inside the target region; nothing to plan")

    kappa_max = config.effective_kappa_max(scenario)
    l_min, l_max = config.arc_length_range
    resolution = config.check_resolution
    mode = config.cost_mode
    homogeneous = not scenario.tissue_overrides
    base_params = scenario.tissue
    goal = scenario.target_region.center
    lo = scenario.bounds.min_corner
    span = scenario.bounds.max_corner - lo
    deadline_ns = None if deadline_s is None else int(round(deadline_s * 1e9))
    max_iters = config.max_iterations
    sample_ns = NS_CC_SAMPLE + (NS_CC_KD if scenario.obstacles._voxel_tree is not None else 0)

    # backward search: the root is the in-body pose with reversed tangent,
    # carrying the tip piercing force
    root_params = base_params if homogeneous else tissue_params_at(scenario, scenario.start_pose.position)
    root = TreeNode(
        pose=scenario.start_pose.flipped(),
        parent=None,
        incoming_segment=None,
        n_internal=root_params.piercing_force,
        bottleneck_cost=0.0,
        path_length=0.0,
    )
    tree = _Tree(root)

    iteration = 0
    while True:
        if max_iters is not None and iteration >= max_iters:
            return None
        if deadline_ns is not None and clock.ns >= deadline_ns:
            return None
        iteration += 1
        clock.charge(NS_ITER)

        if rng.random() < config.goal_bias:
            sample = goal
        else:
            sample = lo + span * rng.random(3)

        if rng.random() < config.rgrrt_fraction:
            clock.charge(NS_NN * len(tree))
            parent = tree.nearest(sample)
            seg = steer_arc(parent.pose, sample, kappa_max, l_min, l_max)
            if seg is None:
                continue
        else:
            parent = tree.nodes[int(rng.integers(0, len(tree)))]
            seg = ArcSegment(
                math.pi * (2.0 * rng.random() - 1.0),
                kappa_max * rng.random(),
                l_min + (l_max - l_min) * rng.random(),
            )

        if homogeneous:
            params = base_params
        else:
            mid = propagate_pose(parent.pose, ArcSegment(seg.roll, seg.curvature, 0.5 * seg.length))
            params = tissue_params_at(scenario, mid.position)

        n_prox, bottleneck = _force_after(parent.n_internal, parent.bottleneck_cost, seg, params)
        cost = parent.path_length + seg.length if mode == "length" else bottleneck
        # saturated force states price as +inf and are never extended
        if not math.isfinite(cost) or cost > c_max:
            continue

        clock.charge(_collision_charge(seg.length, resolution, sample_ns))
        if not segment_collision_free(scenario, parent.pose, seg, resolution):
            continue

        child = TreeNode(
            pose=propagate_pose(parent.pose, seg),
            parent=parent,
            incoming_segment=seg,
            n_internal=n_prox,
            bottleneck_cost=bottleneck,
            path_length=parent.path_length + seg.length,
        )
        clock.charge(NS_ADD)
        tree.add(child)

        if in_target(scenario.target_region, child.pose.position):
            clock.charge(NS_SOLVE)
            return _extract(scenario, child, iteration_offset + iteration, clock)


def _extract(scenario: Scenario, leaf: TreeNode, iteration: int, clock: VirtualClock) -> PlanResult:
    chain = []
    node = leaf
    while node is not None:
        chain.append(node)
        node = node.parent
    chain.reverse()
    path = reverse_plan(chain)
    params = segment_params_for_path(scenario, path)
    try:
        profile = internal_force_profile(path, params, PROFILE_RESOLUTION)
    except SaturationError:
        profile = None
    return PlanResult(
        path=path,
        bottleneck_cost=leaf.bottleneck_cost,
        length=leaf.path_length,
        profile=profile,
        iterations=iteration,
        wall_time=clock.seconds,
    )


# ---------------------------------------------------------------------------
# Anytime outer loop
# ---------------------------------------------------------------------------

def ano_plan(
    scenario: Scenario,
    config: PlannerConfig,
    budget_s: float,
    on_improvement: Optional[Callable[[PlanResult], None]] = None,
) -> tuple[Optional[PlanResult], ConvergenceLog]:
    """Anytime planning: repeat inner searches under a tightening cost bound.

    Starts unbounded; after each solution of cost c the bound becomes
    c / (1 + epsilon), so successive reported costs shrink by at least that
    factor and the final plan is near-optimal in the limit. Runs until the
    (virtual-clock) budget expires; returns the best plan found and the
    improvement log, empty if nothing was found.
    """
    if not budget_s > 0.0:
        raise ValueError(f"budget_s must be > 0, got {budget_s}")
    clock = VirtualClock()
    rng = np.random.Generator(np.random.Philox(config.rng_seed))
    log = ConvergenceLog(cost_mode=config.cost_mode)
    best: Optional[PlanResult] = None
    c_max = math.inf
    iterations = 0
    while clock.seconds < budget_s:
        result = inner_plan(
            scenario,
            config,
            c_max,
            rng,
            clock=clock,
            deadline_s=budget_s,
            iteration_offset=iterations,
        )
        if result is None:
            # budget or iteration cap expired; a capped run restarts fresh
            if config.max_iterations is None or clock.seconds >= budget_s:
                break
            iterations += config.max_iterations
            continue
        iterations = result.iterations
        cost = result.length if config.cost_mode == "length" else result.bottleneck_cost
        best = result
        log.entries.append(ConvergenceEntry(result.wall_time, iterations, cost, len(log.entries) + 1))
        if on_improvement is not None:
            on_improvement(result)
        if cost <= 0.0:
            break  # cannot strictly improve on a zero-cost plan
        c_max = cost / (1.0 + config.epsilon)
    return best, log


# ---------------------------------------------------------------------------
# Artifact serialization
# ---------------------------------------------------------------------------

def write_convergence_csv(log: ConvergenceLog, path) -> None:
    """CSV header wall_time_s,iteration,cost,mode; repr formatting so doubles
    round-trip exactly (the determinism contract is byte-level)."""
    with open(path, "w", newline="") as fh:
        fh.write("wall_time_s,iteration,cost,mode\n")
        for e in log.entries:
            fh.write(f"{e.wall_time!r},{e.iteration},{e.cost!r},{log.cost_mode}\n")


def solution_to_dict(result: PlanResult, seed: int) -> dict:
    doc = path_to_dict(result.path)
    doc["bottleneck_cost"] = result.bottleneck_cost
    doc["length_m"] = result.length
    doc["seed"] = seed
    return doc


def write_solution_json(result: PlanResult, seed: int, path) -> None:
    with open(path, "w") as fh:
        json.dump(solution_to_dict(result, seed), fh, indent=2)
        fh.write("\n")
