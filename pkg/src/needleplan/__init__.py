"""Steerable-needle motion planning that minimizes peak tissue normal force.

The package combines three layers: constant-curvature path geometry
(kinematics), the string force model that propagates the internal needle
force backward from the tip and prices paths by their peak tissue normal
force (forces), and an anytime backward-tree planner that minimizes that
bottleneck cost, or plain path length for comparison (planner). Scenarios
with obstacles and tissue maps live in environment; the cli module wraps it
all for batch benchmarking.
"""

from .environment import (
    Box,
    InsertionRegion,
    ObstacleSet,
    Scenario,
    ScenarioError,
    VoxelGrid,
    in_target,
    load_scenario,
    load_scenario_file,
    load_voxel_grid,
    point_clearance,
    points_clearance,
    save_voxel_grid,
    segment_collision_free,
    segment_params_for_path,
    tissue_params_at,
)
from .forces import (
    DEFAULT_TISSUE,
    FitResult,
    ForceProfile,
    SaturationError,
    SegmentForceState,
    TissueParams,
    fit_straight_insertion,
    internal_force_numeric,
    internal_force_profile,
    max_tissue_force,
    segment_backstep,
    write_profile_csv,
)
from .kinematics import (
    ArcSegment,
    NeedlePath,
    Pose,
    curvature_at,
    discretize_path,
    path_from_dict,
    path_pose_at,
    path_to_dict,
    propagate_pose,
)
from .planner import (
    ConvergenceLog,
    PlanResult,
    PlannerConfig,
    TreeNode,
    ano_plan,
    incremental_cost,
    inner_plan,
    reverse_plan,
    steer_arc,
    write_convergence_csv,
    write_solution_json,
)

__version__ = "0.1.0"
