#!/usr/bin/env python3
"""Regenerate the benchmark fixtures shipped in fixtures/.

two_spheres: two overlapping spheres block the straight line between the
in-body start pose and the insertion-site ball, so every plan must curve
around them; there is a short tight route and a longer gentle one, which is
what separates the force and length optimizers.

voxel_corridor: two solid walls with laterally offset circular holes force
an S-shaped plan; exercises the voxel clearance path end to end.
"""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from needleplan.environment import VoxelGrid, save_voxel_grid  # noqa: E402

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def write_two_spheres():
    doc = {
        "start_pose": {"position": [0.0, 0.0, 0.10], "orientation": [1.0, 0.0, 0.0, 0.0]},
        "target": {"center": [0.0, 0.0, 0.0], "radius": 0.01},
        "bounds": {"min": [-0.08, -0.08, -0.01], "max": [0.08, 0.08, 0.14]},
        "obstacles": {
            "spheres": [
                {"center": [0.015, 0.0, 0.06], "radius": 0.02},
                {"center": [-0.015, 0.005, 0.035], "radius": 0.02},
            ]
        },
        "tissue": {"c": 83.75, "mu": 0.32, "fp": 0.4},
        "needle_radius": 0.001,
        "kappa_max": 20.0,
    }
    with open(os.path.join(FIXTURES, "two_spheres.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_voxel_corridor():
    dims = (60, 60, 75)
    spacing = 0.002
    origin = np.array([-0.06, -0.06, 0.0])
    occ = np.zeros(dims, dtype=bool)

    ix = (np.arange(dims[0]) + 0.5) * spacing + origin[0]
    iy = (np.arange(dims[1]) + 0.5) * spacing + origin[1]
    xx, yy = np.meshgrid(ix, iy, indexing="ij")

    hole_radius = 0.015
    # wall A near z=0.05, hole centered at +x; wall B near z=0.09, hole at -x
    for z_lo, z_hi, hole_x in ((24, 27, 0.014), (44, 47, -0.014)):
        hole = (xx - hole_x) ** 2 + yy**2 <= hole_radius**2
        occ[:, :, z_lo:z_hi] |= ~hole[:, :, None]

    grid = VoxelGrid(origin, spacing, occ)
    save_voxel_grid(grid, os.path.join(FIXTURES, "voxel_corridor.nvox"))

    doc = {
        "start_pose": {"position": [0.0, 0.0, 0.13], "orientation": [1.0, 0.0, 0.0, 0.0]},
        "target": {"center": [0.0, 0.0, 0.004], "radius": 0.01},
        "bounds": {"min": [-0.058, -0.058, 0.0], "max": [0.058, 0.058, 0.148]},
        "obstacles": {"voxel_grid_file": "voxel_corridor.nvox"},
        "tissue": {"c": 83.75, "mu": 0.32, "fp": 0.4},
        "needle_radius": 0.001,
        "kappa_max": 20.0,
    }
    with open(os.path.join(FIXTURES, "voxel_corridor.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    os.makedirs(FIXTURES, exist_ok=True)
    write_two_spheres()
    write_voxel_corridor()
    print("fixtures written to", os.path.abspath(FIXTURES))
