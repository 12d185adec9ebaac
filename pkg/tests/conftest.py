"""Shared scenario builders and fixtures."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


def demo_scenario_dict() -> dict:
    """2 rows x 3 pods, 12 tomatoes of which 5 are pluckable."""
    rows = []
    tomato_id = 0
    pluckable_budget = 5
    marker = 0
    for row_id, (y, side) in enumerate(((2.0, "right"), (6.0, "left")), start=1):
        pods = []
        for x in (2.0, 4.0, 6.0):
            marker += 1
            tomatoes = []
            for k in range(2):
                tomato_id += 1
                pluckable = pluckable_budget > 0 and (tomato_id % 2 == 1)
                if pluckable:
                    pluckable_budget -= 1
                tomatoes.append({
                    "tomato_id": tomato_id,
                    "center": [x + 0.12, y + 0.10 + 0.12 * k, 0.55 + 0.1 * k],
                    "radius_m": 0.035,
                    "pluckable": pluckable,
                    "detach_threshold_n": 5.0,
                })
            pods.append({
                "pod_id": marker,
                "marker_id": marker,
                "position": [x, y],
                "size_m": 0.30,
                "plant": {"base_position": [x, y, 0.0], "tomatoes": tomatoes},
            })
        rows.append({"row_id": row_id, "wall_side": side, "pods": pods})
    return {
        "schema_version": 1,
        "greenhouse": {"width_m": 10.0, "length_m": 8.0, "rows": rows},
        "rover": {"start_pose": [1.0, 1.0, 0.0]},
    }


def corridor_scenario_dict(start_y: float = 0.6, length_m: float = 16.0,
                           width_m: float = 3.0, slip: float = 0.0,
                           noise: float = 0.0) -> dict:
    return {
        "schema_version": 1,
        "greenhouse": {"width_m": length_m, "length_m": width_m, "rows": []},
        "rover": {
            "start_pose": [1.0, start_y, 0.0],
            "base": {"slip_coefficient": slip, "odometry_noise_sigma": noise},
        },
    }


def mission_scenario_dict() -> dict:
    """Corridor with pods on the left while the rover follows the right wall."""
    pods = []
    for i, x in enumerate((4.0, 7.0, 10.0), start=1):
        pods.append({
            "pod_id": i, "marker_id": i, "position": [x, 1.2], "size_m": 0.30,
            "plant": {"base_position": [x, 1.2, 0.0], "tomatoes": []},
        })
    return {
        "schema_version": 1,
        "greenhouse": {
            "width_m": 14.0, "length_m": 2.0,
            "rows": [{"row_id": 1, "wall_side": "right", "pods": pods}],
        },
        "rover": {"start_pose": [1.0, 0.6, 0.0],
                  "base": {"slip_coefficient": 0.0, "odometry_noise_sigma": 0.0}},
    }


def grasp_scenario_dict(tomato_center, pluckable=True, threshold=5.0, extra=()) -> dict:
    tomatoes = [{
        "tomato_id": 1, "center": list(tomato_center), "radius_m": 0.035,
        "pluckable": pluckable, "detach_threshold_n": threshold,
    }]
    for i, (center, pl) in enumerate(extra, start=2):
        tomatoes.append({"tomato_id": i, "center": list(center), "radius_m": 0.035,
                         "pluckable": pl, "detach_threshold_n": threshold})
    return {
        "schema_version": 1,
        "greenhouse": {
            "width_m": 10.0, "length_m": 8.0,
            "rows": [{"row_id": 1, "wall_side": "right", "pods": [{
                "pod_id": 1, "marker_id": 1, "position": [5.0, 5.0], "size_m": 0.30,
                "plant": {"base_position": [5.0, 5.0, 0.0], "tomatoes": tomatoes},
            }]}],
        },
        "rover": {"start_pose": [4.0, 4.0, 0.0],
                  "base": {"slip_coefficient": 0.0, "odometry_noise_sigma": 0.0}},
    }


@pytest.fixture
def demo_world():
    from greensim.world import load_scenario
    return load_scenario(json.dumps(demo_scenario_dict()))


@pytest.fixture
def corridor_world():
    from greensim.world import load_scenario
    return load_scenario(json.dumps(corridor_scenario_dict()))
