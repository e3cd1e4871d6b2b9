"""Array-free model descriptors and the full-scale reference profile.

A descriptor declares dimensions, skeleton and landmark-set sizes without
shipping any bases. ``model info`` checks a descriptor against the profile it
names, so a mis-sized asset is caught before anything large is loaded.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

REFERENCE_PROFILE = {
    "N": 12943,
    "polygons": 12726,
    "K": 54,
    "gamma": 260,
    "beta": 300,
    "psi": 224,
    "joint_breakdown": {"body": 22, "left_hand": 15, "right_hand": 15, "eyes": 2},
    "landmarks": {"sparse": 36, "dense": 1428, "hand_sparse": 21, "hand_dense": 141},
}
PROFILES = {"reference": REFERENCE_PROFILE}

_BODY_JOINTS = [
    ("pelvis", -1), ("left_hip", 0), ("right_hip", 0), ("spine1", 0), ("left_knee", 1),
    ("right_knee", 2), ("spine2", 3), ("left_ankle", 4), ("right_ankle", 5), ("spine3", 6),
    ("left_foot", 7), ("right_foot", 8), ("neck", 9), ("left_collar", 9), ("right_collar", 9),
    ("head", 12), ("left_shoulder", 13), ("right_shoulder", 14), ("left_elbow", 16),
    ("right_elbow", 17), ("left_wrist", 18), ("right_wrist", 19),
]
_FINGERS = ("index", "middle", "pinky", "ring", "thumb")


def reference_skeleton() -> tuple[list[str], list[int], dict[str, list[int]]]:
    """Joint names, parents and groups for the 54-joint layout.

    22 body joints, three joints per finger on each hand chained from the
    wrist, and two eye joints parented to the head.
    """
    names = [n for n, _ in _BODY_JOINTS]
    parents = [p for _, p in _BODY_JOINTS]
    groups: dict[str, list[int]] = {}
    for side, wrist in (("left", 20), ("right", 21)):
        groups[f"{side}_hand"] = []
        for finger in _FINGERS:
            parent = wrist
            for seg in (1, 2, 3):
                names.append(f"{side}_{finger}{seg}")
                parents.append(parent)
                parent = len(names) - 1
                groups[f"{side}_hand"].append(parent)
    groups["eyes"] = []
    for side in ("left", "right"):
        names.append(f"{side}_eye")
        parents.append(15)
        groups["eyes"].append(len(names) - 1)
    groups["head"] = [15]
    return names, parents, groups


def check_descriptor(desc: dict[str, Any]) -> list[str]:
    """Compare a descriptor with its declared profile; returns the mismatches."""
    problems = []
    profile_name = desc.get("profile")
    profile = PROFILES.get(profile_name) if profile_name else None
    if profile_name and profile is None:
        problems.append(f"unknown profile {profile_name!r}")
    dims = desc.get("dims", {})
    if profile:
        for key in ("N", "polygons", "K", "gamma", "beta", "psi"):
            if dims.get(key) != profile[key]:
                problems.append(f"dims.{key}: expected {profile[key]}, got {dims.get(key)}")
        for key, n in profile["landmarks"].items():
            got = desc.get("landmarks", {}).get(key)
            if got != n:
                problems.append(f"landmarks.{key}: expected {n}, got {got}")
        breakdown = desc.get("joint_breakdown", {})
        for key, n in profile["joint_breakdown"].items():
            if breakdown.get(key) != n:
                problems.append(f"joint_breakdown.{key}: expected {n}, got {breakdown.get(key)}")
    parents = desc.get("parents")
    if parents is not None:
        if len(parents) != dims.get("K"):
            problems.append(f"parents has {len(parents)} entries, K is {dims.get('K')}")
        if not parents or parents[0] != -1 or any(not 0 <= p < i for i, p in enumerate(parents) if i):
            problems.append("parents do not form a single topologically ordered tree")
    groups = desc.get("joint_groups", {})
    for key in ("left_hand", "right_hand", "eyes"):
        if key in groups and len(groups[key]) != desc.get("joint_breakdown", {}).get(key):
            problems.append(f"joint_groups.{key} size disagrees with joint_breakdown")
    if sum(desc.get("joint_breakdown", {}).values() or [0]) != dims.get("K"):
        problems.append("joint_breakdown does not add up to K")
    return problems


def reference_descriptor() -> dict[str, Any]:
    return json.loads(resources.files("synthbody").joinpath("data/reference_model.json").read_text())


def load_descriptor(path: str | Path) -> dict[str, Any]:
    desc = json.loads(Path(path).read_text())
    if desc.get("kind") != "model_descriptor":
        raise ValueError(f"{path}: not a model descriptor")
    return desc
