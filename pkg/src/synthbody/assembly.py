"""Combine a head model and a body model into one model on the body topology.

The head's face-identity and expression bases are carried onto the body mesh
through a closest-point surface map, masked to the head region and blended
with the body identity basis. Optional steps re-home skinning, pose basis and
joint regressor from a body source on another topology, add eye joints
regressed from eyeball extremes, and bind vertex groups rigidly to joints.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import BodyModel
from .transfer import (
    SurfaceMap,
    TransferError,
    apply_map,
    blend_identity_bases,
    build_surface_map,
    joint_regressor_from_extremes,
    override_rigid_skinning,
    transfer_joint_regressor,
)


@dataclass(frozen=True, eq=False)
class HeadBases:
    template: np.ndarray  # (Q, 3)
    faces: np.ndarray  # (T, 3)
    face_identity_basis: np.ndarray  # (G, Q, 3)
    expression_basis: np.ndarray  # (E, Q, 3)

    @classmethod
    def from_model(cls, model: BodyModel) -> "HeadBases":
        return cls(model.template, model.faces, model.face_identity_basis, model.expression_basis)


@dataclass(frozen=True)
class RigidGroup:
    joint: int
    vertices: tuple[int, ...]
    regress_from_extremes: bool = False  # eyes: joint location from the group's x/y extremes


@dataclass(frozen=True, eq=False)
class AssemblyReport:
    model: BodyModel
    surface_map: SurfaceMap
    head_mask: np.ndarray
    notes: list[str] = field(default_factory=list)


def surface_mask(surface_map: SurfaceMap, source_verts: np.ndarray, target_verts: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Binary mask of target vertices lying on the source surface (within ``tol``)."""
    mapped = apply_map(surface_map, source_verts)
    return (np.linalg.norm(mapped - np.asarray(target_verts, dtype=float), axis=1) <= tol).astype(float)


def assemble(
    body: BodyModel,
    head: HeadBases,
    head_mask: np.ndarray | None = None,
    surface_map: SurfaceMap | None = None,
    body_source: BodyModel | None = None,
    rigid_groups: Sequence[RigidGroup] = (),
) -> AssemblyReport:
    """Build the combined model on ``body``'s topology.

    ``body_source`` (same skeleton, other topology) replaces skinning weights,
    pose basis and joint regressor of ``body`` by transferring them. Without a
    mask, the head region is every body vertex lying on the head surface.
    """
    notes = []
    if surface_map is None:
        surface_map = build_surface_map(head.template, head.faces, body.template)
    elif surface_map.n_target != body.n_vertices or surface_map.n_source != head.template.shape[0]:
        raise TransferError("surface map does not connect the head and body meshes")
    if head_mask is None:
        head_mask = surface_mask(surface_map, head.template, body.template)
        notes.append(f"head mask derived from the surface map ({int(head_mask.sum())} vertices)")
    head_mask = np.asarray(head_mask, dtype=float)
    if head_mask.shape != (body.n_vertices,):
        raise TransferError(f"head mask has shape {head_mask.shape}, expected ({body.n_vertices},)")

    face_basis, body_basis = blend_identity_bases(apply_map(surface_map, head.face_identity_basis),
                                                  body.body_identity_basis, head_mask)
    expression = apply_map(surface_map, head.expression_basis) * head_mask[None, :, None]

    weights, pose_basis, regressor = body.skinning_weights, body.pose_basis, body.joint_regressor
    if body_source is not None:
        if body_source.n_joints != body.n_joints:
            raise TransferError("body source and body have different skeletons")
        src_map = build_surface_map(body_source.template, body_source.faces, body.template)
        weights = apply_map(src_map, body_source.skinning_weights.T).T
        pose_basis = apply_map(src_map, body_source.pose_basis)
        regressor = transfer_joint_regressor(body_source.joint_regressor, body_source.template, body.template)
        notes.append("skinning, pose basis and joint regressor transferred from the body source")

    regressor = np.array(regressor, dtype=float)
    for group in rigid_groups:
        weights = override_rigid_skinning(weights, group.vertices, group.joint)
        if group.regress_from_extremes:
            regressor[group.joint] = joint_regressor_from_extremes(group.vertices, body.template)

    model = replace(
        body,
        face_identity_basis=face_basis,
        body_identity_basis=body_basis,
        expression_basis=expression,
        pose_basis=pose_basis,
        skinning_weights=weights,
        joint_regressor=regressor,
    ).validate()
    return AssemblyReport(model, surface_map, head_mask, notes)
