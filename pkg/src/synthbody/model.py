"""Body model core: shape blendshapes, pose correctives, joint regression and LBS."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import container
from .rotation import rodrigues

WEIGHT_TOL = 1e-6


class ModelError(ValueError):
    """Raised when model arrays or parameters are inconsistent."""


class ShapeError(ModelError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Immutable articulated body model.

    Bases are stored component-major, ``(n_components, N, 3)``; skinning
    weights and the joint regressor are ``(K, N)``. ``parents[0]`` is -1.
    """

    template: np.ndarray
    faces: np.ndarray
    parents: np.ndarray
    face_identity_basis: np.ndarray
    body_identity_basis: np.ndarray
    expression_basis: np.ndarray
    pose_basis: np.ndarray
    skinning_weights: np.ndarray
    joint_regressor: np.ndarray
    joint_names: tuple[str, ...] = ()
    # Named joint index groups, e.g. "left_hand", "right_hand", "eyes", "head".
    joint_groups: Mapping[str, tuple[int, ...]] = field(default_factory=dict)
    # Involutive left/right joint pairing used for mirroring; None if unknown.
    joint_mirror: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("template", "face_identity_basis", "body_identity_basis", "expression_basis",
                     "pose_basis", "skinning_weights", "joint_regressor"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "faces", _frozen(np.asarray(self.faces).reshape(-1, 3), np.int64))
        object.__setattr__(self, "parents", _frozen(self.parents, np.int64))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "joint_groups", {k: tuple(int(i) for i in v) for k, v in self.joint_groups.items()})
        if self.joint_mirror is not None:
            object.__setattr__(self, "joint_mirror", tuple(int(i) for i in self.joint_mirror))

    @property
    def n_vertices(self) -> int:
        return self.template.shape[0]

    @property
    def n_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def n_face_identity(self) -> int:
        return self.face_identity_basis.shape[0]

    @property
    def n_body_identity(self) -> int:
        return self.body_identity_basis.shape[0]

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[0]

    @property
    def dims(self) -> dict[str, int]:
        return {
            "N": self.n_vertices,
            "K": self.n_joints,
            "gamma": self.n_face_identity,
            "beta": self.n_body_identity,
            "psi": self.n_expression,
            "faces": int(self.faces.shape[0]),
        }

    def body_joints(self) -> tuple[int, ...]:
        """Joints not belonging to the hand or eye groups, in index order."""
        excluded = set()
        for key in ("left_hand", "right_hand", "eyes"):
            excluded.update(self.joint_groups.get(key, ()))
        return tuple(k for k in range(self.n_joints) if k not in excluded)

    def check(self) -> list[str]:
        """Return a list of invariant violations (empty when the model is valid)."""
        problems = []
        N, K = self.n_vertices, self.n_joints
        if self.template.ndim != 2 or self.template.shape[1] != 3:
            problems.append(f"template must be N x 3, got {self.template.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= N):
            problems.append("face index out of range")
        for name in ("face_identity_basis", "body_identity_basis", "expression_basis"):
            arr = getattr(self, name)
            if arr.ndim != 3 or arr.shape[1:] != (N, 3):
                problems.append(f"{name} must be (n, {N}, 3), got {arr.shape}")
        if self.pose_basis.shape != (9 * (K - 1), N, 3):
            problems.append(f"pose_basis must be ({9 * (K - 1)}, {N}, 3), got {self.pose_basis.shape}")
        for name in ("skinning_weights", "joint_regressor"):
            if getattr(self, name).shape != (K, N):
                problems.append(f"{name} must be ({K}, {N}), got {getattr(self, name).shape}")
        if problems:
            return problems

        roots = [k for k in range(K) if self.parents[k] < 0]
        if roots != [0]:
            problems.append(f"skeleton must have exactly one root at index 0, got roots {roots}")
        for k in range(1, K):
            if not 0 <= self.parents[k] < k:
                problems.append(f"joint {k}: parent {self.parents[k]} breaks topological order")
        W = self.skinning_weights
        if (W < -WEIGHT_TOL).any():
            problems.append("negative skinning weight")
        bad = np.flatnonzero(np.abs(W.sum(axis=0) - 1) > WEIGHT_TOL)
        if bad.size:
            problems.append(f"skinning weights of {bad.size} vertices do not sum to 1 (first: {bad[0]})")
        bad = np.flatnonzero(np.abs(self.joint_regressor.sum(axis=1) - 1) > WEIGHT_TOL)
        if bad.size:
            problems.append(f"joint regressor rows {bad.tolist()} do not sum to 1")
        for name in ("template", "face_identity_basis", "body_identity_basis", "expression_basis",
                     "pose_basis", "skinning_weights", "joint_regressor"):
            if not np.isfinite(getattr(self, name)).all():
                problems.append(f"{name} has non-finite entries")
        if self.joint_names and len(self.joint_names) != K:
            problems.append("joint_names length does not match K")
        for key, idx in self.joint_groups.items():
            if any(not 0 <= i < K for i in idx):
                problems.append(f"joint group {key!r} has out-of-range joints")
        if self.joint_mirror is not None:
            m = self.joint_mirror
            if len(m) != K or any(not 0 <= m[i] < K or m[m[i]] != i for i in range(K)):
                problems.append("joint_mirror is not an involution over K joints")
        return problems

    def validate(self) -> "BodyModel":
        problems = self.check()
        if problems:
            raise ModelError("; ".join(problems))
        return self


@dataclass(frozen=True)
class Pose:
    """Per-joint axis-angle rotations (K, 3) plus a world root translation."""

    theta: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "root_translation", np.asarray(self.root_translation, dtype=float).reshape(3))
        if not (np.isfinite(self.theta).all() and np.isfinite(self.root_translation).all()):
            raise ShapeError("pose entries must be finite")

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        return cls(np.zeros((n_joints, 3)))


@dataclass(frozen=True)
class ShapeParams:
    gamma: np.ndarray
    beta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("gamma", "beta", "psi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
            if not np.isfinite(getattr(self, name)).all():
                raise ShapeError(f"{name} must be finite")

    @classmethod
    def zeros(cls, model: BodyModel) -> "ShapeParams":
        return cls(np.zeros(model.n_face_identity), np.zeros(model.n_body_identity), np.zeros(model.n_expression))


def _check_shape(model: BodyModel, shape: ShapeParams | None = None, pose: Pose | None = None) -> None:
    if shape is not None:
        for name, n in (("gamma", model.n_face_identity), ("beta", model.n_body_identity), ("psi", model.n_expression)):
            if getattr(shape, name).shape != (n,):
                raise ShapeError(f"{name} has length {getattr(shape, name).shape[0]}, model expects {n}")
    if pose is not None and pose.theta.shape != (model.n_joints, 3):
        raise ShapeError(f"theta has shape {pose.theta.shape}, model expects ({model.n_joints}, 3)")


def pose_features(theta: np.ndarray) -> np.ndarray:
    """Concatenated vec(R_j - I) over non-root joints, 9 * (K - 1) entries."""
    R = rodrigues(np.asarray(theta, dtype=float).reshape(-1, 3)[1:])
    return (R - np.eye(3)).reshape(-1)


def pose_blend_offsets(model: BodyModel, pose: Pose) -> np.ndarray:
    _check_shape(model, pose=pose)
    return np.tensordot(pose_features(pose.theta), model.pose_basis, axes=1)


def shaped_template(model: BodyModel, gamma, beta) -> np.ndarray:
    """Template plus face and body identity displacements (no expression)."""
    return (
        model.template
        + np.tensordot(np.asarray(gamma, dtype=float), model.face_identity_basis, axes=1)
        + np.tensordot(np.asarray(beta, dtype=float), model.body_identity_basis, axes=1)
    )


def unposed_mesh(model: BodyModel, shape: ShapeParams, pose: Pose) -> np.ndarray:
    _check_shape(model, shape, pose)
    return (
        shaped_template(model, shape.gamma, shape.beta)
        + np.tensordot(shape.psi, model.expression_basis, axes=1)
        + pose_blend_offsets(model, pose)
    )


def joint_locations(model: BodyModel, gamma, beta) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if gamma.shape != (model.n_face_identity,) or beta.shape != (model.n_body_identity,):
        raise ShapeError("identity coefficient lengths do not match the model")
    return model.joint_regressor @ shaped_template(model, gamma, beta)


def global_joint_transforms(model: BodyModel, pose: Pose, joints: np.ndarray) -> np.ndarray:
    """Rest-to-posed rigid transforms, shape (K, 4, 4).

    Each joint rotates about its rest location in its parent's frame; the
    returned transform already has the rest joint location removed, so it
    maps rest-pose vertices straight to posed space.
    """
    _check_shape(model, pose=pose)
    joints = np.asarray(joints, dtype=float)
    R = rodrigues(pose.theta)
    K = model.n_joints
    rot = np.empty((K, 3, 3))
    pos = np.empty((K, 3))
    rot[0] = R[0]
    pos[0] = joints[0] + pose.root_translation
    for k in range(1, K):
        p = model.parents[k]
        rot[k] = rot[p] @ R[k]
        pos[k] = rot[p] @ (joints[k] - joints[p]) + pos[p]
    A = np.zeros((K, 4, 4))
    A[:, :3, :3] = rot
    A[:, :3, 3] = pos - np.einsum("kab,kb->ka", rot, joints)
    A[:, 3, 3] = 1.0
    return A


def posed_joints(model: BodyModel, pose: Pose, joints: np.ndarray) -> np.ndarray:
    """World positions of the joints after posing."""
    A = global_joint_transforms(model, pose, joints)
    return np.einsum("kab,kb->ka", A[:, :3, :3], joints) + A[:, :3, 3]


def lbs(verts: np.ndarray, transforms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Linear blend skinning: v'_i = sum_k W[k, i] * G_k(v_i)."""
    verts = np.asarray(verts, dtype=float)
    blended = np.einsum("kn,kab->nab", np.asarray(weights, dtype=float), transforms)
    return np.einsum("nab,nb->na", blended[:, :3, :3], verts) + blended[:, :3, 3]


def generate_mesh(model: BodyModel, shape: ShapeParams, pose: Pose) -> np.ndarray:
    """Posed mesh vertices (N, 3) for the given identity, expression and pose."""
    verts = unposed_mesh(model, shape, pose)
    joints = joint_locations(model, shape.gamma, shape.beta)
    transforms = global_joint_transforms(model, pose, joints)
    return lbs(verts, transforms, model.skinning_weights)


# --- persistence ---------------------------------------------------------

_ARRAY_FIELDS = ("template", "faces", "parents", "face_identity_basis", "body_identity_basis",
                 "expression_basis", "pose_basis", "skinning_weights", "joint_regressor")


def model_to_container(model: BodyModel, extra_meta: Mapping | None = None) -> tuple[dict, dict]:
    meta = {
        "kind": "body_model",
        "dims": model.dims,
        "joint_names": list(model.joint_names),
        "joint_groups": {k: list(v) for k, v in model.joint_groups.items()},
        "joint_mirror": None if model.joint_mirror is None else list(model.joint_mirror),
    }
    if extra_meta:
        meta.update(extra_meta)
    return meta, {name: getattr(model, name) for name in _ARRAY_FIELDS}


def save_model(path: str | Path, model: BodyModel, extra_meta: Mapping | None = None) -> None:
    meta, arrays = model_to_container(model, extra_meta)
    container.write(path, meta, arrays)


def model_from_container(meta: Mapping, arrays: Mapping[str, np.ndarray], validate: bool = True) -> BodyModel:
    missing = [n for n in _ARRAY_FIELDS if n not in arrays]
    if missing:
        raise ModelError(f"container is missing arrays: {missing}")
    model = BodyModel(
        **{name: arrays[name] for name in _ARRAY_FIELDS},
        joint_names=tuple(meta.get("joint_names") or ()),
        joint_groups=meta.get("joint_groups") or {},
        joint_mirror=meta.get("joint_mirror"),
    )
    declared = meta.get("dims")
    if declared:
        actual = model.dims
        diff = {k: (v, actual.get(k)) for k, v in declared.items() if actual.get(k) != v}
        if diff:
            raise ModelError(f"declared dims disagree with arrays: {diff}")
    return model.validate() if validate else model


def load_model(path: str | Path, validate: bool = True) -> BodyModel:
    meta, arrays = container.read(path)
    if meta.get("kind") != "body_model":
        raise ModelError(f"{path}: not a body model container (kind={meta.get('kind')!r})")
    return model_from_container(meta, arrays, validate=validate)


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Write positions and faces only; 17 significant digits keep float64 exact."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=float).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            # fan-triangulate polygons
            for i in range(1, len(idx) - 1):
                faces.append([idx[0], idx[i], idx[i + 1]])
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
