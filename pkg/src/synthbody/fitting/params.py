"""Parameter blocks, energy weights, priors and fit configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..identity import GaussianIdentity
from ..model import BodyModel, Pose, ShapeParams
from ..poses import GmmModel
from ..scene import Camera

BLOCKS = ("face_identity", "body_identity", "expression", "pose", "translation", "cameras")


@dataclass(frozen=True, eq=False)
class FitParams:
    """Everything the fit optimizes.

    Shapes: gamma (G,), beta (B,), psi (F, E), theta (F, K, 3), trans (F, 3),
    cam_rot (C, 3), cam_trans (C, 3).
    """

    gamma: np.ndarray
    beta: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    trans: np.ndarray
    cam_rot: np.ndarray
    cam_trans: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, np.array(getattr(self, f.name), dtype=float))
        F = self.theta.shape[0]
        object.__setattr__(self, "psi", self.psi.reshape(F, -1))
        object.__setattr__(self, "theta", self.theta.reshape(F, -1, 3))
        object.__setattr__(self, "trans", self.trans.reshape(F, 3))
        object.__setattr__(self, "cam_rot", self.cam_rot.reshape(-1, 3))
        object.__setattr__(self, "cam_trans", self.cam_trans.reshape(-1, 3))
        if not all(np.isfinite(getattr(self, f.name)).all() for f in fields(self)):
            raise ValueError("fit parameters must be finite")

    @property
    def n_frames(self) -> int:
        return self.theta.shape[0]

    @property
    def n_cameras(self) -> int:
        return self.cam_rot.shape[0]

    def shape(self, frame: int) -> ShapeParams:
        return ShapeParams(self.gamma, self.beta, self.psi[frame])

    def pose(self, frame: int) -> Pose:
        return Pose(self.theta[frame], self.trans[frame])

    def cameras(self, intrinsics: Sequence[Camera]) -> list[Camera]:
        return [c.with_extrinsics(r, t) for c, r, t in zip(intrinsics, self.cam_rot, self.cam_trans)]

    def check(self, model: BodyModel) -> None:
        ok = (
            self.gamma.shape == (model.n_face_identity,)
            and self.beta.shape == (model.n_body_identity,)
            and self.psi.shape == (self.n_frames, model.n_expression)
            and self.theta.shape == (self.n_frames, model.n_joints, 3)
            and self.cam_trans.shape == self.cam_rot.shape
        )
        if not ok:
            raise ValueError("fit parameter shapes do not match the model")

    @classmethod
    def from_truth(cls, shape: ShapeParams, poses: Sequence[Pose], cameras: Sequence[Camera],
                   expressions: Sequence[np.ndarray] | None = None) -> "FitParams":
        psi = np.stack(expressions) if expressions is not None else np.tile(shape.psi, (len(poses), 1))
        return cls(
            shape.gamma, shape.beta, psi,
            np.stack([p.theta for p in poses]), np.stack([p.root_translation for p in poses]),
            np.stack([c.rotation for c in cameras]), np.stack([c.translation for c in cameras]),
        )

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}

    @classmethod
    def from_json(cls, d: Mapping) -> "FitParams":
        return cls(**{f.name: np.array(d[f.name], dtype=float) for f in fields(cls)})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "FitParams":
        return cls.from_json(json.loads(Path(path).read_text()))


class Layout:
    """Flat-vector layout: [gamma, beta, per frame (psi, theta, trans), per camera (rot, trans)]."""

    def __init__(self, G: int, B: int, E: int, K: int, F: int, C: int):
        self.G, self.B, self.E, self.K, self.F, self.C = G, B, E, K, F, C
        self.per_frame = E + 3 * K + 3
        self.frame_base = G + B
        self.cam_base = self.frame_base + F * self.per_frame
        self.size = self.cam_base + 6 * C

    @classmethod
    def for_params(cls, p: FitParams) -> "Layout":
        return cls(p.gamma.size, p.beta.size, p.psi.shape[1], p.theta.shape[1], p.n_frames, p.n_cameras)

    def gamma(self) -> slice:
        return slice(0, self.G)

    def beta(self) -> slice:
        return slice(self.G, self.G + self.B)

    def frame(self, f: int) -> slice:
        s = self.frame_base + f * self.per_frame
        return slice(s, s + self.per_frame)

    def psi(self, f: int) -> slice:
        s = self.frame_base + f * self.per_frame
        return slice(s, s + self.E)

    def theta(self, f: int) -> slice:
        s = self.frame_base + f * self.per_frame + self.E
        return slice(s, s + 3 * self.K)

    def trans(self, f: int) -> slice:
        s = self.frame_base + f * self.per_frame + self.E + 3 * self.K
        return slice(s, s + 3)

    def camera(self, c: int) -> slice:
        s = self.cam_base + 6 * c
        return slice(s, s + 6)

    def pack(self, p: FitParams) -> np.ndarray:
        x = np.empty(self.size)
        x[self.gamma()] = p.gamma
        x[self.beta()] = p.beta
        for f in range(self.F):
            x[self.psi(f)] = p.psi[f]
            x[self.theta(f)] = p.theta[f].reshape(-1)
            x[self.trans(f)] = p.trans[f]
        for c in range(self.C):
            x[self.camera(c)] = np.concatenate([p.cam_rot[c], p.cam_trans[c]])
        return x

    def unpack(self, x: np.ndarray) -> FitParams:
        return FitParams(
            x[self.gamma()],
            x[self.beta()],
            np.stack([x[self.psi(f)] for f in range(self.F)]).reshape(self.F, self.E),
            np.stack([x[self.theta(f)].reshape(self.K, 3) for f in range(self.F)]),
            np.stack([x[self.trans(f)] for f in range(self.F)]),
            np.stack([x[self.camera(c)][:3] for c in range(self.C)]).reshape(self.C, 3),
            np.stack([x[self.camera(c)][3:] for c in range(self.C)]).reshape(self.C, 3),
        )

    def block_mask(self, blocks) -> np.ndarray:
        """Boolean mask of the vector entries belonging to the named blocks."""
        unknown = set(blocks) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown parameter blocks: {sorted(unknown)}")
        m = np.zeros(self.size, dtype=bool)
        if "face_identity" in blocks:
            m[self.gamma()] = True
        if "body_identity" in blocks:
            m[self.beta()] = True
        for f in range(self.F):
            if "expression" in blocks:
                m[self.psi(f)] = True
            if "pose" in blocks:
                m[self.theta(f)] = True
            if "translation" in blocks:
                m[self.trans(f)] = True
        if "cameras" in blocks:
            m[self.cam_base:] = True
        return m


@dataclass(frozen=True)
class EnergyWeights:
    landmarks: float = 1.0
    face_identity: float = 1e-2
    body_identity: float = 1e-2
    expression: float = 1e-2
    pose: float = 1e-2
    temporal: float = 1e-2
    intersect: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"energy weight {f.name} must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: Mapping) -> "EnergyWeights":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown energy weights: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class PosePriorSet:
    """GMM priors over body pose (hands and eyes excluded) and each hand."""

    body: GmmModel | None = None
    left_hand: GmmModel | None = None
    right_hand: GmmModel | None = None


@dataclass(frozen=True)
class FitConfig:
    method: str = "lm"  # "lm" or "lbfgs"
    max_iterations: int = 200
    rel_tol: float = 1e-9
    step_tol: float = 1e-8
    grad_tol: float = 1e-10
    max_rejections: int = 20
    initial_damping: float = 1e-3
    freeze: tuple[str, ...] = ("cameras",)
    # Optional staged schedule: each stage lists the blocks released in it.
    stages: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if self.method not in ("lm", "lbfgs"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        object.__setattr__(self, "freeze", tuple(self.freeze))
        object.__setattr__(self, "stages", tuple(tuple(s) for s in self.stages))
        for name in self.freeze + sum(self.stages, ()):
            if name not in BLOCKS:
                raise ValueError(f"unknown parameter block {name!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["freeze"] = list(self.freeze)
        d["stages"] = [list(s) for s in self.stages]
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "FitConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**d)


FaceIdentityPrior = GaussianIdentity | GmmModel | None
IntersectTerm = Callable[[FitParams], tuple[float, np.ndarray]]


def perturb_init(truth: FitParams, scales: Mapping[str, float], rng: np.random.Generator) -> FitParams:
    """Add independent Gaussian noise to parameter blocks.

    Recognized scale keys: ``pose`` (radians), ``identity`` (applies to gamma
    and beta), ``expression``, ``translation``, ``camera_rotation``,
    ``camera_translation``. Missing keys mean no noise. Draws happen in a
    fixed order regardless of which scales are zero.
    """
    known = {"pose", "identity", "expression", "translation", "camera_rotation", "camera_translation"}
    unknown = set(scales) - known
    if unknown:
        raise ValueError(f"unknown perturbation scales: {sorted(unknown)}")
    if any(v < 0 for v in scales.values()):
        raise ValueError("perturbation scales must be non-negative")

    def noisy(arr, key):
        return arr + scales.get(key, 0.0) * rng.standard_normal(arr.shape)

    return replace(
        truth,
        gamma=noisy(truth.gamma, "identity"),
        beta=noisy(truth.beta, "identity"),
        psi=noisy(truth.psi, "expression"),
        theta=noisy(truth.theta, "pose"),
        trans=noisy(truth.trans, "translation"),
        cam_rot=noisy(truth.cam_rot, "camera_rotation"),
        cam_trans=noisy(truth.cam_trans, "camera_translation"),
    )
