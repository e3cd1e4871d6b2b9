"""Pinhole cameras, landmark definitions and synthetic 2D landmark observations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import BodyModel, Pose, ShapeParams, generate_mesh
from .rotation import matrix_to_rotvec, rodrigues

MIN_DEPTH = 1e-6
MIN_SIGMA = 0.1


class BehindCameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))  # axis-angle, world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 1024
    height: int = 1024

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if not np.isfinite(self.rotation).all():
            raise ValueError("camera rotation must be finite")

    @property
    def R(self) -> np.ndarray:
        return rodrigues(self.rotation)

    def with_extrinsics(self, rotation, translation) -> "Camera":
        return Camera(self.fx, self.fy, self.cx, self.cy, rotation, translation, self.width, self.height)

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d.get("rotation", [0, 0, 0]), d.get("translation", [0, 0, 0]),
                   int(d.get("width", 1024)), int(d.get("height", 1024)))


def save_cameras(path: str | Path, cameras: Sequence[Camera]) -> None:
    Path(path).write_text(json.dumps([c.to_json() for c in cameras], indent=1))


def load_cameras(path: str | Path) -> list[Camera]:
    return [Camera.from_json(d) for d in json.loads(Path(path).read_text())]


def look_at_camera(centre, target=(0.0, 1.0, 0.0), up=(0.0, 1.0, 0.0), focal: float = 1000.0,
                   width: int = 1024, height: int = 1024) -> Camera:
    """Camera at ``centre`` looking at ``target`` with image y pointing down."""
    centre = np.asarray(centre, dtype=float)
    z = np.asarray(target, dtype=float) - centre
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Camera(focal, focal, width / 2, height / 2, matrix_to_rotvec(R), -R @ centre, width, height)


def default_rig(n_cameras: int = 3, radius: float = 3.0, height: float = 1.2, target=(0.0, 1.0, 0.0),
                focal: float = 1000.0) -> list[Camera]:
    """Cameras evenly spread on a circle in front of and around the subject."""
    cams = []
    for i in range(n_cameras):
        a = 2 * np.pi * i / n_cameras
        centre = (radius * np.sin(a), height + 0.15 * np.cos(3 * a), radius * np.cos(a))
        cams.append(look_at_camera(centre, target, focal=focal))
    return cams


def project(camera: Camera, world_point) -> np.ndarray:
    """Pinhole projection of one world point to pixel coordinates (u, v)."""
    p = camera.R @ np.asarray(world_point, dtype=float) + camera.translation
    if p[2] <= MIN_DEPTH:
        raise BehindCameraError(f"point is behind the camera (depth {p[2]:.3g})")
    return np.array([camera.fx * p[0] / p[2] + camera.cx, camera.fy * p[1] / p[2] + camera.cy])


def project_points(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns (uv, valid) where invalid points are behind the camera."""
    p = np.asarray(points, dtype=float) @ camera.R.T + camera.translation
    valid = p[:, 2] > MIN_DEPTH
    z = np.where(valid, p[:, 2], 1.0)
    uv = np.stack([camera.fx * p[:, 0] / z + camera.cx, camera.fy * p[:, 1] / z + camera.cy], axis=1)
    return uv, valid


@dataclass(frozen=True)
class LandmarkDef:
    name: str
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if len(set(self.indices)) != len(self.indices):
            raise ValueError(f"landmark definition {self.name!r} has duplicate vertices")

    def __len__(self) -> int:
        return len(self.indices)

    def check(self, n_vertices: int) -> None:
        if any(not 0 <= i < n_vertices for i in self.indices):
            raise ValueError(f"landmark definition {self.name!r} references vertices outside [0, {n_vertices})")

    def to_json(self) -> dict:
        return {"name": self.name, "indices": list(self.indices)}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "LandmarkDef":
        d = json.loads(Path(path).read_text())
        return cls(d["name"], d["indices"])


def make_landmark_def(model: BodyModel, count: int, name: str = "dense", start: int = 0) -> LandmarkDef:
    """Spread ``count`` landmarks over the template by farthest-point sampling."""
    verts = model.template
    if not 0 < count <= verts.shape[0]:
        raise ValueError(f"cannot pick {count} landmarks from {verts.shape[0]} vertices")
    chosen = [start]
    d2 = np.sum((verts - verts[start]) ** 2, axis=1)
    for _ in range(1, count):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((verts - verts[nxt]) ** 2, axis=1))
    return LandmarkDef(name, sorted(chosen))


@dataclass(frozen=True)
class LandmarkObservation:
    frame: int
    cam: int
    lm: int
    u: float
    v: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("observation sigma must be positive")


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Column-stored landmark observations plus per-camera drop counts."""

    frame: np.ndarray
    cam: np.ndarray
    lm: np.ndarray
    uv: np.ndarray
    sigma: np.ndarray
    dropped: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.frame.shape[0]

    def records(self) -> Iterable[LandmarkObservation]:
        for f, c, l, (u, v), s in zip(self.frame.tolist(), self.cam.tolist(), self.lm.tolist(),
                                      self.uv.tolist(), self.sigma.tolist()):
            yield LandmarkObservation(f, c, l, u, v, s)

    def count_per_camera(self, n_cameras: int) -> list[int]:
        return np.bincount(self.cam, minlength=n_cameras).tolist()

    @classmethod
    def from_records(cls, records: Sequence[LandmarkObservation]) -> "ObservationSet":
        records = list(records)
        return cls(
            frame=np.array([r.frame for r in records], dtype=np.int64),
            cam=np.array([r.cam for r in records], dtype=np.int64),
            lm=np.array([r.lm for r in records], dtype=np.int64),
            uv=np.array([[r.u, r.v] for r in records], dtype=float).reshape(-1, 2),
            sigma=np.array([r.sigma for r in records], dtype=float),
        )

    def save_ndjson(self, path: str | Path) -> None:
        lines = [
            json.dumps({"frame": r.frame, "cam": r.cam, "lm": r.lm, "u": r.u, "v": r.v, "sigma": r.sigma})
            for r in self.records()
        ]
        Path(path).write_text("".join(line + "\n" for line in lines))

    @classmethod
    def load_ndjson(cls, path: str | Path) -> "ObservationSet":
        recs = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                recs.append(LandmarkObservation(int(d["frame"]), int(d["cam"]), int(d["lm"]),
                                                float(d["u"]), float(d["v"]), float(d["sigma"])))
        return cls.from_records(recs)


def generate_observations(
    model: BodyModel,
    shape: ShapeParams,
    poses: Sequence[Pose],
    cameras: Sequence[Camera],
    landmarks: LandmarkDef,
    noise_sigma: float = 0.0,
    seed: int = 0,
    expressions: Sequence[np.ndarray] | None = None,
) -> ObservationSet:
    """Project landmark vertices of posed meshes into every camera.

    Gaussian pixel noise of scale ``noise_sigma`` is added; each frame draws
    from its own stream spawned from ``seed`` so results do not depend on
    evaluation order. Landmarks behind a camera are dropped and counted.
    ``expressions`` optionally overrides ``shape.psi`` per frame.
    """
    landmarks.check(model.n_vertices)
    idx = np.array(landmarks.indices, dtype=np.int64)
    sigma = max(float(noise_sigma), MIN_SIGMA)
    streams = np.random.SeedSequence(seed).spawn(len(poses))
    cols = {"frame": [], "cam": [], "lm": [], "uv": []}
    dropped = {c: 0 for c in range(len(cameras))}
    for f, pose in enumerate(poses):
        rng = np.random.default_rng(streams[f])
        frame_shape = shape if expressions is None else ShapeParams(shape.gamma, shape.beta, expressions[f])
        verts = generate_mesh(model, frame_shape, pose)[idx]
        for c, cam in enumerate(cameras):
            uv, valid = project_points(cam, verts)
            # draw noise for every landmark so the stream is independent of drops
            noise = rng.standard_normal(uv.shape) * noise_sigma
            keep = np.flatnonzero(valid)
            dropped[c] += int((~valid).sum())
            cols["frame"].append(np.full(keep.size, f))
            cols["cam"].append(np.full(keep.size, c))
            cols["lm"].append(keep)
            cols["uv"].append(uv[keep] + noise[keep])
    cat = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in cols.items()}
    n = cat["frame"].shape[0]
    return ObservationSet(
        frame=cat["frame"].astype(np.int64),
        cam=cat["cam"].astype(np.int64),
        lm=cat["lm"].astype(np.int64),
        uv=cat["uv"].reshape(n, 2),
        sigma=np.full(n, sigma),
        dropped=dropped,
    )
