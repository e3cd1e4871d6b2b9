"""Pose library: archives, GMM pose classes, weighted sampling, mirroring and splicing."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import container
from .model import BodyModel, Pose

ACTIVITY_EPS = 1e-6
VARIANCE_FLOOR = 1e-6
_MIRROR_SIGN = np.array([1.0, -1.0, -1.0])


class PoseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PoseFrame:
    body: np.ndarray  # (B, 3) axis-angle, root first
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    left_hand: np.ndarray | None = None  # (H, 3)
    right_hand: np.ndarray | None = None
    expression: np.ndarray | None = None  # (E,)
    eyes: np.ndarray | None = None  # (2, 3), left then right
    has_hands: bool = False

    def equals(self, other: "PoseFrame") -> bool:
        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))

        return (
            same(self.body, other.body)
            and same(self.root_translation, other.root_translation)
            and same(self.left_hand, other.left_hand)
            and same(self.right_hand, other.right_hand)
            and same(self.expression, other.expression)
            and same(self.eyes, other.eyes)
            and self.has_hands == other.has_hands
        )


@dataclass(frozen=True, eq=False)
class PoseArchive:
    """Stacked pose frames sharing one joint layout.

    Optional channels are either absent (None) or present for every frame;
    ``has_hands`` marks which frames carry captured hand poses.
    """

    body: np.ndarray  # (F, B, 3)
    fps: float = 30.0
    root_translation: np.ndarray | None = None  # (F, 3)
    left_hand: np.ndarray | None = None  # (F, H, 3)
    right_hand: np.ndarray | None = None
    expression: np.ndarray | None = None  # (F, E)
    eyes: np.ndarray | None = None  # (F, 2, 3)
    has_hands: np.ndarray | None = None  # (F,) bool
    joint_mirror: tuple[int, ...] | None = None  # over body joints

    def __post_init__(self):
        body = np.asarray(self.body, dtype=float)
        if body.ndim != 3 or body.shape[2] != 3:
            raise PoseError(f"body poses must be (frames, joints, 3), got {body.shape}")
        if not self.fps > 0:
            raise PoseError("fps must be positive")
        F = body.shape[0]
        object.__setattr__(self, "body", body)
        if self.root_translation is None:
            object.__setattr__(self, "root_translation", np.zeros((F, 3)))
        if self.has_hands is None:
            object.__setattr__(self, "has_hands", np.full(F, self.left_hand is not None, dtype=bool))
        object.__setattr__(self, "has_hands", np.asarray(self.has_hands, dtype=bool))
        for name in ("root_translation", "left_hand", "right_hand", "expression", "eyes"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape[0] != F:
                    raise PoseError(f"channel {name} has {arr.shape[0]} frames, expected {F}")
                object.__setattr__(self, name, arr)
        if self.joint_mirror is not None:
            object.__setattr__(self, "joint_mirror", tuple(int(i) for i in self.joint_mirror))

    def __len__(self) -> int:
        return self.body.shape[0]

    @property
    def n_body_joints(self) -> int:
        return self.body.shape[1]

    def body_vectors(self) -> np.ndarray:
        """Flattened body poses (F, 3B); hands and eyes excluded."""
        return self.body.reshape(len(self), -1)

    def frame(self, i: int) -> PoseFrame:
        def pick(arr):
            return None if arr is None else arr[i].copy()

        return PoseFrame(
            body=self.body[i].copy(),
            root_translation=self.root_translation[i].copy(),
            left_hand=pick(self.left_hand),
            right_hand=pick(self.right_hand),
            expression=pick(self.expression),
            eyes=pick(self.eyes),
            has_hands=bool(self.has_hands[i]),
        )

    @classmethod
    def from_frames(cls, frames: Sequence[PoseFrame], fps: float = 30.0, joint_mirror=None) -> "PoseArchive":
        if not frames:
            raise PoseError("no frames")

        def stack(name):
            vals = [getattr(f, name) for f in frames]
            if all(v is None for v in vals):
                return None
            if any(v is None for v in vals):
                raise PoseError(f"channel {name} present in some frames only")
            return np.stack(vals)

        return cls(
            body=np.stack([f.body for f in frames]),
            fps=fps,
            root_translation=np.stack([f.root_translation for f in frames]),
            left_hand=stack("left_hand"),
            right_hand=stack("right_hand"),
            expression=stack("expression"),
            eyes=stack("eyes"),
            has_hands=np.array([f.has_hands for f in frames]),
            joint_mirror=joint_mirror,
        )


_CHANNELS = ("body", "root_translation", "left_hand", "right_hand", "expression", "eyes")


def archive_to_arrays(archive: PoseArchive) -> tuple[dict, dict]:
    arrays = {name: getattr(archive, name) for name in _CHANNELS if getattr(archive, name) is not None}
    arrays["has_hands"] = archive.has_hands.astype(np.uint8)
    meta = {
        "kind": "pose_archive",
        "fps": archive.fps,
        "K": archive.n_body_joints,
        "counts": {
            "frames": len(archive),
            "hand_joints": None if archive.left_hand is None else archive.left_hand.shape[1],
            "expression": None if archive.expression is None else archive.expression.shape[1],
            "eyes": None if archive.eyes is None else archive.eyes.shape[1],
        },
        "channels": [n for n in _CHANNELS if n in arrays],
        "joint_mirror": None if archive.joint_mirror is None else list(archive.joint_mirror),
    }
    return meta, arrays


def archive_from_arrays(meta: Mapping, arrays: Mapping[str, np.ndarray]) -> PoseArchive:
    if meta.get("kind", "pose_archive") != "pose_archive":
        raise PoseError(f"not a pose archive (kind={meta.get('kind')!r})")
    return PoseArchive(
        body=arrays["body"],
        fps=float(meta.get("fps", 30.0)),
        root_translation=arrays.get("root_translation"),
        left_hand=arrays.get("left_hand"),
        right_hand=arrays.get("right_hand"),
        expression=arrays.get("expression"),
        eyes=arrays.get("eyes"),
        has_hands=None if "has_hands" not in arrays else np.asarray(arrays["has_hands"]).astype(bool),
        joint_mirror=meta.get("joint_mirror"),
    )


def save_archive(path: str | Path, archive: PoseArchive) -> None:
    meta, arrays = archive_to_arrays(archive)
    container.write(path, meta, arrays)


def load_archive(path: str | Path) -> PoseArchive:
    meta, arrays = container.read(path)
    return archive_from_arrays(meta, arrays)


# --- Gaussian mixture ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Diagonal-covariance Gaussian mixture."""

    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, d)
    variances: np.ndarray  # (M, d)
    labels: tuple[str, ...] = ()
    log_likelihood_trace: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).reshape(-1))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        object.__setattr__(self, "variances", np.atleast_2d(np.asarray(self.variances, dtype=float)))
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"c{i}" for i in range(self.n_components)))
        if self.means.shape != self.variances.shape or self.means.shape[0] != self.weights.shape[0]:
            raise PoseError("GMM weights, means and variances disagree in shape")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1) > 1e-9:
            raise PoseError("GMM weights must be non-negative and sum to 1")
        if not (self.variances > 0).all():
            raise PoseError("GMM variances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_densities(self, x: np.ndarray) -> np.ndarray:
        """log(w_k N(x; mu_k, diag var_k)) for x of shape (n, d); returns (n, M)."""
        x = np.atleast_2d(x)
        diff2 = (x[:, None, :] - self.means[None]) ** 2
        log_norm = -0.5 * (self.dim * np.log(2 * np.pi) + np.log(self.variances).sum(axis=1))
        return np.log(np.where(self.weights > 0, self.weights, 1.0)) + np.where(
            self.weights > 0, log_norm - 0.5 * (diff2 / self.variances[None]).sum(-1), -np.inf
        )

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_densities(x), axis=1)

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        lp = self.component_log_densities(x)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    def to_json(self) -> dict:
        return {
            "kind": "gmm",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "labels": list(self.labels),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "GmmModel":
        return cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]), tuple(d.get("labels", ())))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def fit_gmm(
    x: np.ndarray,
    n_components: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    var_floor: float = VARIANCE_FLOOR,
) -> GmmModel:
    """EM for a diagonal Gaussian mixture with k-means++ initialization.

    Stops when the mean per-sample log-likelihood improves by less than
    ``tol`` or after ``max_iter`` iterations. Variances are clamped from below
    at ``var_floor``.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise PoseError("no data to fit")
    if n_components < 1:
        raise PoseError("n_components must be >= 1")
    if x.shape[0] < n_components:
        raise PoseError("fewer samples than mixture components")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, n_components, rng)
    assign = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
    resp = np.zeros((x.shape[0], n_components))
    resp[np.arange(x.shape[0]), assign] = 1.0

    trace = []
    gmm = None
    for _ in range(max_iter):
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        var = np.einsum("nk,nkd->kd", resp, (x[:, None, :] - means[None]) ** 2) / nk[:, None]
        var = np.maximum(var, var_floor)
        gmm = GmmModel(weights, means, var)
        lp = gmm.component_log_densities(x)
        ll = float(logsumexp(lp, axis=1).mean())
        resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            break
        trace.append(ll)
    labels = label_tpose(gmm)
    return replace(gmm, labels=labels, log_likelihood_trace=tuple(trace))


def label_tpose(gmm: GmmModel) -> tuple[str, ...]:
    """Name the component with the smallest mean absolute angle "tpose"."""
    activity = np.abs(gmm.means).mean(axis=1)
    t = int(np.argmin(activity))
    return tuple("tpose" if i == t else f"c{i}" for i in range(gmm.n_components))


def fit_pose_gmm(archive: PoseArchive, n_components: int, seed: int = 0, **kw) -> GmmModel:
    return fit_gmm(archive.body_vectors(), n_components, seed=seed, **kw)


def classify(gmm: GmmModel, frame) -> int:
    """Most responsible component for a frame (or flat body vector); ties go low."""
    vec = frame.body.reshape(-1) if isinstance(frame, PoseFrame) else np.asarray(frame, dtype=float).reshape(-1)
    return int(np.argmax(gmm.component_log_densities(vec[None])[0]))


def classify_many(gmm: GmmModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(gmm.component_log_densities(x), axis=1)


def activity_weights(values: np.ndarray, exponent: float) -> np.ndarray:
    """(mean |value| + eps) ** exponent per row."""
    v = np.asarray(values, dtype=float).reshape(len(values), -1)
    return (np.abs(v).mean(axis=1) + ACTIVITY_EPS) ** exponent


def sampling_weights(
    archive: PoseArchive,
    gmm: GmmModel,
    class_weights: Mapping | None = None,
    activity_exponent: float = 0.0,
) -> np.ndarray:
    """Normalized per-frame sampling probabilities.

    Each frame's weight is its class weight (keyed by component index or
    label, default 1) times its activity ``(mean |theta| + eps) ** exponent``.
    """
    if activity_exponent < 0:
        raise PoseError("activity exponent must be >= 0")
    per_class = np.ones(gmm.n_components)
    for key, w in (class_weights or {}).items():
        if w < 0:
            raise PoseError("class weights must be non-negative")
        idx = gmm.label_index(key) if isinstance(key, str) and not key.isdigit() else int(key)
        per_class[idx] = w
    x = archive.body_vectors()
    w = per_class[classify_many(gmm, x)] * activity_weights(x, activity_exponent)
    total = w.sum()
    if not total > 0:
        raise PoseError("all sampling weights are zero")
    return w / total


def expression_weights(expressions: np.ndarray, exponent: float) -> np.ndarray:
    """Sampling probabilities for expression frames, by mean blendshape activation."""
    w = activity_weights(expressions, exponent)
    return w / w.sum()


def _check_mirror_map(mirror: Sequence[int], n: int) -> np.ndarray:
    m = np.asarray(mirror, dtype=np.int64)
    if m.shape != (n,) or (m < 0).any() or (m >= n).any() or not np.array_equal(m[m], np.arange(n)):
        raise PoseError("joint mirror map must be an involution over the body joints")
    return m


def _reflect(rotvecs: np.ndarray | None) -> np.ndarray | None:
    return None if rotvecs is None else rotvecs * _MIRROR_SIGN


def mirror_pose(frame: PoseFrame, joint_mirror: Sequence[int]) -> PoseFrame:
    """Reflect a pose across the sagittal (x = 0) plane.

    Paired joints swap, axis-angle vectors map (x, y, z) -> (x, -y, -z),
    hands and eyes swap sides and the root translation's x flips.
    Expression is left unchanged.
    """
    m = _check_mirror_map(joint_mirror, frame.body.shape[0])
    eyes = None if frame.eyes is None else _reflect(frame.eyes[::-1])
    return PoseFrame(
        body=_reflect(frame.body[m]),
        root_translation=frame.root_translation * np.array([-1.0, 1.0, 1.0]),
        left_hand=_reflect(frame.right_hand),
        right_hand=_reflect(frame.left_hand),
        expression=None if frame.expression is None else frame.expression.copy(),
        eyes=eyes,
        has_hands=frame.has_hands,
    )


def draw_index(weights: np.ndarray, rng: np.random.Generator, mirror_prob: float = 0.0) -> tuple[int, bool]:
    idx = int(rng.choice(len(weights), p=weights))
    mirrored = bool(rng.random() < mirror_prob)
    return idx, mirrored


def sample_frame(
    archive: PoseArchive,
    weights: np.ndarray,
    rng: np.random.Generator,
    mirror_prob: float = 0.5,
    joint_mirror: Sequence[int] | None = None,
) -> PoseFrame:
    idx, mirrored = draw_index(weights, rng, mirror_prob)
    frame = archive.frame(idx)
    if mirrored:
        mapping = joint_mirror if joint_mirror is not None else archive.joint_mirror
        if mapping is None:
            raise PoseError("mirroring requested but no joint mirror map is available")
        frame = mirror_pose(frame, mapping)
    return frame


def splice(
    body: PoseFrame,
    left_hand: np.ndarray | None = None,
    right_hand: np.ndarray | None = None,
    expression: np.ndarray | None = None,
    eye_pose: np.ndarray | None = None,
) -> PoseFrame:
    """Overwrite hand, expression and eye channels of a body frame.

    Frames captured without hands must be given both hand poses.
    """
    if not body.has_hands and (left_hand is None or right_hand is None):
        raise PoseError("frame has no captured hands; both hand poses are required")

    def pick(new, old):
        return old if new is None else np.array(new, dtype=float, copy=True)

    return PoseFrame(
        body=body.body.copy(),
        root_translation=body.root_translation.copy(),
        left_hand=pick(left_hand, body.left_hand),
        right_hand=pick(right_hand, body.right_hand),
        expression=pick(expression, body.expression),
        eyes=pick(eye_pose, body.eyes),
        has_hands=True,
    )


def frame_to_pose(model: BodyModel, frame: PoseFrame) -> tuple[Pose, np.ndarray | None]:
    """Scatter a frame's channels into the model's joint layout.

    Returns the model pose and the expression vector (or None).
    """
    theta = np.zeros((model.n_joints, 3))
    body_idx = model.body_joints()
    if frame.body.shape[0] != len(body_idx):
        raise PoseError(f"frame has {frame.body.shape[0]} body joints, model has {len(body_idx)}")
    theta[list(body_idx)] = frame.body
    for key, chan in (("left_hand", frame.left_hand), ("right_hand", frame.right_hand), ("eyes", frame.eyes)):
        idx = model.joint_groups.get(key, ())
        if chan is not None and idx:
            if chan.shape[0] != len(idx):
                raise PoseError(f"{key} channel has {chan.shape[0]} joints, model has {len(idx)}")
            theta[list(idx)] = chan
    return Pose(theta, frame.root_translation), frame.expression


def body_mirror_map(model: BodyModel) -> tuple[int, ...]:
    """The model's joint mirror map restricted to (and re-indexed over) body joints."""
    if model.joint_mirror is None:
        raise PoseError("model has no joint mirror map")
    body = model.body_joints()
    pos = {j: i for i, j in enumerate(body)}
    return tuple(pos[model.joint_mirror[j]] for j in body)
