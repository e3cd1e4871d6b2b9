"""Procedural humanoid test models.

Hand-authored production assets are not available, so tests and the CLI
build small bilaterally symmetric humanoids: tubes of vertex rings around
each bone, distance-based skinning weights, ring-centroid joint regressors
and smooth random displacement bases. All arrays are rounded to float32 so a
model survives an SBM1 round trip unchanged.
"""

from __future__ import annotations

import numpy as np

from .model import BodyModel

# name, parent, joint position, bone tip, tube radius. Right-side joints are
# generated by reflecting the "l_" entries across x = 0.
_BODY = [
    ("pelvis", None, (0.0, 0.95, 0.0), (0.0, 1.10, 0.0), 0.14),
    ("l_hip", "pelvis", (0.10, 0.90, 0.0), (0.10, 0.52, 0.0), 0.07),
    ("spine", "pelvis", (0.0, 1.15, 0.0), (0.0, 1.40, 0.0), 0.13),
    ("l_knee", "l_hip", (0.10, 0.50, 0.0), (0.10, 0.08, 0.02), 0.05),
    ("neck", "spine", (0.0, 1.45, 0.0), (0.0, 1.55, 0.01), 0.05),
    ("l_shoulder", "spine", (0.17, 1.42, 0.0), (0.44, 1.42, 0.0), 0.045),
    ("head", "neck", (0.0, 1.58, 0.0), (0.0, 1.80, 0.02), 0.09),
    ("l_elbow", "l_shoulder", (0.45, 1.42, 0.0), (0.69, 1.42, 0.03), 0.038),
]
_WRISTS = [("l_wrist", "l_elbow", (0.70, 1.42, 0.03), (0.77, 1.42, 0.035), 0.03)]
_HANDS = [
    ("l_hand1", "l_wrist", (0.78, 1.42, 0.035), (0.83, 1.42, 0.04), 0.02),
    ("l_hand2", "l_hand1", (0.84, 1.42, 0.04), (0.89, 1.415, 0.045), 0.015),
]
_EYES = [("l_eye", "head", (0.032, 1.66, 0.08), (0.032, 1.66, 0.097), 0.012)]


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _dyadic_columns(w: np.ndarray, bits: int = 20) -> np.ndarray:
    """Round columns to multiples of 2**-bits summing to exactly one.

    Such values are exact in float32 and their float64 sums are exact, so an
    identity pose reproduces the template bit for bit.
    """
    scale = 1 << bits
    q = np.rint(w * scale)
    col = np.arange(w.shape[1])
    top = np.argmax(q, axis=0)
    q[top, col] += scale - q.sum(axis=0)
    return q / scale


def _mirror_name(name: str) -> str:
    if name.startswith("l_"):
        return "r_" + name[2:]
    if name.startswith("r_"):
        return "l_" + name[2:]
    return name


def humanoid_skeleton(hands: bool = False, eyes: bool = False):
    """Joint table ``[(name, parent, pos, tip, radius)]`` in topological order."""
    bones = list(_BODY)
    if hands:
        bones += _WRISTS + _HANDS
    if eyes:
        bones += _EYES
    out = []
    for name, parent, pos, tip, radius in bones:
        out.append((name, parent, pos, tip, radius))
        if name.startswith("l_"):
            out.append((
                _mirror_name(name),
                _mirror_name(parent),
                (-pos[0], pos[1], pos[2]),
                (-tip[0], tip[1], tip[2]),
                radius,
            ))
    return out


def _frame(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = direction / np.linalg.norm(direction)
    # Pick a helper axis that keeps left/right rings mirror images of each other.
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(helper, d)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def _smooth_basis(rng: np.random.Generator, points: np.ndarray, n: int, scale: float, n_waves: int = 6) -> np.ndarray:
    """Random smooth displacement fields, shape (n, N, 3)."""
    out = np.zeros((n, points.shape[0], 3))
    for i in range(n):
        freq = rng.normal(0.0, 3.0, size=(n_waves, 3))
        phase = rng.uniform(0, 2 * np.pi, size=n_waves)
        amp = rng.normal(0.0, 1.0, size=(n_waves, 3)) / np.sqrt(n_waves)
        out[i] = np.sin(points @ freq.T + phase) @ amp
    return scale * out


def procedural_model(
    n_vertices: int = 500,
    n_face_identity: int = 8,
    n_body_identity: int = 8,
    n_expression: int = 6,
    hands: bool = False,
    eyes: bool = False,
    ring_points: int = 8,
    pose_basis_scale: float = 0.01,
    identity_scale: float = 0.02,
    expression_scale: float = 0.01,
    seed: int = 0,
) -> BodyModel:
    """Build a symmetric humanoid with roughly ``n_vertices`` vertices.

    ``n_vertices`` is a target; the exact count is a multiple of
    ``ring_points``. Set ``pose_basis_scale=0`` and zero identity scales for a
    model whose mesh is exactly mirror-symmetric under any mirrored pose.
    """
    if ring_points % 2 or ring_points < 4:
        raise ValueError("ring_points must be an even number >= 4")
    skel = humanoid_skeleton(hands=hands, eyes=eyes)
    names = [s[0] for s in skel]
    index = {n: i for i, n in enumerate(names)}
    parents = np.array([-1 if s[1] is None else index[s[1]] for s in skel])
    K = len(skel)
    starts = np.array([s[2] for s in skel], dtype=float)
    tips = np.array([s[3] for s in skel], dtype=float)
    radii = np.array([s[4] for s in skel], dtype=float)
    lengths = np.linalg.norm(tips - starts, axis=1)

    total_rings = max(2 * K, int(round(n_vertices / ring_points)))
    rings = np.maximum(2, np.floor(total_rings * lengths / lengths.sum()).astype(int))
    # hand out the remainder to the longest bones, deterministically
    order = np.argsort(-lengths, kind="stable")
    i = 0
    while rings.sum() < total_rings:
        rings[order[i % K]] += 1
        i += 1

    phi = 2 * np.pi * np.arange(ring_points) / ring_points
    verts, faces, first_ring = [], [], []
    for k in range(K):
        u, v = _frame(tips[k] - starts[k])
        if names[k].startswith("r_"):
            # mirror the left-side frame so the ring vertices reflect exactly
            u_l, v_l = _frame((tips[k] - starts[k]) * np.array([-1.0, 1.0, 1.0]))
            u, v = u_l * np.array([-1.0, 1.0, 1.0]), v_l * np.array([-1.0, 1.0, 1.0])
        base = len(verts)
        first_ring.append(list(range(base, base + ring_points)))
        for r in range(rings[k]):
            t = r / (rings[k] - 1)
            centre = starts[k] + t * (tips[k] - starts[k])
            rad = radii[k] * (1 + 0.12 * np.cos(2 * phi) + 0.06 * np.sin(phi)) * (1 - 0.15 * t * t)
            ring = centre + rad[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)
            verts.extend(ring)
            if r:
                a0 = base + (r - 1) * ring_points
                a1 = base + r * ring_points
                for j in range(ring_points):
                    jn = (j + 1) % ring_points
                    faces.append((a0 + j, a0 + jn, a1 + j))
                    faces.append((a0 + jn, a1 + jn, a1 + j))
    template = _f32(verts)
    N = template.shape[0]

    # skinning: Gaussian falloff in distance from each bone's tube surface
    surf = np.stack([np.maximum(_segment_distance(template, starts[k], tips[k]) - radii[k], 0.0) for k in range(K)])
    W = np.exp(-((surf / 0.03) ** 2))
    W[W < 1e-4] = 0.0
    W = _dyadic_columns(W / W.sum(axis=0, keepdims=True))

    reg = np.zeros((K, N))
    for k in range(K):
        reg[k, first_ring[k]] = 1.0 / ring_points

    rng = np.random.default_rng(seed)
    head = W[index["head"]]
    face_basis = _f32(_smooth_basis(rng, template, n_face_identity, identity_scale) * head[None, :, None])
    body_basis = _f32(_smooth_basis(rng, template, n_body_identity, identity_scale))
    expr_basis = _f32(_smooth_basis(rng, template, n_expression, expression_scale) * head[None, :, None])
    pose_basis = _f32(_smooth_basis(rng, template, 9 * (K - 1), pose_basis_scale))

    groups = {"head": (index["head"],)}
    if hands:
        groups["left_hand"] = tuple(index[n] for n in ("l_hand1", "l_hand2"))
        groups["right_hand"] = tuple(index[n] for n in ("r_hand1", "r_hand2"))
    if eyes:
        groups["eyes"] = (index["l_eye"], index["r_eye"])
    mirror = tuple(index[_mirror_name(n)] for n in names)

    return BodyModel(
        template=template,
        faces=np.array(faces, dtype=np.int64),
        parents=parents,
        face_identity_basis=face_basis,
        body_identity_basis=body_basis,
        expression_basis=expr_basis,
        pose_basis=pose_basis,
        skinning_weights=W,
        joint_regressor=reg,
        joint_names=tuple(names),
        joint_groups=groups,
        joint_mirror=mirror,
    ).validate()


def vertex_mirror_map(template: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Index of each vertex's reflection across x = 0; raises if the mesh is asymmetric."""
    reflected = template * np.array([-1.0, 1.0, 1.0])
    d = np.linalg.norm(reflected[:, None, :] - template[None, :, :], axis=2)
    idx = np.argmin(d, axis=1)
    if d[np.arange(len(idx)), idx].max() > tol:
        raise ValueError("template is not mirror-symmetric")
    return idx


def random_model(
    rng: np.random.Generator,
    n_vertices: int = 30,
    n_joints: int = 4,
    n_face_identity: int = 3,
    n_body_identity: int = 3,
    n_expression: int = 2,
    basis_scale: float = 0.05,
) -> BodyModel:
    """Small unstructured model with random tree, bases and convex weights, for oracle tests."""
    if n_joints < 1 or n_vertices < 3:
        raise ValueError("need at least one joint and three vertices")
    parents = np.array([-1] + [int(rng.integers(0, k)) for k in range(1, n_joints)])
    template = rng.normal(size=(n_vertices, 3))
    faces = np.array([rng.choice(n_vertices, 3, replace=False) for _ in range(max(1, n_vertices // 2))])
    W = rng.dirichlet(np.full(n_joints, 0.5), size=n_vertices).T
    reg = rng.dirichlet(np.ones(n_vertices), size=n_joints)
    return BodyModel(
        template=template,
        faces=faces,
        parents=parents,
        face_identity_basis=basis_scale * rng.normal(size=(n_face_identity, n_vertices, 3)),
        body_identity_basis=basis_scale * rng.normal(size=(n_body_identity, n_vertices, 3)),
        expression_basis=basis_scale * rng.normal(size=(n_expression, n_vertices, 3)),
        pose_basis=basis_scale * rng.normal(size=(9 * (n_joints - 1), n_vertices, 3)),
        skinning_weights=W,
        joint_regressor=reg,
    ).validate()
