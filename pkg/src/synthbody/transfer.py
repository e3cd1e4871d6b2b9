"""Transfer of per-vertex data between mesh topologies.

A :class:`SurfaceMap` stores, for every target vertex, the source triangle
holding the closest surface point and that point's barycentric coordinates.
Applying the map is a sparse barycentric interpolation, so any per-vertex
quantity (bases, masks, skinning weights) moves across topologies the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TransferError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SurfaceMap:
    triangles: np.ndarray  # (M,) source face index per target vertex
    barycentric: np.ndarray  # (M, 3)
    source_faces: np.ndarray  # (F, 3)
    n_source: int

    @property
    def n_target(self) -> int:
        return self.triangles.shape[0]

    def vertex_indices(self) -> np.ndarray:
        return self.source_faces[self.triangles]

    def to_json(self) -> list[dict]:
        return [{"tri": int(t), "bary": [float(x) for x in b]} for t, b in zip(self.triangles, self.barycentric)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def from_json(cls, records: list[dict], source_faces: np.ndarray, n_source: int) -> "SurfaceMap":
        tris = np.array([r["tri"] for r in records], dtype=np.int64)
        bary = np.array([r["bary"] for r in records], dtype=float).reshape(-1, 3)
        return cls(tris, bary, np.asarray(source_faces, dtype=np.int64), n_source)

    @classmethod
    def load(cls, path: str | Path, source_faces: np.ndarray, n_source: int) -> "SurfaceMap":
        return cls.from_json(json.loads(Path(path).read_text()), source_faces, n_source)


def closest_point_barycentric(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of the closest point on triangles (a, b, c) to p.

    All inputs broadcast over leading axes. Follows the Voronoi-region walk of
    Ericson's *Real-Time Collision Detection* (5.1.5); a point coinciding with
    a vertex gets exactly one unit weight.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = np.broadcast_shapes(d1.shape, d3.shape, d5.shape)
    out = np.zeros(shape + (3,))
    done = np.zeros(shape, dtype=bool)

    def assign(mask, u, v, w):
        nonlocal done
        m = mask & ~done
        out[m, 0] = np.broadcast_to(u, shape)[m]
        out[m, 1] = np.broadcast_to(v, shape)[m]
        out[m, 2] = np.broadcast_to(w, shape)[m]
        done = done | m

    with np.errstate(divide="ignore", invalid="ignore"):
        one, zero = np.ones(shape), np.zeros(shape)
        assign((d1 <= 0) & (d2 <= 0), one, zero, zero)
        assign((d3 >= 0) & (d4 <= d3), zero, one, zero)
        t = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1 - t, t, zero)
        assign((d6 >= 0) & (d5 <= d6), zero, zero, one)
        t = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1 - t, zero, t)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), zero, 1 - t, t)
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        assign(np.ones(shape, dtype=bool), 1 - v - w, v, w)
    # Degenerate (zero-area) triangles can leave NaN from the interior branch.
    bad = ~np.isfinite(out).all(-1)
    if bad.any():
        out[bad] = (1.0, 0.0, 0.0)
    return out


def build_surface_map(source_verts, source_faces, target_verts, chunk: int = 2_000_000) -> SurfaceMap:
    """Map each target vertex to the closest point on the source surface.

    Exhaustive search over all source triangles; ties resolve to the lowest
    triangle index. ``chunk`` bounds the number of point/triangle pairs
    evaluated at once.
    """
    src = np.asarray(source_verts, dtype=float)
    faces = np.asarray(source_faces, dtype=np.int64).reshape(-1, 3)
    tgt = np.asarray(target_verts, dtype=float)
    if faces.shape[0] == 0 or src.shape[0] == 0:
        raise TransferError("source mesh has no triangles")
    a, b, c = src[faces[:, 0]], src[faces[:, 1]], src[faces[:, 2]]
    n_faces = faces.shape[0]
    step = max(1, chunk // n_faces)
    tris = np.empty(tgt.shape[0], dtype=np.int64)
    bary = np.empty((tgt.shape[0], 3))
    for s in range(0, tgt.shape[0], step):
        p = tgt[s : s + step, None, :]
        w = closest_point_barycentric(p, a[None], b[None], c[None])
        q = w[..., 0:1] * a[None] + w[..., 1:2] * b[None] + w[..., 2:3] * c[None]
        d2 = np.sum((q - p) ** 2, -1)
        best = np.argmin(d2, axis=1)
        tris[s : s + step] = best
        bary[s : s + step] = w[np.arange(best.shape[0]), best]
    return SurfaceMap(tris, bary, faces, src.shape[0])


def apply_map(surface_map: SurfaceMap, data: np.ndarray) -> np.ndarray:
    """Interpolate per-source-vertex data onto the target.

    ``data`` has the source vertex count on axis 0, or on axis 1 for stacked
    bases of shape ``(components, n_source, ...)``.
    """
    data = np.asarray(data, dtype=float)
    if data.shape[0] == surface_map.n_source:
        return _interpolate(surface_map, data)
    if data.ndim >= 2 and data.shape[1] == surface_map.n_source:
        return np.moveaxis(_interpolate(surface_map, np.moveaxis(data, 1, 0)), 0, 1)
    raise TransferError(f"data shape {data.shape} does not match {surface_map.n_source} source vertices")


def _interpolate(surface_map: SurfaceMap, data: np.ndarray) -> np.ndarray:
    idx = surface_map.vertex_indices()
    w = surface_map.barycentric
    wb = w.reshape(w.shape + (1,) * (data.ndim - 1))
    out = wb[:, 0] * data[idx[:, 0]] + wb[:, 1] * data[idx[:, 1]] + wb[:, 2] * data[idx[:, 2]]
    # vertex-region hits copy the source value bit for bit (keeps signed zeros)
    for j in range(3):
        rows = np.flatnonzero(w[:, j] == 1.0)
        out[rows] = data[idx[rows, j]]
    return out


def map_vertex_group(surface_map: SurfaceMap, group, threshold: float = 0.5) -> np.ndarray:
    """Target vertices whose mapped group-indicator value exceeds ``threshold``."""
    if not 0 < threshold < 1:
        raise TransferError("threshold must lie in (0, 1)")
    indicator = np.zeros(surface_map.n_source)
    indicator[np.asarray(list(group), dtype=np.int64)] = 1.0
    return np.flatnonzero(apply_map(surface_map, indicator) > threshold)


def nearest_vertices(points: np.ndarray, verts: np.ndarray, chunk: int = 4_000_000) -> np.ndarray:
    """Index of the nearest vertex for each point; ties go to the lowest index."""
    points = np.asarray(points, dtype=float)
    verts = np.asarray(verts, dtype=float)
    out = np.empty(points.shape[0], dtype=np.int64)
    step = max(1, chunk // max(1, verts.shape[0]))
    for s in range(0, points.shape[0], step):
        d2 = np.sum((points[s : s + step, None, :] - verts[None]) ** 2, -1)
        out[s : s + step] = np.argmin(d2, axis=1)
    return out


def transfer_joint_regressor(source_regressor: np.ndarray, source_template: np.ndarray, target_template: np.ndarray) -> np.ndarray:
    """Move regressor weights to each source vertex's nearest target vertex.

    Interpolating a regressor through a surface map does not keep its rows
    summing to one, so weights are carried by closest-vertex pairing instead;
    collisions accumulate and each row is renormalized.
    """
    reg = np.asarray(source_regressor, dtype=float)
    support = np.flatnonzero(np.any(reg != 0, axis=0))
    pair = nearest_vertices(np.asarray(source_template)[support], target_template)
    out = np.zeros((reg.shape[0], np.asarray(target_template).shape[0]))
    for col, tgt in zip(support, pair):
        out[:, tgt] += reg[:, col]
    sums = out.sum(axis=1)
    bad = np.flatnonzero(~(np.abs(sums) > 1e-12))
    if bad.size:
        raise TransferError(f"joint regressor rows {bad.tolist()} lost all weight")
    return out / sums[:, None]


def joint_regressor_from_extremes(group, vertex_positions: np.ndarray) -> np.ndarray:
    """Regressor row averaging the group's extreme vertices along +x, -x, +y, -y.

    Each extreme gets weight 1/4; coinciding extremes accumulate.
    """
    group = np.asarray(list(group), dtype=np.int64)
    if group.size < 1:
        raise TransferError("vertex group is empty")
    pts = np.asarray(vertex_positions, dtype=float)[group]
    row = np.zeros(np.asarray(vertex_positions).shape[0])
    for pick in (np.argmax(pts[:, 0]), np.argmin(pts[:, 0]), np.argmax(pts[:, 1]), np.argmin(pts[:, 1])):
        row[group[pick]] += 0.25
    return row


def blend_identity_bases(head_basis: np.ndarray, body_basis: np.ndarray, head_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Restrict the head basis to the mask and the body basis to its complement.

    Each body component's mask-weighted mean displacement over the head region
    is added back, scaled by the mask, so body identity still moves the head
    rigidly.
    """
    mask = np.asarray(head_mask, dtype=float)
    head_basis = np.asarray(head_basis, dtype=float)
    body_basis = np.asarray(body_basis, dtype=float)
    n = mask.shape[0]
    if head_basis.shape[1:] != (n, 3) or body_basis.shape[1:] != (n, 3):
        raise TransferError("bases and mask disagree on the vertex count")
    if (mask < 0).any() or (mask > 1).any():
        raise TransferError("mask values must lie in [0, 1]")
    s_masked = head_basis * mask[None, :, None]
    u_masked = body_basis * (1 - mask)[None, :, None]
    total = mask.sum()
    if total > 0:
        mean = np.einsum("n,bnc->bc", mask, body_basis) / total
        u_masked = u_masked + mean[:, None, :] * mask[None, :, None]
    return s_masked, u_masked


def override_rigid_skinning(weights: np.ndarray, group, joint: int) -> np.ndarray:
    """Bind every vertex in ``group`` fully to ``joint``."""
    W = np.array(weights, dtype=float, copy=True)
    if not 0 <= joint < W.shape[0]:
        raise TransferError(f"joint {joint} out of range")
    group = np.asarray(list(group), dtype=np.int64)
    W[:, group] = 0.0
    W[joint, group] = 1.0
    return W
