"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the package's numerical code: rotations, kinematic
chains, skinning and closest-point queries are written as scalar loops.
"""

from __future__ import annotations

import math

import numpy as np


def rotation_matrix(w) -> list[list[float]]:
    """Rodrigues formula written out element by element."""
    x, y, z = (float(v) for v in w)
    angle = math.sqrt(x * x + y * y + z * z)
    if angle < 1e-12:
        return [[1.0, -z, y], [z, 1.0, -x], [-y, x, 1.0]]
    kx, ky, kz = x / angle, y / angle, z / angle
    c, s = math.cos(angle), math.sin(angle)
    t = 1 - c
    return [
        [c + kx * kx * t, kx * ky * t - kz * s, kx * kz * t + ky * s],
        [ky * kx * t + kz * s, c + ky * ky * t, ky * kz * t - kx * s],
        [kz * kx * t - ky * s, kz * ky * t + kx * s, c + kz * kz * t],
    ]


def matmul(a, b):
    n, m, p = len(a), len(b), len(b[0])
    return [[sum(a[i][k] * b[k][j] for k in range(m)) for j in range(p)] for i in range(n)]


def rigid(R, t):
    return [[R[0][0], R[0][1], R[0][2], t[0]],
            [R[1][0], R[1][1], R[1][2], t[1]],
            [R[2][0], R[2][1], R[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0]]


def naive_mesh(model, gamma, beta, psi, theta, trans) -> np.ndarray:
    """Full mesh generation with scalar loops only."""
    N, K = model.template.shape[0], len(model.parents)
    S, U, E, P = model.face_identity_basis, model.body_identity_basis, model.expression_basis, model.pose_basis
    W, J = model.skinning_weights, model.joint_regressor

    shaped = [[float(model.template[i][c]) for c in range(3)] for i in range(N)]
    for i in range(N):
        for c in range(3):
            for a in range(len(gamma)):
                shaped[i][c] += gamma[a] * S[a][i][c]
            for a in range(len(beta)):
                shaped[i][c] += beta[a] * U[a][i][c]
    joints = [[sum(J[k][i] * shaped[i][c] for i in range(N)) for c in range(3)] for k in range(K)]

    rots = [rotation_matrix(theta[k]) for k in range(K)]
    feats = []
    for k in range(1, K):
        for r in range(3):
            for c in range(3):
                feats.append(rots[k][r][c] - (1.0 if r == c else 0.0))
    rest = [row[:] for row in shaped]
    for i in range(N):
        for c in range(3):
            for a in range(len(psi)):
                rest[i][c] += psi[a] * E[a][i][c]
            for f in range(len(feats)):
                rest[i][c] += feats[f] * P[f][i][c]

    # world transforms of each joint (rotation about the joint, chained)
    G = [None] * K
    for k in range(K):
        p = model.parents[k]
        if p < 0:
            local = rigid(rots[k], [joints[k][c] + trans[c] for c in range(3)])
        else:
            local = rigid(rots[k], [joints[k][c] - joints[p][c] for c in range(3)])
        G[k] = local if p < 0 else matmul(G[p], local)
    # remove the rest-pose joint position so G maps rest space to posed space
    A = []
    for k in range(K):
        Gk = G[k]
        shift = [sum(Gk[r][c] * joints[k][c] for c in range(3)) for r in range(3)]
        A.append([[Gk[r][0], Gk[r][1], Gk[r][2], Gk[r][3] - shift[r]] for r in range(3)])

    out = np.zeros((N, 3))
    for i in range(N):
        for k in range(K):
            w = W[k][i]
            if w == 0:
                continue
            for r in range(3):
                out[i][r] += w * (sum(A[k][r][c] * rest[i][c] for c in range(3)) + A[k][r][3])
    return out


def closest_point_on_triangle(p, a, b, c) -> tuple[np.ndarray, float]:
    """Closest point by minimizing over the interior projection and the three edges."""
    p, a, b, c = (np.asarray(v, dtype=float) for v in (p, a, b, c))
    candidates = []
    n = np.cross(b - a, c - a)
    nn = n @ n
    if nn > 0:
        q = p - ((p - a) @ n) / nn * n
        # barycentric by areas
        u = np.cross(c - b, q - b) @ n / nn
        v = np.cross(a - c, q - c) @ n / nn
        w = 1 - u - v
        if u >= 0 and v >= 0 and w >= 0:
            candidates.append(q)
    for s, e in ((a, b), (b, c), (c, a)):
        d = e - s
        t = 0.0 if d @ d == 0 else min(1.0, max(0.0, (p - s) @ d / (d @ d)))
        candidates.append(s + t * d)
    best = min(candidates, key=lambda x: float(np.sum((x - p) ** 2)))
    return best, float(np.sqrt(np.sum((best - p) ** 2)))


def redmean_scalar(c1, c2) -> float:
    r = (c1[0] + c2[0]) / 2
    dr, dg, db = c1[0] - c2[0], c1[1] - c2[1], c1[2] - c2[2]
    return math.sqrt((2 + r / 256) * dr ** 2 + 4 * dg ** 2 + (2 + (255 - r) / 256) * db ** 2)


def gmm_density(x, weights, means, variances) -> float:
    """Mixture density by direct product of univariate normal densities."""
    total = 0.0
    for w, mu, var in zip(weights, means, variances):
        dens = 1.0
        for xi, mi, vi in zip(x, mu, var):
            dens *= math.exp(-((xi - mi) ** 2) / (2 * vi)) / math.sqrt(2 * math.pi * vi)
        total += w * dens
    return total


def central_difference(f, x, h=1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))
