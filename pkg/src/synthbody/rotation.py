"""Axis-angle rotations with analytic derivatives."""

from __future__ import annotations

import numpy as np

# Below this angle the trig coefficients are evaluated by power series; the
# closed forms lose precision to cancellation well before 1e-8.
_SERIES_ANGLE = 1e-3


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for vectors of shape (..., 3)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _coefficients(theta2: np.ndarray):
    """Return a, b, c_a, c_b with R = I + aK + bK^2 and da = c_a * w, db = c_b * w."""
    theta = np.sqrt(theta2)
    small = theta < _SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    s, c = np.sin(safe), np.cos(safe)
    a = np.where(small, 1 - theta2 / 6 + theta2**2 / 120, s / safe)
    b = np.where(small, 0.5 - theta2 / 24 + theta2**2 / 720, (1 - c) / safe**2)
    ca = np.where(small, -1 / 3 + theta2 / 30 - theta2**2 / 840, (safe * c - s) / safe**3)
    cb = np.where(small, -1 / 12 + theta2 / 180 - theta2**2 / 6720, (safe * s - 2 * (1 - c)) / safe**4)
    return a, b, ca, cb


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from axis-angle vectors (..., 3)."""
    w = np.asarray(rotvec, dtype=float)
    a, b, _, _ = _coefficients(np.sum(w * w, axis=-1))
    K = skew(w)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rodrigues_with_jacobian(rotvec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices and their derivatives.

    Returns ``R`` of shape (..., 3, 3) and ``dR`` of shape (..., 3, 3, 3) where
    ``dR[..., i, :, :]`` is the derivative of R with respect to component i.
    """
    w = np.asarray(rotvec, dtype=float)
    a, b, ca, cb = _coefficients(np.sum(w * w, axis=-1))
    K = skew(w)
    K2 = K @ K
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + a[..., None, None] * K + b[..., None, None] * K2

    E = skew(np.eye(3))  # generators [e_i]x, shape (3, 3, 3)
    Kx = K[..., None, :, :]
    dK2 = E @ Kx + Kx @ E
    wi = w[..., :, None, None]
    dR = (
        (ca[..., None, None, None] * wi) * Kx
        + a[..., None, None, None] * E
        + (cb[..., None, None, None] * wi) * K2[..., None, :, :]
        + b[..., None, None, None] * dK2
    )
    return R, dR


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rodrigues` for a single rotation matrix."""
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()
