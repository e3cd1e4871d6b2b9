"""Posed landmark vertices with analytic Jacobians.

Derivatives are propagated forward through the kinematic chain for every
per-frame parameter at once. The local parameter order for one frame is
``[gamma (G), beta (B), psi (E), theta (3K), root translation (3)]``.
"""

from __future__ import annotations

import numpy as np

from ..model import BodyModel
from ..rotation import rodrigues_with_jacobian


class LandmarkKinematics:
    """Model quantities restricted to a fixed vertex subset, precomputed once."""

    def __init__(self, model: BodyModel, vertex_idx):
        idx = np.asarray(vertex_idx, dtype=np.int64)
        self.model = model
        self.idx = idx
        self.K = model.n_joints
        self.G, self.B, self.E = model.n_face_identity, model.n_body_identity, model.n_expression
        self.parents = model.parents
        self.T = model.template[idx]
        self.S = model.face_identity_basis[:, idx]
        self.U = model.body_identity_basis[:, idx]
        self.Ex = model.expression_basis[:, idx]
        self.P = model.pose_basis[:, idx].reshape(self.K - 1, 9, idx.size, 3)
        self.W = model.skinning_weights[:, idx]
        reg = model.joint_regressor
        self.J0 = reg @ model.template
        self.JS = np.einsum("kn,gnc->gkc", reg, model.face_identity_basis)
        self.JU = np.einsum("kn,bnc->bkc", reg, model.body_identity_basis)
        self.n_local = self.G + self.B + self.E + 3 * self.K + 3

    def evaluate(self, gamma, beta, psi, theta, trans, jacobian: bool = True):
        """Posed positions (L, 3) and, optionally, d positions / d local params (P, L, 3)."""
        G, B, E, K = self.G, self.B, self.E, self.K
        theta = np.asarray(theta, dtype=float).reshape(K, 3)
        R, dR = rodrigues_with_jacobian(theta)
        feat = (R[1:] - np.eye(3)).reshape(K - 1, 9)
        t = (
            self.T
            + np.tensordot(gamma, self.S, axes=1)
            + np.tensordot(beta, self.U, axes=1)
            + np.tensordot(psi, self.Ex, axes=1)
            + np.einsum("mf,mfld->ld", feat, self.P)
        )
        joints = self.J0 + np.tensordot(gamma, self.JS, axes=1) + np.tensordot(beta, self.JU, axes=1)

        # Parameters that move the skeleton: gamma, beta, theta, translation.
        Q = G + B + 3 * K + 3
        th0 = G + B
        tr0 = th0 + 3 * K
        rot = np.empty((K, 3, 3))
        pos = np.empty((K, 3))
        if jacobian:
            dj = np.zeros((Q, K, 3))
            dj[:G] = self.JS
            dj[G:th0] = self.JU
            drot = np.zeros((Q, K, 3, 3))
            dpos = np.zeros((Q, K, 3))
        rot[0] = R[0]
        pos[0] = joints[0] + trans
        if jacobian:
            drot[th0 : th0 + 3, 0] = dR[0]
            dpos[:, 0] = dj[:, 0]
            dpos[tr0 : tr0 + 3, 0] += np.eye(3)
        for k in range(1, K):
            p = self.parents[k]
            bone = joints[k] - joints[p]
            rot[k] = rot[p] @ R[k]
            pos[k] = rot[p] @ bone + pos[p]
            if jacobian:
                drot[:, k] = drot[:, p] @ R[k]
                drot[th0 + 3 * k : th0 + 3 * k + 3, k] += rot[p] @ dR[k]
                dpos[:, k] = drot[:, p] @ bone + (dj[:, k] - dj[:, p]) @ rot[p].T + dpos[:, p]
        offs = pos - np.einsum("kab,kb->ka", rot, joints)
        blend_R = np.einsum("kl,kab->lab", self.W, rot)
        verts = np.einsum("lab,lb->la", blend_R, t) + self.W.T @ offs
        if not jacobian:
            return verts, None

        doffs = dpos - np.einsum("qkab,kb->qka", drot, joints) - np.einsum("kab,qkb->qka", rot, dj)
        L = t.shape[0]
        out = np.zeros((self.n_local, L, 3))
        # skeleton-driven part
        skel = np.einsum("kl,qkab,lb->qla", self.W, drot, t, optimize=True) + np.einsum("kl,qka->qla", self.W, doffs)
        # rest-shape part through the blended rotation
        dt = np.zeros((self.n_local, L, 3))
        dt[:G] = self.S
        dt[G : G + B] = self.U
        dt[G + B : G + B + E] = self.Ex
        th_local = G + B + E
        dt_theta = np.einsum("mcf,mfld->mcld", dR[1:].reshape(K - 1, 3, 9), self.P)
        dt[th_local + 3 : th_local + 3 * K] = dt_theta.reshape(3 * (K - 1), L, 3)
        out += np.einsum("lab,qlb->qla", blend_R, dt, optimize=True)
        # map skeleton params (gamma, beta, theta, trans) into local order
        out[:G] += skel[:G]
        out[G : G + B] += skel[G:th0]
        out[th_local:] += skel[th0:]
        return verts, out
