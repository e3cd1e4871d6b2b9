"""Fitting energy: landmark data term plus identity, expression, pose and temporal priors.

Every term is exposed both as a scalar with gradient and, for the solver,
as stacked residual rows ``r`` with Jacobian ``J`` such that the term's
gradient is ``J.T @ r``. Quadratic terms are exact in this form (energy is
``0.5 * |r|^2`` plus a constant); mixture priors contribute the rows of their
EM quadratic majorizer at the current point, which shares the true gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ..identity import GaussianIdentity
from ..model import BodyModel
from ..poses import GmmModel
from ..rotation import rodrigues_with_jacobian
from ..scene import MIN_DEPTH, Camera, LandmarkDef, ObservationSet
from .kinematics import LandmarkKinematics
from .params import EnergyWeights, FaceIdentityPrior, FitParams, IntersectTerm, Layout, PosePriorSet

BEHIND_CAMERA_PENALTY = 1e6
TERMS = ("landmarks", "face_identity", "body_identity", "expression", "pose", "temporal", "intersect")


# --- standalone terms ------------------------------------------------------


def e_l2(x, weight: float = 1.0) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return float(weight * x @ x), 2 * weight * x


def e_gmm(x, gmm: GmmModel) -> tuple[float, np.ndarray]:
    """Negative log mixture density and its gradient (log-sum-exp stabilized)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    lp = gmm.component_log_densities(x[None])[0]
    total = logsumexp(lp)
    resp = np.exp(lp - total)
    grad = (resp[:, None] * (x[None] - gmm.means) / gmm.variances).sum(axis=0)
    return float(-total), grad


def e_gaussian(x, g: GaussianIdentity) -> tuple[float, np.ndarray]:
    """Negative log density of a full-covariance Gaussian given by its Cholesky factor."""
    x = np.asarray(x, dtype=float)
    z = linalg.solve_triangular(g.factor, x - g.mean, lower=True)
    const = np.log(np.diag(g.factor)).sum() + 0.5 * g.dim * np.log(2 * np.pi)
    grad = linalg.solve_triangular(g.factor.T, z, lower=False)
    return float(0.5 * z @ z + const), grad


def e_temporal(seq) -> tuple[float, np.ndarray]:
    """Sum of squared differences between consecutive frames; seq is (F, ...)."""
    seq = np.asarray(seq, dtype=float)
    if seq.shape[0] < 2:
        return 0.0, np.zeros_like(seq)
    d = np.diff(seq, axis=0)
    grad = np.zeros_like(seq)
    grad[1:] += 2 * d
    grad[:-1] -= 2 * d
    return float(np.sum(d * d)), grad


def _gmm_majorizer_rows(x: np.ndarray, gmm: GmmModel, weight: float) -> tuple[np.ndarray, np.ndarray]:
    """Rows r_k = sqrt(w * resp_k) (x - mu_k) / sd_k and their diagonal Jacobian blocks."""
    lp = gmm.component_log_densities(x[None])[0]
    resp = np.exp(lp - logsumexp(lp))
    scale = np.sqrt(weight * resp)[:, None] / np.sqrt(gmm.variances)
    r = (scale * (x[None] - gmm.means)).reshape(-1)
    J = np.zeros((r.size, x.size))
    d = x.size
    for k in range(gmm.n_components):
        J[k * d : (k + 1) * d] = np.diag(scale[k])
    return r, J


# --- the full problem -----------------------------------------------------


@dataclass(eq=False)
class FitProblem:
    model: BodyModel
    cameras: list[Camera]  # intrinsics; extrinsics come from the parameters
    observations: ObservationSet
    landmarks: LandmarkDef
    n_frames: int
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    pose_priors: PosePriorSet = field(default_factory=PosePriorSet)
    face_prior: FaceIdentityPrior = None
    intersect: IntersectTerm | None = None

    def __post_init__(self):
        self.landmarks.check(self.model.n_vertices)
        obs = self.observations
        if len(obs):
            if obs.frame.max() >= self.n_frames or obs.frame.min() < 0:
                raise ValueError("observation frame id out of range")
            if obs.cam.max() >= len(self.cameras) or obs.cam.min() < 0:
                raise ValueError("observation camera id out of range")
            if obs.lm.max() >= len(self.landmarks) or obs.lm.min() < 0:
                raise ValueError("observation landmark id out of range")
        m = self.model
        self.layout = Layout(m.n_face_identity, m.n_body_identity, m.n_expression, m.n_joints, self.n_frames,
                             len(self.cameras))
        self.kin = LandmarkKinematics(m, self.landmarks.indices)
        self.body_joints = m.body_joints()
        self._groups = {}
        for f in range(self.n_frames):
            for c in range(len(self.cameras)):
                sel = np.flatnonzero((obs.frame == f) & (obs.cam == c))
                if sel.size:
                    self._groups[(f, c)] = sel
        pp = self.pose_priors
        for gmm, joints, name in ((pp.body, self.body_joints, "body"),
                                  (pp.left_hand, m.joint_groups.get("left_hand", ()), "left hand"),
                                  (pp.right_hand, m.joint_groups.get("right_hand", ()), "right hand")):
            if gmm is not None and gmm.dim != 3 * len(joints):
                raise ValueError(f"{name} pose prior has dimension {gmm.dim}, expected {3 * len(joints)}")

    def _pose_blocks(self):
        pp = self.pose_priors
        m = self.model
        out = []
        if pp.body is not None:
            out.append((pp.body, np.array(self.body_joints)))
        if pp.left_hand is not None:
            out.append((pp.left_hand, np.array(m.joint_groups["left_hand"])))
        if pp.right_hand is not None:
            out.append((pp.right_hand, np.array(m.joint_groups["right_hand"])))
        return out

    # -- energies -----------------------------------------------------------

    def landmark_residuals(self, x: np.ndarray, jacobian: bool = True):
        """Whitened reprojection residuals (u and v interleaved) with Jacobian.

        Returns ``(r, J, n_behind)``; landmarks predicted behind their camera
        get zero rows and are counted instead.
        """
        lay = self.layout
        p = lay.unpack(x)
        obs = self.observations
        r = np.zeros(2 * len(obs))
        J = np.zeros((2 * len(obs), lay.size)) if jacobian else None
        cams = [rodrigues_with_jacobian(p.cam_rot[c]) for c in range(lay.C)]
        n_behind = 0
        for f in range(lay.F):
            cam_ids = [c for c in range(lay.C) if (f, c) in self._groups]
            if not cam_ids:
                continue
            verts, dv = self.kin.evaluate(p.gamma, p.beta, p.psi[f], p.theta[f], p.trans[f], jacobian=jacobian)
            for c in cam_ids:
                sel = self._groups[(f, c)]
                cam = self.cameras[c]
                Rc, dRc = cams[c]
                lm = obs.lm[sel]
                pc = verts[lm] @ Rc.T + p.cam_trans[c]
                z = pc[:, 2]
                ok = z > MIN_DEPTH
                n_behind += int((~ok).sum())
                zs = np.where(ok, z, 1.0)
                uv = np.stack([cam.fx * pc[:, 0] / zs + cam.cx, cam.fy * pc[:, 1] / zs + cam.cy], axis=1)
                s = obs.sigma[sel][:, None]
                res = np.where(ok[:, None], (uv - obs.uv[sel]) / s, 0.0)
                rows = (2 * sel[:, None] + np.arange(2)[None]).reshape(-1)
                r[rows] = res.reshape(-1)
                if not jacobian:
                    continue
                # d(uv)/d(p_cam), whitened, zeroed behind the camera
                Jp = np.zeros((sel.size, 2, 3))
                Jp[:, 0, 0] = cam.fx / zs
                Jp[:, 0, 2] = -cam.fx * pc[:, 0] / zs**2
                Jp[:, 1, 1] = cam.fy / zs
                Jp[:, 1, 2] = -cam.fy * pc[:, 1] / zs**2
                Jp *= (ok[:, None] / s)[:, :, None]
                JpR = Jp @ Rc  # (n, 2, 3) w.r.t. world point
                local = np.einsum("nij,qnj->niq", JpR, dv[:, lm])
                local = local.reshape(2 * sel.size, -1)
                cols_frame = lay.frame(f)
                J[rows, : lay.G + lay.B] = local[:, : lay.G + lay.B]
                J[rows, cols_frame] = local[:, lay.G + lay.B :]
                dpc_rot = np.einsum("iab,nb->nai", dRc, verts[lm])  # (n, 3, 3)
                cam_cols = lay.camera(c)
                J[rows, cam_cols.start : cam_cols.start + 3] = (Jp @ dpc_rot).reshape(2 * sel.size, 3)
                J[rows, cam_cols.start + 3 : cam_cols.stop] = Jp.reshape(2 * sel.size, 3)
        return r, J, n_behind

    def term_rows(self, x: np.ndarray, jacobian: bool = True):
        """Residual rows per term, each ``(r, J)`` with gradient ``J.T @ r``, weights applied."""
        lay = self.layout
        p = lay.unpack(x)
        w = self.weights
        out = {}

        r, J, _ = self.landmark_residuals(x, jacobian)
        out["landmarks"] = (np.sqrt(w.landmarks) * r, None if J is None else np.sqrt(w.landmarks) * J)

        def block_rows(values, slices, scale):
            rows = np.concatenate([np.asarray(v, float).reshape(-1) for v in values]) * scale
            Jb = None
            if jacobian:
                Jb = np.zeros((rows.size, lay.size))
                i = 0
                for sl in slices:
                    n = sl.stop - sl.start
                    Jb[np.arange(i, i + n), np.arange(sl.start, sl.stop)] = scale
                    i += n
            return rows, Jb

        # face identity
        fp = self.face_prior
        if isinstance(fp, GaussianIdentity):
            z = linalg.solve_triangular(fp.factor, p.gamma - fp.mean, lower=True)
            Jf = None
            if jacobian:
                Jf = np.zeros((z.size, lay.size))
                Jf[:, lay.gamma()] = np.sqrt(w.face_identity) * linalg.solve_triangular(fp.factor, np.eye(z.size), lower=True)
            out["face_identity"] = (np.sqrt(w.face_identity) * z, Jf)
        elif isinstance(fp, GmmModel):
            rr, Jg = _gmm_majorizer_rows(p.gamma, fp, w.face_identity)
            Jf = None
            if jacobian:
                Jf = np.zeros((rr.size, lay.size))
                Jf[:, lay.gamma()] = Jg
            out["face_identity"] = (rr, Jf)
        else:
            out["face_identity"] = block_rows([p.gamma], [lay.gamma()], np.sqrt(2 * w.face_identity))

        out["body_identity"] = block_rows([p.beta], [lay.beta()], np.sqrt(2 * w.body_identity))
        out["expression"] = block_rows(list(p.psi), [lay.psi(f) for f in range(lay.F)], np.sqrt(2 * w.expression))

        pose_r, pose_J = [], []
        for f in range(lay.F):
            base = lay.theta(f).start
            for gmm, joints in self._pose_blocks():
                xv = p.theta[f][joints].reshape(-1)
                rr, Jg = _gmm_majorizer_rows(xv, gmm, w.pose)
                pose_r.append(rr)
                if jacobian:
                    Jb = np.zeros((rr.size, lay.size))
                    cols = (base + 3 * joints[:, None] + np.arange(3)[None]).reshape(-1)
                    Jb[:, cols] = Jg
                    pose_J.append(Jb)
        out["pose"] = (
            np.concatenate(pose_r) if pose_r else np.zeros(0),
            (np.vstack(pose_J) if pose_J else np.zeros((0, lay.size))) if jacobian else None,
        )

        temp_r, temp_J = [], []
        scale = np.sqrt(2 * w.temporal)
        for f in range(1, lay.F):
            for cur, prev in ((lay.theta(f), lay.theta(f - 1)), (lay.psi(f), lay.psi(f - 1))):
                n = cur.stop - cur.start
                temp_r.append(scale * (x[cur] - x[prev]))
                if jacobian:
                    Jb = np.zeros((n, lay.size))
                    Jb[np.arange(n), np.arange(cur.start, cur.stop)] = scale
                    Jb[np.arange(n), np.arange(prev.start, prev.stop)] = -scale
                    temp_J.append(Jb)
        out["temporal"] = (
            np.concatenate(temp_r) if temp_r else np.zeros(0),
            (np.vstack(temp_J) if temp_J else np.zeros((0, lay.size))) if jacobian else None,
        )

        if self.intersect is not None and w.intersect > 0:
            e, g = self.intersect(p)
            e, g = w.intersect * e, w.intersect * np.asarray(g, dtype=float)
            if e > 0:
                r0 = np.sqrt(2 * e)
                out["intersect"] = (np.array([r0]), (g / r0)[None] if jacobian else None)
        out.setdefault("intersect", (np.zeros(0), np.zeros((0, lay.size)) if jacobian else None))
        return out

    def energy_terms(self, x: np.ndarray) -> dict[str, float]:
        """Weighted value of every term at the flat parameter vector ``x``."""
        lay = self.layout
        p = lay.unpack(x)
        w = self.weights
        r, _, n_behind = self.landmark_residuals(x, jacobian=False)
        terms = {"landmarks": w.landmarks * (0.5 * r @ r + BEHIND_CAMERA_PENALTY * n_behind)}
        fp = self.face_prior
        if isinstance(fp, GaussianIdentity):
            terms["face_identity"] = w.face_identity * e_gaussian(p.gamma, fp)[0]
        elif isinstance(fp, GmmModel):
            terms["face_identity"] = w.face_identity * e_gmm(p.gamma, fp)[0]
        else:
            terms["face_identity"] = e_l2(p.gamma, w.face_identity)[0]
        terms["body_identity"] = e_l2(p.beta, w.body_identity)[0]
        terms["expression"] = e_l2(p.psi.reshape(-1), w.expression)[0]
        terms["pose"] = w.pose * sum(
            e_gmm(p.theta[f][joints].reshape(-1), gmm)[0] for f in range(lay.F) for gmm, joints in self._pose_blocks()
        )
        terms["temporal"] = w.temporal * (e_temporal(p.theta)[0] + e_temporal(p.psi)[0])
        terms["intersect"] = w.intersect * self.intersect(p)[0] if (self.intersect is not None and w.intersect > 0) else 0.0
        return {k: float(terms[k]) for k in TERMS}

    def energy(self, x: np.ndarray) -> float:
        return float(sum(self.energy_terms(x).values()))

    def residuals(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows = self.term_rows(x, jacobian=True)
        r = np.concatenate([rows[k][0] for k in TERMS])
        J = np.vstack([rows[k][1] for k in TERMS])
        return r, J

    def gradient(self, x: np.ndarray) -> np.ndarray:
        r, J = self.residuals(x)
        return J.T @ r


def e_landmarks(problem: FitProblem, params: FitParams) -> tuple[float, np.ndarray]:
    """Unweighted landmark term sum |proj - obs|^2 / (2 sigma^2) and its gradient."""
    x = problem.layout.pack(params)
    r, J, n_behind = problem.landmark_residuals(x)
    return float(0.5 * r @ r + BEHIND_CAMERA_PENALTY * n_behind), J.T @ r


def total_energy(problem: FitProblem, params: FitParams) -> tuple[float, np.ndarray]:
    """Weighted total energy and its gradient over the flat parameter vector."""
    x = problem.layout.pack(params)
    return problem.energy(x), problem.gradient(x)
