"""Levenberg-Marquardt fit with an optional quasi-Newton fallback, plus recovery metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

from ..model import BodyModel, generate_mesh
from .energy import TERMS, FitProblem
from .params import BLOCKS, FitConfig, FitParams


class FitError(ValueError):
    pass


@dataclass
class FitResult:
    params: FitParams
    trace: list[dict]  # per-term energies at every accepted iterate, starting with the init
    iterations: int
    converged: bool
    diverged: bool
    message: str
    config: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.trace[-1]["total"]

    def energies(self) -> np.ndarray:
        return np.array([t["total"] for t in self.trace])

    def to_json(self) -> dict:
        return {
            "converged": self.converged,
            "diverged": self.diverged,
            "iterations": self.iterations,
            "message": self.message,
            "energy": self.energy,
            "trace": self.trace,
            "config": self.config,
            "weights": self.weights,
            "metrics": self.metrics,
            "params": self.params.to_json(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


def _record(problem: FitProblem, x: np.ndarray) -> dict:
    terms = problem.energy_terms(x)
    terms["total"] = float(sum(terms[k] for k in TERMS))
    return terms


def _stage_masks(problem: FitProblem, config: FitConfig) -> list[np.ndarray]:
    lay = problem.layout
    frozen = lay.block_mask(config.freeze)
    if not config.stages:
        return [~frozen]
    masks, released = [], set()
    for stage in config.stages:
        released |= set(stage)
        masks.append(lay.block_mask(tuple(b for b in BLOCKS if b in released)) & ~frozen)
    return masks


def _lm(problem: FitProblem, x: np.ndarray, free: np.ndarray, config: FitConfig, budget: int, trace: list):
    """Run damped Gauss-Newton on the free entries. Returns (x, iterations, converged, diverged, message)."""
    energy = trace[-1]["total"]
    damping = config.initial_damping
    rejections = 0
    its = 0
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return x, 0, True, False, "no free parameters"
    while its < budget:
        r, J = problem.residuals(x)
        Jf = J[:, idx]
        g = Jf.T @ r
        if np.max(np.abs(g)) < config.grad_tol:
            return x, its, True, False, "gradient below tolerance"
        H = Jf.T @ Jf
        diag = np.diag(H).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1.0))
        its += 1
        try:
            step = -linalg.solve(H + damping * np.diag(diag), g, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = None
        if step is not None and np.all(np.isfinite(step)):
            trial = x.copy()
            trial[idx] += step
            rec = _record(problem, trial)
            new_energy = rec["total"]
        else:
            new_energy = np.inf
        step_norm = np.inf if step is None else float(np.max(np.abs(step)))
        if np.isfinite(new_energy) and new_energy <= energy:
            decrease = energy - new_energy
            x, energy = trial, new_energy
            trace.append(rec)
            damping = max(damping / 10, 1e-12)
            rejections = 0
            if decrease <= config.rel_tol * max(abs(energy), 1e-300) or step_norm < config.step_tol:
                return x, its, True, False, "converged"
        else:
            if step_norm < config.step_tol:
                return x, its, True, False, "step below tolerance"
            damping *= 10
            rejections += 1
            if rejections >= config.max_rejections:
                return x, its, False, True, f"{rejections} consecutive rejected steps"
    return x, its, False, False, "iteration limit reached"


def _lbfgs(problem: FitProblem, x: np.ndarray, free: np.ndarray, config: FitConfig, budget: int, trace: list):
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return x, 0, True, False, "no free parameters"
    base = x.copy()

    def full(z):
        out = base.copy()
        out[idx] = z
        return out

    def fun(z):
        xx = full(z)
        return problem.energy(xx), problem.gradient(xx)[idx]

    def callback(z):
        rec = _record(problem, full(z))
        if rec["total"] <= trace[-1]["total"]:
            trace.append(rec)

    res = optimize.minimize(fun, x[idx], jac=True, method="L-BFGS-B", callback=callback,
                            options={"maxiter": budget, "gtol": config.grad_tol, "ftol": config.rel_tol})
    xf = full(res.x)
    rec = _record(problem, xf)
    if rec["total"] > trace[-1]["total"]:
        # never report a worse point than the best accepted iterate
        return x, int(res.nit), False, True, "line search failed to decrease energy"
    if rec != trace[-1]:
        trace.append(rec)
    return xf, int(res.nit), bool(res.success), False, str(res.message)


def fit(problem: FitProblem, init: FitParams, config: FitConfig | None = None) -> FitResult:
    """Minimize the problem energy starting at ``init``.

    Only energy-decreasing steps are accepted, so the recorded trace is
    non-increasing. Frozen blocks keep their initial values.
    """
    config = config or FitConfig()
    init.check(problem.model)
    x = problem.layout.pack(init)
    rec = _record(problem, x)
    if not np.isfinite(rec["total"]):
        raise FitError("energy at the initial parameters is not finite")
    trace = [rec]
    total_its = 0
    converged, diverged, message = True, False, "no stages"
    step_fn = _lm if config.method == "lm" else _lbfgs
    for free in _stage_masks(problem, config):
        budget = config.max_iterations - total_its
        if budget <= 0:
            converged, message = False, "iteration limit reached"
            break
        x, its, converged, diverged, message = step_fn(problem, x, free, config, budget, trace)
        total_its += its
        if diverged:
            break
    return FitResult(
        params=problem.layout.unpack(x),
        trace=trace,
        iterations=total_its,
        converged=converged,
        diverged=diverged,
        message=message,
        config=config.to_json(),
        weights=problem.weights.to_json(),
    )


def frame_meshes(model: BodyModel, params: FitParams) -> np.ndarray:
    return np.stack([generate_mesh(model, params.shape(f), params.pose(f)) for f in range(params.n_frames)])


def vertex_rms(model: BodyModel, truth: FitParams, fitted: FitParams) -> float:
    """Root-mean-square vertex distance over all frames, in model units."""
    d = frame_meshes(model, truth) - frame_meshes(model, fitted)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=-1))))


def recovery_metrics(model: BodyModel, truth: FitParams, fitted: FitParams) -> dict:
    def rms(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        return float(np.sqrt(np.mean((a - b) ** 2))) if a.size else 0.0

    return {
        "vertex_rms": vertex_rms(model, truth, fitted),
        "face_identity_rms": rms(truth.gamma, fitted.gamma),
        "body_identity_rms": rms(truth.beta, fitted.beta),
        "expression_rms": rms(truth.psi, fitted.psi),
        "pose_rms": rms(truth.theta, fitted.theta),
        "translation_rms": rms(truth.trans, fitted.trans),
        "camera_rotation_rms": rms(truth.cam_rot, fitted.cam_rot),
        "camera_translation_rms": rms(truth.cam_trans, fitted.cam_trans),
    }
