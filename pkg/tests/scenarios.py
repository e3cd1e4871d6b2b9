"""Synthetic multi-view fitting scenarios shared by the fitting and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from synthbody.fitting import EnergyWeights, FitParams, FitProblem, PosePriorSet
from synthbody.model import BodyModel, Pose, ShapeParams
from synthbody.scene import ObservationSet, default_rig, generate_observations, make_landmark_def

LANDMARKS_ONLY = EnergyWeights(landmarks=1.0, face_identity=0.0, body_identity=0.0, expression=0.0, pose=0.0,
                               temporal=0.0, intersect=0.0)


@dataclass
class Scenario:
    model: BodyModel
    problem: FitProblem
    truth: FitParams
    observations: ObservationSet


def make_truth(model: BodyModel, n_frames: int, cameras, rng, pose_scale=0.2, identity_scale=0.5,
               expression_scale=0.5) -> tuple[ShapeParams, list[Pose], list[np.ndarray]]:
    shape = ShapeParams(rng.normal(0, identity_scale, model.n_face_identity),
                        rng.normal(0, identity_scale, model.n_body_identity), np.zeros(model.n_expression))
    poses = [Pose(rng.normal(0, pose_scale, (model.n_joints, 3)), rng.normal(0, 0.05, 3)) for _ in range(n_frames)]
    exprs = [rng.normal(0, expression_scale, model.n_expression) for _ in range(n_frames)]
    return shape, poses, exprs


def make_scenario(model: BodyModel, n_frames=2, n_cameras=3, n_landmarks=None, noise=0.0, seed=0,
                  weights: EnergyWeights = LANDMARKS_ONLY, pose_priors: PosePriorSet | None = None,
                  face_prior=None, intersect=None, pose_scale=0.2) -> Scenario:
    rng = np.random.default_rng(seed)
    cameras = default_rig(n_cameras)
    lm = make_landmark_def(model, n_landmarks or model.n_vertices)
    shape, poses, exprs = make_truth(model, n_frames, cameras, rng, pose_scale=pose_scale)
    obs = generate_observations(model, shape, poses, cameras, lm, noise, seed=seed, expressions=exprs)
    truth = FitParams.from_truth(shape, poses, cameras, exprs)
    problem = FitProblem(model, cameras, obs, lm, n_frames, weights, pose_priors or PosePriorSet(), face_prior, intersect)
    return Scenario(model, problem, truth, obs)
