import numpy as np
import pytest

from synthbody.model import Pose, ShapeParams, generate_mesh
from synthbody.scene import (
    BehindCameraError,
    Camera,
    LandmarkDef,
    ObservationSet,
    default_rig,
    generate_observations,
    load_cameras,
    make_landmark_def,
    project,
    project_points,
    save_cameras,
)


def unit_camera():
    return Camera(1.0, 1.0, 0.0, 0.0)


def test_projection_examples():
    cam = Camera(800.0, 800.0, 512.0, 384.0)
    assert np.array_equal(project(cam, [0, 0, 1]), [512.0, 384.0])
    assert np.allclose(project(unit_camera(), [1, 2, 2]), [0.5, 1.0])
    for z in (0.0, -1.0):
        with pytest.raises(BehindCameraError):
            project(unit_camera(), [0, 0, z])


def test_scale_invariance_along_ray(rng):
    cam = Camera(700.0, 650.0, 300.0, 200.0)
    p = rng.normal(size=3) + [0, 0, 5]
    for lam in (0.1, 1.0, 7.5):
        assert np.allclose(project(cam, lam * p), project(cam, p), atol=1e-10)


def test_vectorized_matches_scalar(rng):
    cam = default_rig(3)[1]
    pts = rng.normal(size=(20, 3)) * 0.3 + [0, 1, 0]
    uv, valid = project_points(cam, pts)
    assert valid.all()
    assert np.allclose(uv, [project(cam, p) for p in pts], atol=1e-10)


def test_rig_sees_the_target_centre():
    for cam in default_rig(4):
        assert np.allclose(project(cam, [0, 1, 0]), [cam.cx, cam.cy], atol=1e-9)


def test_camera_json_round_trip(tmp_path):
    cams = default_rig(2)
    save_cameras(tmp_path / "c.json", cams)
    back = load_cameras(tmp_path / "c.json")
    assert all(np.array_equal(a.rotation, b.rotation) and a.fx == b.fx for a, b in zip(cams, back))
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0.0, 0.0)


def test_landmark_def_validation(humanoid):
    with pytest.raises(ValueError):
        LandmarkDef("x", (1, 1))
    lm = make_landmark_def(humanoid, 20)
    assert len(lm) == 20 and len(set(lm.indices)) == 20
    with pytest.raises(ValueError):
        LandmarkDef("x", (humanoid.n_vertices,)).check(humanoid.n_vertices)


def setup_scene(model, n_frames=2):
    shape = ShapeParams.zeros(model)
    poses = [Pose.identity(model.n_joints) for _ in range(n_frames)]
    return shape, poses, default_rig(3), make_landmark_def(model, 30)


def test_noiseless_observations_equal_projections(humanoid):
    shape, poses, cams, lm = setup_scene(humanoid)
    obs = generate_observations(humanoid, shape, poses, cams, lm)
    verts = generate_mesh(humanoid, shape, poses[0])[list(lm.indices)]
    for c, cam in enumerate(cams):
        sel = (obs.cam == c) & (obs.frame == 0)
        assert np.array_equal(obs.uv[sel], project_points(cam, verts)[0][obs.lm[sel]])
    assert np.all(obs.sigma == 0.1)
    assert len(obs) == 2 * 3 * 30 and obs.dropped == {0: 0, 1: 0, 2: 0}


def test_facing_away_camera_sees_nothing(humanoid):
    shape, poses, cams, lm = setup_scene(humanoid)
    away = Camera(1000.0, 1000.0, 512.0, 512.0, np.zeros(3), [0.0, 0.0, -10.0])
    obs = generate_observations(humanoid, shape, poses, cams + [away], lm)
    assert obs.count_per_camera(4)[3] == 0
    assert obs.dropped[3] == 2 * 30
    assert len(obs) + sum(obs.dropped.values()) == 2 * 4 * 30


def test_noise_statistics(humanoid):
    shape, poses, cams, lm = setup_scene(humanoid, n_frames=56)
    clean = generate_observations(humanoid, shape, poses, cams, lm)
    noisy = generate_observations(humanoid, shape, poses, cams, lm, noise_sigma=2.0, seed=7)
    res = (noisy.uv - clean.uv).reshape(-1)
    assert res.size >= 10_000
    se = 2.0 / np.sqrt(2 * (res.size - 1))
    assert abs(res.std(ddof=1) - 2.0) < 3 * se
    assert np.all(noisy.sigma == 2.0)


def test_per_frame_streams_are_independent_of_frame_count(humanoid):
    shape, poses, cams, lm = setup_scene(humanoid, n_frames=3)
    a = generate_observations(humanoid, shape, poses, cams, lm, noise_sigma=1.0, seed=3)
    b = generate_observations(humanoid, shape, poses[:2], cams, lm, noise_sigma=1.0, seed=3)
    assert np.array_equal(a.uv[a.frame < 2], b.uv)


def test_ndjson_round_trip(tmp_path, humanoid):
    shape, poses, cams, lm = setup_scene(humanoid, 1)
    obs = generate_observations(humanoid, shape, poses, cams, lm, noise_sigma=0.5, seed=1)
    obs.save_ndjson(tmp_path / "o.ndjson")
    back = ObservationSet.load_ndjson(tmp_path / "o.ndjson")
    assert np.array_equal(back.uv, obs.uv) and np.array_equal(back.lm, obs.lm)
