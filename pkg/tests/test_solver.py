import json

import numpy as np
import pytest

from scenarios import LANDMARKS_ONLY, make_scenario
from synthbody.fitting import EnergyWeights, FitConfig, FitParams, FitProblem, fit, perturb_init, vertex_rms
from synthbody.fitting.solver import FitError, recovery_metrics
from synthbody.procedural import procedural_model


@pytest.fixture(scope="module")
def model():
    return procedural_model(300, n_face_identity=4, n_body_identity=4, n_expression=3)


@pytest.fixture(scope="module")
def scenario(model):
    return make_scenario(model, n_frames=2, n_landmarks=150, seed=5)


def with_term(problem, **kw):
    args = {k: getattr(problem, k) for k in ("model", "cameras", "observations", "landmarks", "n_frames", "weights",
                                             "pose_priors", "face_prior", "intersect")}
    args.update(kw)
    return FitProblem(**args)


def test_truth_init_stays_put(scenario):
    res = fit(scenario.problem, scenario.truth)
    assert res.converged and res.iterations <= 2
    lay = scenario.problem.layout
    assert np.abs(lay.pack(res.params) - lay.pack(scenario.truth)).max() <= 1e-8


def test_round_trip_recovers_the_mesh(scenario, model):
    init = perturb_init(scenario.truth, {"pose": 0.1}, np.random.default_rng(0))
    res = fit(scenario.problem, init)
    assert res.converged and not res.diverged and res.iterations <= 200
    assert np.all(np.diff(res.energies()) <= 0)
    assert vertex_rms(model, scenario.truth, res.params) < 1e-3
    m = recovery_metrics(model, scenario.truth, res.params)
    assert m["vertex_rms"] == vertex_rms(model, scenario.truth, res.params) and m["camera_rotation_rms"] == 0.0


def test_default_priors_still_converge(model):
    scn = make_scenario(model, n_frames=2, n_landmarks=150, seed=6, weights=EnergyWeights())
    init = perturb_init(scn.truth, {"pose": 0.1}, np.random.default_rng(1))
    res = fit(scn.problem, init)
    assert res.converged and np.all(np.diff(res.energies()) <= 0)
    assert vertex_rms(model, scn.truth, res.params) < 1e-2


def test_frozen_blocks_do_not_move(scenario):
    init = perturb_init(scenario.truth, {"pose": 0.05, "identity": 0.1, "camera_rotation": 0.01}, np.random.default_rng(2))
    res = fit(scenario.problem, init, FitConfig(freeze=("cameras", "face_identity")))
    assert np.array_equal(res.params.cam_rot, init.cam_rot) and np.array_equal(res.params.gamma, init.gamma)
    assert not np.array_equal(res.params.beta, init.beta)


def test_staged_schedule_and_quasi_newton(scenario):
    init = perturb_init(scenario.truth, {"pose": 0.05}, np.random.default_rng(3))
    staged = fit(scenario.problem, init, FitConfig(stages=(("translation",), ("pose",), ("body_identity", "expression"))))
    assert np.all(np.diff(staged.energies()) <= 0) and staged.energy < staged.trace[0]["total"]
    qn = fit(scenario.problem, init, FitConfig(method="lbfgs", max_iterations=50))
    assert np.all(np.diff(qn.energies()) <= 0) and qn.energy < qn.trace[0]["total"]


def test_joint_camera_refinement(scenario):
    init = perturb_init(scenario.truth, {"pose": 0.02, "camera_rotation": 0.002, "camera_translation": 0.002},
                        np.random.default_rng(4))
    res = fit(scenario.problem, init, FitConfig(freeze=()))
    assert res.energy < 1e-6 * res.trace[0]["total"]


def test_rejected_steps_set_the_divergence_flag(scenario):
    x0 = scenario.problem.layout.pack(scenario.truth)

    def cliff(p):
        # finite only at the start point, with a gradient that invites a step
        x = scenario.problem.layout.pack(p)
        e = 1.0 if np.array_equal(x, x0) else np.inf
        return e, np.full(x.size, 1e-9)

    prob = with_term(scenario.problem, weights=EnergyWeights(0, 0, 0, 0, 0, 0, 1.0), intersect=cliff)
    res = fit(prob, scenario.truth, FitConfig(max_rejections=5))
    assert res.diverged and not res.converged and res.energy == 1.0
    assert np.array_equal(prob.layout.pack(res.params), x0)


def test_non_finite_start_is_an_error(scenario):
    prob = with_term(scenario.problem, weights=EnergyWeights(intersect=1.0), intersect=lambda p: (np.inf, None))
    with pytest.raises(FitError):
        fit(prob, scenario.truth)


def test_iteration_limit(scenario):
    init = perturb_init(scenario.truth, {"pose": 0.1}, np.random.default_rng(5))
    res = fit(scenario.problem, init, FitConfig(max_iterations=2))
    assert res.iterations == 2 and not res.converged and res.message == "iteration limit reached"


def test_result_json(tmp_path, scenario):
    res = fit(scenario.problem, scenario.truth)
    res.save(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["converged"] and set(doc["trace"][0]) >= {"landmarks", "pose", "total"}
    back = FitParams.from_json(doc["params"])
    assert np.array_equal(back.theta, res.params.theta)
    assert doc["weights"] == LANDMARKS_ONLY.to_json()


def test_perturb_init(scenario):
    t = scenario.truth
    same = perturb_init(t, {}, np.random.default_rng(0))
    assert np.array_equal(same.theta, t.theta) and np.array_equal(same.gamma, t.gamma)
    a = perturb_init(t, {"pose": 0.1}, np.random.default_rng(9))
    b = perturb_init(t, {"pose": 0.1}, np.random.default_rng(9))
    assert np.array_equal(a.theta, b.theta)
    many = np.concatenate([(perturb_init(t, {"pose": 0.1}, np.random.default_rng(s)).theta - t.theta).ravel()
                           for s in range(40)])
    assert abs(many.std() - 0.1) < 0.005
    with pytest.raises(ValueError):
        perturb_init(t, {"pose": -1.0}, np.random.default_rng(0))
    with pytest.raises(ValueError):
        perturb_init(t, {"shoulders": 1.0}, np.random.default_rng(0))
