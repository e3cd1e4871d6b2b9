import numpy as np
import pytest

from synthbody.identity import (
    GaussianIdentity,
    GenderTransfer,
    IdentityError,
    IdentityPriors,
    fit_gaussian,
    load_identity_priors,
    sample_identity,
    sample_identity_set,
    save_identity_priors,
    solve_gender_transfer,
    to_neutral,
)


def test_two_point_fit():
    g = fit_gaussian(np.array([[0.0], [2.0]]))
    assert g.mean.tolist() == [1.0] and np.isclose(g.cov()[0, 0], 2.0) and g.jitter == 0.0


def test_monte_carlo_recovers_moments(rng):
    mean = np.array([1.0, -2.0, 0.5])
    A = rng.normal(size=(3, 3))
    cov = A @ A.T + 0.5 * np.eye(3)
    x = rng.multivariate_normal(mean, cov, size=20000)
    g = fit_gaussian(x)
    assert np.allclose(g.factor @ g.factor.T, g.cov())
    draws = np.array([sample_identity(g, rng) for _ in range(20000)])
    assert np.abs(draws.mean(0) - mean).max() < 0.1
    assert np.abs(np.cov(draws, rowvar=False) - cov).max() / np.abs(cov).max() < 0.05


def test_degenerate_samples_use_jitter():
    x = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])  # rank one covariance
    g = fit_gaussian(x)
    assert 0 < g.jitter <= 1e-3
    assert np.allclose(g.factor @ g.factor.T, g.cov() + g.jitter * np.eye(2))
    with pytest.raises(IdentityError):
        fit_gaussian(x, max_jitter=0.0)
    with pytest.raises(IdentityError):
        fit_gaussian(np.ones((1, 2)))


def test_transfer_matches_pseudoinverse(rng):
    N = 40
    S_n = rng.normal(size=(6, N, 3))
    S_g = rng.normal(size=(4, N, 3))
    T_n, T_g = rng.normal(size=(2, N, 3))
    t = solve_gender_transfer(T_g, S_g, T_n, S_n)
    pinv = np.linalg.pinv(S_n.reshape(6, -1).T)
    assert np.allclose(t.offset, pinv @ (T_g - T_n).reshape(-1), atol=1e-10)
    assert np.allclose(t.mapping, (pinv @ S_g.reshape(4, -1).T).T, atol=1e-10)
    assert t.template_residual > 0 and np.all(t.basis_residuals > 0)


def test_in_span_transfer_is_exact(rng):
    N = 50
    S_n = rng.normal(size=(8, N, 3))
    T_n = rng.normal(size=(N, 3))
    M = rng.normal(size=(5, 8))
    c = rng.normal(size=8)
    S_g = np.einsum("ij,jnc->inc", M, S_n)
    T_g = T_n + np.einsum("j,jnc->nc", c, S_n)
    t = solve_gender_transfer(T_g, S_g, T_n, S_n)
    beta_g = rng.normal(size=5)
    mesh_g = T_g + np.einsum("i,inc->nc", beta_g, S_g)
    mesh_n = T_n + np.einsum("j,jnc->nc", to_neutral(beta_g, t), S_n)
    assert np.abs(mesh_g - mesh_n).max() < 1e-8
    assert t.template_residual < 1e-8


def test_to_neutral_is_affine(rng):
    t = GenderTransfer(rng.normal(size=3), rng.normal(size=(2, 3)), "male")
    a, b = rng.normal(size=(2, 2))
    assert np.allclose(to_neutral(0.3 * a + 0.7 * b, t), 0.3 * to_neutral(a, t) + 0.7 * to_neutral(b, t))
    assert np.allclose(to_neutral(np.zeros(2), t), t.offset)
    with pytest.raises(IdentityError):
        to_neutral(np.zeros(3), t)


def test_rank_deficient_basis_is_reported(rng):
    S_n = rng.normal(size=(3, 10, 3))
    S_n[2] = S_n[0] + S_n[1]
    with pytest.raises(IdentityError, match="rank"):
        solve_gender_transfer(np.zeros((10, 3)), rng.normal(size=(2, 10, 3)), np.zeros((10, 3)), S_n)


def test_priors_round_trip_and_sampling(tmp_path, rng):
    face = {g: GaussianIdentity(rng.normal(size=3), np.tril(rng.normal(size=(3, 3))), g) for g in ("male", "neutral")}
    transfers = {"male": GenderTransfer(rng.normal(size=4), rng.normal(size=(2, 4)), "male")}
    pri = IdentityPriors(face, transfers, 4)
    save_identity_priors(tmp_path / "p.sbm", pri)
    back = load_identity_priors(tmp_path / "p.sbm")
    assert back.genders() == ("male", "neutral")
    assert np.array_equal(back.face["male"].factor, face["male"].factor)
    assert np.array_equal(back.transfers["male"].mapping, transfers["male"].mapping)
    draws = [sample_identity_set(back.face, back.transfers, 4, rng, {"male": 0.5, "neutral": 0.5}) for _ in range(200)]
    assert {d["gender"] for d in draws} == {"male", "neutral"}
    assert all(d["beta"].shape == (4,) and d["gamma"].shape == (3,) for d in draws)
