"""Identity distributions and gendered-to-neutral body shape transfer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import linalg

GENDERS = ("male", "female", "neutral")


class IdentityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianIdentity:
    """Multivariate Gaussian over identity coefficients.

    ``factor`` is lower triangular with ``factor @ factor.T`` approximating
    ``covariance`` (exactly, unless jitter had to be added).
    """

    mean: np.ndarray
    factor: np.ndarray
    label: str = "neutral"
    covariance: np.ndarray | None = None
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def cov(self) -> np.ndarray:
        return self.covariance if self.covariance is not None else self.factor @ self.factor.T


def fit_gaussian(samples: np.ndarray, label: str = "neutral", max_jitter: float = 1e-3) -> GaussianIdentity:
    """Sample mean, unbiased covariance and a Cholesky factor.

    If the covariance is not positive definite, ``1e-9 * I`` is added and
    escalated tenfold until the factorization succeeds or ``max_jitter`` is
    exceeded.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise IdentityError("need at least two samples to fit a Gaussian")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    jitter = 0.0
    while True:
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-9 if jitter == 0.0 else jitter * 10
            if jitter > max_jitter * (1 + 1e-12):
                raise IdentityError("covariance is not positive definite even with maximum jitter") from None
    return GaussianIdentity(mean, factor, label, cov, jitter)


def sample_identity(g: GaussianIdentity, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    z = rng.standard_normal(g.dim)
    return g.mean + scale * (g.factor @ z)


@dataclass(frozen=True, eq=False)
class GenderTransfer:
    """Affine map ``beta_n = offset + beta_g @ mapping`` from a gendered basis."""

    offset: np.ndarray  # (|beta_n|,)
    mapping: np.ndarray  # (|beta_g|, |beta_n|)
    gender: str
    template_residual: float = 0.0
    basis_residuals: np.ndarray | None = None


def _flatten(basis: np.ndarray) -> np.ndarray:
    basis = np.asarray(basis, dtype=float)
    return basis.reshape(basis.shape[0], -1)


def solve_gender_transfer(T_g, S_g, T_n, S_n, gender: str = "male", rank_tol: float = 1e-10) -> GenderTransfer:
    """Least-squares offset and mapping expressing a gendered model in the neutral basis.

    Solves ``offset @ S_n ~ T_g - T_n`` and, for every gendered component
    ``i``, ``mapping[i] @ S_n ~ S_g[i]`` with an SVD-based solver. Templates
    are ``(N, 3)``; bases are ``(components, N, 3)`` or already flattened.
    """
    Sn = _flatten(S_n)
    Sg = _flatten(S_g)
    dT = (np.asarray(T_g, dtype=float) - np.asarray(T_n, dtype=float)).reshape(-1)
    if Sn.shape[1] != dT.shape[0] or Sg.shape[1] != dT.shape[0]:
        raise IdentityError("templates and bases disagree on the vertex count")
    if Sn.shape[1] < Sn.shape[0]:
        raise IdentityError("neutral basis has more components than coordinates")
    # offset and every mapping row share the design matrix S_n^T
    rhs = np.column_stack([dT, Sg.T])
    sol, _, rank, sv = linalg.lstsq(Sn.T, rhs, cond=rank_tol, lapack_driver="gelsd")
    if rank < Sn.shape[0]:
        raise IdentityError(
            f"neutral basis is rank deficient: rank {rank} of {Sn.shape[0]} "
            f"(smallest singular value ratio {sv[-1] / sv[0]:.3e})"
        )
    resid = np.linalg.norm(Sn.T @ sol - rhs, axis=0)
    return GenderTransfer(sol[:, 0], sol[:, 1:].T, gender, float(resid[0]), resid[1:])


def to_neutral(beta_g, transfer: GenderTransfer) -> np.ndarray:
    beta_g = np.asarray(beta_g, dtype=float)
    if beta_g.shape[-1] != transfer.mapping.shape[0]:
        raise IdentityError(f"expected {transfer.mapping.shape[0]} gendered coefficients, got {beta_g.shape[-1]}")
    return transfer.offset + beta_g @ transfer.mapping


def sample_identity_set(
    face: Mapping[str, GaussianIdentity],
    transfers: Mapping[str, GenderTransfer],
    n_beta: int,
    rng: np.random.Generator,
    gender_probs: Mapping[str, float] | None = None,
    beta_scale: float = 1.0,
) -> dict:
    """Draw one (gender, gamma, beta_n) identity.

    Gendered body shapes come from the unit normal in the gendered basis and
    are transferred to the neutral basis; neutral draws sample the neutral
    basis directly. Genders default to equal thirds.
    """
    probs = dict(gender_probs or {g: 1 / 3 for g in GENDERS})
    labels = [g for g in GENDERS if probs.get(g, 0) > 0]
    p = np.array([probs[g] for g in labels], dtype=float)
    gender = labels[rng.choice(len(labels), p=p / p.sum())]
    gamma = sample_identity(face[gender], rng)
    if gender == "neutral":
        beta = beta_scale * rng.standard_normal(n_beta)
    else:
        t = transfers[gender]
        beta = to_neutral(beta_scale * rng.standard_normal(t.mapping.shape[0]), t)
    return {"gender": gender, "gamma": gamma, "beta": beta}


def gaussian_to_arrays(prefix: str, g: GaussianIdentity) -> dict[str, np.ndarray]:
    return {f"{prefix}.mean": g.mean, f"{prefix}.factor": g.factor}


def gaussian_from_arrays(prefix: str, arrays: Mapping[str, np.ndarray], label: str) -> GaussianIdentity:
    return GaussianIdentity(np.asarray(arrays[f"{prefix}.mean"], float), np.asarray(arrays[f"{prefix}.factor"], float), label)


def transfer_to_arrays(prefix: str, t: GenderTransfer) -> dict[str, np.ndarray]:
    return {f"{prefix}.offset": t.offset, f"{prefix}.mapping": t.mapping}


def transfer_from_arrays(prefix: str, arrays: Mapping[str, np.ndarray], gender: str) -> GenderTransfer:
    return GenderTransfer(np.asarray(arrays[f"{prefix}.offset"], float), np.asarray(arrays[f"{prefix}.mapping"], float), gender)


@dataclass(frozen=True, eq=False)
class IdentityPriors:
    """Everything needed to draw identities: per-gender face Gaussians and gendered body transfers."""

    face: Mapping[str, GaussianIdentity]
    transfers: Mapping[str, GenderTransfer]
    n_beta: int

    def genders(self) -> tuple[str, ...]:
        """Genders that can be sampled: a face prior plus, for gendered ones, a body transfer."""
        return tuple(g for g in GENDERS if g in self.face and (g == "neutral" or g in self.transfers))


def save_identity_priors(path, priors: IdentityPriors) -> None:
    from . import container

    arrays = {}
    for g, face in priors.face.items():
        arrays.update(gaussian_to_arrays(f"face.{g}", face))
    for g, t in priors.transfers.items():
        arrays.update(transfer_to_arrays(f"transfer.{g}", t))
    meta = {
        "kind": "identity_priors",
        "n_beta": priors.n_beta,
        "face": sorted(priors.face),
        "transfers": sorted(priors.transfers),
    }
    container.write(path, meta, arrays, float_dtype="<f8")


def load_identity_priors(path) -> IdentityPriors:
    from . import container

    meta, arrays = container.read(path)
    if meta.get("kind") != "identity_priors":
        raise IdentityError(f"{path}: not an identity prior container (kind={meta.get('kind')!r})")
    face = {g: gaussian_from_arrays(f"face.{g}", arrays, g) for g in meta["face"]}
    transfers = {g: transfer_from_arrays(f"transfer.{g}", arrays, g) for g in meta["transfers"]}
    return IdentityPriors(face, transfers, int(meta["n_beta"]))
