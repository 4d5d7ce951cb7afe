"""Seeded generators for the five simulation models.

Models 1-3 produce distributional responses ``Y(t) = mu_X + sigma_X z(t)``
on a quantile grid; Models 4-5 produce SPD responses ``Y = A^T A`` from a
latent upper-triangular factor ``A``.  Covariates are AR(rho) Gaussian,
mapped to (-1, 1) by ``2 Phi(z) - 1`` for Models 1-3.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .exceptions import ArgumentError
from .objects import MetricResponse, QuantileObject, default_levels

SIGMA_FLOOR = 0.1

# zero-based indices of the covariates carrying signal
TRUTH = {
    1: (0, 3, 7),
    2: (0, 3, 7),
    3: (0, 3, 7),
    4: (0, 2, 4, 6, 8),
    5: (0, 2, 4, 6, 8),
}

DEFAULT_PARAMS = {
    1: {"mu0": 0.0, "beta": 0.75, "sigma0": 0.0, "gamma": 3.0, "nu1": 1.0, "nu2": 0.5},
    2: {"mu0": 0.0, "beta": 12.0, "sigma0": 0.0, "gamma": 12.0, "nu1": 1.0, "nu2": 0.5},
    3: {"mu0": 0.0, "beta": 10.0, "sigma0": 0.0, "gamma": 20.0, "nu1": 1.0, "nu2": 0.5},
    4: {"mu0": 3.0, "beta": 1.0, "sigma0": 1.0, "gamma": 1.0, "nu1": 0.25},
    5: {"mu0": 3.0, "beta": 2.0, "sigma0": 1.0, "gamma": 4.0, "nu1": 1.0, "nu2": 0.5},
}

DEFAULT_P = {1: 30, 2: 10, 3: 10, 4: 30, 5: 10}


@dataclass(frozen=True)
class SimModelSpec:
    model_id: int
    n: int = 200
    p: Optional[int] = None
    rho: float = 0.5
    params: dict = field(default_factory=dict)
    m_grid: int = 100
    d_spd: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in TRUTH:
            raise ArgumentError(f"model_id must be 1..5, got {self.model_id}")
        if self.p is None:
            object.__setattr__(self, "p", DEFAULT_P[self.model_id])
        if self.p < max(TRUTH[self.model_id]) + 1:
            raise ArgumentError(f"model {self.model_id} needs p >= {max(TRUTH[self.model_id]) + 1}")
        if not -1 < self.rho < 1:
            raise ArgumentError("rho must lie in (-1, 1)")
        if self.n < 2:
            raise ArgumentError("n must be at least 2")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.model_id])
        if unknown:
            raise ArgumentError(f"unknown parameters for model {self.model_id}: {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[self.model_id], **self.params}
        object.__setattr__(self, "params", merged)
        if self.model_id >= 4 and self.d_spd < 2:
            raise ArgumentError("SPD models need d_spd >= 2")

    @property
    def truth(self) -> tuple:
        return TRUTH[self.model_id]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SimDataset:
    X: np.ndarray
    responses: list
    truth: tuple
    spec: Optional[SimModelSpec] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def ar_covariance(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_covariates(n: int, p: int, rho: float, transform: str = "uniform", seed=0) -> np.ndarray:
    """Rows i.i.d. N(0, AR(rho)); ``uniform`` maps entrywise by ``2 Phi(z) - 1``.

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if not -1 < rho < 1:
        raise ArgumentError("rho must lie in (-1, 1)")
    if transform not in ("uniform", "raw"):
        raise ArgumentError(f"unknown covariate transform {transform!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chol = np.linalg.cholesky(ar_covariance(p, rho))
    Z = rng.standard_normal((n, p)) @ chol.T
    if transform == "raw":
        return Z
    return 2.0 * norm.cdf(Z) - 1.0


def _gamma_sigma(mean: np.ndarray, nu2: float, rng: np.random.Generator) -> np.ndarray:
    mean = np.maximum(mean, SIGMA_FLOOR)
    return rng.gamma(shape=mean ** 2 / nu2, scale=nu2 / mean)


def _distribution_signal(model_id: int, X: np.ndarray, prm: dict):
    x1, x4, x8 = X[:, 0], X[:, 3], X[:, 7]
    if model_id == 1:
        loc = prm["mu0"] + prm["beta"] * (x4 + x8)
        # shifted to (0, gamma) so the scale stays positive on X1 in (-1, 1)
        scale = prm["sigma0"] + prm["gamma"] * (x1 + 1.0) / 2.0
    elif model_id == 2:
        loc = prm["mu0"] + prm["beta"] * (np.exp(-x4 ** 2) + np.exp(-x8 ** 2))
        scale = prm["sigma0"] + prm["gamma"] * np.exp(-2.0 * (x1 - 1.0) ** 2)
    else:
        loc = prm["mu0"] + prm["beta"] * (np.sin(2 * np.pi * x4) + 2.0 / (1.0 + np.abs(x8)))
        scale = prm["sigma0"] + prm["gamma"] * np.exp(-((x1 - 1.0) ** 2))
    return loc, scale


def _upper_ones(d: int) -> np.ndarray:
    return np.triu(np.ones((d, d)), k=1)


def spd_from_factor(A: np.ndarray) -> MetricResponse:
    Y = A.T @ A
    return MetricResponse.spd(0.5 * (Y + Y.T))


def simulate_responses(spec: SimModelSpec, X: np.ndarray, rng: np.random.Generator) -> list:
    """Draw responses given covariates; only the truth columns of ``X`` are read."""
    prm = spec.params
    n = X.shape[0]
    if spec.model_id <= 3:
        loc, scale = _distribution_signal(spec.model_id, X, prm)
        mu = loc + np.sqrt(prm["nu1"]) * rng.standard_normal(n)
        sigma = _gamma_sigma(scale, prm["nu2"], rng)
        levels = default_levels(spec.m_grid)
        z = norm.ppf(levels)
        return [MetricResponse("quantile_w2", QuantileObject(levels, mu[i] + sigma[i] * z))
                for i in range(n)]

    d = spec.d_spd
    iu = np.triu_indices(d)
    noise = prm["nu1"] * rng.standard_normal((n, len(iu[0])))
    if spec.model_id == 4:
        diag = prm["mu0"] + prm["beta"] * (X[:, 0] + X[:, 2])
        upper = prm["sigma0"] + prm["gamma"] * (X[:, 4] + X[:, 6] + X[:, 8])
    else:
        diag = prm["mu0"] + prm["beta"] * (3.0 * X[:, 0] ** 2 + np.sin(2 * np.pi * X[:, 2]))
        eta = (np.exp(-X[:, 4]) + 2.0 * np.exp(-2.0 * (X[:, 6] - 1.0) ** 2)
               + 2.0 / (1.0 + np.abs(X[:, 8])))
        upper = _gamma_sigma(prm["sigma0"] + prm["gamma"] * eta, prm["nu2"], rng)
    eye, U = np.eye(d), _upper_ones(d)
    out = []
    for i in range(n):
        A = diag[i] * eye + upper[i] * U
        A[iu] += noise[i]
        out.append(spd_from_factor(A))
    return out


def gen_model(spec: SimModelSpec) -> SimDataset:
    rng = np.random.default_rng(spec.seed)
    transform = "uniform" if spec.model_id <= 3 else "raw"
    X = gen_covariates(spec.n, spec.p, spec.rho, transform, rng)
    responses = simulate_responses(spec, X, rng)
    return SimDataset(X=X, responses=responses, truth=spec.truth, spec=spec)


__all__ = ["SimModelSpec", "SimDataset", "gen_covariates", "gen_model", "simulate_responses",
           "ar_covariance", "TRUTH", "DEFAULT_PARAMS"]
