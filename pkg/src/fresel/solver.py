"""Group Elastic Net over RKHS components, solved by ADMM.

In the coordinates ``theta_j = K_j^(1/2) alpha_j`` the penalized problem is

    (1/2n) ||u - sum_j B_j theta_j||^2
        + lambda1 sum_j w_j ||theta_j|| + (lambda2/2) sum_j ||theta_j||^2

where ``B_j B_j^T = K_j`` is the centered Gram matrix of covariate j and
``||theta_j||`` equals the RKHS norm of the fitted component.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ArgumentError, DimensionError
from .kernels import GramStack

logger = logging.getLogger(__name__)

ACTIVE_TOL = 1e-7
KKT_TOL = 1e-6


@dataclass(frozen=True)
class PenaltyParams:
    lambda1: float
    lambda2: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ArgumentError("penalty levels must be nonnegative")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ArgumentError("weights must be finite and nonnegative")
            object.__setattr__(self, "weights", w)

    def weight_vector(self, p: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(p)
        if len(self.weights) != p:
            raise DimensionError(f"expected {p} weights, got {len(self.weights)}")
        return self.weights


@dataclass(frozen=True)
class ADMMConfig:
    rho: float = 1.0
    max_iter: int = 5000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    over_relaxation: float = 1.5
    adaptive_rho: bool = True

    def __post_init__(self):
        if not self.rho > 0:
            raise ArgumentError("rho must be positive")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise ArgumentError("tolerances must be positive")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ArgumentError("over-relaxation must lie in [1, 1.8]")
        if self.max_iter < 1:
            raise ArgumentError("max_iter must be at least 1")


@dataclass
class ADMMState:
    """Warm-start state: consensus copy, scaled dual and penalty parameter."""

    z: np.ndarray
    s: np.ndarray
    rho: float


@dataclass
class FitResult:
    theta: list
    norms: np.ndarray
    alpha: list
    active_set: list
    objective: float
    kkt: list
    iters: int
    converged: bool
    lambda1: float = 0.0
    lambda2: float = 0.0
    weights: Optional[np.ndarray] = None
    state: Optional[ADMMState] = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)

    @property
    def theta_vector(self) -> np.ndarray:
        return np.concatenate(self.theta) if self.theta else np.zeros(0)

    @property
    def kkt_pass(self) -> bool:
        return all(g["pass"] for g in self.kkt)

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "weights": None if self.weights is None else [float(w) for w in self.weights],
            "norms": [float(v) for v in self.norms],
            "active_set": [int(j) for j in self.active_set],
            "objective": float(self.objective),
            "iters": int(self.iters),
            "converged": bool(self.converged),
            "kkt": self.kkt,
            "kkt_pass": self.kkt_pass,
            "trace": self.trace,
        }


def _u_vector(u) -> np.ndarray:
    return np.asarray(getattr(u, "u", u), dtype=float)


def _split(vec: np.ndarray, grams: GramStack) -> list:
    return [vec[s].copy() for s in grams.slices]


def _stack_theta(theta, grams: GramStack) -> np.ndarray:
    if isinstance(theta, np.ndarray) and theta.ndim == 1:
        vec = theta
    else:
        blocks = list(theta)
        if len(blocks) != grams.p:
            raise DimensionError(f"expected {grams.p} coefficient blocks, got {len(blocks)}")
        for b, r in zip(blocks, grams.ranks):
            if len(b) != r:
                raise DimensionError("coefficient block does not match Gram rank")
        vec = np.concatenate([np.asarray(b, float) for b in blocks]) if blocks else np.zeros(0)
    if vec.shape != (sum(grams.ranks),):
        raise DimensionError("coefficient vector does not match Gram ranks")
    return vec


def _group_norms(vec: np.ndarray, grams: GramStack) -> np.ndarray:
    return np.array([np.linalg.norm(vec[s]) for s in grams.slices])


def objective(theta, u, grams: GramStack, params: PenaltyParams) -> float:
    uvec = _u_vector(u)
    if len(uvec) != grams.n:
        raise DimensionError("response length does not match the Gram stack")
    vec = _stack_theta(theta, grams)
    w = params.weight_vector(grams.p)
    resid = uvec - grams.B @ vec
    norms = _group_norms(vec, grams)
    return float(
        resid @ resid / (2 * grams.n)
        + params.lambda1 * np.dot(w, norms)
        + 0.5 * params.lambda2 * vec @ vec
    )


def group_prox(v: np.ndarray, tau1: float, tau2: float) -> np.ndarray:
    """Proximal map of ``t -> tau1 ||t|| + (tau2/2) ||t||^2``."""
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv <= tau1:
        return np.zeros_like(v)
    return (1.0 - tau1 / nv) * v / (1.0 + tau2)


def _eig_cache(grams: GramStack):
    """Eigendecomposition of ``B^T B / n`` cached on the (read-only) stack."""
    cached = grams.__dict__.get("_gram_eig")
    if cached is None:
        B = grams.B
        G = B.T @ B / grams.n
        evals, evecs = np.linalg.eigh(0.5 * (G + G.T))
        cached = (np.clip(evals, 0.0, None), evecs)
        object.__setattr__(grams, "_gram_eig", cached)
    return cached


class _GroupIndex:
    """Start offsets and sizes of the nonempty blocks in the stacked vector."""

    def __init__(self, grams: GramStack):
        ranks = np.array(grams.ranks)
        self.p = grams.p
        self.nonempty = np.flatnonzero(ranks > 0)
        starts = np.concatenate([[0], np.cumsum(ranks)[:-1]])
        self.starts = starts[self.nonempty]
        self.repeat = ranks[self.nonempty]


def _finish(vec, uvec, grams, params, iters, converged, state, kkt_tol=KKT_TOL) -> FitResult:
    theta = _split(vec, grams)
    norms = np.array([np.linalg.norm(t) for t in theta])
    fit = FitResult(
        theta=theta,
        norms=norms,
        alpha=[blk.lift(t) for blk, t in zip(grams.blocks, theta)],
        active_set=[int(j) for j in np.flatnonzero(norms > ACTIVE_TOL)],
        objective=objective(vec, uvec, grams, params),
        kkt=[],
        iters=iters,
        converged=converged,
        lambda1=float(params.lambda1),
        lambda2=float(params.lambda2),
        weights=None if params.weights is None else np.array(params.weights),
        state=state,
    )
    fit.kkt = kkt_check(fit, uvec, grams, params, kkt_tol)
    return fit


def admm_solve(u, grams: GramStack, params: PenaltyParams,
               config: Optional[ADMMConfig] = None, warm_start=None) -> FitResult:
    """Solve the weighted group Elastic Net by over-relaxed consensus ADMM.

    Parameters
    ----------
    u : TransformedResponse or array of shape (n,)
        Centered response.
    grams : GramStack
    params : PenaltyParams
    config : ADMMConfig, optional
    warm_start : FitResult or ADMMState, optional
        Previous solution whose consensus copy and dual seed this run.

    Returns
    -------
    FitResult
        The consensus iterate ``z``; inactive blocks are exactly zero.
    """
    config = config or ADMMConfig()
    uvec = _u_vector(u)
    n = grams.n
    if len(uvec) != n:
        raise DimensionError("response length does not match the Gram stack")
    R = sum(grams.ranks)
    w = params.weight_vector(grams.p)
    if params.lambda2 == 0 and R >= n:
        logger.warning("lambda2 = 0 with %d coordinates for n = %d; problem may be ill-posed", R, n)
    idx = _GroupIndex(grams)
    evals, evecs = _eig_cache(grams)
    Btu = grams.B.T @ uvec / n
    Vt_Btu = evecs.T @ Btu

    state = warm_start.state if isinstance(warm_start, FitResult) else warm_start
    if state is not None and state.z.shape == (R,):
        z, s, rho = state.z.copy(), state.s.copy(), float(state.rho)
    else:
        z, s, rho = np.zeros(R), np.zeros(R), config.rho

    if R == 0:
        return _finish(z, uvec, grams, params, 0, True, ADMMState(z, s, rho))

    alpha_or = config.over_relaxation
    tau1_groups = w * params.lambda1
    starts, repeat = idx.starts, idx.repeat
    nonempty = idx.nonempty
    tau1_ne = tau1_groups[nonempty]
    evecs_t = np.ascontiguousarray(evecs.T)
    inv_den = 1.0 / (evals + rho)
    tol_p, tol_d = config.tol_primal, config.tol_dual
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        theta = evecs @ ((Vt_Btu + rho * (evecs_t @ (z - s))) * inv_den)
        theta_hat = alpha_or * theta + (1.0 - alpha_or) * z
        v = theta_hat + s
        # blockwise prox; max(norm, tau) makes sub-threshold blocks exactly zero
        tau = tau1_ne / rho
        norms = np.sqrt(np.add.reduceat(v * v, starts))
        factor = (1.0 - tau / np.maximum(norms, np.maximum(tau, 1e-300))) / (1.0 + params.lambda2 / rho)
        z_prev = z
        z = v * np.repeat(factor, repeat)
        s = v - z

        diff = theta - z
        step = z - z_prev
        r_primal = np.sqrt(diff @ diff)
        r_dual = rho * np.sqrt(step @ step)
        if (r_primal <= tol_p * (1.0 + np.sqrt(z @ z))
                and r_dual <= tol_d * (1.0 + rho * np.sqrt(s @ s))):
            converged = True
            break
        if config.adaptive_rho and it % 10 == 0:
            if r_primal > 10.0 * r_dual:
                rho *= 2.0
                s = s / 2.0
                inv_den = 1.0 / (evals + rho)
            elif r_dual > 10.0 * r_primal:
                rho /= 2.0
                s = s * 2.0
                inv_den = 1.0 / (evals + rho)
    if not converged:
        logger.info("ADMM stopped at max_iter=%d without meeting tolerances", config.max_iter)
    return _finish(z, uvec, grams, params, it, converged, ADMMState(z.copy(), s.copy(), rho))


def ridge_solve(u, grams: GramStack, lambda2: float) -> FitResult:
    """Closed-form ridge fit ``(B^T B/n + lambda2 I)^-1 B^T u / n``."""
    if not lambda2 > 0:
        raise ArgumentError("ridge needs lambda2 > 0")
    uvec = _u_vector(u)
    if len(uvec) != grams.n:
        raise DimensionError("response length does not match the Gram stack")
    evals, evecs = _eig_cache(grams)
    Btu = grams.B.T @ uvec / grams.n
    vec = evecs @ ((evecs.T @ Btu) / (evals + lambda2))
    params = PenaltyParams(0.0, lambda2)
    R = len(vec)
    return _finish(vec, uvec, grams, params, 0, True, ADMMState(vec.copy(), np.zeros(R), 1.0))


def kkt_check(fit, u, grams: GramStack, params: PenaltyParams, tol: float = KKT_TOL) -> list:
    """Per-group first-order optimality report.

    Active groups are checked for stationarity
    ``g_j = lambda2 theta_j + w_j lambda1 theta_j/||theta_j||`` with
    ``g_j = B_j^T r / n``; inactive groups for the subgradient bound
    ``||g_j|| <= w_j lambda1``.
    """
    uvec = _u_vector(u)
    vec = _stack_theta(fit.theta if isinstance(fit, FitResult) else fit, grams)
    w = params.weight_vector(grams.p)
    resid = uvec - grams.B @ vec
    report = []
    for j, (blk, sl) in enumerate(zip(grams.blocks, grams.slices)):
        th = vec[sl]
        g = blk.B.T @ resid / grams.n
        nrm = float(np.linalg.norm(th))
        bound = float(w[j] * params.lambda1)
        if nrm > 0:
            val = float(np.linalg.norm(g - params.lambda2 * th - bound * th / nrm))
            ok = val <= tol
            report.append({"group": j, "active": True, "stationarity_residual": val, "pass": ok})
        else:
            val = float(np.linalg.norm(g))
            ok = val <= bound + tol
            report.append({"group": j, "active": False, "dual_norm": val, "bound": bound,
                           "pass": ok})
    return report


def lambda_max(u, grams: GramStack, weights: Optional[Sequence[float]] = None) -> float:
    """Smallest ``lambda1`` at which the all-zero fit is optimal."""
    uvec = _u_vector(u)
    w = np.ones(grams.p) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != grams.p:
        raise DimensionError("one weight per group required")
    considered = w > 0
    if not considered.any():
        raise ArgumentError("all weights are zero; no finite lambda_max")
    best = 0.0
    for j, blk in enumerate(grams.blocks):
        if not considered[j] or blk.rank == 0:
            continue
        best = max(best, np.linalg.norm(blk.B.T @ uvec) / grams.n / w[j])
    return float(best)
