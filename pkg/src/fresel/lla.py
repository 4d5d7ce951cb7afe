"""Folded-concave refinement by local linear approximation (LLA)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ArgumentError
from .kernels import GramStack
from .solver import ADMMConfig, FitResult, PenaltyParams, admm_solve, ridge_solve

SCAD_A = 3.7


@dataclass(frozen=True)
class FoldedPenalty:
    kind: str = "scad"
    lam: float = 1.0
    a: float = SCAD_A

    def __post_init__(self):
        if self.kind not in ("scad", "mcp"):
            raise ArgumentError(f"unknown folded penalty {self.kind!r}")
        if not self.lam > 0:
            raise ArgumentError("penalty level must be positive")
        if self.kind == "scad" and not self.a > 2:
            raise ArgumentError("SCAD needs a > 2")
        if self.kind == "mcp" and not self.a > 1:
            raise ArgumentError("MCP needs a > 1")


def penalty_derivative(pen: FoldedPenalty, t) -> np.ndarray:
    """Right derivative of the folded penalty at ``t >= 0`` (vectorized)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ArgumentError("penalty derivative is defined for t >= 0")
    lam, a = pen.lam, pen.a
    if pen.kind == "scad":
        out = np.where(t <= lam, lam, np.where(t <= a * lam, (a * lam - t) / (a - 1.0), 0.0))
    else:
        out = np.maximum(lam - t / a, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LLAConfig:
    """Outer-loop settings.

    ``init`` is ``"ridge"`` or ``"elastic_net"``; ``lambda1_init`` is only
    used for the elastic-net start and ``lambda2_init`` defaults to the
    refinement's ``lambda2``.
    """

    max_outer: int = 3
    init: str = "ridge"
    lambda1_init: Optional[float] = None
    lambda2_init: Optional[float] = None
    inner: ADMMConfig = field(default_factory=ADMMConfig)

    def __post_init__(self):
        if self.max_outer < 1:
            raise ArgumentError("max_outer must be at least 1")
        if self.init not in ("ridge", "elastic_net"):
            raise ArgumentError(f"unknown LLA initialization {self.init!r}")


def initial_fit(u, grams: GramStack, lambda2: float, config: LLAConfig) -> FitResult:
    lam2 = config.lambda2_init if config.lambda2_init is not None else lambda2
    if config.init == "ridge":
        return ridge_solve(u, grams, lam2)
    if config.lambda1_init is None:
        raise ArgumentError("elastic-net initialization needs lambda1_init")
    return admm_solve(u, grams, PenaltyParams(config.lambda1_init, lam2), config.inner)


def lla_fit(u, grams: GramStack, pen: FoldedPenalty, lambda2: float,
            config: Optional[LLAConfig] = None, init: Optional[FitResult] = None) -> FitResult:
    """Run LLA from an initial fit; returns the last fit with ``trace`` filled.

    Each outer step solves the group Elastic Net with per-group weights
    ``P'(||f_j||)`` evaluated at the previous fit, holding ``lambda2`` fixed.
    It stops once the active set and the weights repeat, or after
    ``max_outer`` steps.
    """
    config = config or LLAConfig()
    if init is None:
        init = initial_fit(u, grams, lambda2, config)
    weights = penalty_derivative(pen, init.norms)
    trace = [{"step": 0, "weights": weights.tolist(), "active_set": list(init.active_set),
              "objective": float(init.objective)}]
    fit = init
    converged = True
    prev_active = list(init.active_set)
    for step in range(1, config.max_outer + 1):
        params = PenaltyParams(1.0, lambda2, weights)
        warm = fit if fit.state is not None and fit.lambda1 > 0 else None
        fit = admm_solve(u, grams, params, config.inner, warm_start=warm)
        converged = converged and fit.converged
        new_weights = penalty_derivative(pen, fit.norms)
        trace.append({"step": step, "weights": new_weights.tolist(),
                      "active_set": list(fit.active_set), "objective": float(fit.objective),
                      "converged": bool(fit.converged), "iters": int(fit.iters)})
        stable = fit.active_set == prev_active and np.allclose(
            new_weights, weights, rtol=1e-8, atol=1e-12)
        weights = new_weights
        prev_active = list(fit.active_set)
        if stable:
            break
    fit.converged = converged
    fit.trace = trace
    return fit
