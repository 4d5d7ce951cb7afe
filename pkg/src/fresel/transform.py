"""Squared-distance response transform and reference-point policies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .exceptions import ArgumentError, TagMismatchError
from .objects import (
    QUANTILE_W2,
    MetricResponse,
    check_homogeneous,
    embed,
    embed_responses,
    frechet_mean,
    is_valid_coords,
    unembed,
)

Rule = Union[str, int, MetricResponse]
Y_RULES = ("random_sample", "principal", "perturbed_mean")


@dataclass(frozen=True)
class ReferencePolicy:
    """How to pick the reference pair ``(y, y0)`` from a training sample.

    ``y0`` is ``"frechet_mean"``, a sample index or an explicit response.
    ``y`` is ``"random_sample"`` (seeded uniform draw among the sample),
    ``"principal"`` (Fréchet mean moved along the sum of the principal axes
    of the sample, each scaled by its standard deviation, see
    :func:`principal_point`),
    ``"perturbed_mean"`` (Fréchet mean moved by seeded noise of size
    ``scale``), a sample index or an explicit response.
    """

    y0: Rule = "frechet_mean"
    y: Rule = "principal"
    scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.y0, str) and self.y0 != "frechet_mean":
            raise ArgumentError(f"unknown y0 rule {self.y0!r}")
        if isinstance(self.y, str) and self.y not in Y_RULES:
            raise ArgumentError(f"unknown y rule {self.y!r}")
        if self.scale < 0:
            raise ArgumentError("perturbation scale must be nonnegative")

    def to_dict(self) -> dict:
        def rule(r):
            if isinstance(r, MetricResponse):
                return {"explicit": {"tag": r.tag, "coords": embed(r).tolist()}}
            if isinstance(r, (int, np.integer)):
                return {"index": int(r)}
            return r

        return {"y0": rule(self.y0), "y": rule(self.y), "scale": self.scale, "seed": self.seed}


def _pick(responses, index) -> MetricResponse:
    index = int(index)
    if not 0 <= index < len(responses):
        raise ArgumentError(f"reference index {index} out of range for {len(responses)} responses")
    return responses[index]


def _shift_valid(mean: MetricResponse, shift: np.ndarray) -> MetricResponse:
    # halve the shift until the point is a valid object; the cones are convex
    # and contain the mean, so this terminates
    center = embed(mean)
    for _ in range(64):
        cand = center + shift
        if is_valid_coords(cand, mean):
            return unembed(cand, mean)
        shift = 0.5 * shift
    return mean


def coordinate_blocks(like: MetricResponse) -> list:
    """Orthonormal bases of the level and shape subspaces of the embedding.

    Quantile coordinates split into the constant direction (location) and
    its complement (centered shape); Cholesky coordinates split into the
    diagonal and the strictly lower entries.  Squared distances add over
    the two blocks.
    """
    q = len(embed(like))
    if like.tag == QUANTILE_W2:
        level = np.full((q, 1), 1.0 / np.sqrt(q))
        # orthonormal complement of the constant vector
        basis, _ = np.linalg.qr(np.hstack([level, np.eye(q)[:, :-1]]))
        return [level, basis[:, 1:]] if q > 1 else [level]
    d = like.dim
    rows, cols = np.tril_indices(d)
    eye = np.eye(q)
    diag, off = eye[:, rows == cols], eye[:, rows != cols]
    return [diag, off] if off.shape[1] else [diag]


def principal_point(responses: Sequence[MetricResponse], rel_tol: float = 1e-8) -> MetricResponse:
    """Fréchet mean plus ``sqrt(lambda_k) v_k`` summed over principal axes.

    Axes are computed separately inside each block of
    :func:`coordinate_blocks`, so a location effect and a shape effect of
    similar spread never cancel.  Each axis ``v_k`` is signed so its
    largest-magnitude entry is positive; axes with variance below
    ``rel_tol`` times the largest in the sample are dropped.  The
    resulting ``y - y0`` has a nonzero component along every direction in
    which the sample varies.
    """
    mean = frechet_mean(responses)
    if len(responses) < 2:
        return mean
    coords = embed_responses(responses)
    dev = coords - coords.mean(axis=0)
    parts = []
    for basis in coordinate_blocks(mean):
        _, sv, wt = np.linalg.svd(dev @ basis, full_matrices=False)
        parts.append((sv ** 2 / (len(responses) - 1), wt @ basis.T))
    top = max((lam.max() for lam, _ in parts if lam.size), default=0.0)
    if top <= 0:
        return mean
    shift = np.zeros(coords.shape[1])
    for lam, axes in parts:
        keep = lam > rel_tol * top
        axes = axes[keep]
        lead = np.abs(axes).argmax(axis=1)
        axes = axes * np.sign(axes[np.arange(len(axes)), lead])[:, None]
        shift += (np.sqrt(lam[keep])[:, None] * axes).sum(axis=0)
    return _shift_valid(mean, shift)


def perturb_mean(responses: Sequence[MetricResponse], scale: float,
                 rng: np.random.Generator) -> MetricResponse:
    """Fréchet mean shifted by Gaussian noise shaped like the sample spread.

    The shift in coordinates is ``scale * C^(1/2) xi`` with ``C`` the sample
    covariance of the response coordinates, built as a random combination of
    centered samples.  The shift is halved until the result is a valid
    object (both coordinate sets are convex and contain the mean).
    """
    mean = frechet_mean(responses)
    n = len(responses)
    if scale == 0 or n < 2:
        return mean
    coords = embed_responses(responses)
    dev = coords - coords.mean(axis=0)
    xi = rng.standard_normal(n)
    shift = scale * (xi @ dev) / np.sqrt(n - 1)
    return _shift_valid(mean, shift)


def resolve_reference(policy: ReferencePolicy, responses: Sequence[MetricResponse]):
    """Return ``(y, y0)`` for a sample according to ``policy``."""
    if len(responses) == 0:
        raise ArgumentError("cannot resolve references on an empty sample")
    check_homogeneous(responses)
    rng = np.random.default_rng(policy.seed)

    if isinstance(policy.y0, MetricResponse):
        y0 = policy.y0
    elif isinstance(policy.y0, str):
        y0 = frechet_mean(responses)
    else:
        y0 = _pick(responses, policy.y0)

    if isinstance(policy.y, MetricResponse):
        y = policy.y
    elif policy.y == "random_sample":
        y = responses[int(rng.integers(len(responses)))]
    elif policy.y == "principal":
        y = principal_point(responses)
    elif policy.y == "perturbed_mean":
        y = perturb_mean(responses, policy.scale, rng)
    else:
        y = _pick(responses, policy.y)
    return y, y0


@dataclass(frozen=True, eq=False)
class TransformedResponse:
    u: np.ndarray
    u_mean: float
    y: MetricResponse
    y0: MetricResponse

    @property
    def n(self) -> int:
        return len(self.u)


def raw_transform(responses: Sequence[MetricResponse], y: MetricResponse,
                  y0: MetricResponse) -> np.ndarray:
    """``d^2(Y_i, y) - d^2(Y_i, y0)`` for each response, uncentered."""
    tag = check_homogeneous(responses)
    if y.tag != tag or y0.tag != tag:
        raise TagMismatchError("reference points and responses use different metrics")
    coords = embed_responses(responses)
    ey, ey0 = embed(y), embed(y0)
    if ey.shape != coords.shape[1:] or ey0.shape != coords.shape[1:]:
        raise TagMismatchError("reference points and responses differ in dimension")
    return np.sum((coords - ey) ** 2, axis=1) - np.sum((coords - ey0) ** 2, axis=1)


def transform_response(responses: Sequence[MetricResponse], y: MetricResponse,
                       y0: MetricResponse) -> TransformedResponse:
    raw = raw_transform(responses, y, y0)
    mean = float(raw.mean())
    return TransformedResponse(u=raw - mean, u_mean=mean, y=y, y0=y0)
