"""Metric-space objects: quantile functions, SPD matrices and their distances.

Both response geometries used here are flat once an object is mapped to its
coordinate vector: a quantile function on an equispaced grid maps to its
values scaled by ``1/sqrt(m)`` (so the Euclidean distance is the grid-mean
Wasserstein-2 distance), and an SPD matrix maps to the entries of its
lower-triangular Cholesky factor.  Everything downstream (Gram matrices,
response transforms, Fréchet means) works on those coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .exceptions import (
    ArgumentError,
    DimensionError,
    NotSPDError,
    TagMismatchError,
)

MONOTONE_TOL = 1e-10
SYMMETRY_TOL = 1e-10

QUANTILE_W2 = "quantile_w2"
SPD_CHOLESKY = "spd_cholesky"
RESPONSE_TAGS = (QUANTILE_W2, SPD_CHOLESKY)
COVARIATE_TAGS = ("scalar", "quantile", "spd")


def default_levels(m: int) -> np.ndarray:
    """Equispaced probability levels ``k/(m+1)``, ``k = 1..m``."""
    if m < 2:
        raise ArgumentError(f"quantile grid needs m >= 2, got {m}")
    return np.arange(1, m + 1) / (m + 1.0)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuantileObject:
    """A univariate distribution stored as its quantile function on a grid."""

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        levels = _frozen(self.levels)
        values = _frozen(self.values)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)
        if levels.ndim != 1 or values.ndim != 1 or len(levels) != len(values):
            raise DimensionError("levels and values must be 1-D of equal length")
        if len(levels) < 2:
            raise DimensionError("quantile grid needs at least 2 levels")
        if np.any(levels <= 0) or np.any(levels >= 1):
            raise ArgumentError("levels must lie in (0, 1)")
        steps = np.diff(levels)
        if np.any(steps <= 0):
            raise ArgumentError("levels must be strictly increasing")
        if np.ptp(steps) > 1e-9 * max(1.0, steps.mean()):
            raise ArgumentError("levels must be equispaced")
        if np.any(np.diff(values) < -MONOTONE_TOL):
            raise ArgumentError("quantile values must be nondecreasing")

    @classmethod
    def from_values(cls, values) -> "QuantileObject":
        values = np.asarray(values, dtype=float)
        return cls(default_levels(len(values)), values)

    @property
    def m(self) -> int:
        return len(self.values)

    def same_grid(self, other: "QuantileObject") -> bool:
        return self.m == other.m and np.allclose(self.levels, other.levels, atol=1e-12)

    def __eq__(self, other):
        if not isinstance(other, QuantileObject):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SPDObject:
    """A symmetric positive definite matrix with its Cholesky factor."""

    matrix: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mat = _frozen(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionError(f"SPD matrix must be square, got shape {mat.shape}")
        scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 1.0)
        if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL * scale:
            raise NotSPDError("matrix is not symmetric")
        try:
            chol = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError("Cholesky factorization failed") from exc
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "chol", _frozen(chol))

    @classmethod
    def from_cholesky(cls, factor) -> "SPDObject":
        factor = np.tril(np.asarray(factor, dtype=float))
        mat = factor @ factor.T
        return cls(0.5 * (mat + mat.T))

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SPDObject):
            return NotImplemented
        return self.matrix.shape == other.matrix.shape and np.array_equal(
            self.matrix, other.matrix
        )

    __hash__ = None


def w2_sq(a: QuantileObject, b: QuantileObject) -> float:
    """Squared Wasserstein-2 distance by the grid mean of squared quantile gaps."""
    if not a.same_grid(b):
        raise DimensionError("quantile objects live on different level grids")
    return float(np.mean((a.values - b.values) ** 2))


def cholesky_dist_sq(a: SPDObject, b: SPDObject) -> float:
    """Squared Frobenius distance between lower Cholesky factors."""
    if a.d != b.d:
        raise DimensionError(f"SPD dimensions differ: {a.d} vs {b.d}")
    return float(np.sum((a.chol - b.chol) ** 2))


Payload = Union[float, QuantileObject, SPDObject]


@dataclass(frozen=True)
class CovariateValue:
    """A value in one covariate space, tagged scalar, quantile or spd."""

    tag: str
    payload: Payload

    def __post_init__(self):
        expected = {"scalar": (int, float, np.floating, np.integer),
                    "quantile": QuantileObject, "spd": SPDObject}
        if self.tag not in expected:
            raise ArgumentError(f"unknown covariate tag {self.tag!r}")
        if not isinstance(self.payload, expected[self.tag]):
            raise TagMismatchError(
                f"payload {type(self.payload).__name__} does not match tag {self.tag!r}"
            )
        if self.tag == "scalar":
            object.__setattr__(self, "payload", float(self.payload))

    @classmethod
    def wrap(cls, value) -> "CovariateValue":
        if isinstance(value, CovariateValue):
            return value
        if isinstance(value, QuantileObject):
            return cls("quantile", value)
        if isinstance(value, SPDObject):
            return cls("spd", value)
        return cls("scalar", float(value))


def covariate_dist_sq(x: CovariateValue, x2: CovariateValue) -> float:
    if x.tag != x2.tag:
        raise TagMismatchError(f"cannot compare {x.tag!r} with {x2.tag!r}")
    if x.tag == "scalar":
        return (x.payload - x2.payload) ** 2
    if x.tag == "quantile":
        return w2_sq(x.payload, x2.payload)
    return cholesky_dist_sq(x.payload, x2.payload)


@dataclass(frozen=True)
class MetricResponse:
    """A response object and the metric it is compared with."""

    tag: str
    payload: Union[QuantileObject, SPDObject]

    def __post_init__(self):
        if self.tag == QUANTILE_W2:
            ok = isinstance(self.payload, QuantileObject)
        elif self.tag == SPD_CHOLESKY:
            ok = isinstance(self.payload, SPDObject)
        else:
            raise ArgumentError(f"unknown response tag {self.tag!r}")
        if not ok:
            raise TagMismatchError(
                f"payload {type(self.payload).__name__} does not match tag {self.tag!r}"
            )

    @classmethod
    def quantile(cls, values, levels=None) -> "MetricResponse":
        values = np.asarray(values, dtype=float)
        if levels is None:
            levels = default_levels(len(values))
        return cls(QUANTILE_W2, QuantileObject(levels, values))

    @classmethod
    def spd(cls, matrix) -> "MetricResponse":
        return cls(SPD_CHOLESKY, SPDObject(matrix))

    @property
    def dim(self) -> int:
        return self.payload.m if self.tag == QUANTILE_W2 else self.payload.d


def response_dist_sq(a: MetricResponse, b: MetricResponse) -> float:
    if a.tag != b.tag:
        raise TagMismatchError(f"cannot compare {a.tag!r} with {b.tag!r}")
    if a.tag == QUANTILE_W2:
        return w2_sq(a.payload, b.payload)
    return cholesky_dist_sq(a.payload, b.payload)


# Coordinate maps.  ``embed(a) - embed(b)`` has squared norm equal to the
# squared distance between a and b.

def embed(obj) -> np.ndarray:
    if isinstance(obj, (MetricResponse, CovariateValue)):
        obj = obj.payload
    if isinstance(obj, QuantileObject):
        return obj.values / np.sqrt(obj.m)
    if isinstance(obj, SPDObject):
        return obj.chol[np.tril_indices(obj.d)]
    return np.array([float(obj)])


def check_homogeneous(responses: Sequence[MetricResponse]) -> str:
    if len(responses) == 0:
        raise ArgumentError("need at least one response")
    tag = responses[0].tag
    dim = responses[0].dim
    for r in responses:
        if r.tag != tag:
            raise TagMismatchError("responses mix metric tags")
        if r.dim != dim:
            raise DimensionError("responses differ in dimension")
    if tag == QUANTILE_W2:
        first = responses[0].payload
        if any(not r.payload.same_grid(first) for r in responses):
            raise DimensionError("responses use different quantile grids")
    return tag


def embed_responses(responses: Sequence[MetricResponse]) -> np.ndarray:
    """Stack coordinate vectors of a homogeneous response list, shape (n, q)."""
    check_homogeneous(responses)
    return np.vstack([embed(r) for r in responses])


def unembed(coords: np.ndarray, like: MetricResponse) -> MetricResponse:
    """Inverse of :func:`embed` using ``like`` for grid / dimension."""
    coords = np.asarray(coords, dtype=float)
    if like.tag == QUANTILE_W2:
        q = like.payload
        return MetricResponse(QUANTILE_W2, QuantileObject(q.levels, coords * np.sqrt(q.m)))
    d = like.dim
    factor = np.zeros((d, d))
    factor[np.tril_indices(d)] = coords
    return MetricResponse(SPD_CHOLESKY, SPDObject.from_cholesky(factor))


def is_valid_coords(coords: np.ndarray, like: MetricResponse) -> bool:
    """Whether coordinates map back to a valid object of ``like``'s type.

    Both coordinate sets are convex cones (nondecreasing sequences, lower
    triangular factors with positive diagonal), which callers rely on when
    shrinking a perturbation toward a valid point.
    """
    coords = np.asarray(coords, dtype=float)
    if like.tag == QUANTILE_W2:
        return bool(np.all(np.diff(coords) >= 0))
    d = like.dim
    factor = np.zeros((d, d))
    factor[np.tril_indices(d)] = coords
    return bool(np.all(np.diag(factor) > 0))


def frechet_mean(responses: Sequence[MetricResponse]) -> MetricResponse:
    """Sample Fréchet mean.

    For quantile functions under W2 this is the pointwise mean of quantile
    values; under the Cholesky metric it is ``Lbar @ Lbar.T`` with ``Lbar``
    the mean Cholesky factor.
    """
    if len(responses) == 0:
        raise ArgumentError("Fréchet mean of an empty sample")
    if len(responses) == 1:
        return responses[0]
    coords = embed_responses(responses)
    return unembed(coords.mean(axis=0), responses[0])
