"""Kernels on covariate spaces, centered Gram matrices and cross-Grams."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .exceptions import ArgumentError, DimensionError, NumericalError, UnsupportedKernelError
from .objects import CovariateValue, covariate_dist_sq, embed

KERNEL_KINDS = ("linear", "gaussian", "laplacian")
TOL_EIG = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and bandwidth; ``bandwidth=None`` means median heuristic."""

    kind: str = "linear"
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ArgumentError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth is not None and self.kind != "linear" and not self.bandwidth > 0:
            raise ArgumentError("kernel bandwidth must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}


def as_column(column) -> tuple[str, np.ndarray]:
    """Normalize a covariate column to ``(tag, coords)`` with coords of shape (n, q).

    Accepts a 1-D numeric array (scalar covariate) or a sequence of
    :class:`CovariateValue` / :class:`QuantileObject` / :class:`SPDObject`.
    """
    if isinstance(column, np.ndarray) and column.dtype != object:
        if column.ndim != 1:
            raise DimensionError("numeric covariate columns must be 1-D")
        return "scalar", column.astype(float)[:, None]
    values = [CovariateValue.wrap(v) for v in column]
    if not values:
        raise ArgumentError("empty covariate column")
    tag = values[0].tag
    if any(v.tag != tag for v in values):
        raise UnsupportedKernelError("covariate column mixes types")
    if tag == "scalar":
        return tag, np.array([v.payload for v in values])[:, None]
    coords = [embed(v) for v in values]
    if len({c.shape for c in coords}) != 1:
        raise DimensionError("covariate objects differ in dimension")
    return tag, np.vstack(coords)


def eval_kernel(spec: KernelSpec, x, x2) -> float:
    x = CovariateValue.wrap(x)
    x2 = CovariateValue.wrap(x2)
    if spec.kind == "linear":
        if x.tag != "scalar" or x2.tag != "scalar":
            raise UnsupportedKernelError("linear kernel needs scalar covariates")
        return x.payload * x2.payload
    gamma = 1.0 if spec.bandwidth is None else spec.bandwidth
    dsq = covariate_dist_sq(x, x2)
    if spec.kind == "gaussian":
        return float(np.exp(-gamma * dsq))
    return float(np.exp(-gamma * np.sqrt(dsq)))


def median_bandwidth(spec: KernelSpec, coords: np.ndarray) -> float:
    """Median heuristic: 1/median(d^2) for gaussian, 1/median(d) for laplacian."""
    dists = pdist(coords, "sqeuclidean")
    if spec.kind == "laplacian":
        dists = np.sqrt(dists)
    if dists.size == 0:
        return 1.0
    med = float(np.median(dists))
    if med <= 0:
        # heavily tied columns (indicators); fall back to the mean positive distance
        pos = dists[dists > 0]
        med = float(pos.mean()) if pos.size else 1.0
    return 1.0 / med


def resolve_spec(spec: KernelSpec, coords: np.ndarray) -> KernelSpec:
    if spec.kind == "linear" or spec.bandwidth is not None:
        return spec
    return replace(spec, bandwidth=median_bandwidth(spec, coords))


def _raw_kernel(spec: KernelSpec, tag: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if spec.kind == "linear":
        if tag != "scalar":
            raise UnsupportedKernelError("linear kernel needs scalar covariates")
        return a @ b.T
    dsq = cdist(a, b, "sqeuclidean")
    if spec.kind == "gaussian":
        return np.exp(-spec.bandwidth * dsq)
    return np.exp(-spec.bandwidth * np.sqrt(dsq))


def sqrt_psd(K: np.ndarray, tol_eig: float = TOL_EIG) -> tuple[np.ndarray, np.ndarray]:
    """Factor a symmetric PSD matrix as ``B @ B.T`` keeping the numerical range.

    Returns ``(B, eigvals)`` with ``B`` of shape (n, r).
    """
    K = np.asarray(K, dtype=float)
    try:
        lam, Q = np.linalg.eigh(0.5 * (K + K.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed") from exc
    lam = np.clip(lam, 0.0, None)
    lam_max = lam.max() if lam.size else 0.0
    if lam_max <= 1e-13:
        return np.zeros((K.shape[0], 0)), np.zeros(0)
    keep = lam > tol_eig * lam_max
    # descending order so the leading coordinates carry the most variance
    idx = np.flatnonzero(keep)[::-1]
    lam = lam[idx]
    return Q[:, idx] * np.sqrt(lam), lam


def center_gram(K0: np.ndarray) -> np.ndarray:
    col = K0.mean(axis=0)
    row = K0.mean(axis=1)
    K = K0 - col[None, :] - row[:, None] + K0.mean()
    return 0.5 * (K + K.T)


@dataclass(frozen=True, eq=False)
class GramBlock:
    """Centered Gram matrix of one covariate with its square-root factor."""

    K: np.ndarray
    B: np.ndarray
    eigvals: np.ndarray
    col_means: np.ndarray
    grand_mean: float
    spec: KernelSpec
    tag: str
    train: np.ndarray

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def rank(self) -> int:
        return self.B.shape[1]

    def lift(self, theta: np.ndarray) -> np.ndarray:
        """Representer coefficients ``alpha`` with ``K @ alpha == B @ theta``."""
        if self.rank == 0:
            return np.zeros(self.n)
        return self.B @ (np.asarray(theta) / self.eigvals)


def build_gram(spec: KernelSpec, column, tol_eig: float = TOL_EIG) -> GramBlock:
    tag, coords = as_column(column)
    n = coords.shape[0]
    if n < 2:
        raise ArgumentError("Gram matrix needs at least two samples")
    spec = resolve_spec(spec, coords)
    K0 = _raw_kernel(spec, tag, coords, coords)
    K0 = 0.5 * (K0 + K0.T)
    K = center_gram(K0)
    B, lam = sqrt_psd(K, tol_eig)
    return GramBlock(
        K=K, B=B, eigvals=lam, col_means=K0.mean(axis=0), grand_mean=float(K0.mean()),
        spec=spec, tag=tag, train=coords,
    )


def cross_gram(spec: KernelSpec, block: GramBlock, train_column, test_column) -> np.ndarray:
    """Centered cross-kernel matrix (n_train, n_test) using training statistics.

    Passing the training column as the test column reproduces ``block.K``.
    """
    train_tag, train = as_column(train_column)
    test_tag, test = as_column(test_column)
    if train.shape[0] != block.n:
        raise ArgumentError("train column does not match the Gram block")
    if train_tag != test_tag or train.shape[1] != test.shape[1]:
        raise DimensionError("train and test covariates differ in type or dimension")
    if spec is not None and spec.kind != block.spec.kind:
        raise ArgumentError("kernel kind differs from the one the block was built with")
    # the block carries the resolved bandwidth; a heuristic spec must not be re-resolved
    C0 = _raw_kernel(block.spec, train_tag, train, test)
    return C0 - block.col_means[:, None] - C0.mean(axis=0)[None, :] + block.grand_mean


@dataclass(frozen=True, eq=False)
class GramStack:
    """Per-covariate Gram blocks sharing one sample."""

    blocks: tuple
    n: int
    specs: tuple

    @property
    def p(self) -> int:
        return len(self.blocks)

    @property
    def ranks(self) -> list[int]:
        return [b.rank for b in self.blocks]

    @property
    def slices(self) -> list[slice]:
        out, start = [], 0
        for r in self.ranks:
            out.append(slice(start, start + r))
            start += r
        return out

    @property
    def B(self) -> np.ndarray:
        """Stacked factor ``[B_1 ... B_p]`` of shape (n, sum of ranks)."""
        cached = self.__dict__.get("_B")
        if cached is None:
            cached = np.hstack([b.B for b in self.blocks]) if self.blocks else np.zeros((self.n, 0))
            object.__setattr__(self, "_B", cached)
        return cached

    def cross(self, test_columns: Sequence) -> list[np.ndarray]:
        """Centered cross-Grams against new covariate columns, one per block."""
        if len(test_columns) != self.p:
            raise DimensionError(f"expected {self.p} test columns, got {len(test_columns)}")
        out = []
        for block, col in zip(self.blocks, test_columns):
            _, test = as_column(col)
            C0 = _raw_kernel(block.spec, block.tag, block.train, test)
            out.append(C0 - block.col_means[:, None] - C0.mean(axis=0)[None, :] + block.grand_mean)
        return out


def columns_of(X) -> list:
    """Split a covariate matrix (n, p) or a list of columns into columns."""
    if isinstance(X, np.ndarray) and X.dtype != object:
        if X.ndim != 2:
            raise DimensionError("covariate matrix must be 2-D")
        return [X[:, j] for j in range(X.shape[1])]
    return list(X)


def build_stack(specs, X, tol_eig: float = TOL_EIG) -> GramStack:
    """Build Gram blocks for every column of ``X``.

    ``specs`` is one :class:`KernelSpec` applied to all columns or a sequence
    with one spec per column.
    """
    cols = columns_of(X)
    if isinstance(specs, KernelSpec):
        specs = [specs] * len(cols)
    if len(specs) != len(cols):
        raise DimensionError("need one kernel spec per covariate column")
    blocks = tuple(build_gram(s, c, tol_eig) for s, c in zip(specs, cols))
    n = blocks[0].n if blocks else 0
    if any(b.n != n for b in blocks):
        raise DimensionError("covariate columns differ in length")
    return GramStack(blocks=blocks, n=n, specs=tuple(b.spec for b in blocks))


def select_columns(X, rows):
    """Row subset of a covariate matrix or column list."""
    rows = np.asarray(rows)
    if isinstance(X, np.ndarray) and X.dtype != object:
        return X[rows]
    return [[col[i] for i in rows] if not isinstance(col, np.ndarray) else col[rows] for col in X]


__all__ = [
    "KernelSpec", "GramBlock", "GramStack", "eval_kernel", "build_gram", "cross_gram",
    "sqrt_psd", "build_stack", "center_gram", "median_bandwidth", "columns_of",
    "select_columns", "as_column",
]
