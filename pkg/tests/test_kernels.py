import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fresel.exceptions import ArgumentError, DimensionError, UnsupportedKernelError
from fresel.kernels import (
    KernelSpec,
    build_gram,
    build_stack,
    center_gram,
    cross_gram,
    eval_kernel,
    median_bandwidth,
    sqrt_psd,
)
from fresel.objects import QuantileObject, SPDObject


class TestEvalKernel:
    def test_gaussian_identity(self):
        assert eval_kernel(KernelSpec("gaussian", 3.7), 1.2, 1.2) == 1.0

    def test_linear(self):
        assert eval_kernel(KernelSpec("linear"), 2.0, 3.0) == 6.0

    def test_gaussian_value(self):
        assert eval_kernel(KernelSpec("gaussian", 1.0), 0.0, 1.0) == pytest.approx(0.367879, abs=1e-6)

    def test_laplacian_value(self):
        assert eval_kernel(KernelSpec("laplacian", 2.0), 0.0, 1.5) == pytest.approx(np.exp(-3.0))

    def test_linear_on_objects(self):
        a = QuantileObject.from_values([0.0, 1.0])
        with pytest.raises(UnsupportedKernelError):
            eval_kernel(KernelSpec("linear"), a, a)

    def test_bad_spec(self):
        with pytest.raises(ArgumentError):
            KernelSpec("polynomial")
        with pytest.raises(ArgumentError):
            KernelSpec("gaussian", -1.0)


class TestBuildGram:
    def test_constant_column(self):
        block = build_gram(KernelSpec("gaussian"), np.full(6, 2.0))
        assert block.rank == 0
        np.testing.assert_allclose(block.K, 0.0, atol=1e-15)

    def test_two_points(self):
        block = build_gram(KernelSpec("linear"), np.array([-1.0, 1.0]))
        np.testing.assert_allclose(block.K, [[1, -1], [-1, 1]])
        assert block.rank == 1
        np.testing.assert_allclose(block.eigvals, [2.0])

    def test_rows_sum_to_zero(self, rng):
        block = build_gram(KernelSpec("laplacian"), rng.normal(size=30))
        np.testing.assert_allclose(block.K.sum(axis=1), 0.0, atol=1e-8)

    def test_median_bandwidth_resolved(self, rng):
        x = rng.normal(size=40)
        block = build_gram(KernelSpec("gaussian"), x)
        assert block.spec.bandwidth == pytest.approx(median_bandwidth(KernelSpec("gaussian"), x[:, None]))

    def test_tied_column_bandwidth_fallback(self):
        x = np.array([0.0] * 9 + [1.0])
        gamma = median_bandwidth(KernelSpec("gaussian"), x[:, None])
        assert np.isfinite(gamma) and gamma > 0

    def test_object_covariates(self, rng):
        col = [QuantileObject.from_values(np.sort(rng.normal(size=5))) for _ in range(12)]
        block = build_gram(KernelSpec("gaussian"), col)
        assert block.K.shape == (12, 12) and block.rank > 0

    def test_spd_covariates(self, rng):
        col = []
        for _ in range(10):
            A = rng.normal(size=(2, 2))
            col.append(SPDObject(A @ A.T + np.eye(2)))
        assert build_gram(KernelSpec("laplacian"), col).rank > 0

    def test_lift_reproduces_fitted_values(self, rng):
        block = build_gram(KernelSpec("gaussian"), rng.normal(size=15))
        theta = rng.normal(size=block.rank)
        np.testing.assert_allclose(block.K @ block.lift(theta), block.B @ theta, atol=1e-8)


class TestSqrtPsd:
    def test_identity(self):
        B, lam = sqrt_psd(np.eye(3))
        np.testing.assert_allclose(B @ B.T, np.eye(3), atol=1e-14)
        np.testing.assert_allclose(np.abs(B.T @ B), np.eye(3), atol=1e-14)

    def test_zero(self):
        B, lam = sqrt_psd(np.zeros((4, 4)))
        assert B.shape == (4, 0) and lam.size == 0

    def test_rank_one(self):
        B, lam = sqrt_psd(np.array([[2.0, 0.0], [0.0, 0.0]]))
        assert B.shape == (2, 1)
        np.testing.assert_allclose(np.abs(B[:, 0]), [np.sqrt(2), 0.0], atol=1e-14)


class TestCrossGram:
    def test_train_reproduces_gram(self, rng):
        x = rng.normal(size=20)
        for kind in ("linear", "gaussian", "laplacian"):
            block = build_gram(KernelSpec(kind), x)
            np.testing.assert_allclose(cross_gram(KernelSpec(kind), block, x, x), block.K, atol=1e-10)

    def test_constant_kernel(self):
        x = np.ones(5)
        block = build_gram(KernelSpec("gaussian", 1.0), x)
        np.testing.assert_allclose(cross_gram(None, block, x, np.ones(3)), 0.0, atol=1e-15)

    def test_two_point_linear(self):
        x = np.array([-1.0, 1.0])
        block = build_gram(KernelSpec("linear"), x)
        np.testing.assert_allclose(cross_gram(KernelSpec("linear"), block, x, np.array([0.0])), [[0.0], [0.0]])

    def test_dimension_mismatch(self, rng):
        x = rng.normal(size=6)
        block = build_gram(KernelSpec("gaussian"), x)
        with pytest.raises(ArgumentError):
            cross_gram(KernelSpec("gaussian"), block, x[:5], x)
        q = [QuantileObject.from_values([0.0, 1.0])] * 3
        with pytest.raises(DimensionError):
            cross_gram(KernelSpec("gaussian"), block, x, q)

    def test_stack_cross_matches_blocks(self, rng):
        X = rng.normal(size=(12, 3))
        stack = build_stack(KernelSpec("gaussian"), X)
        T = rng.normal(size=(4, 3))
        for j, C in enumerate(stack.cross([T[:, j] for j in range(3)])):
            np.testing.assert_allclose(C, cross_gram(None, stack.blocks[j], X[:, j], T[:, j]))


columns = st.integers(0, 10_000).map(lambda s: np.random.default_rng(s).normal(size=14))
kinds = st.sampled_from(["linear", "gaussian", "laplacian"])


@given(columns, kinds)
def test_gram_psd_and_factor(x, kind):
    block = build_gram(KernelSpec(kind), x)
    K = block.K
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8
    assert np.linalg.norm(block.B @ block.B.T - K) <= 1e-6 * (1 + np.linalg.norm(K))
    np.testing.assert_allclose(K.sum(axis=1), 0.0, atol=1e-8)


@given(columns, kinds)
def test_centering_idempotent(x, kind):
    K = build_gram(KernelSpec(kind), x).K
    assert np.linalg.norm(center_gram(K) - K) <= 1e-12 * max(1.0, np.linalg.norm(K))
