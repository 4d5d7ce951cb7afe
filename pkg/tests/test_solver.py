import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from instances import random_instance
from oracles import group_enet_objective, prox_gradient_group_enet

from fresel.exceptions import ArgumentError, DimensionError
from fresel.kernels import GramBlock, GramStack, KernelSpec, build_stack
from fresel.solver import (
    ADMMConfig,
    PenaltyParams,
    admm_solve,
    group_prox,
    kkt_check,
    lambda_max,
    objective,
    ridge_solve,
)


def two_point():
    grams = build_stack(KernelSpec("linear"), np.array([[1.0], [-1.0]]))
    return np.array([-1.0, 1.0]), grams


class TestObjective:
    def test_zero_theta(self, rng):
        u, grams = random_instance(1)
        val = objective(np.zeros(sum(grams.ranks)), u, grams, PenaltyParams(0.3, 0.1))
        assert val == pytest.approx(u @ u / (2 * len(u)))

    def test_hand_value(self):
        u, grams = two_point()
        B = grams.blocks[0].B[:, 0]
        theta = [np.array([np.sign(B[0]) * 1.0])]  # B theta = (1, -1)
        assert objective(theta, u, grams, PenaltyParams(1.0, 1.0)) == pytest.approx(3.5)

    def test_least_squares(self, rng):
        u, grams = random_instance(2)
        vec, *_ = np.linalg.lstsq(grams.B, u, rcond=None)
        sse = np.sum((u - grams.B @ vec) ** 2)
        assert objective(vec, u, grams, PenaltyParams(0.0, 0.0)) == pytest.approx(sse / (2 * len(u)))

    def test_block_mismatch(self):
        u, grams = random_instance(3)
        with pytest.raises(DimensionError):
            objective(np.zeros(1), u, grams, PenaltyParams(0.1, 0.1))


class TestGroupProx:
    def test_inside_threshold(self):
        np.testing.assert_array_equal(group_prox(np.array([0.3, 0.4]), 0.5, 2.0), 0.0)

    def test_pure_ridge(self):
        v = np.array([1.0, -2.0])
        np.testing.assert_allclose(group_prox(v, 0.0, 1.0), v / 2)

    def test_both_terms(self):
        v = np.array([0.0, 2.0])
        np.testing.assert_allclose(group_prox(v, 1.0, 1.0), v / 4)


class TestRidge:
    def test_zero_response(self):
        _, grams = random_instance(4)
        fit = ridge_solve(np.zeros(grams.n), grams, 0.1)
        assert np.all(fit.norms == 0)

    def test_monotone_shrinkage(self):
        u, grams = random_instance(5)
        a = ridge_solve(u, grams, 0.05).norms
        b = ridge_solve(u, grams, 0.1).norms
        assert np.all(b < a)

    def test_identity_block(self):
        # B = I gives theta = u / (1 + n) when lambda2 = 1
        n = 5
        u = np.arange(n, dtype=float) - 2.0
        grams = build_stack(KernelSpec("linear"), np.array([[1.0]] * n))
        blk = grams.blocks[0]
        eye = GramBlock(K=np.eye(n), B=np.eye(n), eigvals=np.ones(n), col_means=np.zeros(n),
                        grand_mean=0.0, spec=blk.spec, tag="scalar", train=blk.train)
        stack = GramStack(blocks=(eye,), n=n, specs=(blk.spec,))
        np.testing.assert_allclose(ridge_solve(u, stack, 1.0).theta[0], u / (1 + n), atol=1e-12)

    def test_needs_positive_lambda2(self):
        u, grams = random_instance(6)
        with pytest.raises(ArgumentError):
            ridge_solve(u, grams, 0.0)

    def test_kkt_at_zero_lambda1(self):
        u, grams = random_instance(7)
        fit = ridge_solve(u, grams, 0.2)
        rep = kkt_check(fit, u, grams, PenaltyParams(0.0, 0.2))
        assert all(g["stationarity_residual"] <= 1e-8 for g in rep if g["active"])


class TestADMM:
    def test_above_lambda_max_is_zero(self):
        u, grams = random_instance(8)
        fit = admm_solve(u, grams, PenaltyParams(1.001 * lambda_max(u, grams), 0.1))
        assert fit.active_set == [] and fit.kkt_pass

    def test_lambda1_zero_matches_ridge(self):
        u, grams = random_instance(9)
        a = admm_solve(u, grams, PenaltyParams(0.0, 0.3))
        b = ridge_solve(u, grams, 0.3)
        for x, y in zip(a.theta, b.theta):
            np.testing.assert_allclose(x, y, atol=1e-6)

    def test_matches_oracle(self):
        u, grams = random_instance(10, p=4)
        lam = 0.3 * lambda_max(u, grams)
        fit = admm_solve(u, grams, PenaltyParams(lam, 0.1))
        ref, _ = prox_gradient_group_enet([b.B for b in grams.blocks], u, lam, 0.1)
        ref_obj = group_enet_objective([b.B for b in grams.blocks], u, ref, lam, 0.1)
        assert fit.objective == pytest.approx(ref_obj, rel=1e-6)

    def test_weighted_problem(self):
        u, grams = random_instance(11, p=3)
        w = np.array([0.0, 1.0, 2.0])
        fit = admm_solve(u, grams, PenaltyParams(0.05, 0.1, w))
        assert fit.converged and fit.kkt_pass
        ref, _ = prox_gradient_group_enet([b.B for b in grams.blocks], u, 0.05, 0.1, w)
        ref_obj = group_enet_objective([b.B for b in grams.blocks], u, ref, 0.05, 0.1, w)
        assert fit.objective == pytest.approx(ref_obj, rel=1e-6)

    def test_warm_start_same_solution(self):
        u, grams = random_instance(12)
        lm = lambda_max(u, grams)
        first = admm_solve(u, grams, PenaltyParams(0.5 * lm, 0.1))
        cold = admm_solve(u, grams, PenaltyParams(0.3 * lm, 0.1))
        warm = admm_solve(u, grams, PenaltyParams(0.3 * lm, 0.1), warm_start=first)
        np.testing.assert_allclose(warm.theta_vector, cold.theta_vector, atol=1e-5)

    def test_nonconvergence_is_flagged(self):
        u, grams = random_instance(13)
        fit = admm_solve(u, grams, PenaltyParams(0.01, 0.01), ADMMConfig(max_iter=2))
        assert not fit.converged

    def test_objective_not_worse_than_baselines(self):
        u, grams = random_instance(14)
        params = PenaltyParams(0.2 * lambda_max(u, grams), 0.1)
        fit = admm_solve(u, grams, params)
        ridge = ridge_solve(u, grams, 0.1)
        assert fit.objective <= objective(np.zeros(sum(grams.ranks)), u, grams, params) + 1e-12
        assert fit.objective <= objective(ridge.theta_vector, u, grams, params) + 1e-12

    def test_fit_invariants(self):
        u, grams = random_instance(15)
        fit = admm_solve(u, grams, PenaltyParams(0.2 * lambda_max(u, grams), 0.1))
        for j, t in enumerate(fit.theta):
            assert fit.norms[j] == pytest.approx(np.linalg.norm(t), abs=1e-12)
        assert fit.active_set == [j for j in range(grams.p) if fit.norms[j] > 1e-7]
        # representer lift reproduces the fitted values
        fitted = sum(b.K @ a for b, a in zip(grams.blocks, fit.alpha))
        np.testing.assert_allclose(fitted, grams.B @ fit.theta_vector, atol=1e-8)


class TestKKT:
    def test_zero_solution_passes(self):
        u, grams = random_instance(16)
        params = PenaltyParams(lambda_max(u, grams), 0.1)
        zero = [np.zeros(r) for r in grams.ranks]
        assert all(g["pass"] for g in kkt_check(zero, u, grams, params))

    def test_perturbation_detected(self):
        u, grams = random_instance(17)
        params = PenaltyParams(0.2 * lambda_max(u, grams), 0.1)
        fit = admm_solve(u, grams, params)
        j = fit.active_set[0]
        bad = [t.copy() for t in fit.theta]
        bad[j][0] += 0.1
        assert not kkt_check(bad, u, grams, params)[j]["pass"]


class TestLambdaMax:
    def test_zero_response(self):
        _, grams = random_instance(18)
        assert lambda_max(np.zeros(grams.n), grams) == 0.0

    def test_hand_value(self):
        u, grams = two_point()
        assert lambda_max(u, grams) == pytest.approx(1.0)

    def test_all_zero_weights(self):
        u, grams = random_instance(19)
        with pytest.raises(ArgumentError):
            lambda_max(u, grams, np.zeros(grams.p))


@given(st.integers(0, 5000), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
def test_lambda_max_homogeneous(seed, c):
    u, grams = random_instance(seed)
    assert lambda_max(c * u, grams) == pytest.approx(abs(c) * lambda_max(u, grams), rel=1e-12)


@given(st.integers(0, 5000), st.integers(1, 6), st.floats(0, 3), st.floats(0, 3))
def test_prox_is_minimizer(seed, dim, tau1, tau2):
    r = np.random.default_rng(seed)
    v = r.normal(size=dim) * 2
    x = group_prox(v, tau1, tau2)

    def h(t):
        return tau1 * np.linalg.norm(t) + 0.5 * tau2 * t @ t + 0.5 * np.sum((t - v) ** 2)

    for _ in range(10):
        assert h(x) <= h(x + 1e-3 * r.normal(size=dim)) + 1e-12
    assert h(x) <= h(np.zeros(dim)) + 1e-12


@given(st.integers(0, 5000), st.floats(0.05, 0.95))
def test_converged_fits_pass_kkt(seed, ratio):
    u, grams = random_instance(seed)
    fit = admm_solve(u, grams, PenaltyParams(ratio * lambda_max(u, grams), 0.1))
    assert not fit.converged or fit.kkt_pass
