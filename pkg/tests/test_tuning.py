import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from instances import random_instance

from fresel.exceptions import ArgumentError, DimensionError
from fresel.kernels import KernelSpec, build_stack, columns_of
from fresel.objects import MetricResponse
from fresel.simgen import SimModelSpec, gen_model
from fresel.lla import LLAConfig
from fresel.solver import ADMMConfig, PenaltyParams, admm_solve, lambda_max
from fresel.transform import ReferencePolicy
from fresel.tuning import (
    Problem,
    SplitSpec,
    TuneGrid,
    _choose,
    _fold_context,
    default_lambda2,
    make_problem,
    predict,
    sweep,
    test_mse,
    tune,
)


def scalar_responses(values, m=4):
    # point-mass quantile functions; with y0 = 0 and y = 1 the transform is 1 - 2v
    return [MetricResponse.quantile(np.full(m, float(v))) for v in values]


def refs(m=4):
    return ReferencePolicy(y=MetricResponse.quantile(np.ones(m)),
                           y0=MetricResponse.quantile(np.zeros(m)))


class TestGrid:
    def test_default_relative(self):
        g = TuneGrid()
        r = g.ratios()
        assert len(r) == 50 and r[0] == 1.0 and r[-1] == pytest.approx(1e-3)
        assert np.all(np.diff(r) < 0)
        np.testing.assert_allclose(g.lambda1_for(2.0), 2.0 * r)

    def test_explicit(self):
        g = TuneGrid(lambda1_values=[0.5, 0.1])
        assert not g.relative and g.size() == 2
        np.testing.assert_array_equal(g.lambda1_for(10.0), [0.5, 0.1])

    @pytest.mark.parametrize("kwargs", [{"lambda1_values": [0.1, 0.5]}, {"lambda1_values": [0.0]},
                                        {"n_lambda": 0}, {"min_ratio": 0.0},
                                        {"lambda2_values": [-1.0]}])
    def test_invalid(self, kwargs):
        with pytest.raises(ArgumentError):
            TuneGrid(**kwargs)


class TestSplit:
    @given(st.integers(20, 80), st.integers(2, 10), st.integers(0, 1000))
    def test_kfold_partition(self, n, k, seed):
        folds = SplitSpec(mode="kfold", k=k, seed=seed).folds(n)
        assert len(folds) == k
        tests = np.concatenate([te for _, te in folds])
        np.testing.assert_array_equal(np.sort(tests), np.arange(n))
        for tr, te in folds:
            assert not set(tr) & set(te)
            assert len(tr) + len(te) == n

    def test_holdout(self):
        (tr, te), = SplitSpec(mode="holdout", train_fraction=0.75, seed=1).folds(40)
        assert len(tr) == 30 and len(te) == 10

    def test_seeded(self):
        a = SplitSpec(seed=3).folds(50)
        b = SplitSpec(seed=3).folds(50)
        for (t1, s1), (t2, s2) in zip(a, b):
            np.testing.assert_array_equal(t1, t2)
            np.testing.assert_array_equal(s1, s2)

    def test_degenerate(self):
        with pytest.raises(ArgumentError):
            SplitSpec(k=10).folds(5)
        with pytest.raises(ArgumentError):
            SplitSpec(mode="holdout", train_fraction=0.99).folds(10)
        with pytest.raises(ArgumentError):
            SplitSpec(mode="loo")


class TestPredict:
    def test_zero_fit(self):
        u, grams = random_instance(2)
        fit = admm_solve(u, grams, PenaltyParams(1e6, 0.1))
        cross = grams.cross([b.train[:, 0] if b.tag == "scalar" else b.train for b in grams.blocks])
        np.testing.assert_array_equal(predict(fit, grams, cross), np.zeros(grams.n))
        np.testing.assert_array_equal(predict(fit, grams, cross, 2.5), np.full(grams.n, 2.5))

    def test_in_sample(self, rng):
        X = rng.normal(size=(25, 3))
        grams = build_stack([KernelSpec("gaussian"), KernelSpec("linear"), KernelSpec("laplacian")], X)
        u = np.sin(X[:, 0]) + X[:, 1]
        u = u - u.mean()
        fit = admm_solve(u, grams, PenaltyParams(0.01, 0.05))
        pred = predict(fit, grams, grams.cross(columns_of(X)))
        fitted = sum(b.K @ a for b, a in zip(grams.blocks, fit.alpha))
        np.testing.assert_allclose(pred, fitted, atol=1e-8)

    def test_projection_limit(self, rng):
        X = rng.normal(size=(30, 2))
        grams = build_stack(KernelSpec("linear"), X)
        u = rng.normal(size=30)
        u = u - u.mean()
        fit = admm_solve(u, grams, PenaltyParams(0.0, 1e-9), ADMMConfig(max_iter=20000))
        pred = predict(fit, grams, grams.cross(columns_of(X)))
        B = grams.B
        proj = B @ np.linalg.lstsq(B, u, rcond=None)[0]
        np.testing.assert_allclose(pred, proj, atol=1e-5)

    def test_dimension_mismatch(self):
        u, grams = random_instance(2, p=2)
        fit = admm_solve(u, grams, PenaltyParams(0.1, 0.1))
        with pytest.raises(DimensionError):
            predict(fit, grams, [np.zeros((grams.n, 3))])


class TestMSE:
    def test_examples(self):
        assert test_mse([1.0, -1.0], [3.0, 1.0], 2.0) == 0.0
        assert test_mse([0.0, 0.0], [1.0, -1.0], 0.0) == 1.0

    @given(st.floats(-1e3, 1e3))
    def test_constant_cancels(self, c):
        pred, u = np.array([0.3, -0.2, 0.1]), np.array([1.0, 2.0, -0.5])
        assert test_mse(pred, u + c, 0.4 + c) == pytest.approx(test_mse(pred, u, 0.4), abs=1e-8)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            test_mse([0.0], [1.0, 2.0], 0.0)


class TestChoose:
    def test_tie_prefers_larger_lambda(self):
        assert _choose(np.array([2.0, 1.0, 1.0, 3.0])) == 1

    def test_minimum(self):
        assert _choose(np.array([2.0, 1.5, 0.5, 3.0])) == 2


class TestSweep:
    def test_warm_equals_cold(self):
        u, grams = random_instance(7)
        problem = Problem(grams, u, 0.1, lambda_max(u, grams))
        lams = TuneGrid(n_lambda=8, min_ratio=0.05).lambda1_for(problem.lam_max)
        warm = sweep(problem, lams, "elastic_net", ADMMConfig(), LLAConfig())
        cold = sweep(problem, lams, "elastic_net", ADMMConfig(), LLAConfig(), warm=False)
        for a, b in zip(warm, cold):
            np.testing.assert_allclose(a.theta_vector, b.theta_vector, atol=1e-5)

    def test_unknown_method(self):
        u, grams = random_instance(7)
        with pytest.raises(ArgumentError):
            sweep(Problem(grams, u, 0.1, 1.0), [0.5], "lasso", ADMMConfig(), LLAConfig())
        with pytest.raises(ArgumentError):
            sweep(Problem(grams, u, 0.1, 1.0), [0.5], "escad_l2", ADMMConfig(), LLAConfig())


def linear_data(seed, n=60, p=4, signal=True):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    v = (0.8 * X[:, 0] if signal else 0.0) + 0.3 * rng.normal(size=n)
    return X, scalar_responses(v)


class TestTune:
    def test_single_lambda_grid(self):
        X, resp = linear_data(0)
        grid = TuneGrid(lambda1_values=[0.05])
        rep = tune(X, resp, KernelSpec("linear"), refs(), grid, SplitSpec(k=5))
        assert len(rep.entries) == 1
        full = make_problem(X, resp, [KernelSpec("linear")] * 4, refs())
        direct = admm_solve(full.tr, full.grams, PenaltyParams(0.05, full.lambda2))
        np.testing.assert_allclose(rep.fit.theta_vector, direct.theta_vector, atol=1e-10)

    def test_signal_found(self):
        X, resp = linear_data(1)
        rep = tune(X, resp, KernelSpec("linear"), refs(), split=SplitSpec(k=5), method="rscad_l2")
        assert rep.active_set == [0]
        assert rep.n_folds == 5
        assert rep.chosen["mse"] == min(e["mse"] for e in rep.entries)

    def test_pure_noise_sparse(self):
        empty, top = 0, 0
        seeds = range(10)
        for s in seeds:
            X, resp = linear_data(100 + s, signal=False)
            rep = tune(X, resp, KernelSpec("linear"), refs(), TuneGrid(n_lambda=20),
                       SplitSpec(k=5, seed=s))
            empty += rep.active_set == []
            top += rep.chosen["lambda1_index"] < 5
        assert empty >= 8
        assert top >= 8

    def test_escad_has_baseline(self):
        X, resp = linear_data(2)
        rep = tune(X, resp, KernelSpec("linear"), refs(), TuneGrid(n_lambda=10),
                   SplitSpec(k=3), method="escad_l2")
        assert rep.baseline is not None and rep.active_set == [0]

    def test_lambda2_grid(self):
        X, resp = linear_data(3)
        grid = TuneGrid(n_lambda=5, lambda2_values=[1e-3, 1e-1])
        rep = tune(X, resp, KernelSpec("linear"), refs(), grid, SplitSpec(k=3))
        assert len(rep.entries) == 10
        assert rep.lambda2 in (1e-3, 1e-1)

    def test_unknown_method(self):
        X, resp = linear_data(0)
        with pytest.raises(ArgumentError):
            tune(X, resp, KernelSpec("linear"), method="lasso")

    def test_length_mismatch(self):
        X, resp = linear_data(0)
        with pytest.raises(DimensionError):
            tune(X[:-1], resp, KernelSpec("linear"))

    def test_no_test_leakage(self):
        X, resp = linear_data(4)
        (train, test), = SplitSpec(mode="holdout", seed=2).folds(len(resp))
        specs = [KernelSpec("gaussian")] * X.shape[1]
        base, _, _ = _fold_context(X, resp, specs, ReferencePolicy(), None, train, test)
        perm = list(resp)
        shuffled = np.random.default_rng(0).permutation(test)
        for a, b in zip(test, shuffled):
            perm[a] = resp[b]
        Xp = X.copy()
        Xp[test] = X[shuffled]
        other, _, _ = _fold_context(Xp, perm, specs, ReferencePolicy(), None, train, test)
        np.testing.assert_array_equal(base.tr.u, other.tr.u)
        np.testing.assert_array_equal(base.grams.B, other.grams.B)
        fa = admm_solve(base.tr, base.grams, PenaltyParams(0.01, base.lambda2))
        fb = admm_solve(other.tr, other.grams, PenaltyParams(0.01, other.lambda2))
        np.testing.assert_array_equal(fa.theta_vector, fb.theta_vector)

    def test_model4_strong_signal(self):
        ds = gen_model(SimModelSpec(4, seed=11))
        rep = tune(ds.X, ds.responses, KernelSpec("linear"), method="rscad_l2",
                   split=SplitSpec(k=5, seed=11))
        assert rep.active_set == list(ds.truth)

    def test_default_lambda2_scale(self):
        X, _ = linear_data(0)
        g1 = build_stack(KernelSpec("linear"), X)
        g2 = build_stack(KernelSpec("linear"), 3.0 * X)
        assert default_lambda2(g2) == pytest.approx(9.0 * default_lambda2(g1))
