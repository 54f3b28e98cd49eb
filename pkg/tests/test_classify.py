import json

import numpy as np
import pytest

from grbm_infomax.classify import (CvGrid, LinearSvmModel, PipelineHooks, StratificationError, accuracy,
                                   cross_validate, predict, squared_hinge_objective, stratified_folds,
                                   train_l2svm)
from grbm_infomax.errors import ContractViolation


def separable(rng, n=60):
    X = rng.standard_normal((n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    X[y == 1] += [1.0, 0.5]
    X[y == 0] -= [1.0, 0.5]
    return X, y


def blobs(rng, n_per=40, k=3, d=5, spread=1.5):
    centres = rng.standard_normal((k, d)) * spread
    X = np.vstack([c + rng.standard_normal((n_per, d)) for c in centres])
    return X, np.repeat(np.arange(k), n_per)


def gradient_descent_reference(Z, y, C, iters=40_000):
    """Fixed-step gradient descent on the squared-hinge objective."""
    A = np.hstack([Z, np.ones((len(Z), 1))])
    L = 1.0 + 2.0 * C * np.linalg.eigvalsh(A.T @ A).max()
    theta = np.zeros(A.shape[1])
    for _ in range(iters):
        slack = np.maximum(0.0, 1.0 - y * (A @ theta))
        g = A.T @ (-2.0 * C * slack * y)
        g[:-1] += theta[:-1]
        theta -= g / L
    return squared_hinge_objective(theta[:-1], theta[-1], Z, y, C)


class TestSvm:
    def test_separable(self, rng):
        X, y = separable(rng)
        model = train_l2svm(X, y, 100.0)
        assert accuracy(model, X, y) == 100.0

    def test_small_C_shrinks_weights(self, rng):
        X, y = blobs(rng)
        big = train_l2svm(X, y, 10.0)
        tiny = train_l2svm(X, y, 1e-8)
        assert np.abs(tiny.weights).max() < 1e-5 < np.abs(big.weights).max()

    def test_matches_reference_optimizer(self, rng):
        X, y = blobs(rng, n_per=50, k=2, d=4, spread=0.8)
        C = 0.5
        model = train_l2svm(X, y, C)
        Z = (X - model.feature_mean) / model.feature_std
        for c in range(2):
            yc = np.where(y == c, 1.0, -1.0)
            ours = squared_hinge_objective(model.weights[c], model.biases[c], Z, yc, C)
            ref = gradient_descent_reference(Z, yc, C)
            assert abs(ours - ref) <= 1e-4 * abs(ref)

    def test_objective_monotone(self, rng):
        X, y = blobs(rng)
        model = train_l2svm(X, y, 35.0)
        for hist in model.objective_history:
            assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))

    def test_permuted_order(self, rng):
        X, y = blobs(rng, n_per=100, spread=0.7)
        Xt, yt = blobs(np.random.default_rng(5), n_per=100, spread=0.7)
        base = accuracy(train_l2svm(X, y, 35.0), Xt, yt)
        perm = rng.permutation(len(y))
        assert abs(accuracy(train_l2svm(X[perm], y[perm], 35.0), Xt, yt) - base) < 0.1

    def test_deterministic(self, rng):
        X, y = blobs(rng)
        a, b = train_l2svm(X, y, 35.0), train_l2svm(X, y, 35.0)
        assert a.weights.tobytes() == b.weights.tobytes()

    def test_single_class(self):
        with pytest.raises(ContractViolation):
            train_l2svm(np.zeros((4, 2)), np.zeros(4, dtype=int), 1.0)

    def test_bad_C(self, rng):
        X, y = separable(rng)
        with pytest.raises(ContractViolation):
            train_l2svm(X, y, 0.0)

    def test_constant_feature(self, rng):
        X, y = separable(rng)
        X = np.hstack([X, np.ones((len(X), 1))])
        model = train_l2svm(X, y, 10.0)
        assert np.all(np.isfinite(model.weights))


class TestPredict:
    def test_tie_rule(self):
        model = LinearSvmModel(np.ones((3, 2)), np.zeros(3), 1.0, np.zeros(2), np.ones(2))
        np.testing.assert_array_equal(predict(model, np.random.default_rng(0).random((5, 2))), 0)

    def test_column_permutation(self, rng):
        X, y = blobs(rng)
        model = train_l2svm(X, y, 35.0)
        perm = rng.permutation(X.shape[1])
        permuted = LinearSvmModel(model.weights[:, perm], model.biases, model.C,
                                  model.feature_mean[perm], model.feature_std[perm])
        np.testing.assert_array_equal(predict(permuted, X[:, perm]), predict(model, X))

    def test_dim_mismatch(self, rng):
        X, y = separable(rng)
        with pytest.raises(ContractViolation):
            predict(train_l2svm(X, y, 1.0), np.zeros((2, 3)))


class TestCrossValidation:
    def test_default_grid_size(self):
        combos = CvGrid().combinations()
        assert len(combos) == 840
        assert combos[0] == (0.01, 0.1, 35.0, 0.1) and combos[-1] == (0.06, 0.5, 300.0, 0.7)
        assert combos[1] == (0.01, 0.1, 35.0, 0.2)

    def test_grid_validation(self):
        with pytest.raises(ContractViolation):
            CvGrid(folds=1)
        with pytest.raises(ContractViolation):
            CvGrid(C_values=())

    def test_stratified(self):
        labels = np.repeat([0, 1, 2], [10, 7, 12])
        folds = stratified_folds(labels, 5, 0)
        assert sorted(np.concatenate(folds).tolist()) == list(range(29))
        for f in folds:
            assert set(labels[f]) == {0, 1, 2}

    def test_missing_class_in_fold(self):
        with pytest.raises(StratificationError):
            stratified_folds(np.array([0] * 10 + [1] * 3), 5, 0)

    def make_hooks(self, X, log):
        def fit(train_idx, rho, lam):
            log.append(("fit", frozenset(train_idx.tolist())))
            return rho + lam

        def encode(rep, idx, t):
            log.append(("encode", frozenset(idx.tolist())))
            return X[idx] * (1 + rep) - t

        return PipelineHooks(fit, encode)

    def test_one_point_grid_and_table(self, rng):
        X, y = blobs(rng, n_per=15)
        grid = CvGrid([0.02], [0.3], [35.0], [0.4], folds=3)
        res = cross_validate(y, grid, self.make_hooks(X, []))
        assert res.best == (0.02, 0.3, 35.0, 0.4)
        assert len(res.table) == 3
        doc = json.loads(res.to_json())
        assert doc["best"]["C"] == 35.0

    def test_table_size_and_isolation(self, rng):
        X, y = blobs(rng, n_per=15)
        grid = CvGrid([0.01, 0.02], [0.1], [1.0, 10.0], [0.0, 0.5], folds=3)
        log = []
        res = cross_validate(y, grid, self.make_hooks(X, log))
        assert len(res.table) == 3 * 8
        folds = stratified_folds(y, 3, 0)
        fits = [s for kind, s in log if kind == "fit"]
        assert len(fits) == 3 * 2
        for k, members in enumerate(fits):
            val = set(folds[k // 2].tolist())
            assert not (members & val)
            assert len(members) + len(val) == len(y)

    def test_earliest_on_ties(self):
        y = np.repeat([0, 1], 10)
        X = np.vstack([np.full((10, 1), -1.0), np.full((10, 1), 1.0)])
        grid = CvGrid([0.01, 0.02], [0.1, 0.2], [35.0], [0.0], folds=2)
        res = cross_validate(y, grid, self.make_hooks(X, []))
        assert all(s == 100.0 for s in res.mean_scores.values())
        assert res.best == (0.01, 0.1, 35.0, 0.0)
