import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from fairpoison.data import DataError, SampleSet, SyntheticConfig, generate_synthetic
from fairpoison.models import (LinearModel, LossKind, TrainConfig, loss_terms, margin_derivatives,
                               objective, objective_derivatives, predict, select_c,
                               stratified_folds, train, training_history)

KINDS = [LossKind.LOGISTIC, LossKind.SQUARED_HINGE]


def toy(n=60, seed=0, S=2.0):
    return generate_synthetic(SyntheticConfig(n, S, seed=seed))


class TestLoss:
    @pytest.mark.parametrize("kind", KINDS)
    def test_margin_derivatives_finite_difference(self, kind):
        m = np.linspace(-4, 4, 81) + 0.013  # keep away from the hinge kink
        h = 1e-6
        loss, d1, d2 = margin_derivatives(kind, m)
        lp, d1p, _ = margin_derivatives(kind, m + h)
        lm, d1m, _ = margin_derivatives(kind, m - h)
        np.testing.assert_allclose(d1, (lp - lm) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(d2, (d1p - d1m) / (2 * h), atol=1e-6)

    def test_logistic_is_stable(self):
        loss, d1, d2 = margin_derivatives("logistic", np.array([-800.0, 800.0]))
        np.testing.assert_allclose(loss, [800.0, 0.0])
        assert np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))

    def test_squared_hinge_values(self):
        loss, _, _ = margin_derivatives(LossKind.SQUARED_HINGE, np.array([-1.0, 0.5, 2.0]))
        np.testing.assert_allclose(loss, [4.0, 0.25, 0.0])

    def test_string_kind_matches_enum(self):
        m = np.array([0.3])
        for kind in KINDS:
            np.testing.assert_array_equal(margin_derivatives(kind.value, m)[0],
                                          margin_derivatives(kind, m)[0])


class TestTraining:
    @pytest.mark.parametrize("kind", KINDS)
    def test_matches_generic_optimizer(self, kind):
        # oracle: scipy BFGS on the same objective
        d = toy()
        y = d.labels.astype(float)
        model = train(d, kind, 2.0)
        ref = optimize.minimize(objective, np.zeros(3), args=(d.features, y, kind, 2.0),
                                method="BFGS", options={"gtol": 1e-10})
        np.testing.assert_allclose(model.theta, ref.x, atol=1e-5)

    def test_logistic_matches_sklearn_convention(self):
        # sklearn minimizes ||w||^2/2 + C * sum(loss) with the intercept unpenalized
        sk = pytest.importorskip("sklearn.linear_model")
        d = toy()
        model = train(d, "logistic", 5.0)
        ref = sk.LogisticRegression(C=5.0, tol=1e-12, max_iter=10000).fit(d.features, d.labels)
        np.testing.assert_allclose(model.weights, ref.coef_[0], rtol=1e-5, atol=1e-6)
        assert model.bias == pytest.approx(ref.intercept_[0], abs=1e-5)

    @pytest.mark.parametrize("kind", KINDS)
    def test_objective_monotone(self, kind):
        hist = training_history(toy(), kind, 1.0)
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(hist, hist[1:]))

    def test_separable_data_stays_finite(self):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        d = SampleSet(X, np.array([-1, -1, 1, 1]), np.zeros(4, int))
        m = train(d, "logistic", 1e3)
        assert np.isfinite(m.weights).all() and m.weights[0] > 0

    def test_single_class_rejected(self):
        d = SampleSet(np.zeros((3, 1)), np.ones(3, int), np.zeros(3, int))
        with pytest.raises(DataError):
            train(d)

    def test_warm_start_agrees(self):
        d = toy()
        cold = train(d, "logistic", 1.0)
        warm = train(d, "logistic", 1.0, warm_start=np.array([5.0, -5.0, 3.0]))
        np.testing.assert_allclose(cold.theta, warm.theta, atol=1e-8)

    def test_ridge_only_on_weights(self):
        _, _, H = objective_derivatives(np.zeros(3), np.zeros((0, 2)), np.zeros(0),
                                        LossKind.LOGISTIC, 4.0)
        np.testing.assert_allclose(np.diag(H), [0.25, 0.25, 0.0])


class TestDerivatives:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), kind=st.sampled_from(KINDS))
    def test_gradient_and_hessian(self, seed, kind):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(20, 2))
        y = np.where(rng.random(20) < 0.5, 1.0, -1.0)
        theta = rng.normal(size=3)
        f = lambda t: objective(t, X, y, kind, 1.5)
        _, g, H = objective_derivatives(theta, X, y, kind, 1.5)
        np.testing.assert_allclose(g, optimize.approx_fprime(theta, f, 1e-7), atol=1e-4)
        Hfd = np.array([(objective_derivatives(theta + 1e-6 * e, X, y, kind, 1.5)[1]
                         - objective_derivatives(theta - 1e-6 * e, X, y, kind, 1.5)[1]) / 2e-6
                        for e in np.eye(3)])
        np.testing.assert_allclose(H, Hfd, atol=1e-3 * max(1.0, np.abs(H).max()))

    def test_loss_terms_sum_to_objective_gradient(self):
        d = toy()
        m = train(d, "squared_hinge", 1.0)
        losses, grads, H = loss_terms(m, d)
        reg = np.append(m.weights / m.reg_c, 0.0)
        np.testing.assert_allclose(grads.sum(axis=0) + reg, 0.0, atol=1e-7)
        _, _, H2 = objective_derivatives(m.theta, d.features, d.labels.astype(float),
                                         m.loss_kind, 1.0)
        np.testing.assert_allclose(H, H2)


class TestModelSelection:
    def test_folds_stratified(self):
        labels = np.array([1] * 10 + [-1] * 15)
        folds = stratified_folds(labels, 5, seed=0)
        for f in range(5):
            assert np.sum((folds == f) & (labels == 1)) == 2
            assert np.sum((folds == f) & (labels == -1)) == 3

    def test_singleton_grid(self):
        assert select_c(toy(), grid=[3.0]) == 3.0

    def test_tie_prefers_smallest(self):
        # well-separated data: every C reaches the same CV accuracy
        d = toy(80, seed=1, S=30.0)
        assert select_c(d, grid=[10.0, 0.5, 1.0]) == 0.5

    def test_too_few_samples(self):
        d = SampleSet(np.arange(6.0)[:, None], np.array([1, 1, 1, 1, 1, -1]), np.zeros(6, int))
        with pytest.raises(DataError, match="folds"):
            select_c(d, grid=[1.0, 2.0])


class TestLinearModel:
    def test_json_roundtrip(self):
        m = train(toy(), "squared_hinge", 0.5)
        back = LinearModel.from_json(m.to_json())
        np.testing.assert_array_equal(back.theta, m.theta)
        assert (back.loss_kind, back.reg_c) == (m.loss_kind, m.reg_c)

    def test_predict_zero_is_positive(self):
        m = LinearModel(np.array([1.0, 0.0]), 0.0, "logistic", 1.0)
        np.testing.assert_array_equal(predict(m, [[0.0, 3.0], [-1.0, 0.0]]), [1, -1])

    def test_dimension_mismatch(self):
        m = LinearModel(np.array([1.0, 0.0]), 0.0, "logistic", 1.0)
        with pytest.raises(DataError):
            predict(m, np.zeros((2, 3)))

    def test_invalid(self):
        with pytest.raises(ValueError):
            LinearModel(np.array([np.inf]), 0.0, "logistic", 1.0)
        with pytest.raises(ValueError):
            TrainConfig(reg_c=(1.0, 1.0))
