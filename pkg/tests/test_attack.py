import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairpoison.attack import (AttackConfig, BoxBounds, ModelSpec, PoisonPoint, TraceRow,
                               attacker_loss, attacker_loss_gradient, build_generic_objective,
                               build_objective, init_points, loss_surface, optimize_point,
                               point_value, poison_gradient, run_attack, run_generic_attack,
                               write_trace)
from fairpoison.data import DataError, GroupTag, SampleSet, group_sizes
from fairpoison.models import LossKind, fit_theta, train

from oracles import retrain_fd_gradient, toy_problem

KINDS = [LossKind.LOGISTIC, LossKind.SQUARED_HINGE]


class TestObjective:
    def test_targets_and_weights(self):
        _, val = toy_problem(0)
        obj = build_objective(val)
        p, m = group_sizes(val)
        assert obj.lam == pytest.approx(p / m)
        unpriv = val.groups == GroupTag.UNPRIVILEGED
        np.testing.assert_array_equal(obj.targets, np.where(unpriv, 1.0, -1.0))
        np.testing.assert_allclose(obj.weights, np.where(unpriv, 1.0, p / m))

    def test_fixed_lambda(self):
        _, val = toy_problem(0)
        assert build_objective(val, 2.5).lam == 2.5

    def test_needs_both_groups(self):
        val = SampleSet(np.zeros((3, 2)), np.array([1, -1, 1]), np.zeros(3, int))
        with pytest.raises(DataError, match="both groups"):
            build_objective(val)

    def test_loss_by_explicit_sum(self):
        tr, val = toy_problem(1)
        model = train(tr, "logistic", 1.0)
        obj = build_objective(val)
        f = val.features @ model.weights + model.bias
        expected = 0.0
        for fi, g in zip(f, val.groups):
            if g == GroupTag.UNPRIVILEGED:
                expected += np.log1p(np.exp(-fi))
            else:
                expected += obj.lam * np.log1p(np.exp(fi))
        assert attacker_loss(obj, model) == pytest.approx(expected, rel=1e-12)

    def test_generic_objective_uses_true_labels(self):
        _, val = toy_problem(2)
        obj = build_generic_objective(val)
        np.testing.assert_array_equal(obj.targets, val.labels)
        assert np.all(obj.weights == 1.0)

    @pytest.mark.parametrize("kind", KINDS)
    def test_theta_gradient_fd(self, kind):
        tr, val = toy_problem(3)
        model = train(tr, kind, 1.0)
        obj = build_objective(val)
        g = attacker_loss_gradient(obj, model)
        h = 1e-6
        fd = []
        for e in np.eye(3):
            mp = type(model).from_theta(model.theta + h * e, kind, 1.0)
            mm = type(model).from_theta(model.theta - h * e, kind, 1.0)
            fd.append((attacker_loss(obj, mp) - attacker_loss(obj, mm)) / (2 * h))
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


class TestImplicitGradient:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_retraining_oracle(self, kind, seed):
        tr, val = toy_problem(seed)
        spec = ModelSpec(kind, 1.0, tolerance=1e-10)
        obj = build_objective(val)
        rng = np.random.default_rng(seed)
        bounds = BoxBounds.from_data(tr)
        x_c = rng.uniform(bounds.lower, bounds.upper)
        y_c = 1 if seed % 2 else -1
        _, theta = point_value(tr, obj, x_c, y_c, spec)
        model = type(train(tr, kind, 1.0)).from_theta(theta, kind, 1.0)
        g = poison_gradient(obj, tr, PoisonPoint(x_c, y_c), model)
        fd = retrain_fd_gradient(tr, obj, x_c, y_c, spec)
        np.testing.assert_allclose(g, fd, rtol=1e-2, atol=1e-6)

    def test_squared_hinge_outside_margin_is_flat(self):
        # a correctly classified point beyond the margin does not touch theta*
        tr, val = toy_problem(0)
        spec = ModelSpec(LossKind.SQUARED_HINGE, 1.0, tolerance=1e-10)
        model = train(tr, spec.loss_kind, 1.0)
        direction = model.weights / np.linalg.norm(model.weights)
        x_c = direction * 50.0
        _, theta = point_value(tr, build_objective(val), x_c, 1, spec)
        m = type(model).from_theta(theta, spec.loss_kind, 1.0)
        g = poison_gradient(build_objective(val), tr, PoisonPoint(x_c, 1), m)
        np.testing.assert_array_equal(g, 0.0)


class TestOptimizePoint:
    def setup_method(self):
        self.train, self.val = toy_problem(5)
        self.obj = build_objective(self.val)
        self.bounds = BoxBounds.from_data(self.train)

    def test_ascends_and_stays_in_box(self):
        cfg = AttackConfig(max_iterations=60)
        start = PoisonPoint(self.train.features[0].copy(), -int(self.train.labels[0]))
        point, trace = optimize_point(self.train, self.obj, start, self.bounds, cfg)
        values = [r.value for r in trace]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert self.bounds.contains(point.features)
        assert point.label == start.label
        a0, _ = point_value(self.train, self.obj, start.features, start.label)
        a1, _ = point_value(self.train, self.obj, point.features, point.label)
        assert a1 >= a0
        assert a1 == pytest.approx(values[-1], rel=1e-9)

    def test_iteration_cap(self):
        cfg = AttackConfig(max_iterations=3, stop_threshold=1e-12)
        start = PoisonPoint(self.train.features[1].copy(), 1)
        _, trace = optimize_point(self.train, self.obj, start, self.bounds, cfg)
        assert trace[-1].iteration <= 3

    def test_rejects_start_outside_box(self):
        with pytest.raises(ValueError):
            optimize_point(self.train, self.obj, PoisonPoint(self.bounds.upper + 1, 1),
                           self.bounds, AttackConfig())

    @settings(max_examples=8, deadline=None)
    @given(idx=st.integers(0, 39), eta=st.floats(0.01, 1.0))
    def test_trace_monotone_property(self, idx, eta):
        cfg = AttackConfig(step_size=eta, max_iterations=15)
        start = PoisonPoint(self.train.features[idx].copy(), -int(self.train.labels[idx]))
        _, trace = optimize_point(self.train, self.obj, start, self.bounds, cfg)
        values = [r.value for r in trace]
        assert np.all(np.diff(values) >= 0)


class TestBounds:
    def test_projection(self):
        b = BoxBounds(np.array([0.0, -1.0]), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(b.project(np.array([2.0, -3.0])), [1.0, -1.0])
        assert b.contains(np.array([0.5, 0.0])) and not b.contains(np.array([1.5, 0.0]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            BoxBounds(np.array([1.0]), np.array([0.0]))


class TestBudget:
    @pytest.mark.parametrize("n, frac, expected", [(1000, 0.05, 50), (1000, 0.0, 0),
                                                   (40, 0.1, 4), (30, 0.05, 2)])
    def test_rounding(self, n, frac, expected):
        assert AttackConfig(poison_fraction=frac).budget(n) == expected

    def test_count_overrides_fraction(self):
        assert AttackConfig(poison_fraction=0.5, poison_count=3).budget(1000) == 3

    def test_invalid(self):
        with pytest.raises(ValueError):
            AttackConfig(poison_fraction=None, poison_count=None)
        with pytest.raises(ValueError):
            AttackConfig(step_size=0.0)


class TestGreedyAttack:
    def test_init_flips_labels(self):
        tr, _ = toy_problem(0)
        pts = init_points(tr, 5, seed=1)
        for p in pts:
            i = np.flatnonzero((tr.features == p.features).all(axis=1))[0]
            assert p.label == -tr.labels[i]

    def test_result_shape_and_determinism(self):
        tr, val = toy_problem(6)
        cfg = AttackConfig(poison_count=3, max_iterations=10, seed=4)
        a = run_attack(tr, val, ModelSpec(), cfg)
        b = run_attack(tr, val, ModelSpec(), cfg)
        assert len(a.poison) == 3 and len(a.poisoned_train) == len(tr) + 3
        np.testing.assert_array_equal(a.poison.features, b.poison.features)
        assert np.all(a.poison.groups == GroupTag.NONE)
        assert a.poisoned_train.subset(np.arange(len(tr))).equals(tr)
        for k in range(3):
            vals = [r.value for r in a.trace if r.point_index == k]
            assert vals and np.all(np.diff(vals) >= 0)

    def test_empty_budget(self):
        tr, val = toy_problem(6)
        res = run_attack(tr, val, ModelSpec(), AttackConfig(poison_fraction=0.0))
        assert res.poison is None and res.poisoned_train is tr and res.points == []

    def test_generic_attack_runs(self):
        tr, val = toy_problem(7)
        res = run_generic_attack(tr, val, ModelSpec(), AttackConfig(poison_count=2, max_iterations=5))
        assert len(res.points) == 2

    def test_custom_bounds(self):
        tr, val = toy_problem(8)
        b = BoxBounds(np.array([0.0, 0.0]), np.array([0.5, 0.5]))
        res = run_attack(tr, val, ModelSpec(),
                         AttackConfig(poison_count=2, max_iterations=5, bounds=b))
        assert all(b.contains(p.features) for p in res.points)


class TestSurface:
    def test_surface_matches_point_values(self):
        tr, val = toy_problem(9)
        obj = build_objective(val)
        xs, ys = np.linspace(-2, 4, 3), np.linspace(-1, 5, 2)
        values, thetas = loss_surface(tr, obj, xs, ys, 1)
        assert values.shape == (2, 3) and thetas.shape == (2, 3, 3)
        v, t = point_value(tr, obj, [xs[2], ys[1]], 1)
        assert values[1, 2] == pytest.approx(v, rel=1e-9)

    def test_warm_started_fit_agrees(self):
        tr, _ = toy_problem(9)
        X = np.vstack([tr.features, [1.0, 1.0]])
        y = np.append(tr.labels, 1.0)
        a = fit_theta(X, y, "logistic", 1.0, tolerance=1e-10)
        b = fit_theta(X, y, "logistic", 1.0, tolerance=1e-10, warm_start=a + 0.3)
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_write_trace(tmp_path):
    write_trace([TraceRow(0, 0, 1.5, 0.1), TraceRow(1, 0, 2.0, 0.05)], tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["iteration,point_index,value,step_size", "0,0,1.5,0.1", "1,0,2.0,0.05"]
