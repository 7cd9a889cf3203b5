import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dperm.data import Dataset
from dperm.losses import (
    ErmObjective,
    ModelParams,
    PolyakLojasiewicz,
    StronglyConvex,
    check_pl,
    decision_scores,
    finite_difference_gradient,
    logistic,
    logistic_l2,
    loss_gradient,
    loss_value,
    mlp,
    mlp_param_dim,
    project_to_ball,
)
from dperm.trainer import oracle_optimum

from conftest import QuadraticObjective, unit_ball_dataset


class TestLossValue:
    def test_zero_margin_is_ln2(self):
        spec = logistic()
        p = ModelParams(np.zeros(3), radius=1.0)
        v = loss_value(spec, p, np.array([0.5, -0.2, 0.1]), 1.0)
        assert v == pytest.approx(math.log(2.0), rel=1e-15)

    def test_huge_negative_margin_no_overflow(self):
        spec = logistic()
        p = ModelParams(np.array([1e4]), radius=1e5)
        v = loss_value(spec, p, np.array([1.0]), -1.0)  # margin = -1e4
        assert np.isfinite(v)
        assert v == pytest.approx(1e4, rel=1e-12)

    def test_huge_positive_margin_is_tiny(self):
        spec = logistic()
        p = ModelParams(np.array([1e4]), radius=1e5)
        assert loss_value(spec, p, np.array([1.0]), 1.0) == 0.0  # exp(-1e4) underflows

    def test_l2_worked_value(self):
        # log(1 + e^-1) + 0.05 computed independently at high precision
        spec = logistic_l2(0.1)
        p = ModelParams(np.array([1.0, 0.0]), radius=2.0)
        v = loss_value(spec, p, np.array([1.0, 0.0]), 1.0)
        assert v == pytest.approx(0.36326168751822283, rel=1e-12)

    def test_dimension_mismatch(self):
        spec = logistic()
        p = ModelParams(np.zeros(3), radius=1.0)
        with pytest.raises(ValueError, match="features"):
            loss_value(spec, p, np.array([1.0, 2.0]), 1.0)

    def test_value_at_least_floor(self):
        rng = np.random.default_rng(0)
        for spec in (logistic(), logistic_l2(0.3), mlp(3)):
            dim = 4
            pdim = mlp_param_dim(dim, 3) if spec.family == "mlp" else dim
            for _ in range(50):
                p = ModelParams(rng.normal(size=pdim), radius=1e6)
                x = rng.normal(size=dim)
                x /= max(1.0, np.linalg.norm(x))
                y = 1.0 if rng.random() < 0.5 else -1.0
                assert loss_value(spec, p, x, y) >= spec.loss_floor


class TestLossGradient:
    def test_zero_theta_closed_form(self):
        spec = logistic()
        p = ModelParams(np.zeros(3), radius=1.0)
        x = np.array([0.2, -0.4, 0.1])
        for y in (1.0, -1.0):
            np.testing.assert_allclose(loss_gradient(spec, p, x, y), -0.5 * y * x, rtol=1e-15)

    @pytest.mark.parametrize("family", ["logistic", "logistic_l2", "mlp"])
    def test_matches_finite_differences(self, family):
        rng = np.random.default_rng(42)
        dim = 4
        if family == "logistic":
            spec = logistic()
            pdim = dim
        elif family == "logistic_l2":
            spec = logistic_l2(0.2)
            pdim = dim
        else:
            spec = mlp(dim)
            pdim = mlp_param_dim(dim, dim)
        worst = 0.0
        for _ in range(100):
            theta = rng.normal(size=pdim)
            x = rng.normal(size=dim)
            x /= max(1.0, np.linalg.norm(x))
            y = 1.0 if rng.random() < 0.5 else -1.0
            p = ModelParams(theta, radius=1e6)
            analytic = loss_gradient(spec, p, x, y)
            numeric = finite_difference_gradient(
                lambda t: loss_value(spec, ModelParams(t, 1e6), x, y), theta
            )
            denom = max(np.linalg.norm(analytic), 1e-8)
            worst = max(worst, np.linalg.norm(analytic - numeric) / denom)
        limit = 1e-4 if family == "mlp" else 1e-5
        assert worst < limit

    def test_logistic_gradient_norm_within_lipschitz(self):
        spec = logistic()
        rng = np.random.default_rng(1)
        for _ in range(200):
            theta = rng.normal(size=5) * rng.uniform(0, 10)
            x = rng.normal(size=5)
            x /= max(1.0, np.linalg.norm(x))
            y = 1.0 if rng.random() < 0.5 else -1.0
            g = loss_gradient(spec, ModelParams(theta, 1e6), x, y)
            assert np.linalg.norm(g) <= spec.lipschitz + 1e-12

    def test_logistic_smoothness_ratio(self):
        # sampled-pair estimate of the gradient's Lipschitz ratio
        spec = logistic()
        rng = np.random.default_rng(2)
        x = rng.normal(size=4)
        x /= np.linalg.norm(x)
        worst = 0.0
        for _ in range(300):
            a = rng.normal(size=4)
            b = a + rng.normal(size=4) * 0.1
            y = 1.0 if rng.random() < 0.5 else -1.0
            ga = loss_gradient(spec, ModelParams(a, 1e6), x, y)
            gb = loss_gradient(spec, ModelParams(b, 1e6), x, y)
            worst = max(worst, np.linalg.norm(ga - gb) / np.linalg.norm(a - b))
        assert worst <= spec.smoothness + 1e-6


class TestErmObjective:
    def test_mean_of_per_sample(self):
        ds = unit_ball_dataset(7, 3, seed=0)
        spec = logistic_l2(0.05)
        obj = ErmObjective(spec, ds)
        theta = np.array([0.3, -0.1, 0.7])
        p = ModelParams(theta, 1e6)
        per = np.mean([loss_value(spec, p, ds.features[i], ds.labels[i]) for i in range(ds.n)])
        # per-sample values each include the regularizer once
        assert obj.value(theta) == pytest.approx(per, rel=1e-12)

    def test_gradient_matches_per_sample_mean(self):
        ds = unit_ball_dataset(6, 4, seed=3)
        for spec in (logistic(), logistic_l2(0.2), mlp(4)):
            obj = ErmObjective(spec, ds)
            rng = np.random.default_rng(5)
            theta = rng.normal(size=obj.dim)
            mean_grad = obj.per_sample_gradients(theta).mean(axis=0)
            np.testing.assert_allclose(obj.gradient(theta), mean_grad, rtol=1e-10, atol=1e-14)

    def test_objective_gradient_fd(self):
        ds = unit_ball_dataset(10, 3, seed=1)
        for spec in (logistic(), logistic_l2(0.1), mlp(3)):
            obj = ErmObjective(spec, ds)
            rng = np.random.default_rng(7)
            theta = rng.normal(size=obj.dim) * 0.5
            numeric = finite_difference_gradient(obj.value, theta)
            analytic = obj.gradient(theta)
            np.testing.assert_allclose(analytic, numeric, rtol=2e-5, atol=1e-9)

    def test_mlp_clipping_binds(self):
        ds = unit_ball_dataset(8, 3, seed=2)
        spec = mlp(3, lipschitz=0.01)  # tiny declared constant forces clipping
        rng = np.random.default_rng(11)
        theta = rng.normal(size=mlp_param_dim(3, 3))
        clipped = ErmObjective(spec, ds, clip_gradients=True).gradient(theta)
        plain = ErmObjective(spec, ds, clip_gradients=False).gradient(theta)
        assert not np.allclose(clipped, plain)
        # clipped mean is a mean of vectors each bounded by the declared constant
        assert np.linalg.norm(clipped) <= spec.lipschitz + 1e-12

    def test_clip_noop_for_margin_families(self):
        ds = unit_ball_dataset(8, 3, seed=2)
        spec = logistic()
        theta = np.array([3.0, -1.0, 0.5])
        a = ErmObjective(spec, ds, clip_gradients=True).gradient(theta)
        b = ErmObjective(spec, ds, clip_gradients=False).gradient(theta)
        assert np.array_equal(a, b)


class TestProjection:
    def test_interior_point_unchanged(self):
        p = ModelParams(np.array([0.3, 0.4]), radius=1.0)
        assert project_to_ball(p) is p

    def test_radial_scaling(self):
        p = ModelParams(np.array([3.0, 4.0]), radius=1.0)
        out = project_to_ball(p)
        np.testing.assert_allclose(out.theta, [0.6, 0.8], rtol=1e-15)

    @settings(max_examples=80, deadline=None)
    @given(
        st.lists(st.floats(-1e8, 1e8), min_size=1, max_size=6),
        st.floats(1e-3, 1e3),
    )
    def test_idempotent(self, values, radius):
        p = ModelParams(np.array(values), radius=radius)
        once = project_to_ball(p)
        assert np.linalg.norm(once.theta) <= radius
        twice = project_to_ball(once)
        assert twice is once


class TestCheckPl:
    def test_quadratic_equality_slack_zero(self, quadratic):
        # power-of-two modulus keeps both sides bit-identical
        obj = quadratic(0.25, np.array([1.0, -2.0, 0.5]))
        spec_pl = logistic_l2(0.25)  # carrier for StronglyConvex(0.25)
        rng = np.random.default_rng(0)
        probes = [ModelParams(rng.normal(size=3), 1e6) for _ in range(20)]
        report = check_pl(spec_pl, obj, probes, objective_min=0.0)
        assert report.passed
        assert np.all(report.slacks == 0.0)

    def test_logistic_l2_passes(self):
        ds = unit_ball_dataset(40, 4, seed=8)
        spec = logistic_l2(0.1)
        obj = ErmObjective(spec, ds)
        _, objective_min = oracle_optimum(ds, spec, tolerance=1e-10)
        rng = np.random.default_rng(9)
        probes = [ModelParams(rng.normal(size=4) * 2.0, 1e6) for _ in range(50)]
        report = check_pl(spec, obj, probes, objective_min)
        assert report.passed
        assert report.modulus == 0.1

    def test_overstated_modulus_fails(self):
        # claiming 10x the true curvature must be refuted by some probe
        ds = unit_ball_dataset(40, 4, seed=8)
        spec = logistic_l2(0.1)
        obj = ErmObjective(spec, ds)
        theta_star, objective_min = oracle_optimum(ds, spec, tolerance=1e-10)
        from dataclasses import replace

        overstated = replace(spec, convexity=StronglyConvex(1.0))
        rng = np.random.default_rng(10)
        probes = [
            ModelParams(theta_star.theta + rng.normal(size=4) * s, 1e6)
            for s in (0.01, 0.03, 0.1, 0.3, 1.0)
            for _ in range(10)
        ]
        report = check_pl(overstated, obj, probes, objective_min)
        assert not report.passed

    def test_no_certificate_errors(self, quadratic):
        obj = quadratic(1.0, np.zeros(2))
        with pytest.raises(ValueError, match="StronglyConvex or PolyakLojasiewicz"):
            check_pl(logistic(), obj, [ModelParams(np.ones(2), 1e6)], 0.0)

    def test_pl_without_modulus_errors(self, quadratic):
        obj = quadratic(1.0, np.zeros(2))
        from dataclasses import replace

        spec = replace(logistic(), convexity=PolyakLojasiewicz())
        with pytest.raises(ValueError):
            check_pl(spec, obj, [ModelParams(np.ones(2), 1e6)], 0.0)


class TestDecisionScores:
    def test_margin_family_linear(self):
        theta = np.array([1.0, -1.0])
        X = np.array([[2.0, 1.0], [0.0, 3.0]])
        np.testing.assert_allclose(decision_scores(logistic(), theta, X), [1.0, -3.0])

    def test_mlp_dim_check(self):
        with pytest.raises(ValueError, match="parameters"):
            decision_scores(mlp(2), np.zeros(3), np.zeros((1, 2)))
