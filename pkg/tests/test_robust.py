"""Tests for the worst-case tracking controller and its barrier solver."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from smtrack.ellipsoid import Ellipsoid
from smtrack.estimator import ParameterBelief
from smtrack.experiments import scenario
from smtrack.robust import (
    BARRIER_GROWTH,
    DUALITY_TARGET,
    ControlBounds,
    RobustSolution,
    TrackingInstance,
    build_instance,
    solve_known_theta,
    solve_robust,
    worst_case_interval,
)

import oracles


def sim1_case(y_ref=5.0 / 23.0):
    spec = scenario("sim1")
    instance = build_instance(spec.model, spec.x0, y_ref)
    belief = ParameterBelief(spec.belief0)
    return spec, instance, belief


def noise_free_scalar():
    """One-state noise-free plant with a single uncertain input direction."""
    instance = TrackingInstance(
        f=np.array([0.3]),
        b0=np.array([[1.0]]),
        v_rows=(),
        w_rows=(np.array([[0.4]]),),
        q_shape=np.zeros((1, 1)),
        x=np.array([1.0]),
    )
    belief = ParameterBelief(Ellipsoid([0.0], [[0.25]]))
    return instance, belief


class TestControlBounds:
    def test_feasibility(self):
        assert ControlBounds([-1.0], [1.0]).feasible()
        assert not ControlBounds([1.0], [-1.0]).feasible()

    def test_contains_with_infinite_sides(self):
        box = ControlBounds([-np.inf], [2.0])
        assert box.contains([-1e9])
        assert not box.contains([2.5])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ControlBounds([0.0, 1.0], [1.0])


class TestBuildInstance:
    def test_hand_case(self):
        _, instance, _ = sim1_case()
        assert_allclose(instance.f, [1.63 - 5.0 / 23.0])
        assert_allclose(instance.b0, [[-0.39]])
        assert instance.v_rows == ()
        assert len(instance.w_rows) == 2
        assert_allclose(instance.q_shape, [[1.05]])

    def test_dimension_checks(self):
        model = scenario("sim1").model
        with pytest.raises(ValueError, match="state"):
            build_instance(model, np.zeros(2), 0.0)
        with pytest.raises(ValueError, match="reference"):
            build_instance(model, np.zeros(3), [0.0, 1.0])

    def test_error_decomposition_matches_the_plant(self):
        # f + b0 u + g(u) theta reproduces the undisturbed tracking error.
        spec = scenario("sim1")
        rng = np.random.default_rng(6)
        for _ in range(20):
            x = rng.normal(size=3)
            u = rng.normal(size=1)
            theta = rng.normal(size=2)
            y_ref = float(rng.normal())
            instance = build_instance(spec.model, x, y_ref)
            _, y_next = spec.model.step(x, u, theta, np.zeros(3))
            direct = y_next - y_ref
            composed = instance.f + instance.b0 @ u + instance.regressor(u) @ theta
            assert_allclose(composed, direct, atol=1e-12)


class TestWorstCaseInterval:
    def test_point_belief_noise_free_interval_degenerates(self):
        instance, _ = noise_free_scalar()
        point = ParameterBelief(Ellipsoid([0.2], [[0.0]]))
        lo, hi = worst_case_interval(instance, point, [1.5])
        expect = 0.3 + 1.5 + 0.4 * 1.5 * 0.2
        assert_allclose(lo, [expect], atol=1e-12)
        assert_allclose(hi, [expect], atol=1e-12)

    def test_zero_input_radius_is_noise_only(self):
        # At u = 0 both regressor columns vanish, leaving the noise radius.
        _, instance, belief = sim1_case()
        lo, hi = worst_case_interval(instance, belief, [0.0])
        assert_allclose(hi - lo, [2.0 * np.sqrt(1.05)], atol=1e-12)

    def test_interval_bounds_sampled_errors(self):
        _, instance, belief = sim1_case()
        rng = np.random.default_rng(31)
        spec = scenario("sim1")
        u = np.array([1.7])
        lo, hi = worst_case_interval(instance, belief, u)
        disturb = spec.model.disturbance_set()
        c = spec.model.c
        for _ in range(10000):
            theta = belief.set.sample_interior(rng)
            noise = c @ disturb.sample_interior(rng)
            err = (instance.f + instance.b0 @ u
                   + instance.regressor(u) @ theta + noise)
            assert (err <= hi + 1e-9).all()
            assert (err >= lo - 1e-9).all()


class TestSolveRobust:
    def test_pinned_input_is_returned_verbatim(self):
        _, instance, belief = sim1_case()
        sol = solve_robust(instance, belief, ControlBounds([2.0], [2.0]))
        assert_allclose(sol.u, [2.0])
        lo, hi = worst_case_interval(instance, belief, sol.u)
        assert_allclose(sol.z, np.maximum(np.abs(lo), np.abs(hi)), atol=1e-12)
        assert_allclose(sol.objective, sol.z.sum())
        assert sol.status == "optimal"

    def test_exact_tracking_reaches_zero_cost(self):
        instance, _ = noise_free_scalar()
        point = ParameterBelief(Ellipsoid([0.0], [[0.0]]))
        sol = solve_robust(instance, point, ControlBounds([-5.0], [5.0]))
        assert_allclose(sol.u, [-0.3], atol=1e-6)
        assert sol.objective <= 1e-7

    def test_matches_dense_grid_minimum(self):
        _, instance, belief = sim1_case()
        bounds = ControlBounds([-25.0], [25.0])
        sol = solve_robust(instance, belief, bounds)
        _, grid_best = oracles.grid_min_robust(instance, belief, bounds)
        assert sol.status == "optimal"
        assert abs(sol.objective - grid_best) <= 1e-3

    def test_random_cases_match_grid(self):
        rng = np.random.default_rng(42)
        for _ in range(15):
            instance, belief, bounds = oracles.random_tracking_case(rng)
            sol = solve_robust(instance, belief, bounds)
            _, grid_best = oracles.grid_min_robust(instance, belief, bounds)
            assert abs(sol.objective - grid_best) <= 1e-3

    def test_unbounded_box(self):
        _, instance, belief = sim1_case()
        free = solve_robust(instance, belief,
                            ControlBounds([-np.inf], [np.inf]))
        wide = solve_robust(instance, belief, ControlBounds([-25.0], [25.0]))
        assert free.status == "optimal"
        assert_allclose(free.objective, wide.objective, atol=1e-6)

    def test_one_sided_box(self):
        _, instance, belief = sim1_case()
        capped = solve_robust(instance, belief,
                              ControlBounds([-np.inf], [1.0]))
        assert capped.status == "optimal"
        assert capped.u[0] <= 1.0 + 1e-9
        ref = solve_robust(instance, belief, ControlBounds([-25.0], [25.0]))
        if ref.u[0] > 1.0:
            vals = oracles.robust_cost_batch(instance, belief, [[1.0]])
            assert_allclose(capped.objective, vals[0], atol=1e-6)

    def test_objective_monotone_in_uncertainty(self):
        _, instance, belief = sim1_case()
        bounds = ControlBounds([-25.0], [25.0])
        small = solve_robust(instance, belief, bounds)
        bigger = ParameterBelief(
            Ellipsoid(belief.center, 2.0 * belief.shape))
        large = solve_robust(instance, bigger, bounds)
        assert large.objective >= small.objective - 1e-8

    def test_certificate_holds_on_samples(self):
        spec, instance, belief = sim1_case()
        sol = solve_robust(instance, belief, ControlBounds([-25.0], [25.0]))
        rng = np.random.default_rng(55)
        disturb = spec.model.disturbance_set()
        c = spec.model.c
        g = instance.regressor(sol.u)
        for _ in range(10000):
            theta = belief.set.sample_interior(rng)
            noise = c @ disturb.sample_interior(rng)
            err = instance.f + instance.b0 @ sol.u + g @ theta + noise
            assert (np.abs(err) <= sol.z + 1e-6).all()

    def test_known_theta_equals_degenerate_belief(self):
        _, instance, _ = sim1_case()
        bounds = ControlBounds([-25.0], [25.0])
        theta = np.array([0.2, 0.1])
        a = solve_known_theta(instance, theta, bounds)
        b = solve_robust(
            instance,
            ParameterBelief(Ellipsoid(theta, np.zeros((2, 2)))),
            bounds,
        )
        assert_allclose(a.u, b.u, atol=1e-12)
        assert_allclose(a.objective, b.objective, atol=1e-12)

    def test_parameter_free_instance(self):
        instance, _ = noise_free_scalar()
        bare = TrackingInstance(
            f=instance.f, b0=instance.b0, v_rows=(), w_rows=(),
            q_shape=instance.q_shape, x=instance.x)
        sol = solve_known_theta(bare, np.zeros(0), ControlBounds([-5.0], [5.0]))
        assert sol.status == "optimal"
        assert_allclose(sol.u, [-0.3], atol=1e-6)

    def test_infeasible_bounds(self):
        _, instance, belief = sim1_case()
        sol = solve_robust(instance, belief, ControlBounds([1.0], [-1.0]))
        assert sol.status == "infeasible"
        assert np.isnan(sol.u).all()
        assert np.isnan(sol.objective)

    def test_bounds_dimension_checked(self):
        _, instance, belief = sim1_case()
        with pytest.raises(ValueError, match="bounds"):
            solve_robust(instance, belief, ControlBounds([-1.0, -1.0], [1.0, 1.0]))

    def test_warm_start_agrees_with_cold(self):
        _, instance, belief = sim1_case()
        bounds = ControlBounds([-25.0], [25.0])
        cold = solve_robust(instance, belief, bounds)
        for shift in (0.0, 0.5, 5.0):
            warm = solve_robust(instance, belief, bounds,
                                u_warm=cold.u + shift)
            assert warm.status == "optimal"
            assert_allclose(warm.u, cold.u, atol=1e-6)
            assert_allclose(warm.objective, cold.objective, atol=1e-8)

    def test_warm_start_outside_box_is_recovered(self):
        _, instance, belief = sim1_case()
        bounds = ControlBounds([-2.0], [2.0])
        cold = solve_robust(instance, belief, bounds)
        warm = solve_robust(instance, belief, bounds, u_warm=np.array([50.0]))
        assert_allclose(warm.u, cold.u, atol=1e-6)


class TestSolverContract:
    def test_schedule_constants(self):
        assert BARRIER_GROWTH == 10.0
        assert DUALITY_TARGET == 1e-8

    def test_solution_reports_iteration_count(self):
        _, instance, belief = sim1_case()
        sol = solve_robust(instance, belief, ControlBounds([-25.0], [25.0]))
        assert isinstance(sol, RobustSolution)
        assert sol.newton_iterations > 0
