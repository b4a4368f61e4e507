"""Tests for the recursive set-membership parameter estimator."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from smtrack.ellipsoid import Ellipsoid, intersection_bound
from smtrack.estimator import (
    InconsistentObservationError,
    Observation,
    ParameterBelief,
    build_observation,
    build_state_observation,
    innovation_ellipsoid,
    update,
)
from smtrack.experiments import scenario


def scalar_belief(center, radius_sq):
    return ParameterBelief(Ellipsoid([center], [[radius_sq]]))


def interval_obs(center, radius_sq):
    """Scalar identity-regressor observation, the interval set itself."""
    return Observation([center], [[1.0]], [[radius_sq]])


class TestObservation:
    def test_field_validation(self):
        with pytest.raises(ValueError, match="rows"):
            Observation([1.0, 2.0], [[1.0]], [[1.0]])
        with pytest.raises(ValueError, match="q_shape"):
            Observation([1.0], [[1.0]], np.eye(2))

    def test_arrays_are_frozen(self):
        obs = interval_obs(0.0, 1.0)
        with pytest.raises(ValueError):
            obs.h[0] = 2.0


class TestBuildObservation:
    def test_zero_signals_give_zero_observation(self):
        model = scenario("sim1").model
        obs = build_observation(model, np.zeros(3), [0.0], [0.0])
        assert_allclose(obs.h, [0.0])
        assert obs.phi.shape == (1, 2)
        assert_allclose(obs.phi, 0.0)

    def test_noise_shape_is_projected_disturbance(self):
        model = scenario("sim1").model
        obs = build_observation(model, np.zeros(3), [0.0], [0.0])
        assert_allclose(obs.q_shape, [[1.05]])

    def test_first_input_direction_invisible_through_output(self):
        # C annihilates the first input perturbation column for every u.
        model = scenario("sim1").model
        for u in (1.0, 2.0):
            obs = build_observation(model, np.zeros(3), [u], [0.0])
            assert abs(obs.phi[0, 0]) < 1e-15 * abs(u)
            assert abs(obs.phi[0, 1]) > 0.1 * abs(u)

    def test_residual_removes_nominal_response(self):
        model = scenario("sim1").model
        rng = np.random.default_rng(2)
        x = rng.normal(size=3)
        u = rng.normal(size=1)
        x_nom = model.a0 @ x + model.b0 @ u
        obs = build_observation(model, x, u, model.c @ x_nom)
        assert_allclose(obs.h, [0.0], atol=1e-12)


class TestBuildStateObservation:
    def test_fields(self):
        model = scenario("sim1").model
        rng = np.random.default_rng(3)
        x = rng.normal(size=3)
        u = rng.normal(size=1)
        x_next = rng.normal(size=3)
        obs = build_state_observation(model, x, u, x_next)
        assert_allclose(obs.h, x_next - model.a0 @ x - model.b0 @ u)
        assert obs.phi.shape == (3, 2)
        assert_allclose(obs.phi[:, 0], model.b_perturbations[0].ravel() * u)
        assert_allclose(obs.phi[:, 1], model.b_perturbations[1].ravel() * u)
        assert_allclose(obs.q_shape, model.r_shape)

    def test_observation_is_exact_at_true_parameters(self):
        model = scenario("sim1").model
        rng = np.random.default_rng(4)
        theta = np.array([0.2, 0.1])
        x = rng.normal(size=3)
        u = rng.normal(size=1)
        x_next, _ = model.step(x, u, theta, np.zeros(3))
        obs = build_state_observation(model, x, u, x_next)
        assert_allclose(obs.phi @ theta, obs.h, atol=1e-12)


class TestUpdate:
    def test_touching_intervals_collapse_to_the_common_point(self):
        # [-2, 2] fused with [2, 4] leaves only the point 2.
        out = update(scalar_belief(0.0, 4.0), interval_obs(3.0, 1.0))
        assert_allclose(out.center, [2.0], atol=1e-6)
        assert_allclose(out.shape, [[0.0]], atol=1e-6)
        assert_allclose(out.last_rho, 0.5, rtol=1e-6)
        assert out.last_beta <= 1e-9

    def test_uninformative_observation_keeps_the_prior(self):
        # Centered observation wider than useful: no stationary point exists.
        belief = scalar_belief(0.0, 4.0)
        out = update(belief, interval_obs(0.0, 1.0))
        assert out.set is belief.set
        assert out.last_rho == 0.0
        assert out.last_beta == 1.0
        assert not out.skipped

    def test_partial_direction_shrinks_volume(self):
        # Observing only the first coordinate still tightens both axes.
        belief = ParameterBelief(Ellipsoid(np.zeros(2), np.diag([4.0, 1.0])))
        obs = Observation([0.0], [[1.0, 0.0]], [[1.0]])
        out = update(belief, obs)
        assert_allclose(out.last_rho, 0.5, rtol=1e-9)
        assert_allclose(out.center, np.zeros(2), atol=1e-12)
        assert_allclose(out.shape, np.diag([2.0, 1.5]), rtol=1e-9)
        assert out.set.log_det < belief.set.log_det

    def test_volume_never_grows(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            p = rng.uniform(0.5, 5.0)
            belief = scalar_belief(0.0, p)
            h = rng.uniform(-0.9 * np.sqrt(p), 0.9 * np.sqrt(p))
            out = update(belief, interval_obs(h, rng.uniform(0.1, 4.0)))
            assert out.set.log_det <= belief.set.log_det + 1e-9

    def test_disjoint_observation_raises(self):
        with pytest.raises(InconsistentObservationError):
            update(scalar_belief(0.0, 4.0), interval_obs(10.0, 1.0))

    def test_disjoint_observation_skipped_on_request(self):
        belief = scalar_belief(0.0, 4.0)
        out = update(belief, interval_obs(10.0, 1.0), policy="skip")
        assert out.skipped
        assert out.set is belief.set
        assert out.last_rho == 0.0

    def test_invalid_policy(self):
        with pytest.raises(ValueError, match="policy"):
            update(scalar_belief(0.0, 1.0), interval_obs(0.0, 1.0),
                   policy="ignore")

    def test_regressor_width_checked(self):
        obs = Observation([0.0], [[1.0, 0.0]], [[1.0]])
        with pytest.raises(ValueError, match="columns"):
            update(scalar_belief(0.0, 1.0), obs)

    def test_matches_generic_fusion_for_invertible_regressor(self):
        # With a square regressor the observation is itself an ellipsoid and
        # the gain-form update must agree with fusing the two sets directly.
        rng = np.random.default_rng(17)
        informative = 0
        for _ in range(30):
            m = rng.normal(size=(2, 2))
            prior = Ellipsoid(rng.normal(size=2), m @ m.T + 0.3 * np.eye(2))
            phi = rng.normal(size=(2, 2)) + 2.0 * np.eye(2)
            q = np.diag(rng.uniform(0.2, 1.0, size=2))
            theta_probe = prior.sample_interior(rng)
            h = phi @ theta_probe
            out = update(ParameterBelief(prior), Observation(h, phi, q))
            if out.last_rho == 0.0:
                continue
            informative += 1
            phi_inv = np.linalg.inv(phi)
            obs_set = Ellipsoid(phi_inv @ h, phi_inv @ q @ phi_inv.T)
            fused, beta = intersection_bound(prior, obs_set, out.last_rho)
            assert_allclose(out.center, fused.center, atol=1e-8)
            assert_allclose(out.shape, fused.shape, atol=1e-8)
            assert_allclose(out.last_beta, beta, atol=1e-8)
        assert informative >= 5


class TestInnovationEllipsoid:
    def test_zero_regressor_doubles_the_noise_bound(self):
        belief = ParameterBelief(Ellipsoid(np.zeros(2), np.eye(2)))
        obs = Observation([0.0], [[0.0, 0.0]], [[1.05]])
        out = innovation_ellipsoid(belief, obs)
        assert_allclose(out.shape, [[2.1]], rtol=1e-9)
        assert_allclose(out.center, [0.0])

    def test_balanced_operands_quadruple(self):
        belief = ParameterBelief(Ellipsoid(np.zeros(2), np.eye(2)))
        obs = Observation(np.zeros(2), np.eye(2), np.eye(2))
        out = innovation_ellipsoid(belief, obs)
        assert_allclose(out.shape, 4.0 * np.eye(2), rtol=1e-9)

    def test_contains_simulated_innovations(self):
        spec = scenario("sim1")
        model = spec.model
        belief = ParameterBelief(spec.belief0)
        rng = np.random.default_rng(123)
        for _ in range(1000):
            x = rng.normal(size=3)
            u = rng.normal(size=1)
            theta = belief.set.sample_interior(rng)
            omega = model.disturbance_set().sample_interior(rng)
            x_next, y_next = model.step(x, u, theta, omega)
            obs = build_observation(model, x, u, y_next)
            innovation = obs.h - obs.phi @ belief.center
            bound = innovation_ellipsoid(belief, obs)
            assert bound.contains(innovation, tol=1e-7)


class TestClosedLoopLearning:
    def test_belief_tracks_the_truth_and_contracts(self):
        spec = scenario("sim1")
        model = spec.model
        theta = spec.theta_true
        belief = ParameterBelief(spec.belief0)
        rng = np.random.default_rng(77)
        x = spec.x0
        log_dets = [belief.set.log_det]
        for _ in range(12):
            u = rng.uniform(-2.0, 2.0, size=1)
            omega = model.disturbance_set().sample_interior(rng)
            x_next, _ = model.step(x, u, theta, omega)
            obs = build_state_observation(model, x, u, x_next)
            belief = update(belief, obs)
            assert belief.set.contains(theta, tol=1e-7)
            log_dets.append(belief.set.log_det)
            x = x_next
        diffs = np.diff(log_dets)
        assert (diffs <= 1e-9).all()
        assert log_dets[-1] < log_dets[0]
