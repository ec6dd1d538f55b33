"""Unit and property tests for the particle-ensemble primitives."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedpf.errors import ConfigurationError, ContractViolation, WeightCollapseError
from gatedpf.particles import (
    DynamicsModel,
    ParticleEnsemble,
    effective_sample_size,
    normalize,
    posterior_mean,
    predict,
    resample_systematic,
    weight_update,
)
from gatedpf.rng import RandomSource

from conftest import StubDensity, scalar_ensemble


class IdentityDynamics(DynamicsModel):
    def sample_transition(self, state, rng):
        return state


class ShiftDynamics(DynamicsModel):
    def __init__(self, delta=1.0):
        self.delta = delta

    def sample_transition(self, state, rng):
        return state + self.delta


class NoisyDynamics(DynamicsModel):
    def sample_transition(self, state, rng):
        return state + rng.normal(size=state.shape)

    def sample_transition_batch(self, states, rng):
        return states + rng.normal(size=states.shape)


class NoisyDynamicsLoop(DynamicsModel):
    """Noisy dynamics without a batch override, exercising the default loop."""

    def sample_transition(self, state, rng):
        return state + rng.normal(size=state.shape)


weights_strategy = st.lists(
    st.floats(min_value=1e-6, max_value=1e3), min_size=1, max_size=24
)


class TestEnsemble:
    def test_invariants_checked(self):
        with pytest.raises(ConfigurationError):
            ParticleEnsemble(np.array([[1.0]]), np.array([-0.5]), normalized=False)
        with pytest.raises(WeightCollapseError):
            ParticleEnsemble(np.array([[1.0]]), np.array([0.0]), normalized=False)
        with pytest.raises(ContractViolation):
            ParticleEnsemble(np.array([[1.0], [2.0]]), np.array([0.4, 0.4]), normalized=True)
        with pytest.raises(ConfigurationError):
            ParticleEnsemble(np.array([[np.inf]]), np.array([1.0]), normalized=False)

    def test_from_states_uniform(self):
        ens = scalar_ensemble([1.0, 2.0, 3.0, 4.0])
        assert ens.normalized
        np.testing.assert_allclose(ens.weights, 0.25)

    def test_arrays_are_read_only(self):
        ens = scalar_ensemble([1.0, 2.0])
        with pytest.raises(ValueError):
            ens.particles[0, 0] = 9.0
        with pytest.raises(ValueError):
            ens.weights[0] = 9.0


class TestPredict:
    def test_identity_dynamics_preserves_everything(self):
        ens = scalar_ensemble([1.0, 2.0, 3.0], weights=[0.2, 0.3, 0.5])
        out = predict(ens, IdentityDynamics(), RandomSource(1))
        np.testing.assert_array_equal(out.particles, ens.particles)
        np.testing.assert_array_equal(out.weights, ens.weights)

    def test_deterministic_shift_map(self):
        # P=3, states {1,2,3}, x' = x + 1, no noise.
        ens = scalar_ensemble([1.0, 2.0, 3.0])
        out = predict(ens, ShiftDynamics(1.0), RandomSource(1))
        np.testing.assert_allclose(out.particles[:, 0], [2.0, 3.0, 4.0])
        np.testing.assert_array_equal(out.weights, ens.weights)

    def test_zero_mean_noise_law_of_large_numbers(self):
        p = 10_000
        ens = ParticleEnsemble.from_states(np.zeros((p, 1)))
        out = predict(ens, NoisyDynamics(), RandomSource(7))
        se = 1.0 / np.sqrt(p)
        assert abs(float(np.mean(out.particles))) < 4 * se

    def test_requires_normalized(self):
        ens = ParticleEnsemble(np.zeros((2, 1)), np.array([1.0, 3.0]), normalized=False)
        with pytest.raises(ContractViolation):
            predict(ens, IdentityDynamics(), RandomSource(1))

    def test_dimension_mismatch_rejected(self):
        class WrongShape(DynamicsModel):
            def sample_transition(self, state, rng):
                return np.concatenate([state, state])

        with pytest.raises(ConfigurationError):
            predict(scalar_ensemble([1.0]), WrongShape(), RandomSource(1))

    def test_bit_determinism(self):
        ens = ParticleEnsemble.from_states(np.linspace(0, 1, 50)[:, None])
        a = predict(ens, NoisyDynamics(), RandomSource(99, (4,)))
        b = predict(ens, NoisyDynamics(), RandomSource(99, (4,)))
        assert np.array_equal(a.particles, b.particles)

    def test_generic_batch_path_gives_each_particle_its_own_stream(self):
        # The default batch implementation must give every particle its own
        # stream: identical input states must not produce identical noise,
        # and consecutive calls with the same rng must not repeat draws.
        ens = ParticleEnsemble.from_states(np.zeros((8, 1)))
        rng = RandomSource(3)
        first = predict(ens, NoisyDynamicsLoop(), rng).particles[:, 0]
        second = predict(ens, NoisyDynamicsLoop(), rng).particles[:, 0]
        assert len(np.unique(first)) == len(first)
        assert not np.array_equal(first, second)


class TestWeightUpdate:
    def test_uniform_likelihood_keeps_weights(self):
        ens = scalar_ensemble([1.0, 2.0, 3.0], weights=[0.2, 0.3, 0.5])
        out = weight_update(ens, [0.0], [StubDensity([1.0, 1.0, 1.0])])
        np.testing.assert_allclose(out.unnormalized_weights, [0.2, 0.3, 0.5], rtol=1e-12)
        assert not out.normalized

    def test_hand_multiplication(self):
        # Uniform 1/3 times densities {0.3, 0.2, 0.1}.
        ens = scalar_ensemble([1.0, 2.0, 3.0])
        out = weight_update(ens, [0.0], [StubDensity([0.3, 0.2, 0.1])])
        np.testing.assert_allclose(
            out.unnormalized_weights, [0.1, 0.2 / 3, 0.1 / 3], rtol=1e-12
        )

    def test_states_unchanged(self):
        ens = scalar_ensemble([1.0, 2.0, 3.0])
        out = weight_update(ens, [0.0], [StubDensity([0.5, 0.5, 0.5])])
        np.testing.assert_array_equal(out.particles, ens.particles)

    def test_two_sensors_equal_product_and_sequential(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0.05, 2.0, 6)
        b = rng.uniform(0.05, 2.0, 6)
        ens = scalar_ensemble(np.arange(6.0), weights=rng.uniform(0.1, 1.0, 6) / 3.3)
        joint = weight_update(ens, [0.0, 0.0], [StubDensity(a), StubDensity(b)])
        seq = weight_update(
            weight_update(ens, [0.0], [StubDensity(a)]), [0.0], [StubDensity(b)]
        )
        brute = ens.weights * a * b
        np.testing.assert_allclose(joint.unnormalized_weights, brute, rtol=1e-12)
        np.testing.assert_allclose(seq.unnormalized_weights, brute, rtol=1e-12)

    def test_all_zero_collapse_raises(self):
        ens = scalar_ensemble([1.0, 2.0])
        with pytest.raises(WeightCollapseError):
            weight_update(ens, [0.0], [StubDensity([0.0, 0.0])])

    def test_value_sensor_count_mismatch(self):
        ens = scalar_ensemble([1.0])
        with pytest.raises(ConfigurationError):
            weight_update(ens, [0.0, 1.0], [StubDensity([1.0])])

    def test_deep_underflow_survives_in_log_domain(self):
        # Products far below the float64 range keep relative structure.
        ens = scalar_ensemble([0.0, 1.0])
        out = ens
        for _ in range(10):
            out = weight_update(out, [0.0], [StubDensity([1e-60, 2e-60])])
        assert out.log_scale != 0.0
        normalized, _ = normalize(out)
        np.testing.assert_allclose(
            normalized.weights, [1 / (1 + 2**10), 2**10 / (1 + 2**10)], rtol=1e-9
        )


class TestNormalize:
    def test_hand_arithmetic(self):
        ens = ParticleEnsemble(np.zeros((3, 1)), np.array([2.0, 3.0, 5.0]), normalized=False)
        out, marginal = normalize(ens)
        np.testing.assert_allclose(out.weights, [0.2, 0.3, 0.5], rtol=1e-12)
        assert marginal == pytest.approx(10.0, rel=1e-12)

    def test_idempotent_on_normalized(self):
        ens = scalar_ensemble([1.0, 2.0], weights=[0.5, 0.5])
        out, marginal = normalize(ens)
        np.testing.assert_allclose(out.weights, [0.5, 0.5], rtol=1e-12)
        assert marginal == pytest.approx(1.0, rel=1e-12)

    def test_single_particle(self):
        ens = ParticleEnsemble(np.zeros((1, 1)), np.array([0.37]), normalized=False)
        out, marginal = normalize(ens)
        assert out.weights[0] == pytest.approx(1.0)
        assert marginal == pytest.approx(0.37, rel=1e-12)

    @given(weights_strategy)
    @settings(max_examples=100, deadline=None)
    def test_normalized_sum_within_tolerance(self, weights):
        ens = ParticleEnsemble(
            np.zeros((len(weights), 1)), np.array(weights), normalized=False
        )
        out, marginal = normalize(ens)
        assert abs(float(np.sum(out.weights)) - 1.0) <= 1e-12
        assert marginal == pytest.approx(sum(weights), rel=1e-9)

    @given(weights_strategy)
    @settings(max_examples=100, deadline=None)
    def test_marginal_equals_prior_times_likelihood_sum(self, weights):
        # Marginal-likelihood identity: normalize after a weight update
        # returns sum_p prior_p * likelihood_p.
        prior = np.array(weights) / sum(weights)
        ens = ParticleEnsemble(np.zeros((len(weights), 1)), prior, normalized=True)
        rng = np.random.default_rng(11)
        lik = rng.uniform(0.01, 3.0, len(weights))
        _, marginal = normalize(weight_update(ens, [0.0], [StubDensity(lik)]))
        assert marginal == pytest.approx(float(np.sum(prior * lik)), rel=1e-12)


class TestEffectiveSampleSize:
    def test_uniform_gives_particle_count(self):
        ens = ParticleEnsemble.from_states(np.zeros((100, 1)))
        assert effective_sample_size(ens) == pytest.approx(100.0)

    def test_half_half(self):
        ens = scalar_ensemble([1, 2, 3, 4], weights=[0.5, 0.5, 0.0, 0.0])
        assert effective_sample_size(ens) == pytest.approx(2.0)

    def test_degenerate(self):
        ens = scalar_ensemble([1, 2, 3], weights=[1.0, 0.0, 0.0])
        assert effective_sample_size(ens) == pytest.approx(1.0)

    def test_requires_normalized(self):
        ens = ParticleEnsemble(np.zeros((2, 1)), np.array([2.0, 2.0]), normalized=False)
        with pytest.raises(ContractViolation):
            effective_sample_size(ens)


class TestSystematicResampling:
    def test_point_mass_gives_all_copies(self):
        ens = scalar_ensemble([5.0, 6.0, 7.0], weights=[0.0, 1.0, 0.0])
        out = resample_systematic(ens, RandomSource(3))
        np.testing.assert_allclose(out.particles[:, 0], 6.0)
        np.testing.assert_allclose(out.weights, 1.0 / 3.0)

    def test_uniform_weights_copy_each_once(self):
        for seed in range(5):
            ens = scalar_ensemble(np.arange(8.0))
            out = resample_systematic(ens, RandomSource(seed))
            np.testing.assert_array_equal(np.sort(out.particles[:, 0]), np.arange(8.0))

    def test_three_one_split_for_every_draw(self):
        # weights {0.75, 0.25} resampled to 4 always gives copies (3, 1).
        ens = scalar_ensemble([1.0, 2.0], weights=[0.75, 0.25])
        for seed in range(25):
            out = resample_systematic(ens, RandomSource(seed), count=4)
            values = out.particles[:, 0]
            assert np.sum(values == 1.0) == 3
            assert np.sum(values == 2.0) == 1

    @given(
        st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=2, max_size=16),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=150, deadline=None)
    def test_copy_count_bounds(self, raw, seed):
        weights = np.array(raw) / sum(raw)
        n = len(weights)
        ens = ParticleEnsemble(np.arange(n, dtype=float)[:, None], weights, normalized=True)
        out = resample_systematic(ens, RandomSource(seed))
        counts = np.bincount(out.particles[:, 0].astype(int), minlength=n)
        for p in range(n):
            assert np.floor(n * weights[p]) <= counts[p] <= np.ceil(n * weights[p])

    def test_mean_preservation_over_seeded_draws(self):
        rng = np.random.default_rng(17)
        weights = rng.uniform(0.05, 1.0, 12)
        weights /= weights.sum()
        states = rng.normal(size=(12, 2))
        ens = ParticleEnsemble(states, weights, normalized=True)
        target = posterior_mean(ens)
        n_draws = 1000
        means = np.array(
            [
                posterior_mean(resample_systematic(ens, RandomSource(seed)))
                for seed in range(n_draws)
            ]
        )
        # Worst-case per-draw variance is bounded by the weighted state spread.
        spread = np.sqrt(np.sum(weights[:, None] * (states - target) ** 2, axis=0))
        se = spread / np.sqrt(n_draws)
        assert np.all(np.abs(means.mean(axis=0) - target) < 4 * se + 1e-12)


class TestPosteriorMean:
    def test_hand_value(self):
        ens = scalar_ensemble([1.0, 3.0], weights=[0.25, 0.75])
        assert posterior_mean(ens)[0] == pytest.approx(2.5, rel=1e-12)

    def test_point_mass(self):
        ens = ParticleEnsemble.from_states(np.full((4, 2), 3.3))
        np.testing.assert_allclose(posterior_mean(ens), [3.3, 3.3])

    def test_uniform_weights_arithmetic_mean(self):
        states = np.arange(12.0).reshape(6, 2)
        ens = ParticleEnsemble.from_states(states)
        np.testing.assert_allclose(posterior_mean(ens), states.mean(axis=0), rtol=1e-12)
