"""Particle filter mechanics: priors, updates, resampling, budgets."""

from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magbayes.inference import (
    DegenerateUpdateError,
    GaussianPrior,
    ParticleBudget,
    ParticleEnsemble,
    ResamplerConfig,
    UniformPrior,
    particle_count_rule,
)
from magbayes.model import GAMMA_E, RamseyLikelihood


def _ensemble(n=512, seed=0, bounds=False):
    prior = UniformPrior([(0.0, GAMMA_E * 1e-4)])
    ens = ParticleEnsemble.from_prior(prior, n, seed=seed)
    if bounds:
        ens.bounds = prior.hard_bounds()
    return prior, ens


class TestUniformPrior:
    def test_moments(self):
        prior = UniformPrior([(2.0, 6.0), (0.0, 12.0)])
        np.testing.assert_allclose(prior.mean(), [4.0, 6.0])
        np.testing.assert_allclose(prior.cov(), np.diag([16.0 / 12.0, 12.0]))
        assert prior.dim == 2

    def test_samples_inside_box(self, rng):
        prior = UniformPrior([(1.0, 3.0), (-2.0, -1.0)])
        draws = prior.sample(rng, 5000)
        assert draws.shape == (5000, 2)
        lo, hi = prior.hard_bounds().T
        assert np.all(draws >= lo) and np.all(draws <= hi)

    def test_validation(self):
        with pytest.raises(ValueError):
            UniformPrior([(1.0, 1.0)])
        with pytest.raises(ValueError):
            UniformPrior([(2.0, 1.0)])
        with pytest.raises(ValueError):
            UniformPrior([(0.0, math.inf)])


class TestGaussianPrior:
    def test_moments_and_clipping(self, rng):
        prior = GaussianPrior([1e6, 5e4], [[1e10, 0.0], [0.0, 1e8]])
        np.testing.assert_allclose(prior.mean(), [1e6, 5e4])
        draws = prior.sample(rng, 2000)
        assert np.all(draws >= 0.0)

    def test_clips_negative_tail(self, rng):
        """Mass below zero is moved to the boundary, not discarded."""
        prior = GaussianPrior([0.0], [[1.0]])
        draws = prior.sample(rng, 4000)
        assert np.all(draws >= 0.0)
        assert np.mean(draws == 0.0) == pytest.approx(0.5, abs=0.05)

    def test_validation(self):
        with pytest.raises(ValueError):
            GaussianPrior([0.0, 1.0], [[1.0, 0.0]])
        with pytest.raises(ValueError):
            GaussianPrior([0.0, 1.0], [[1.0, 0.5], [0.4, 1.0]])
        with pytest.raises(ValueError):
            GaussianPrior([0.0, 1.0], [[1.0, 2.0], [2.0, 1.0]])


class TestParticleCountRule:
    def test_reference_budgets(self):
        assert particle_count_rule(1, 1) == ParticleBudget(25000, 0.5, 0.98)
        budget = particle_count_rule(8, 8)
        assert budget.n_particles == 8118
        assert budget.threshold == pytest.approx(0.3076406612148048, rel=1e-14)
        assert budget.a == pytest.approx(0.98, rel=1e-14)
        budget = particle_count_rule(160, 160)
        assert budget.n_particles == 4115
        assert budget.threshold == pytest.approx(0.4211849653701819, rel=1e-14)

    def test_mixing_tracks_m_fraction(self):
        assert particle_count_rule(8, 160).a == pytest.approx(0.9 + 0.08 * 8 / 160, rel=1e-14)

    def test_monotone_particle_count(self):
        """Bunching photons means fewer epochs, so fewer particles suffice."""
        counts = [particle_count_rule(m, 160).n_particles for m in (1, 2, 8, 40, 160)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_resampler_passthrough(self):
        budget = particle_count_rule(8, 8)
        resampler = budget.resampler()
        assert isinstance(resampler, ResamplerConfig)
        assert resampler.a == budget.a
        assert resampler.threshold == budget.threshold

    def test_validation(self):
        with pytest.raises(ValueError):
            particle_count_rule(0, 1)
        with pytest.raises(ValueError):
            particle_count_rule(8, 4)


class TestResamplerConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ResamplerConfig(a=0.0)
        with pytest.raises(ValueError):
            ResamplerConfig(a=1.1)
        with pytest.raises(ValueError):
            ResamplerConfig(threshold=0.0)
        with pytest.raises(ValueError):
            ResamplerConfig(threshold=1.0)
        ResamplerConfig(a=1.0, threshold=0.5)


class TestEnsembleConstruction:
    def test_auto_normalizes(self, rng):
        positions = rng.uniform(0, 1e6, size=(10, 1))
        ens = ParticleEnsemble(positions, np.full(10, 7.0), rng)
        assert ens.weights.sum() == pytest.approx(1.0, abs=1e-14)

    def test_validation(self, rng):
        with pytest.raises(ValueError):
            ParticleEnsemble(np.zeros((1, 1)), np.ones(1), rng)
        with pytest.raises(ValueError):
            ParticleEnsemble(np.zeros((3, 1)), np.ones(2), rng)
        with pytest.raises(ValueError):
            ParticleEnsemble(np.zeros((3, 1)), np.array([1.0, -1.0, 1.0]), rng)
        with pytest.raises(ValueError):
            ParticleEnsemble(np.zeros((3, 1)), np.zeros(3), rng)

    def test_from_prior_deterministic(self):
        prior = UniformPrior([(0.0, 1e7)])
        a = ParticleEnsemble.from_prior(prior, 256, seed=9)
        b = ParticleEnsemble.from_prior(prior, 256, seed=9)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_from_prior_uniform_weights(self):
        prior = UniformPrior([(0.0, 1e7)])
        ens = ParticleEnsemble.from_prior(prior, 100, seed=3)
        np.testing.assert_allclose(ens.weights, 1.0 / 100)


class TestBayesUpdate:
    def test_matches_direct_product(self):
        """One update is literally prior x likelihood, renormalised."""
        _, ens = _ensemble(n=700, seed=2)
        like = RamseyLikelihood()
        tau = 4.2e-7
        expected = ens.weights * like(ens.positions, tau, 0)
        expected /= expected.sum()
        ens.bayes_update(tau, 0, like)
        np.testing.assert_allclose(ens.weights, expected, rtol=1e-10)

    def test_scale_invariance(self):
        """The update commutes with rescaling the unnormalised weights."""
        _, a = _ensemble(n=300, seed=5)
        _, b = _ensemble(n=300, seed=5)
        b.weights = b.weights * 1e-30
        like = RamseyLikelihood()
        for tau, outcome in [(1e-7, 0), (9e-7, 1), (3e-6, 0)]:
            a.bayes_update(tau, outcome, like)
            b.bayes_update(tau, outcome, like)
        np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9)

    @settings(max_examples=1000, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**31),
        tau=st.floats(min_value=1e-9, max_value=1e-5),
        outcome=st.integers(min_value=0, max_value=1),
    )
    def test_weights_stay_normalized(self, seed, tau, outcome):
        prior = UniformPrior([(0.0, GAMMA_E * 1e-4)])
        ens = ParticleEnsemble.from_prior(prior, 64, seed=seed)
        n = ens.positions.shape[0]
        ens.bayes_update(tau, outcome, RamseyLikelihood())
        assert ens.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(ens.weights >= 0.0)
        assert ens.positions.shape[0] == n

    def test_sharpens_posterior(self):
        """Informative epochs shrink the frequency variance on average."""
        prior, ens = _ensemble(n=4000, seed=11)
        like = RamseyLikelihood()
        rng = np.random.default_rng(77)
        omega_true = 0.43 * GAMMA_E * 1e-4
        before = ens.moments()[1][0, 0]
        for _ in range(25):
            tau = float(rng.uniform(5e-8, 2e-6))
            p0 = math.cos(omega_true * tau / 2.0) ** 2
            outcome = int(rng.random() > p0)
            ens.bayes_update(tau, outcome, like)
        after = ens.moments()[1][0, 0]
        assert after < before / 10.0

    def test_zero_likelihood_raises(self):
        """All particles at omega = 0 make a click impossible."""
        rng = np.random.default_rng(0)
        positions = np.zeros((16, 1))
        ens = ParticleEnsemble(positions, np.ones(16), rng)
        with pytest.raises(DegenerateUpdateError):
            ens.bayes_update(1e-6, 1, RamseyLikelihood())


class TestMomentsAndEss:
    def test_moments_match_weighted_average(self, rng):
        positions = rng.uniform(0, 1e6, size=(50, 2))
        weights = rng.uniform(0.1, 1.0, 50)
        ens = ParticleEnsemble(positions, weights, rng)
        mean, cov = ens.moments()
        w = weights / weights.sum()
        np.testing.assert_allclose(mean, w @ positions, rtol=1e-12)
        centred = positions - w @ positions
        np.testing.assert_allclose(cov, (w[:, None] * centred).T @ centred, rtol=1e-10)

    def test_ess_extremes(self, rng):
        positions = rng.uniform(0, 1.0, size=(40, 1))
        uniform = ParticleEnsemble(positions, np.ones(40), rng)
        assert uniform.effective_sample_size() == pytest.approx(40.0, rel=1e-12)
        spiked = np.full(40, 1e-14)
        spiked[7] = 1.0
        concentrated = ParticleEnsemble(positions, spiked, rng)
        assert concentrated.effective_sample_size() == pytest.approx(1.0, rel=1e-6)

    @settings(max_examples=1000, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_ess_bounded_by_count(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        positions = rng.uniform(0, 1.0, size=(n, 1))
        weights = rng.uniform(0.0, 1.0, n) + 1e-12
        ens = ParticleEnsemble(positions, weights, rng)
        ess = ens.effective_sample_size()
        assert 1.0 - 1e-9 <= ess <= n + 1e-9


class TestLiuWestResampling:
    def test_restores_uniform_weights(self):
        _, ens = _ensemble(n=600, seed=4)
        ens.bayes_update(1e-6, 0, RamseyLikelihood())
        ens.resample_liu_west(ResamplerConfig())
        np.testing.assert_allclose(ens.weights, 1.0 / 600, rtol=1e-12)
        assert ens.n_resamples == 1

    def test_preserves_posterior_moments(self):
        """Shrinkage plus jitter keeps mean and covariance, within noise."""
        prior = UniformPrior([(0.0, GAMMA_E * 1e-4)])
        like = RamseyLikelihood()
        base = ParticleEnsemble.from_prior(prior, 20000, seed=8)
        for tau, outcome in [(2e-7, 0), (6e-7, 1), (1.1e-6, 0)]:
            base.bayes_update(tau, outcome, like)
        mean_before, cov_before = base.moments()
        means, variances = [], []
        for seed in range(30):
            ens = ParticleEnsemble.from_prior(prior, 20000, seed=8)
            ens.rng = np.random.default_rng(1000 + seed)
            for tau, outcome in [(2e-7, 0), (6e-7, 1), (1.1e-6, 0)]:
                ens.bayes_update(tau, outcome, like)
            ens.resample_liu_west(ResamplerConfig(a=0.98, threshold=0.5))
            m, c = ens.moments()
            means.append(m[0])
            variances.append(c[0, 0])
        scatter = np.std(means) + 1e-30
        assert abs(np.mean(means) - mean_before[0]) < 5.0 * scatter
        # a^2 Sigma + (1 - a^2) Sigma = Sigma, so spread is preserved too
        assert np.mean(variances) == pytest.approx(cov_before[0, 0], rel=0.1)

    def test_full_mixing_draws_existing_positions(self):
        """a = 1 degenerates to plain multinomial resampling."""
        _, ens = _ensemble(n=400, seed=6)
        original = ens.positions.copy()
        ens.bayes_update(8e-7, 1, RamseyLikelihood())
        with warnings.catch_warnings():
            # zero jitter covariance is expected to trip the fallback path
            warnings.simplefilter("ignore", RuntimeWarning)
            ens.resample_liu_west(ResamplerConfig(a=1.0, threshold=0.5))
        matches = np.isin(ens.positions[:, 0], original[:, 0])
        assert matches.all()

    def test_respects_prior_bounds(self):
        prior, ens = _ensemble(n=800, seed=13, bounds=True)
        like = RamseyLikelihood()
        rng = np.random.default_rng(5)
        for _ in range(12):
            ens.bayes_update(float(rng.uniform(1e-8, 2e-6)), int(rng.integers(0, 2)), like)
            ens.maybe_resample(ResamplerConfig(threshold=0.9))
        lo, hi = prior.hard_bounds().T
        assert np.all(ens.positions >= lo) and np.all(ens.positions <= hi)
        assert ens.n_resamples > 0

    def test_singular_covariance_falls_back(self, rng):
        """Identical particles leave nothing to jitter; a warning flags it."""
        positions = np.full((32, 1), 5e5)
        ens = ParticleEnsemble(positions, np.ones(32), rng)
        with pytest.warns(RuntimeWarning, match="singular posterior covariance"):
            ens.resample_liu_west(ResamplerConfig())
        np.testing.assert_allclose(ens.positions, 5e5)
        assert ens.n_degenerate_resamples == 1

    def test_deterministic_given_seed(self):
        results = []
        for _ in range(2):
            _, ens = _ensemble(n=256, seed=21)
            ens.bayes_update(5e-7, 0, RamseyLikelihood())
            ens.resample_liu_west(ResamplerConfig())
            results.append(ens.positions.copy())
        np.testing.assert_array_equal(results[0], results[1])


class TestMaybeResample:
    def test_triggers_on_low_ess(self):
        _, ens = _ensemble(n=100, seed=1)
        ens.weights = np.full(100, 1e-12)
        ens.weights[3] = 1.0
        assert ens.maybe_resample(ResamplerConfig(threshold=0.5)) is True
        assert ens.n_resamples == 1

    def test_skips_on_high_ess(self):
        _, ens = _ensemble(n=100, seed=1)
        assert ens.maybe_resample(ResamplerConfig(threshold=0.5)) is False
        assert ens.n_resamples == 0

    def test_threshold_semantics(self):
        """Resampling fires when ESS < threshold * n, not at equality."""
        _, ens = _ensemble(n=100, seed=1)
        # two-level weights with ESS exactly 50
        w = np.zeros(100)
        w[:25] = 1.0
        w[25:] = 1.0 / 75.0
        ens.weights = w / w.sum()
        ess = ens.effective_sample_size()
        assert ens.maybe_resample(ResamplerConfig(threshold=ess / 100.0)) is False
        assert ens.maybe_resample(ResamplerConfig(threshold=min(0.99, ess / 100.0 + 1e-6))) is True


class TestReset:
    def test_redraws_from_prior(self):
        prior, ens = _ensemble(n=5000, seed=17)
        ens.bayes_update(2e-6, 0, RamseyLikelihood())
        ens.resample_liu_west(ResamplerConfig())
        ens.reset(prior)
        assert ens.n_resets == 1
        np.testing.assert_allclose(ens.weights, 1.0 / 5000)
        mean, cov = ens.moments()
        assert mean[0] == pytest.approx(prior.mean()[0], rel=0.05)
        assert cov[0, 0] == pytest.approx(prior.cov()[0, 0], rel=0.1)

    def test_dimension_mismatch(self):
        prior, ens = _ensemble(n=64, seed=17)
        with pytest.raises(ValueError):
            ens.reset(UniformPrior([(0.0, 1.0), (0.0, 1.0)]))
