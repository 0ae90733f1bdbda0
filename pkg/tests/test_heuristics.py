"""Evolution-time heuristics: pair-gap guesses and covariance norms."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magbayes.heuristics import (
    DegenerateEnsembleError,
    HeuristicConfig,
    choose_tau,
    derive_normalizers,
    normalized_cov_fro,
    pgh_multi,
    pgh_single,
)
from magbayes.inference import ParticleEnsemble, ResamplerConfig, UniformPrior
from magbayes.model import GAMMA_E, RamseyLikelihood


def _field_ensemble(n=2048, seed=0, b_max=1e-4):
    prior = UniformPrior([(0.0, GAMMA_E * b_max)])
    return ParticleEnsemble.from_prior(prior, n, seed=seed)


def _joint_ensemble(n=2048, seed=0):
    prior = UniformPrior([(0.0, GAMMA_E * 1e-4), (1e4, 2.5e5)])
    return ParticleEnsemble.from_prior(prior, n, seed=seed)


class TestConfigValidation:
    def test_rejects_bad_windows(self):
        with pytest.raises(ValueError):
            HeuristicConfig(tau_min=0.0)
        with pytest.raises(ValueError):
            HeuristicConfig(tau_max=-1e-6)
        with pytest.raises(ValueError):
            HeuristicConfig(tau_min=2e-6, tau_max=1e-6)
        with pytest.raises(ValueError):
            HeuristicConfig(multiparam_epoch=0)
        with pytest.raises(ValueError):
            HeuristicConfig(norm_b=0.0)
        with pytest.raises(ValueError):
            HeuristicConfig(norm_t2=-1.0)

    def test_clamp(self):
        config = HeuristicConfig(tau_min=1e-7, tau_max=1e-5)
        assert config.clamp(1e-9) == 1e-7
        assert config.clamp(1e-3) == 1e-5
        assert config.clamp(3e-6) == 3e-6


class TestSingleParameterHeuristic:
    @settings(max_examples=1000, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31))
    def test_window_respected(self, seed):
        ens = _field_ensemble(n=64, seed=seed % 1000)
        config = HeuristicConfig(tau_min=5e-8, tau_max=2e-5)
        tau = pgh_single(ens, config, np.random.default_rng(seed))
        assert 5e-8 <= tau <= 2e-5

    def test_tracks_posterior_scale(self):
        """Median tau lands near the inverse posterior frequency spread."""
        ens = _field_ensemble(n=20000, seed=3)
        config = HeuristicConfig()
        rng = np.random.default_rng(10)
        sigma = math.sqrt(ens.moments()[1][0, 0])
        taus = np.array([pgh_single(ens, config, rng) for _ in range(10000)])
        median = float(np.median(taus))
        assert 0.2 / sigma < median < 5.0 / sigma

    def test_scales_with_narrowing_posterior(self):
        """Halving the prior width roughly doubles the guessed tau."""
        rng = np.random.default_rng(11)
        medians = []
        for b_max in (1e-4, 5e-5):
            ens = _field_ensemble(n=20000, seed=4, b_max=b_max)
            taus = [pgh_single(ens, HeuristicConfig(), rng) for _ in range(4000)]
            medians.append(float(np.median(taus)))
        assert medians[1] / medians[0] == pytest.approx(2.0, rel=0.2)

    def test_degenerate_support_raises(self):
        rng = np.random.default_rng(0)
        positions = np.full((16, 1), 2e6)
        ens = ParticleEnsemble(positions, np.ones(16), rng)
        with pytest.raises(DegenerateEnsembleError):
            pgh_single(ens, HeuristicConfig(), rng)

    def test_adaptive_growth_during_learning(self):
        """As epochs sharpen the posterior, the guessed taus lengthen."""
        ens = _field_ensemble(n=4000, seed=7)
        like = RamseyLikelihood()
        config = HeuristicConfig(tau_min=2e-8, tau_max=5e-4)
        rng = np.random.default_rng(42)
        omega_true = 0.61 * GAMMA_E * 1e-4
        taus = []
        for _ in range(60):
            tau = pgh_single(ens, config, rng)
            taus.append(tau)
            p0 = math.cos(omega_true * tau / 2.0) ** 2
            outcome = int(rng.random() > p0)
            ens.bayes_update(tau, outcome, like)
            ens.maybe_resample(ResamplerConfig())
        windows = [float(np.median(taus[k : k + 20])) for k in (0, 20, 40)]
        assert windows[0] < windows[1] < windows[2]


class TestNormalizedCovariance:
    def test_matches_direct_computation(self):
        ens = _joint_ensemble(n=512, seed=5)
        config = HeuristicConfig(norm_b=1e-4, norm_t2=1e-5)
        b = ens.positions[:, 0] / GAMMA_E / 1e-4
        t2 = (1.0 / ens.positions[:, 1]) / 1e-5
        coords = np.column_stack([b, t2])
        mean = ens.weights @ coords
        diff = coords - mean
        cov = (ens.weights[:, None] * diff).T @ diff
        expected = float(np.linalg.norm(cov, "fro"))
        assert normalized_cov_fro(ens, config) == pytest.approx(expected, rel=1e-12)

    def test_zero_rate_uses_sentinel_coherence(self):
        """inv_t2 = 0 enters as a huge but finite normalised T2."""
        rng = np.random.default_rng(1)
        positions = np.column_stack([rng.uniform(1e5, 1e6, 32), np.zeros(32)])
        ens = ParticleEnsemble(positions, np.ones(32), rng)
        config = HeuristicConfig(norm_b=1e-4, norm_t2=1e-5)
        norm = normalized_cov_fro(ens, config)
        assert math.isfinite(norm)
        # all-sentinel T2 column is constant, so only the field spread remains
        b = positions[:, 0] / GAMMA_E / 1e-4
        assert norm == pytest.approx(float(np.var(b)), rel=1e-9)

    def test_requires_normalizers(self):
        ens = _joint_ensemble(n=64, seed=2)
        with pytest.raises(ValueError):
            normalized_cov_fro(ens, HeuristicConfig())

    def test_requires_two_parameters(self):
        ens = _field_ensemble(n=64, seed=2)
        with pytest.raises(ValueError):
            normalized_cov_fro(ens, HeuristicConfig(norm_b=1e-4, norm_t2=1e-5))


class TestMultiParameterHeuristic:
    def test_inverse_norm(self):
        ens = _joint_ensemble(n=1024, seed=9)
        config = HeuristicConfig(norm_b=1e-4, norm_t2=1e-5, tau_min=1e-9, tau_max=1e3)
        norm = normalized_cov_fro(ens, config)
        assert pgh_multi(ens, config) == pytest.approx(1.0 / norm, rel=1e-12)

    @staticmethod
    def _one_hot_ensemble():
        # all posterior mass on one particle collapses the covariance exactly
        rng = np.random.default_rng(1)
        positions = np.column_stack([rng.uniform(1e5, 1e6, 16), rng.uniform(1e4, 1e5, 16)])
        weights = np.zeros(16)
        weights[3] = 1.0
        return ParticleEnsemble(positions, weights, rng)

    def test_collapsed_covariance_saturates(self):
        ens = self._one_hot_ensemble()
        config = HeuristicConfig(norm_b=1e-4, norm_t2=1e-5, tau_max=2e-5)
        with pytest.warns(RuntimeWarning, match="covariance norm is zero"):
            assert pgh_multi(ens, config) == 2e-5

    def test_collapsed_covariance_without_cap_raises(self):
        ens = self._one_hot_ensemble()
        config = HeuristicConfig(norm_b=1e-4, norm_t2=1e-5)
        with pytest.raises(DegenerateEnsembleError):
            pgh_multi(ens, config)


class TestDispatch:
    def test_single_parameter_always_uses_pair_gap(self):
        ens = _field_ensemble(n=256, seed=6)
        config = HeuristicConfig(multiparam_epoch=1, tau_min=1e-9, tau_max=1e-3)
        tau = choose_tau(500, ens, config, np.random.default_rng(0))
        assert 1e-9 <= tau <= 1e-3

    def test_joint_ensemble_switches_at_activation(self):
        ens = _joint_ensemble(n=1024, seed=8)
        config = HeuristicConfig(
            multiparam_epoch=50, norm_b=1e-4, norm_t2=1e-5, tau_min=1e-9, tau_max=1e3
        )
        deterministic = pgh_multi(ens, config)
        # at activation the value is the covariance norm, independent of rng
        assert choose_tau(50, ens, config, np.random.default_rng(1)) == deterministic
        assert choose_tau(51, ens, config, np.random.default_rng(2)) == deterministic
        # before activation the stochastic pair heuristic is in force
        rng = np.random.default_rng(3)
        draws = {choose_tau(49, ens, config, rng) for _ in range(8)}
        assert len(draws) > 1

    def test_epoch_validation(self):
        ens = _field_ensemble(n=64, seed=6)
        with pytest.raises(ValueError):
            choose_tau(0, ens, HeuristicConfig(), np.random.default_rng(0))


class TestDeriveNormalizers:
    def test_reads_support_extremes(self):
        rng = np.random.default_rng(4)
        positions = np.column_stack([rng.uniform(1e5, 2e6, 64), rng.uniform(1e4, 2e5, 64)])
        weights = np.ones(64)
        weights[10] = 0.0
        ens = ParticleEnsemble(positions, weights, rng)
        norm_b, norm_t2 = derive_normalizers(ens)
        support = weights > 0
        assert norm_b == pytest.approx(positions[support, 0].max() / GAMMA_E, rel=1e-12)
        assert norm_t2 == pytest.approx(1.0 / positions[support, 1].max(), rel=1e-12)

    def test_degenerate_cases(self):
        rng = np.random.default_rng(4)
        zero_freq = np.column_stack([np.zeros(8), np.full(8, 1e4)])
        with pytest.raises(DegenerateEnsembleError):
            derive_normalizers(ParticleEnsemble(zero_freq, np.ones(8), rng))
        zero_rate = np.column_stack([np.full(8, 1e6), np.zeros(8)])
        with pytest.raises(DegenerateEnsembleError):
            derive_normalizers(ParticleEnsemble(zero_rate, np.ones(8), rng))

    def test_requires_two_parameters(self):
        ens = _field_ensemble(n=64, seed=1)
        with pytest.raises(ValueError):
            derive_normalizers(ens)
