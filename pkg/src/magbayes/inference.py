"""Sequential Monte Carlo inference over Ramsey model parameters.

The posterior is carried by a weighted particle ensemble.  Each datum
reweights the particles by its likelihood; when the effective sample size
collapses below a threshold the ensemble is rejuvenated with a
mean-preserving shrinkage resampler.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "DegenerateUpdateError",
    "UniformPrior",
    "GaussianPrior",
    "ResamplerConfig",
    "ParticleBudget",
    "particle_count_rule",
    "ParticleEnsemble",
]

LikelihoodFn = Callable[[np.ndarray, float, int], np.ndarray]


class DegenerateUpdateError(RuntimeError):
    """Every particle assigned zero (or non-finite) posterior weight."""


class UniformPrior:
    """Axis-aligned uniform box prior.

    Args:
        bounds: Sequence of (low, high) pairs, one per model dimension.
    """

    def __init__(self, bounds: Sequence[Sequence[float]]) -> None:
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"each bound must satisfy -inf < low < high < inf, got ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.hard_bounds().T
        return rng.uniform(lo, hi, size=(n, self.dim))

    def mean(self) -> np.ndarray:
        return np.array([(lo + hi) / 2.0 for lo, hi in self.bounds])

    def cov(self) -> np.ndarray:
        return np.diag([(hi - lo) ** 2 / 12.0 for lo, hi in self.bounds])

    def hard_bounds(self) -> np.ndarray:
        """Support box as a (dim, 2) array; resampled particles stay inside."""
        return np.asarray(self.bounds, dtype=float)


class GaussianPrior:
    """Multivariate normal prior with nonnegative physical support.

    Frequencies and dephasing rates are nonnegative, so samples are
    clipped at zero and the same floor is enforced after resampling.
    """

    def __init__(self, mean: Sequence[float], cov: Sequence[Sequence[float]]) -> None:
        self._mean = np.atleast_1d(np.asarray(mean, dtype=float)).copy()
        self._cov = np.atleast_2d(np.asarray(cov, dtype=float)).copy()
        if self._mean.ndim != 1:
            raise ValueError("mean must be one-dimensional")
        if self._cov.shape != (self._mean.size, self._mean.size):
            raise ValueError(f"cov shape {self._cov.shape} does not match dimension {self._mean.size}")
        if not np.allclose(self._cov, self._cov.T):
            raise ValueError("cov must be symmetric")
        if np.any(np.linalg.eigvalsh(self._cov) < -1e-12 * max(1.0, np.trace(self._cov))):
            raise ValueError("cov must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self._mean.size

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        draws = rng.multivariate_normal(self._mean, self._cov, size=n, method="eigh")
        return np.clip(draws, 0.0, None)

    def mean(self) -> np.ndarray:
        return self._mean.copy()

    def cov(self) -> np.ndarray:
        return self._cov.copy()

    def hard_bounds(self) -> np.ndarray:
        return np.column_stack([np.zeros(self.dim), np.full(self.dim, np.inf)])


@dataclass(frozen=True)
class ResamplerConfig:
    """Shrinkage resampler settings.

    Attributes:
        a: Shrinkage factor in (0, 1]; positions contract towards the
            ensemble mean by a and receive noise of covariance
            (1 - a^2) Sigma, preserving the first two moments.
        threshold: Resample when ESS falls below threshold * n.
    """

    a: float = 0.9
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.a <= 1.0):
            raise ValueError(f"a must lie in (0, 1], got {self.a}")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


class ParticleBudget(NamedTuple):
    """Ensemble settings matched to the per-epoch repetition count."""

    n_particles: int
    threshold: float
    a: float

    def resampler(self) -> ResamplerConfig:
        return ResamplerConfig(a=self.a, threshold=self.threshold)


def particle_count_rule(m: int, m_max: int) -> ParticleBudget:
    """Empirical ensemble sizing for a given bunching factor m.

        n = round(25000 / (ln m + 1))
        threshold = max(0.1, 0.5 - 0.4 / ln m)   (0.5 at m = 1)
        a = 0.9 + 0.08 m / m_max

    Heavier bunching yields cleaner data per epoch, so fewer particles
    are needed while resampling can be triggered more conservatively.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m_max < m:
        raise ValueError(f"m_max must be >= m, got m={m}, m_max={m_max}")
    log_m = math.log(m)
    n = int(round(25000.0 / (log_m + 1.0)))
    threshold = 0.5 if m == 1 else max(0.1, 0.5 - 0.4 / log_m)
    a = 0.9 + 0.08 * m / m_max
    return ParticleBudget(n_particles=n, threshold=threshold, a=a)


_MAX_BOUND_REDRAWS = 100


class ParticleEnsemble:
    """Weighted particle cloud over (omega,) or (omega, inv_t2).

    Particle positions and weights are plain arrays; all randomness flows
    through the generator owned by the ensemble, so a fixed seed fixes the
    whole inference trajectory.
    """

    def __init__(
        self,
        positions: np.ndarray,
        weights: np.ndarray,
        rng: np.random.Generator,
        bounds: np.ndarray | None = None,
    ) -> None:
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if positions.shape[0] != weights.shape[0]:
            raise ValueError("positions and weights disagree on particle count")
        if positions.shape[0] < 2:
            raise ValueError("at least 2 particles are required")
        if np.any(weights < 0.0) or not np.isfinite(weights).all():
            raise ValueError("weights must be finite and nonnegative")
        total = weights.sum()
        if total <= 0.0:
            raise ValueError("weights must have positive total mass")
        self.positions = positions
        self.weights = weights / total
        self.rng = rng
        if bounds is None:
            bounds = np.column_stack(
                [np.full(positions.shape[1], -np.inf), np.full(positions.shape[1], np.inf)]
            )
        self.bounds = np.asarray(bounds, dtype=float)
        self.n_resamples = 0
        self.n_degenerate_resamples = 0
        self.n_resets = 0

    @classmethod
    def from_prior(
        cls,
        prior: UniformPrior | GaussianPrior,
        n_particles: int,
        seed: int | np.random.SeedSequence | np.random.Generator,
    ) -> "ParticleEnsemble":
        """Draw a fresh equally-weighted ensemble from the prior."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        positions = prior.sample(rng, n_particles)
        weights = np.full(n_particles, 1.0 / n_particles)
        return cls(positions, weights, rng, bounds=prior.hard_bounds())

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def bayes_update(self, tau: float, outcome: int, likelihood: LikelihoodFn) -> None:
        """Multiply weights by the datum likelihood and renormalise.

        Scaling by the largest likelihood before the multiply keeps the
        update finite when all likelihoods underflow towards zero.
        """
        like = np.asarray(likelihood(self.positions, tau, outcome), dtype=float)
        peak = like.max()
        if not math.isfinite(peak) or peak <= 0.0:
            raise DegenerateUpdateError(
                f"likelihood peak is {peak}; no particle supports the datum"
            )
        self.weights *= like / peak
        total = self.weights.sum()
        if not math.isfinite(total) or total <= 0.0:
            raise DegenerateUpdateError("posterior weights collapsed to zero total mass")
        self.weights /= total

    def effective_sample_size(self) -> float:
        """ESS = 1 / sum(w_i^2), in (0, n]."""
        return 1.0 / float(np.sum(self.weights * self.weights))

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Weighted posterior mean and symmetric covariance."""
        mean = self.weights @ self.positions
        diff = self.positions - mean
        cov = (self.weights[:, None] * diff).T @ diff
        cov = 0.5 * (cov + cov.T)
        return mean, cov

    def resample_liu_west(self, config: ResamplerConfig) -> None:
        """Rejuvenate the ensemble, preserving posterior mean and covariance.

        Parents are drawn multinomially by weight, shrunk towards the mean
        by the factor a and jittered with gaussian noise of covariance
        (1 - a^2) Sigma.  A singular covariance degrades to plain
        multinomial resampling with a warning.  Out-of-bounds proposals
        are redrawn a bounded number of times, then clamped.
        """
        n, d = self.positions.shape
        mean, cov = self.moments()
        parent_idx = self.rng.choice(n, size=n, p=self.weights)
        shrunk = config.a * self.positions[parent_idx] + (1.0 - config.a) * mean

        noise_cov = (1.0 - config.a * config.a) * cov
        scale = None
        if np.trace(noise_cov) > 0.0:
            try:
                scale = np.linalg.cholesky(noise_cov)
            except np.linalg.LinAlgError:
                jitter = 1e-12 * np.trace(noise_cov) / d
                try:
                    scale = np.linalg.cholesky(noise_cov + jitter * np.eye(d))
                except np.linalg.LinAlgError:
                    scale = None
        if scale is None:
            warnings.warn(
                "singular posterior covariance; falling back to multinomial resampling",
                RuntimeWarning,
                stacklevel=2,
            )
            self.n_degenerate_resamples += 1
            new_positions = shrunk
        else:
            new_positions = shrunk + self.rng.standard_normal((n, d)) @ scale.T
            lo, hi = self.bounds[:, 0], self.bounds[:, 1]
            bad = np.any((new_positions < lo) | (new_positions > hi), axis=1)
            attempts = 0
            while bad.any() and attempts < _MAX_BOUND_REDRAWS:
                k = int(bad.sum())
                new_positions[bad] = shrunk[bad] + self.rng.standard_normal((k, d)) @ scale.T
                bad = np.any((new_positions < lo) | (new_positions > hi), axis=1)
                attempts += 1
            if bad.any():
                np.clip(new_positions, lo, hi, out=new_positions)

        self.positions = new_positions
        self.weights = np.full(n, 1.0 / n)
        self.n_resamples += 1

    def maybe_resample(self, config: ResamplerConfig) -> bool:
        """Resample when ESS drops below threshold * n; report whether it did."""
        if self.effective_sample_size() < config.threshold * self.n_particles:
            self.resample_liu_west(config)
            return True
        return False

    def reset(self, prior: UniformPrior | GaussianPrior) -> None:
        """Discard the posterior and redraw every particle from the prior."""
        if prior.dim != self.dim:
            raise ValueError(f"prior dimension {prior.dim} does not match ensemble {self.dim}")
        self.positions = prior.sample(self.rng, self.n_particles)
        self.weights = np.full(self.n_particles, 1.0 / self.n_particles)
        self.bounds = prior.hard_bounds()
        self.n_resets += 1
