"""Adaptive choice of the Ramsey free-evolution time.

The particle guess heuristic keys the next evolution time to the current
posterior spread: two particles are drawn from the ensemble and their
frequency gap sets tau = 1 / |omega_0 - omega_1|, which is approximately
the inverse posterior standard deviation.  Once the joint (omega, inv_t2)
posterior matters, tau switches to the inverse Frobenius norm of the
normalised covariance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .inference import ParticleEnsemble
from .model import PhysicalConstants

__all__ = [
    "DegenerateEnsembleError",
    "HeuristicConfig",
    "pgh_single",
    "pgh_multi",
    "choose_tau",
    "derive_normalizers",
    "normalized_cov_fro",
]

_MAX_COLLISION_REDRAWS = 100

# Particles with inv_t2 exactly 0 enter the covariance as this multiple of
# the T2* normaliser instead of an infinite coherence time.
_T2_SENTINEL_FACTOR = 1e6


class DegenerateEnsembleError(RuntimeError):
    """All posterior mass sits on a single frequency value."""


@dataclass(frozen=True)
class HeuristicConfig:
    """Evolution-time heuristic settings.

    Attributes:
        tau_min: Floor on tau in seconds; run loops default this to the
            data source's sampling step when left unset.
        tau_max: Cap on tau in seconds, None for uncapped.
        multiparam_epoch: First epoch (1-based) at which two-parameter
            ensembles switch to the covariance-norm heuristic.
        norm_b: Field normaliser b in tesla for the covariance heuristic;
            derived from the ensemble at activation when unset.
        norm_t2: Coherence-time normaliser t2 in seconds; derived at
            activation when unset.
    """

    tau_min: float | None = None
    tau_max: float | None = None
    multiparam_epoch: int = 100
    norm_b: float | None = None
    norm_t2: float | None = None

    def __post_init__(self) -> None:
        if self.tau_min is not None and self.tau_min <= 0.0:
            raise ValueError(f"tau_min must be > 0, got {self.tau_min}")
        if self.tau_max is not None and self.tau_max <= 0.0:
            raise ValueError(f"tau_max must be > 0, got {self.tau_max}")
        if self.tau_min is not None and self.tau_max is not None and self.tau_min > self.tau_max:
            raise ValueError(f"tau_min {self.tau_min} exceeds tau_max {self.tau_max}")
        if self.multiparam_epoch < 1:
            raise ValueError(f"multiparam_epoch must be >= 1, got {self.multiparam_epoch}")
        if self.norm_b is not None and self.norm_b <= 0.0:
            raise ValueError(f"norm_b must be > 0, got {self.norm_b}")
        if self.norm_t2 is not None and self.norm_t2 <= 0.0:
            raise ValueError(f"norm_t2 must be > 0, got {self.norm_t2}")

    def clamp(self, tau: float) -> float:
        if self.tau_min is not None:
            tau = max(tau, self.tau_min)
        if self.tau_max is not None:
            tau = min(tau, self.tau_max)
        return tau


def pgh_single(
    ensemble: ParticleEnsemble,
    config: HeuristicConfig,
    rng: np.random.Generator,
) -> float:
    """Particle guess heuristic over the frequency marginal.

    Draws two particles by weight and returns tau = 1 / |omega_0 - omega_1|
    clamped to the configured window.  Colliding draws are retried a
    bounded number of times; an ensemble whose weighted support has
    collapsed to one frequency raises :class:`DegenerateEnsembleError`.
    """
    omegas = ensemble.positions[:, 0]
    for _ in range(_MAX_COLLISION_REDRAWS):
        i, j = rng.choice(ensemble.n_particles, size=2, p=ensemble.weights)
        gap = abs(omegas[i] - omegas[j])
        if gap > 0.0:
            return config.clamp(1.0 / gap)
    raise DegenerateEnsembleError(
        f"no distinct frequency pair found in {_MAX_COLLISION_REDRAWS} draws"
    )


def normalized_cov_fro(
    ensemble: ParticleEnsemble,
    config: HeuristicConfig,
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """Frobenius norm of the posterior covariance of (B/norm_b, T2*/norm_t2).

    Particles with inv_t2 = 0 contribute a large finite coherence time
    (1e6 norm_t2) instead of an infinity; the sentinel exists only inside
    this covariance computation.
    """
    if ensemble.dim < 2:
        raise ValueError("the normalised covariance requires a two-parameter ensemble")
    if config.norm_b is None or config.norm_t2 is None:
        raise ValueError("norm_b and norm_t2 must be set (or derived) first")
    b = ensemble.positions[:, 0] / constants.gamma / config.norm_b
    inv_t2 = ensemble.positions[:, 1]
    t2 = np.empty_like(inv_t2)
    zero = inv_t2 == 0.0
    t2[~zero] = 1.0 / inv_t2[~zero]
    t2[zero] = _T2_SENTINEL_FACTOR * config.norm_t2
    t2 = t2 / config.norm_t2

    coords = np.column_stack([b, t2])
    mean = ensemble.weights @ coords
    diff = coords - mean
    cov = (ensemble.weights[:, None] * diff).T @ diff
    return float(np.linalg.norm(cov, "fro"))


def pgh_multi(
    ensemble: ParticleEnsemble,
    config: HeuristicConfig,
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """Covariance-norm heuristic for joint (omega, inv_t2) estimation.

    The posterior covariance of the normalised coordinates
    (B / norm_b, T2* / norm_t2) is formed and

        tau = 1 / ||Sigma_normalised||_F

    is returned, clamped to the configured window.  A fully collapsed
    covariance saturates to tau_max.
    """
    norm = normalized_cov_fro(ensemble, config, constants)
    if norm == 0.0:
        if config.tau_max is None:
            raise DegenerateEnsembleError("covariance collapsed and no tau_max to saturate to")
        warnings.warn("covariance norm is zero; tau saturated", RuntimeWarning, stacklevel=2)
        return config.tau_max
    return config.clamp(1.0 / norm)


def choose_tau(
    epoch: int,
    ensemble: ParticleEnsemble,
    config: HeuristicConfig,
    rng: np.random.Generator,
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """Dispatch between the single- and multi-parameter heuristics.

    Two-parameter ensembles use the frequency marginal until the
    activation epoch, then the normalised covariance norm.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if ensemble.dim >= 2 and epoch >= config.multiparam_epoch:
        return pgh_multi(ensemble, config, constants)
    return pgh_single(ensemble, config, rng)


def derive_normalizers(
    ensemble: ParticleEnsemble,
    constants: PhysicalConstants = PhysicalConstants(),
) -> tuple[float, float]:
    """Normalisers from the current posterior support.

    norm_b is the largest field and norm_t2 the smallest coherence time
    carried by any particle with nonzero weight, mirroring how operating
    bounds would be read off a calibration posterior.
    """
    if ensemble.dim < 2:
        raise ValueError("normalizers require a two-parameter ensemble")
    support = ensemble.weights > 0.0
    if not support.any():
        raise DegenerateEnsembleError("ensemble has no support")
    omegas = ensemble.positions[support, 0]
    inv_t2 = ensemble.positions[support, 1]
    norm_b = float(omegas.max() / constants.gamma)
    if norm_b <= 0.0:
        raise DegenerateEnsembleError("cannot derive norm_b from an all-zero frequency support")
    finite = inv_t2 > 0.0
    if not finite.any():
        raise DegenerateEnsembleError("cannot derive norm_t2 when every particle has inv_t2 = 0")
    norm_t2 = float(1.0 / inv_t2[finite].max())
    return norm_b, norm_t2
