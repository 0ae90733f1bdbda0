"""Ramsey interferometry outcome model for a single spin.

A free-evolution interval tau maps the spin's Larmor frequency omega onto
the probability of reading the spin back in its initial state.  Dephasing
enters through the rate Gamma = 1 / T2*, stored here as ``inv_t2`` so the
no-dephasing case is the finite value 0 instead of an infinity.

Frequencies are kept in angular units (rad/s) throughout the package; the
magnetic field B = omega / gamma appears only at input/output boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GAMMA_E",
    "PhysicalConstants",
    "ModelParams",
    "ReadoutModel",
    "PhaseSingularityError",
    "ramsey_p0",
    "likelihood_ramsey",
    "likelihood_lossy",
    "RamseyLikelihood",
    "fisher_information",
    "fisher_bound_dephasing",
    "van_trees_bound",
    "omega_from_field",
    "field_from_omega",
]

# Electron gyromagnetic ratio, rad s^-1 T^-1 (2 pi x 28 GHz/T).
GAMMA_E = 2.0 * math.pi * 28.0e9


class PhaseSingularityError(ValueError):
    """The dephasing-limited bound is evaluated at a fringe node."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Physical constants of the probe spin.

    Attributes:
        gamma: Gyromagnetic ratio in rad s^-1 T^-1.
    """

    gamma: float = GAMMA_E

    def __post_init__(self) -> None:
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass(frozen=True)
class ModelParams:
    """Point in model space: Larmor frequency and optional dephasing rate.

    Attributes:
        omega: Angular precession frequency in rad/s, >= 0.
        inv_t2: Dephasing rate Gamma = 1 / T2* in 1/s, or None when the
            probe is treated as dephasing-free (T2* = infinity).
    """

    omega: float
    inv_t2: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.omega) and self.omega >= 0.0):
            raise ValueError(f"omega must be finite and >= 0, got {self.omega}")
        if self.inv_t2 is not None:
            if not (math.isfinite(self.inv_t2) and self.inv_t2 >= 0.0):
                raise ValueError(f"inv_t2 must be finite and >= 0, got {self.inv_t2}")

    @property
    def gamma_dephasing(self) -> float:
        """Dephasing rate with the absent case mapped to 0."""
        return 0.0 if self.inv_t2 is None else self.inv_t2


@dataclass(frozen=True)
class ReadoutModel:
    """Photon-counting readout of the spin state.

    Attributes:
        xi: Scale applied to the outcome-1 likelihood; 1 is ideal readout,
            values below 1 describe photon loss biased against detecting
            the fluorescent state.
        n_bar: Mean photon count over a reference fringe, threshold for
            majority voting.
        n_max: Reference maximum photon count used to normalise counts for
            probabilistic outcome extraction.
        m: Sequence repetitions bunched into one epoch.
    """

    xi: float = 1.0
    n_bar: float = 0.5
    n_max: float = 1.0
    m: int = 1

    def __post_init__(self) -> None:
        if not (0.0 < self.xi <= 1.0):
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        if self.n_bar < 0.0:
            raise ValueError(f"n_bar must be >= 0, got {self.n_bar}")
        if self.n_max <= 0.0:
            raise ValueError(f"n_max must be > 0, got {self.n_max}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


def omega_from_field(b: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Convert a magnetic field in tesla to angular frequency in rad/s."""
    return constants.gamma * b


def field_from_omega(omega, constants: PhysicalConstants = PhysicalConstants()):
    """Convert angular frequency in rad/s to magnetic field in tesla."""
    return omega / constants.gamma


def ramsey_p0(omega, tau, inv_t2=0.0):
    """Probability of outcome 0 for a Ramsey sequence of duration tau.

        L(0 | omega, Gamma; tau) = exp(-tau Gamma) cos^2(omega tau / 2)
                                   + (1 - exp(-tau Gamma)) / 2

    Vectorised over ``omega`` and ``inv_t2``; the complement L(1) should be
    computed as ``1 - ramsey_p0(...)`` so the two outcomes sum to one
    exactly in floating point.

    Args:
        omega: Angular frequency in rad/s, scalar or array.
        tau: Free evolution time in seconds.
        inv_t2: Dephasing rate Gamma in 1/s, scalar or array broadcastable
            against omega.

    Returns:
        Outcome-0 probability with the broadcast shape of the inputs.
    """
    visibility = np.exp(-tau * np.asarray(inv_t2, dtype=float))
    c = np.cos(np.asarray(omega, dtype=float) * (0.5 * tau))
    return visibility * c * c + 0.5 * (1.0 - visibility)


def likelihood_ramsey(params: ModelParams, tau: float, outcome: int) -> float:
    """Likelihood of a single binary Ramsey outcome.

    Args:
        params: Model point (omega, optional dephasing rate).
        tau: Free evolution time in seconds, >= 0.
        outcome: Measured datum, 0 or 1.

    Returns:
        Probability of ``outcome`` under ``params``, in [0, 1].
    """
    if tau < 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    p0 = float(ramsey_p0(params.omega, tau, params.gamma_dephasing))
    return p0 if outcome == 0 else 1.0 - p0


def likelihood_lossy(
    params: ModelParams, tau: float, outcome: int, readout: ReadoutModel
) -> float:
    """Ramsey likelihood under lossy readout.

    The outcome-1 branch is rescaled by the readout factor xi,

        L'(1) = xi * L(1),    L'(0) = 1 - L'(1),

    which models a detector that under-reports the fluorescent state.
    ``xi = 1`` reduces to :func:`likelihood_ramsey` exactly.
    """
    if tau < 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome}")
    p0 = float(ramsey_p0(params.omega, tau, params.gamma_dephasing))
    p1 = readout.xi * (1.0 - p0)
    return p1 if outcome == 1 else 1.0 - p1


@dataclass(frozen=True)
class RamseyLikelihood:
    """Vectorised likelihood evaluator for particle ensembles.

    Positions may be one-dimensional (omega only, dephasing fixed at
    ``inv_t2``) or two-dimensional columns (omega, inv_t2) when T2* is
    estimated jointly.

    Attributes:
        inv_t2: Dephasing rate applied to one-parameter ensembles.
        xi: Readout-loss scale on the outcome-1 likelihood, 1 when ideal.
    """

    inv_t2: float = 0.0
    xi: float = 1.0

    def __post_init__(self) -> None:
        if self.inv_t2 < 0.0:
            raise ValueError(f"inv_t2 must be >= 0, got {self.inv_t2}")
        if not (0.0 < self.xi <= 1.0):
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")

    def __call__(self, positions: np.ndarray, tau: float, outcome: int) -> np.ndarray:
        pos = np.asarray(positions, dtype=float)
        if pos.ndim == 2 and pos.shape[1] >= 2:
            p0 = ramsey_p0(pos[:, 0], tau, pos[:, 1])
        else:
            p0 = ramsey_p0(pos.reshape(-1) if pos.ndim == 1 else pos[:, 0], tau, self.inv_t2)
        if outcome == 0:
            if self.xi == 1.0:
                return p0
            return 1.0 - self.xi * (1.0 - p0)
        return self.xi * (1.0 - p0)


def fisher_information(tau: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Fisher information about B carried by one dephasing-free outcome.

    Equals gamma^2 tau^2 in T^-2 and is independent of the true field, so
    it doubles as the per-shot information budget used in variance bounds.
    """
    if tau < 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return (constants.gamma * tau) ** 2


def fisher_bound_dephasing(
    b: float,
    tau: float,
    inv_t2: float,
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """Single-shot variance bound when dephasing is the only noise.

    With x = B gamma tau and G = Gamma tau the bound reads

        csc^2(x) * (e^{2G} - (e^G - 1)^2 cos^2(x))
        / (gamma^2 tau^2 (e^G - 1)^2)

    in T^2.  Diverges at fringe nodes sin(x) = 0, where one outcome is
    uninformative; those points raise :class:`PhaseSingularityError`.
    """
    if tau <= 0.0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if inv_t2 <= 0.0:
        raise ValueError(f"inv_t2 must be > 0 for the dephasing-limited bound, got {inv_t2}")
    x = b * constants.gamma * tau
    sin_x = math.sin(x)
    if abs(sin_x) < 1e-12:
        raise PhaseSingularityError(f"bound diverges at sin(B gamma tau) = 0 (x = {x})")
    g = inv_t2 * tau
    em1 = math.expm1(g)
    numerator = math.exp(2.0 * g) - em1 * em1 * math.cos(x) ** 2
    return numerator / (sin_x * sin_x * (constants.gamma * tau * em1) ** 2)


def van_trees_bound(
    j_prior: float,
    taus,
    inv_t2=0.0,
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """Bayesian Cramer-Rao bound on the mean squared error of B.

    Combines prior information with the dephasing-attenuated information
    of a sequence of Ramsey experiments,

        var(B) >= 1 / (J_prior + sum_i (gamma tau_i e^{-tau_i Gamma_i})^2).

    Args:
        j_prior: Prior information J_pi = 1 / var_prior(B), >= 0, in T^-2.
        taus: Sequence of evolution times in seconds.
        inv_t2: Dephasing rate(s), scalar or per-experiment array.
        constants: Probe constants.

    Returns:
        Lower bound in T^2; ``inf`` when total information is zero.
    """
    if j_prior < 0.0:
        raise ValueError(f"j_prior must be >= 0, got {j_prior}")
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0.0):
        raise ValueError("all taus must be >= 0")
    info = j_prior + np.sum(
        (constants.gamma * taus * np.exp(-taus * np.asarray(inv_t2, dtype=float))) ** 2
    )
    if info == 0.0:
        return math.inf
    return 1.0 / float(info)
