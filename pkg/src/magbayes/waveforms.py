"""Field waveforms driving the simulated experiment.

Each waveform reports the instantaneous precession frequency omega(t) in
rad/s; conversions from magnetic-field units happen in the constructors.
The Ornstein-Uhlenbeck waveform generates its path lazily but caches every
queried point, so a recorded run can be re-evaluated against the exact
truth it measured.
"""

from __future__ import annotations

import bisect
import math
from typing import Sequence

import numpy as np

from .model import PhysicalConstants

__all__ = [
    "ConstantField",
    "StepwiseField",
    "SinusoidField",
    "ChirpedField",
    "OrnsteinUhlenbeckField",
]


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


class ConstantField:
    """Static field at angular frequency omega0."""

    def __init__(self, omega0: float) -> None:
        self.omega0 = _check_finite("omega0", omega0)
        if self.omega0 < 0.0:
            raise ValueError(f"omega0 must be >= 0, got {self.omega0}")

    @classmethod
    def from_field(
        cls, b0: float, constants: PhysicalConstants = PhysicalConstants()
    ) -> "ConstantField":
        return cls(constants.gamma * b0)

    @property
    def nominal_omega(self) -> float:
        return self.omega0

    def omega_at(self, t: float) -> float:
        return self.omega0


class StepwiseField:
    """Piecewise-constant field, right-continuous at every step edge.

    Args:
        steps: Sequence of (start_time, omega) pairs with strictly
            increasing start times; the first must begin at t = 0.
    """

    def __init__(self, steps: Sequence[Sequence[float]]) -> None:
        if len(steps) < 1:
            raise ValueError("at least one step is required")
        self.times = [float(t) for t, _ in steps]
        self.omegas = [float(w) for _, w in steps]
        if self.times[0] != 0.0:
            raise ValueError(f"first step must start at t = 0, got {self.times[0]}")
        for i in range(1, len(self.times)):
            if self.times[i] <= self.times[i - 1]:
                raise ValueError("step start times must be strictly increasing")
        for w in self.omegas:
            _check_finite("omega", w)
            if w < 0.0:
                raise ValueError(f"omega must be >= 0, got {w}")

    @classmethod
    def from_field_steps(
        cls,
        steps: Sequence[Sequence[float]],
        constants: PhysicalConstants = PhysicalConstants(),
    ) -> "StepwiseField":
        return cls([(t, constants.gamma * b) for t, b in steps])

    @property
    def nominal_omega(self) -> float:
        return self.omegas[0]

    def omega_at(self, t: float) -> float:
        if t < 0.0:
            raise ValueError(f"t must be >= 0, got {t}")
        idx = bisect.bisect_right(self.times, t) - 1
        return self.omegas[idx]


class SinusoidField:
    """Sinusoidal modulation omega(t) = omega0 + w cos(nu t)."""

    def __init__(self, omega0: float, w: float, nu: float) -> None:
        self.omega0 = _check_finite("omega0", omega0)
        self.w = _check_finite("w", w)
        self.nu = _check_finite("nu", nu)
        if self.omega0 <= 0.0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")
        if abs(self.w) >= self.omega0:
            raise ValueError(f"|w| = {abs(self.w)} must stay below omega0 = {self.omega0}")
        if self.nu < 0.0:
            raise ValueError(f"nu must be >= 0, got {self.nu}")

    @property
    def nominal_omega(self) -> float:
        return self.omega0

    def omega_at(self, t: float) -> float:
        return self.omega0 + self.w * math.cos(self.nu * t)


class ChirpedField:
    """Sinusoid whose instantaneous modulation frequency sweeps linearly.

    The modulation phase integrates nu(t) = nu0 - k t, giving

        omega(t) = omega0 + w cos(nu0 t - k t^2 / 2).
    """

    def __init__(self, omega0: float, w: float, nu0: float, k: float) -> None:
        self.omega0 = _check_finite("omega0", omega0)
        self.w = _check_finite("w", w)
        self.nu0 = _check_finite("nu0", nu0)
        self.k = _check_finite("k", k)
        if self.omega0 <= 0.0:
            raise ValueError(f"omega0 must be > 0, got {self.omega0}")
        if abs(self.w) >= self.omega0:
            raise ValueError(f"|w| = {abs(self.w)} must stay below omega0 = {self.omega0}")

    @property
    def nominal_omega(self) -> float:
        return self.omega0

    def omega_at(self, t: float) -> float:
        phase = (self.nu0 - 0.5 * self.k * t) * t
        return self.omega0 + self.w * math.cos(phase)


class OrnsteinUhlenbeckField:
    """Mean-reverting stochastic field.

    Follows d omega = reversion (mean - omega) dt + sqrt(diffusion) dW
    with stationary variance diffusion / (2 reversion).  The path starts
    in the stationary distribution and is extended exactly (no time-step
    discretisation error) at each new query time.  Queried points are
    cached; earlier times can only be re-queried at the exact cached
    instants, which is what replaying a recorded trace does.
    """

    def __init__(self, mean: float, reversion: float, diffusion: float, seed: int) -> None:
        self.mean = _check_finite("mean", mean)
        self.reversion = _check_finite("reversion", reversion)
        self.diffusion = _check_finite("diffusion", diffusion)
        if self.mean < 0.0:
            raise ValueError(f"mean must be >= 0, got {self.mean}")
        if self.reversion <= 0.0:
            raise ValueError(f"reversion must be > 0, got {self.reversion}")
        if self.diffusion < 0.0:
            raise ValueError(f"diffusion must be >= 0, got {self.diffusion}")
        self._rng = np.random.default_rng(seed)
        self._times: list[float] = []
        self._values: list[float] = []

    @property
    def stationary_std(self) -> float:
        return math.sqrt(self.diffusion / (2.0 * self.reversion))

    @property
    def nominal_omega(self) -> float:
        return self.mean

    def omega_at(self, t: float) -> float:
        if t < 0.0:
            raise ValueError(f"t must be >= 0, got {t}")
        if not self._times:
            first = self.mean + self.stationary_std * self._rng.standard_normal()
            self._times.append(0.0)
            self._values.append(first)
        idx = bisect.bisect_left(self._times, t)
        if idx < len(self._times) and self._times[idx] == t:
            return self._values[idx]
        if t < self._times[-1]:
            raise ValueError(
                f"t = {t} lies between generated points; past times can only be "
                "re-queried at exact cached instants"
            )
        dt = t - self._times[-1]
        decay = math.exp(-self.reversion * dt)
        std = self.stationary_std * math.sqrt(1.0 - decay * decay)
        value = (
            self.mean
            + (self._values[-1] - self.mean) * decay
            + std * self._rng.standard_normal()
        )
        self._times.append(t)
        self._values.append(value)
        return value
