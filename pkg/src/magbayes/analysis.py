"""Precision, sensitivity, and spectroscopy analysis of recorded runs.

Two time currencies appear here.  T is the accumulated phase time, the sum
of the chosen evolution times, and governs the Heisenberg-style scaling
eta^2 = sigma^2(B) T.  T_bar additionally bills per-sequence hardware
overheads and the per-epoch computation time,

    T_bar = sum_i (tau_i + tau_comp_i) + N M (t_laser + t_wait + t_ttl + t_mw),

and yields the absolute sensitivity eta_bar = sigma(B) sqrt(T_bar).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .fringeio import FringeDataset
from .model import PhysicalConstants

if TYPE_CHECKING:
    from .inference import GaussianPrior, UniformPrior
    from .protocol import RunTrace

__all__ = [
    "NoPeakError",
    "OverheadBudget",
    "ScalingReport",
    "SpectrumEstimate",
    "sensitivity",
    "absolute_time",
    "fit_scaling",
    "bootstrap_error",
    "saturation_epoch",
    "percentile_bands",
    "quadratic_loss",
    "fft_estimate",
    "prior_information",
]


class NoPeakError(RuntimeError):
    """The fringe spectrum has no peak that clears the noise floor."""


@dataclass(frozen=True)
class OverheadBudget:
    """Fixed per-sequence hardware overheads and computation cost.

    Attributes:
        tau_laser: Optical initialisation/readout pulse, seconds.
        tau_wait: Relaxation wait after the laser pulse, seconds.
        tau_ttl: Trigger latency, seconds.
        tau_mw: Total microwave pulse duration, seconds.
        tau_comp_per_particle: Per-particle, per-epoch inference cost used
            when no measured computation time is available.
    """

    tau_laser: float = 3.0e-6
    tau_wait: float = 1.0e-6
    tau_ttl: float = 20.0e-9
    tau_mw: float = 50.0e-9
    tau_comp_per_particle: float = 0.4e-6

    def __post_init__(self) -> None:
        for name in ("tau_laser", "tau_wait", "tau_ttl", "tau_mw", "tau_comp_per_particle"):
            value = getattr(self, name)
            if value < 0.0 or not math.isfinite(value):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def per_sequence(self) -> float:
        """Hardware overhead of one Ramsey sequence, excluding tau itself."""
        return self.tau_laser + self.tau_wait + self.tau_ttl + self.tau_mw


@dataclass(frozen=True)
class ScalingReport:
    """Log-log slope of a precision series over a fit window."""

    exponent: float
    exponent_err: float
    fit_start: int
    fit_stop: int
    n_points: int


@dataclass(frozen=True)
class SpectrumEstimate:
    """Fringe spectroscopy result.

    sigma_omega is the half width at half maximum of the fitted
    Lorentzian line, reported in rad/s like omega_peak.
    """

    omega_peak: float
    sigma_omega: float
    amplitude: float
    b_peak: float
    b_sigma: float
    n_points: int


def sensitivity(trace: "RunTrace") -> tuple[np.ndarray, np.ndarray]:
    """Per-epoch phase time T and sensitivity eta = sigma(B) sqrt(T)."""
    total_tau = np.cumsum(trace.taus)
    eta = (trace.omega_err / trace.gamma) * np.sqrt(total_tau)
    return total_tau, eta


def absolute_time(
    trace: "RunTrace",
    budget: OverheadBudget = OverheadBudget(),
    comp: float | str = "auto",
) -> np.ndarray:
    """Cumulative absolute run time T_bar per epoch.

    Args:
        trace: Recorded run.
        budget: Overhead constants.
        comp: Per-epoch computation time policy: "auto" uses measured
            values when the trace has them and falls back to
            n_particles * tau_comp_per_particle; "measured" and "budget"
            force one side; a number fixes the per-epoch cost directly.

    Returns:
        Array of T_bar after each epoch, seconds.
    """
    taus = trace.taus
    n = taus.size
    measured = trace.tau_comps
    if isinstance(comp, str):
        if comp not in ("auto", "measured", "budget"):
            raise ValueError(f"unknown comp policy {comp!r}")
        have_measured = measured is not None and np.isfinite(measured).all()
        if comp == "measured" and not have_measured:
            raise ValueError("trace carries no measured computation times")
        if comp == "auto":
            comp = "measured" if have_measured else "budget"
        if comp == "measured":
            tau_comp = measured
        else:
            tau_comp = np.full(n, trace.n_particles * budget.tau_comp_per_particle)
    else:
        if comp < 0.0:
            raise ValueError(f"comp must be >= 0, got {comp}")
        tau_comp = np.full(n, float(comp))
    # Each of the m sequences carries its own precession and overhead.
    overhead = np.arange(1, n + 1) * (trace.m * budget.per_sequence)
    return np.cumsum(trace.m * taus + tau_comp) + overhead


def fit_scaling(
    x: Sequence[float],
    y: Sequence[float],
    fit_range: tuple[int, int] | None = None,
) -> ScalingReport:
    """Least-squares slope of log y against log x.

    Args:
        x, y: Positive series, e.g. (T, eta^2) or (epoch, sigma).
        fit_range: Half-open index window (start, stop); whole series
            when omitted.

    Returns:
        ScalingReport with the slope and its standard error.
    """
    x = np.asanyarray(x, dtype=float)
    y = np.asanyarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be one-dimensional with equal length")
    start, stop = fit_range if fit_range is not None else (0, x.size)
    if not (0 <= start < stop <= x.size):
        raise ValueError(f"fit range ({start}, {stop}) is not a valid window into {x.size} points")
    xs, ys = x[start:stop], y[start:stop]
    if xs.size < 3:
        raise ValueError("at least 3 points are needed for a scaling fit")
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("scaling fits require strictly positive series")
    lx, ly = np.log(xs), np.log(ys)
    lx_c = lx - lx.mean()
    sxx = float(lx_c @ lx_c)
    if sxx == 0.0:
        raise ValueError("x values are all identical in the fit window")
    slope = float(lx_c @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    residual = ly - (slope * lx + intercept)
    dof = xs.size - 2
    err = math.sqrt(float(residual @ residual) / dof / sxx) if dof > 0 else float("nan")
    return ScalingReport(
        exponent=slope,
        exponent_err=err,
        fit_start=start,
        fit_stop=stop,
        n_points=xs.size,
    )


def bootstrap_error(samples: Sequence[float], r: int | None = None, seed: int = 0) -> float:
    """Bootstrap error of the median of per-run scaling samples.

    Resamples r values with replacement floor(r / 10) times and returns
    the standard deviation of the resample medians; r = 10 therefore
    yields a single resample and an error of exactly 0.
    """
    samples = np.asarray(samples, dtype=float)
    if r is None:
        r = samples.size
    if r < 10:
        raise ValueError(f"bootstrap needs r >= 10, got {r}")
    if samples.size < 1:
        raise ValueError("samples must be non-empty")
    rng = np.random.default_rng(seed)
    medians = [
        float(np.median(rng.choice(samples, size=r, replace=True)))
        for _ in range(r // 10)
    ]
    return float(np.std(medians))


def saturation_epoch(
    median_taus: Sequence[float], tau_max: float, fraction: float = 0.95
) -> int | None:
    """First index where the median tau reaches fraction * tau_max, if any."""
    if tau_max <= 0.0:
        raise ValueError(f"tau_max must be > 0, got {tau_max}")
    hit = np.asarray(median_taus, dtype=float) >= fraction * tau_max
    if not hit.any():
        return None
    return int(np.argmax(hit))


def percentile_bands(values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Median and 68.27% band (15.865th / 84.135th percentiles) across runs.

    Args:
        values: Array with runs along the first axis.

    Returns:
        (median, lower, upper), each with the remaining shape.
    """
    values = np.asarray(values, dtype=float)
    lower, median, upper = np.percentile(values, [15.865, 50.0, 84.135], axis=0)
    return median, lower, upper


def quadratic_loss(estimate, truth, norms=None) -> float:
    """Squared estimation error, normalised per parameter when multivariate."""
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if estimate.shape != truth.shape:
        raise ValueError("estimate and truth must have the same shape")
    if norms is None:
        norms = np.ones_like(estimate)
    else:
        norms = np.atleast_1d(np.asarray(norms, dtype=float))
        if norms.shape != estimate.shape:
            raise ValueError("norms must match the parameter shape")
        if np.any(norms <= 0.0):
            raise ValueError("norms must be positive")
    z = (estimate - truth) / norms
    return float(z @ z)


def _lorentzian(f, amplitude, center, hwhm):
    return amplitude / (1.0 + ((f - center) / hwhm) ** 2)


def fft_estimate(
    dataset: FringeDataset,
    min_points: int = 10,
    peak_threshold: float = 5.0,
) -> SpectrumEstimate:
    """Non-adaptive frequency estimate from the full fringe.

    The mean-subtracted fringe is Fourier transformed on its uniform grid;
    the dominant bin seeds a Lorentzian least-squares fit over +-5 bins
    whose centre gives omega_peak and whose half width at half maximum is
    reported as sigma_omega.

    Raises:
        ValueError: Fewer than ``min_points`` grid points.
        NoPeakError: No bin clears ``peak_threshold`` times the median
            spectral magnitude (a flat or noise-only fringe).
    """
    if dataset.n_tau < min_points:
        raise ValueError(
            f"spectroscopy needs at least {min_points} points, got {dataset.n_tau}"
        )
    signal = dataset.mean_normalized()
    signal = signal - signal.mean()
    spectrum = np.abs(np.fft.rfft(signal))
    freqs = np.fft.rfftfreq(dataset.n_tau, d=dataset.dtau)
    if spectrum.size < 3:
        raise ValueError("tau grid too short to resolve any frequency")

    body = spectrum[1:]
    k = 1 + int(np.argmax(body))
    floor = float(np.median(body))
    if floor > 0.0 and spectrum[k] < peak_threshold * floor:
        raise NoPeakError(
            f"peak magnitude {spectrum[k]:.3g} is below {peak_threshold} x "
            f"median magnitude {floor:.3g}"
        )
    if spectrum[k] == 0.0:
        raise NoPeakError("spectrum is identically zero")

    df = freqs[1] - freqs[0]
    lo = max(1, k - 5)
    hi = min(spectrum.size, k + 6)
    window_f = freqs[lo:hi]
    window_s = spectrum[lo:hi]
    p0 = (float(spectrum[k]), float(freqs[k]), df)
    try:
        popt, _ = curve_fit(
            _lorentzian,
            window_f,
            window_s,
            p0=p0,
            bounds=(
                [0.0, freqs[lo], df * 1e-3],
                [np.inf, freqs[hi - 1], (hi - lo) * df * 10.0],
            ),
            maxfev=10000,
        )
        amplitude, f_center, hwhm = (float(v) for v in popt)
    except RuntimeError:
        warnings.warn(
            "Lorentzian fit did not converge; reporting the discrete peak",
            RuntimeWarning,
            stacklevel=2,
        )
        amplitude, f_center, hwhm = float(spectrum[k]), float(freqs[k]), float(df)
    omega_peak = 2.0 * math.pi * f_center
    sigma_omega = 2.0 * math.pi * hwhm
    return SpectrumEstimate(
        omega_peak=omega_peak,
        sigma_omega=sigma_omega,
        amplitude=amplitude,
        b_peak=omega_peak / dataset.gamma,
        b_sigma=sigma_omega / dataset.gamma,
        n_points=dataset.n_tau,
    )


def prior_information(
    prior: "UniformPrior | GaussianPrior",
    constants: PhysicalConstants = PhysicalConstants(),
) -> float:
    """Prior information J_pi = 1 / var(B) in T^-2.

    Non-gaussian priors enter through their variance, i.e. their gaussian
    moment approximation, which is how they feed the Bayesian bound.
    """
    var_omega = float(prior.cov()[0, 0])
    if var_omega <= 0.0:
        raise ValueError("prior variance must be positive")
    return constants.gamma**2 / var_omega
