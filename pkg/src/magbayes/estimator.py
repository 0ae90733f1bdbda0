"""Scikit-learn style front ends over the run loops.

These wrappers exist so the adaptive protocol composes with the wider
Python ecosystem (cloning, parameter grids, pipelines); the functional
API in :mod:`magbayes.protocol` remains the primary interface for scripted
studies.  Parameters are stored verbatim at construction, sklearn style,
and validated when ``fit`` runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .experiments import (
    MajorityVote,
    ProbabilisticVote,
    ReplayBackend,
    SimulatorBackend,
    calibrate,
)
from .fringeio import FringeDataset, load_fringe
from .heuristics import HeuristicConfig
from .inference import ResamplerConfig, UniformPrior
from .model import PhysicalConstants, RamseyLikelihood
from .protocol import InferenceConfig, TrackerConfig, run_estimation, run_tracking

__all__ = ["MagneticFieldLearner", "FieldTracker"]


def _as_backend(x, m, selection, seed):
    if isinstance(x, (SimulatorBackend, ReplayBackend)):
        return x
    if isinstance(x, (str, Path)):
        x = load_fringe(x)
    if isinstance(x, FringeDataset):
        return ReplayBackend(x, m=m, selection=selection, seed=seed)
    raise TypeError(
        "X must be a fringe dataset, a path to one, or a measurement backend; "
        f"got {type(x).__name__}"
    )


def _build_extractor(kind, backend, m):
    n_bar, n_max = calibrate(backend, m=m)
    if kind == "majority":
        return MajorityVote(n_bar)
    if kind == "probabilistic":
        return ProbabilisticVote(n_max)
    raise ValueError(f"extraction must be 'majority' or 'probabilistic', got {kind!r}")


class MagneticFieldLearner(BaseEstimator):
    """Adaptive Bayesian estimator of a static magnetic field.

    ``fit`` consumes a recorded fringe dataset (or a live backend) and
    runs the adaptive epoch loop; the fitted field and its uncertainty
    land in ``b_est_`` and ``b_err_`` with the full per-epoch record in
    ``trace_``.

    Args:
        n_epochs: Epochs to run.
        n_particles: Ensemble size.
        b_min, b_max: Uniform prior support for the field, tesla.
        inv_t2: Known dephasing rate used by the likelihood, 1/s.
        learn_t2: Estimate inv_t2 jointly with the field.
        t2_min, t2_max: Prior support for T2* when learn_t2 is set.
        xi: Readout-loss scale of the likelihood (1 = ideal readout).
        tau_min, tau_max: Evolution-time window, seconds; tau_min defaults
            to the data source's sampling step.
        multiparam_epoch: Activation epoch of the covariance heuristic.
        resample_a: Shrinkage factor of the resampler.
        resample_threshold: ESS fraction that triggers resampling.
        extraction: 'majority' or 'probabilistic' outcome extraction,
            calibrated against the data source.
        m: Sequences bunched per epoch when X is a dataset or path.
        selection: Sweep selection for replay, 'random' or 'block'.
        random_state: Seed for the run (and the replay backend it builds).
    """

    def __init__(
        self,
        n_epochs: int = 150,
        n_particles: int = 1500,
        b_min: float = 0.0,
        b_max: float = 100e-6,
        inv_t2: float = 0.0,
        learn_t2: bool = False,
        t2_min: float = 1e-6,
        t2_max: float = 100e-6,
        xi: float = 1.0,
        tau_min: float | None = None,
        tau_max: float | None = 10e-6,
        multiparam_epoch: int = 100,
        resample_a: float = 0.9,
        resample_threshold: float = 0.5,
        extraction: str = "majority",
        m: int = 1,
        selection: str = "random",
        random_state: int = 0,
    ) -> None:
        self.n_epochs = n_epochs
        self.n_particles = n_particles
        self.b_min = b_min
        self.b_max = b_max
        self.inv_t2 = inv_t2
        self.learn_t2 = learn_t2
        self.t2_min = t2_min
        self.t2_max = t2_max
        self.xi = xi
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.multiparam_epoch = multiparam_epoch
        self.resample_a = resample_a
        self.resample_threshold = resample_threshold
        self.extraction = extraction
        self.m = m
        self.selection = selection
        self.random_state = random_state

    def _prior(self, constants: PhysicalConstants):
        if not 0.0 <= self.b_min < self.b_max:
            raise ValueError(f"need 0 <= b_min < b_max, got [{self.b_min}, {self.b_max}]")
        omega_bounds = (constants.gamma * self.b_min, constants.gamma * self.b_max)
        if not self.learn_t2:
            return UniformPrior([omega_bounds])
        if not 0.0 < self.t2_min < self.t2_max:
            raise ValueError(f"need 0 < t2_min < t2_max, got [{self.t2_min}, {self.t2_max}]")
        return UniformPrior([omega_bounds, (1.0 / self.t2_max, 1.0 / self.t2_min)])

    def fit(self, X, y=None):
        """Run the adaptive loop against a dataset, path, or backend."""
        constants = PhysicalConstants()
        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        backend = _as_backend(X, self.m, self.selection, seeds[0])
        extractor = _build_extractor(self.extraction, backend, backend.m)
        trace = run_estimation(
            backend,
            RamseyLikelihood(inv_t2=self.inv_t2, xi=self.xi),
            self._prior(constants),
            HeuristicConfig(
                tau_min=self.tau_min,
                tau_max=self.tau_max,
                multiparam_epoch=self.multiparam_epoch,
            ),
            n_epochs=self.n_epochs,
            seed=self.random_state,
            inference=InferenceConfig(
                n_particles=self.n_particles,
                resampler=ResamplerConfig(a=self.resample_a, threshold=self.resample_threshold),
            ),
            extractor=extractor,
            constants=constants,
        )
        self.trace_ = trace
        self.omega_est_ = float(trace.final_mean[0])
        self.omega_err_ = float(np.sqrt(max(trace.final_cov[0, 0], 0.0)))
        self.b_est_ = self.omega_est_ / constants.gamma
        self.b_err_ = self.omega_err_ / constants.gamma
        if self.learn_t2:
            self.inv_t2_est_ = float(trace.final_mean[1])
            self.t2_est_ = np.inf if self.inv_t2_est_ == 0.0 else 1.0 / self.inv_t2_est_
        return self

    def predict(self, X=None) -> float:
        """Fitted field estimate in tesla."""
        check_is_fitted(self, "b_est_")
        return self.b_est_


class FieldTracker(BaseEstimator):
    """Adaptive tracker for a time-varying field.

    Identical to :class:`MagneticFieldLearner` except the run may reset
    its posterior to the initial prior when resampling stops rescuing the
    effective sample size; fitted attributes expose the per-epoch field
    series and the epochs where resets fired.
    """

    def __init__(
        self,
        n_epochs: int = 300,
        n_particles: int = 1500,
        b_min: float = 0.0,
        b_max: float = 100e-6,
        inv_t2: float = 0.0,
        xi: float = 1.0,
        tau_min: float | None = None,
        tau_max: float | None = 10e-6,
        r_resample: int = 5,
        p_reset: int = 3,
        resample_a: float = 0.9,
        resample_threshold: float = 0.5,
        extraction: str = "majority",
        m: int = 1,
        selection: str = "random",
        random_state: int = 0,
    ) -> None:
        self.n_epochs = n_epochs
        self.n_particles = n_particles
        self.b_min = b_min
        self.b_max = b_max
        self.inv_t2 = inv_t2
        self.xi = xi
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.r_resample = r_resample
        self.p_reset = p_reset
        self.resample_a = resample_a
        self.resample_threshold = resample_threshold
        self.extraction = extraction
        self.m = m
        self.selection = selection
        self.random_state = random_state

    def fit(self, X, y=None):
        constants = PhysicalConstants()
        if not 0.0 <= self.b_min < self.b_max:
            raise ValueError(f"need 0 <= b_min < b_max, got [{self.b_min}, {self.b_max}]")
        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        backend = _as_backend(X, self.m, self.selection, seeds[0])
        extractor = _build_extractor(self.extraction, backend, backend.m)
        tracker = TrackerConfig(
            n_epochs=self.n_epochs,
            r_resample=self.r_resample,
            p_reset=self.p_reset,
            inference=InferenceConfig(
                n_particles=self.n_particles,
                resampler=ResamplerConfig(a=self.resample_a, threshold=self.resample_threshold),
            ),
            heuristic=HeuristicConfig(tau_min=self.tau_min, tau_max=self.tau_max),
        )
        prior = UniformPrior([(constants.gamma * self.b_min, constants.gamma * self.b_max)])
        trace = run_tracking(
            backend,
            RamseyLikelihood(inv_t2=self.inv_t2, xi=self.xi),
            prior,
            tracker,
            seed=self.random_state,
            extractor=extractor,
            constants=constants,
        )
        self.trace_ = trace
        self.b_series_ = trace.b_est
        self.b_err_series_ = trace.b_err
        self.t_series_ = trace.t_fields
        self.reset_epochs_ = np.flatnonzero(trace.resets) + 1
        self.b_est_ = float(trace.b_est[-1])
        self.b_err_ = float(trace.b_err[-1])
        return self

    def predict(self, X=None) -> np.ndarray:
        """Per-epoch field estimates in tesla."""
        check_is_fitted(self, "b_series_")
        return self.b_series_
