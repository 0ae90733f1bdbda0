"""Epoch loops for static estimation and for tracking a drifting field.

Both loops share one engine: choose tau, measure, extract a binary datum,
update the particle weights, then rejuvenate the ensemble when its
effective sample size collapses.  The tracking variant may instead reset
the ensemble to the initial prior when recent resampling has failed to
restore the effective sample size, which is what lets it follow jumps and
drifts far outside the current posterior.

With r_resample and p_reset at least as large as the epoch count the
tracking loop never resets and reproduces the estimation loop bit for
bit under the same seed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .experiments import MajorityVote, ProbabilisticVote, extract_outcome
from .heuristics import (
    HeuristicConfig,
    choose_tau,
    derive_normalizers,
    normalized_cov_fro,
)
from .inference import (
    GaussianPrior,
    ParticleEnsemble,
    ResamplerConfig,
    UniformPrior,
)
from .model import PhysicalConstants

__all__ = [
    "InferenceConfig",
    "TrackerConfig",
    "EpochRecord",
    "RunTrace",
    "run_estimation",
    "run_tracking",
    "nms_error",
]

TRACE_SCHEMA = "magbayes.trace/1"

TRACE_FIELDS = (
    "epoch",
    "tau_requested",
    "tau",
    "outcome",
    "n",
    "omega_est",
    "omega_err",
    "b_est",
    "b_err",
    "cov_fro",
    "ess",
    "resampled",
    "reset",
    "t_field",
    "tau_comp",
    "tau_exp",
    "wall",
)


@dataclass(frozen=True)
class InferenceConfig:
    """Ensemble size and resampler used by a run."""

    n_particles: int = 1500
    resampler: ResamplerConfig = ResamplerConfig()

    def __post_init__(self) -> None:
        if self.n_particles < 2:
            raise ValueError(f"n_particles must be >= 2, got {self.n_particles}")


@dataclass(frozen=True)
class TrackerConfig:
    """Tracking-loop settings on top of plain estimation.

    Attributes:
        n_epochs: Total epochs to run.
        r_resample: Resample (rather than reset) when at least this many
            epochs have passed since the last resampling event.
        p_reset: Also resample when the last reset happened at most this
            many epochs ago, giving a fresh prior a grace period.
        inference: Ensemble settings.
        heuristic: Evolution-time heuristic settings.
    """

    n_epochs: int
    r_resample: int = 5
    p_reset: int = 3
    inference: InferenceConfig = InferenceConfig()
    heuristic: HeuristicConfig = HeuristicConfig()

    def __post_init__(self) -> None:
        if self.n_epochs < 1:
            raise ValueError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.r_resample < 1:
            raise ValueError(f"r_resample must be >= 1, got {self.r_resample}")
        if self.p_reset < 0:
            raise ValueError(f"p_reset must be >= 0, got {self.p_reset}")


@dataclass(frozen=True)
class EpochRecord:
    """One epoch of a recorded run (times in seconds, omega in rad/s)."""

    epoch: int
    tau_requested: float
    tau: float
    outcome: int
    n: int | None
    omega_est: float
    omega_err: float
    cov_fro: float
    ess: float
    resampled: bool
    reset: bool
    t_field: float
    tau_comp: float
    tau_exp: float
    wall: float


class RunTrace:
    """Complete record of one run: per-epoch rows plus the final posterior.

    Serialises to newline-delimited JSON: a header record, one record per
    epoch with the fields of ``TRACE_FIELDS`` in that order, and a final
    record with the posterior moments.
    """

    def __init__(
        self,
        records: list[EpochRecord],
        seed: int,
        gamma: float,
        m: int,
        n_particles: int,
        final_mean: np.ndarray,
        final_cov: np.ndarray,
        n_resamples: int = 0,
        n_resets: int = 0,
        meta: dict | None = None,
        final_ensemble: ParticleEnsemble | None = None,
    ) -> None:
        if not records:
            raise ValueError("a trace needs at least one record")
        self.records = list(records)
        self.seed = int(seed)
        self.gamma = float(gamma)
        self.m = int(m)
        self.n_particles = int(n_particles)
        self.final_mean = np.asarray(final_mean, dtype=float)
        self.final_cov = np.atleast_2d(np.asarray(final_cov, dtype=float))
        self.n_resamples = int(n_resamples)
        self.n_resets = int(n_resets)
        self.meta = dict(meta) if meta else {}
        self.final_ensemble = final_ensemble

    @property
    def n_epochs(self) -> int:
        return len(self.records)

    def _column(self, name: str, dtype=float) -> np.ndarray:
        return np.asarray([getattr(r, name) for r in self.records], dtype=dtype)

    @cached_property
    def taus(self) -> np.ndarray:
        return self._column("tau")

    @cached_property
    def taus_requested(self) -> np.ndarray:
        return self._column("tau_requested")

    @cached_property
    def omega_est(self) -> np.ndarray:
        return self._column("omega_est")

    @cached_property
    def omega_err(self) -> np.ndarray:
        return self._column("omega_err")

    @property
    def b_est(self) -> np.ndarray:
        return self.omega_est / self.gamma

    @property
    def b_err(self) -> np.ndarray:
        return self.omega_err / self.gamma

    @cached_property
    def outcomes(self) -> np.ndarray:
        return self._column("outcome", dtype=int)

    @cached_property
    def ess(self) -> np.ndarray:
        return self._column("ess")

    @cached_property
    def cov_fro(self) -> np.ndarray:
        return self._column("cov_fro")

    @cached_property
    def t_fields(self) -> np.ndarray:
        return self._column("t_field")

    @cached_property
    def walls(self) -> np.ndarray:
        return self._column("wall")

    @cached_property
    def tau_comps(self) -> np.ndarray:
        return self._column("tau_comp")

    @cached_property
    def tau_exps(self) -> np.ndarray:
        return self._column("tau_exp")

    @cached_property
    def resampled(self) -> np.ndarray:
        return self._column("resampled", dtype=bool)

    @cached_property
    def resets(self) -> np.ndarray:
        return self._column("reset", dtype=bool)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        lines = [
            json.dumps(
                {
                    "record": "header",
                    "schema": TRACE_SCHEMA,
                    "seed": self.seed,
                    "gamma": self.gamma,
                    "m": self.m,
                    "n_particles": self.n_particles,
                    "n_epochs": self.n_epochs,
                    "fields": list(TRACE_FIELDS),
                    "meta": self.meta,
                }
            )
        ]
        for r in self.records:
            row = {"record": "epoch"}
            for name in TRACE_FIELDS:
                if name == "b_est":
                    row[name] = r.omega_est / self.gamma
                elif name == "b_err":
                    row[name] = r.omega_err / self.gamma
                else:
                    row[name] = getattr(r, name)
            lines.append(json.dumps(row))
        lines.append(
            json.dumps(
                {
                    "record": "final",
                    "mean": self.final_mean.tolist(),
                    "cov": self.final_cov.tolist(),
                    "n_resamples": self.n_resamples,
                    "n_resets": self.n_resets,
                }
            )
        )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunTrace":
        path = Path(path)
        header = None
        final = None
        records: list[EpochRecord] = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.get("record")
            if kind == "header":
                if obj.get("schema") != TRACE_SCHEMA:
                    raise ValueError(f"{path}: unsupported trace schema {obj.get('schema')!r}")
                header = obj
            elif kind == "epoch":
                records.append(
                    EpochRecord(
                        epoch=int(obj["epoch"]),
                        tau_requested=float(obj["tau_requested"]),
                        tau=float(obj["tau"]),
                        outcome=int(obj["outcome"]),
                        n=None if obj["n"] is None else int(obj["n"]),
                        omega_est=float(obj["omega_est"]),
                        omega_err=float(obj["omega_err"]),
                        cov_fro=float(obj["cov_fro"]),
                        ess=float(obj["ess"]),
                        resampled=bool(obj["resampled"]),
                        reset=bool(obj["reset"]),
                        t_field=float(obj["t_field"]),
                        tau_comp=float(obj["tau_comp"]),
                        tau_exp=float(obj["tau_exp"]),
                        wall=float(obj["wall"]),
                    )
                )
            elif kind == "final":
                final = obj
            else:
                raise ValueError(f"{path}:{lineno}: unknown record kind {kind!r}")
        if header is None or final is None:
            raise ValueError(f"{path}: missing header or final record")
        return cls(
            records=records,
            seed=header["seed"],
            gamma=header["gamma"],
            m=header["m"],
            n_particles=header["n_particles"],
            final_mean=np.asarray(final["mean"], dtype=float),
            final_cov=np.asarray(final["cov"], dtype=float),
            n_resamples=final["n_resamples"],
            n_resets=final["n_resets"],
            meta=header.get("meta") or {},
        )


def _record_cov_norm(
    ensemble: ParticleEnsemble,
    cov: np.ndarray,
    heuristic: HeuristicConfig,
    constants: PhysicalConstants,
) -> float:
    if ensemble.dim >= 2 and heuristic.norm_b is not None and heuristic.norm_t2 is not None:
        return normalized_cov_fro(ensemble, heuristic, constants)
    return float(np.linalg.norm(cov, "fro"))


def _run_loop(
    backend,
    likelihood,
    prior: UniformPrior | GaussianPrior,
    heuristic: HeuristicConfig,
    n_epochs: int,
    seed: int,
    inference: InferenceConfig,
    extractor: MajorityVote | ProbabilisticVote,
    reset_rule: tuple[int, int] | None,
    constants: PhysicalConstants,
    keep_ensemble: bool,
) -> RunTrace:
    seed = int(seed)
    root = np.random.SeedSequence(seed)
    s_inference, s_heuristic, s_outcome = root.spawn(3)
    ensemble = ParticleEnsemble.from_prior(
        prior, inference.n_particles, np.random.default_rng(s_inference)
    )
    heuristic_rng = np.random.default_rng(s_heuristic)
    outcome_rng = np.random.default_rng(s_outcome)

    if heuristic.tau_min is None:
        step = backend.sampling_step
        heuristic = replace(heuristic, tau_min=step if step else 1e-9)

    resampler = inference.resampler
    n = inference.n_particles
    last_resample = 0
    last_reset = 0
    wall = 0.0
    records: list[EpochRecord] = []

    for epoch in range(1, n_epochs + 1):
        t_start = time.perf_counter()
        if (
            ensemble.dim >= 2
            and epoch == heuristic.multiparam_epoch
            and (heuristic.norm_b is None or heuristic.norm_t2 is None)
        ):
            norm_b, norm_t2 = derive_normalizers(ensemble, constants)
            heuristic = replace(
                heuristic,
                norm_b=heuristic.norm_b if heuristic.norm_b is not None else norm_b,
                norm_t2=heuristic.norm_t2 if heuristic.norm_t2 is not None else norm_t2,
            )
        tau_requested = choose_tau(epoch, ensemble, heuristic, heuristic_rng, constants)
        tau_comp = time.perf_counter() - t_start

        datum = backend.epoch(tau_requested)
        outcome = extract_outcome(datum, extractor, outcome_rng)

        t_infer = time.perf_counter()
        ensemble.bayes_update(datum.tau, outcome, likelihood)
        ess = ensemble.effective_sample_size()
        resampled = False
        was_reset = False
        if ess < resampler.threshold * n:
            if reset_rule is None:
                ensemble.resample_liu_west(resampler)
                resampled = True
            else:
                r_resample, p_reset = reset_rule
                if (epoch - last_resample >= r_resample) or (epoch - last_reset <= p_reset):
                    ensemble.resample_liu_west(resampler)
                    last_resample = epoch
                    resampled = True
                else:
                    ensemble.reset(prior)
                    last_reset = epoch
                    was_reset = True
        mean, cov = ensemble.moments()
        tau_comp += time.perf_counter() - t_infer

        wall += datum.duration
        records.append(
            EpochRecord(
                epoch=epoch,
                tau_requested=tau_requested,
                tau=datum.tau,
                outcome=outcome,
                n=datum.n,
                omega_est=float(mean[0]),
                omega_err=float(np.sqrt(max(cov[0, 0], 0.0))),
                cov_fro=_record_cov_norm(ensemble, cov, heuristic, constants),
                ess=float(ess),
                resampled=resampled,
                reset=was_reset,
                t_field=datum.t_field,
                tau_comp=tau_comp,
                tau_exp=datum.duration - datum.m * datum.tau,
                wall=wall,
            )
        )

    mean, cov = ensemble.moments()
    meta = {
        "mode": "estimation" if reset_rule is None else "tracking",
        "norm_b": heuristic.norm_b,
        "norm_t2": heuristic.norm_t2,
        "tau_min": heuristic.tau_min,
        "tau_max": heuristic.tau_max,
    }
    if reset_rule is not None:
        meta["r_resample"], meta["p_reset"] = reset_rule
    return RunTrace(
        records=records,
        seed=seed,
        gamma=constants.gamma,
        m=backend.m,
        n_particles=inference.n_particles,
        final_mean=mean,
        final_cov=cov,
        n_resamples=ensemble.n_resamples,
        n_resets=ensemble.n_resets,
        meta=meta,
        final_ensemble=ensemble if keep_ensemble else None,
    )


def run_estimation(
    backend,
    likelihood,
    prior: UniformPrior | GaussianPrior,
    heuristic: HeuristicConfig = HeuristicConfig(),
    n_epochs: int = 100,
    seed: int = 0,
    *,
    inference: InferenceConfig = InferenceConfig(),
    extractor: MajorityVote | ProbabilisticVote = MajorityVote(0.5),
    constants: PhysicalConstants = PhysicalConstants(),
    keep_ensemble: bool = False,
) -> RunTrace:
    """Run adaptive estimation of a static field.

    Args:
        backend: Measurement source with ``epoch(tau)``, ``sampling_step``
            and ``m``.
        likelihood: Callable mapping (positions, tau, outcome) to
            per-particle probabilities.
        prior: Initial distribution over (omega,) or (omega, inv_t2).
        heuristic: Evolution-time heuristic; an unset tau_min resolves to
            the backend's sampling step.
        n_epochs: Number of epochs.
        seed: Seed fixing the whole inference trajectory.
        inference: Ensemble size and resampler settings.
        extractor: Binary outcome extraction rule.
        constants: Probe constants.
        keep_ensemble: Attach the final particle ensemble to the trace.

    Returns:
        RunTrace with one record per epoch.
    """
    if n_epochs < 1:
        raise ValueError(f"n_epochs must be >= 1, got {n_epochs}")
    return _run_loop(
        backend,
        likelihood,
        prior,
        heuristic,
        n_epochs,
        seed,
        inference,
        extractor,
        None,
        constants,
        keep_ensemble,
    )


def run_tracking(
    backend,
    likelihood,
    prior: UniformPrior | GaussianPrior,
    tracker: TrackerConfig,
    seed: int = 0,
    *,
    extractor: MajorityVote | ProbabilisticVote = MajorityVote(0.5),
    constants: PhysicalConstants = PhysicalConstants(),
    keep_ensemble: bool = False,
) -> RunTrace:
    """Run estimation with prior resets enabled for time-varying fields.

    When the effective sample size collapses, the ensemble is resampled
    if the last resampling event is at least r_resample epochs old or a
    reset happened within the last p_reset epochs; otherwise the posterior
    is judged stale and every particle is redrawn from the initial prior.
    """
    return _run_loop(
        backend,
        likelihood,
        prior,
        tracker.heuristic,
        tracker.n_epochs,
        seed,
        tracker.inference,
        extractor,
        (tracker.r_resample, tracker.p_reset),
        constants,
        keep_ensemble,
    )


def nms_error(trace: RunTrace, truth) -> float:
    """Normalised mean squared frequency error against a known waveform.

        nms = sum_i (omega_est_i - omega(t_i))^2 / (N omega_0^2)

    where t_i is the waveform clock at each epoch's measurement and
    omega_0 the waveform's nominal centre frequency.
    """
    omega0 = truth.nominal_omega
    if omega0 == 0.0:
        raise ValueError("nms error is undefined for a zero nominal frequency")
    truth_values = np.asarray([truth.omega_at(t) for t in trace.t_fields], dtype=float)
    residual = trace.omega_est - truth_values
    return float(residual @ residual / (trace.n_epochs * omega0**2))
