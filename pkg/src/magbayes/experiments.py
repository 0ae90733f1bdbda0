"""Measurement backends: a stochastic Ramsey simulator and dataset replay.

Both backends serve one epoch at a time: given a requested evolution time
they return the photon count of m bunched sequences together with the
wall-clock cost m * (tau + fixed per-sequence overheads).  The simulator
additionally advances the waveform clock by that amount, so time-varying
fields evolve while the experiment runs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .analysis import OverheadBudget
from .fringeio import FringeDataset
from .model import PhysicalConstants, ramsey_p0

__all__ = [
    "EpochDatum",
    "SimulatorConfig",
    "SimulatorBackend",
    "ReplayBackend",
    "simulate_epoch",
    "replay_epoch",
    "outcome_majority",
    "outcome_probabilistic",
    "MajorityVote",
    "ProbabilisticVote",
    "extract_outcome",
    "calibrate",
    "simulate_fringe",
]


@dataclass(frozen=True)
class EpochDatum:
    """One epoch of raw experimental output.

    Attributes:
        tau_requested: Evolution time asked for, seconds.
        tau: Evolution time actually applied (replay snaps to the grid).
        n: Total photon count over the m sequences, or None when the
            source stores only a mean-PL curve.
        p1_hat: Empirical outcome-1 likelihood for mean-PL replay sources.
        t_field: Waveform clock when the epoch began, seconds.
        duration: Wall-clock cost m * (tau + per-sequence overheads).
        m: Number of bunched sequences.
    """

    tau_requested: float
    tau: float
    n: int | None
    p1_hat: float | None
    t_field: float
    duration: float
    m: int


@dataclass(frozen=True)
class SimulatorConfig:
    """Stochastic single-spin simulator settings.

    Outcome 1 is the fluorescent (bright) spin state: a sequence projects
    the spin with the Ramsey probability, then a photon is detected with
    probability p_click_1 or p_click_0 depending on the projected state.

    Attributes:
        waveform: Field waveform exposing omega_at(t).
        inv_t2: True dephasing rate, 1/s.
        m: Default number of sequences bunched per epoch.
        p_click_1: Photon detection probability for spin outcome 1.
        p_click_0: Photon detection probability for spin outcome 0.
        overheads: Per-sequence timing constants.
    """

    waveform: object
    inv_t2: float = 0.0
    m: int = 1
    p_click_1: float = 1.0
    p_click_0: float = 0.0
    overheads: OverheadBudget = OverheadBudget()

    def __post_init__(self) -> None:
        if self.inv_t2 < 0.0 or not math.isfinite(self.inv_t2):
            raise ValueError(f"inv_t2 must be finite and >= 0, got {self.inv_t2}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        for name in ("p_click_1", "p_click_0"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {p}")


def simulate_epoch(
    config: SimulatorConfig,
    tau: float,
    t_now: float,
    m: int,
    rng: np.random.Generator,
) -> EpochDatum:
    """Draw one epoch of synthetic photon counts at waveform time t_now.

    The field is frozen at its value when the epoch begins; each of the m
    sequences draws a spin projection and then a photon click.
    """
    if tau < 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    omega = config.waveform.omega_at(t_now)
    p1 = 1.0 - float(ramsey_p0(omega, tau, config.inv_t2))
    spins = rng.random(m) < p1
    click_p = np.where(spins, config.p_click_1, config.p_click_0)
    n = int(np.sum(rng.random(m) < click_p))
    duration = m * (tau + config.overheads.per_sequence)
    return EpochDatum(
        tau_requested=tau,
        tau=tau,
        n=n,
        p1_hat=None,
        t_field=t_now,
        duration=duration,
        m=m,
    )


class SimulatorBackend:
    """Stateful simulator: owns the waveform clock and the noise stream."""

    def __init__(
        self,
        config: SimulatorConfig,
        seed: int | np.random.SeedSequence | np.random.Generator = 0,
        constants: PhysicalConstants = PhysicalConstants(),
    ) -> None:
        self.config = config
        self.constants = constants
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.t = 0.0

    @property
    def sampling_step(self) -> float | None:
        """Simulators have no intrinsic tau grid."""
        return None

    @property
    def m(self) -> int:
        return self.config.m

    def omega_true(self, t: float) -> float:
        return self.config.waveform.omega_at(t)

    def epoch(self, tau: float, m: int | None = None) -> EpochDatum:
        m = self.config.m if m is None else m
        datum = simulate_epoch(self.config, tau, self.t, m, self.rng)
        self.t += datum.duration
        return datum


class ReplayBackend:
    """Replays a recorded fringe as if it were a live experiment.

    Each epoch snaps the requested tau to the nearest recorded grid point
    (ties resolve to the smaller tau) and aggregates m sweeps, either a
    random subset without replacement or the leading block.
    """

    def __init__(
        self,
        dataset: FringeDataset,
        m: int = 1,
        selection: str = "random",
        seed: int | np.random.SeedSequence | np.random.Generator = 0,
        overheads: OverheadBudget = OverheadBudget(),
    ) -> None:
        if selection not in ("random", "block"):
            raise ValueError(f"selection must be 'random' or 'block', got {selection!r}")
        if dataset.sweeps is not None and not 1 <= m <= dataset.m_total:
            raise ValueError(f"m must lie in [1, {dataset.m_total}], got {m}")
        if dataset.sweeps is None and m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        self.dataset = dataset
        self._m = m
        self.selection = selection
        self.overheads = overheads
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.t = 0.0

    @property
    def sampling_step(self) -> float:
        return self.dataset.dtau

    @property
    def m(self) -> int:
        return self._m

    def omega_true(self, t: float) -> None:
        """Recorded data carries no ground truth."""
        return None

    def epoch(self, tau: float, m: int | None = None) -> EpochDatum:
        m = self._m if m is None else m
        datum = replay_epoch(
            self.dataset, tau, m, self.selection, self.rng, self.t, self.overheads
        )
        self.t += datum.duration
        return datum


def replay_epoch(
    dataset: FringeDataset,
    tau: float,
    m: int,
    selection: str,
    rng: np.random.Generator,
    t_now: float = 0.0,
    overheads: OverheadBudget = OverheadBudget(),
) -> EpochDatum:
    """Aggregate m recorded sweeps at the grid point nearest to tau."""
    if tau < 0.0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    taus = dataset.taus
    i = int(np.searchsorted(taus, tau))
    if i == 0:
        idx = 0
    elif i == taus.size:
        idx = taus.size - 1
    else:
        # Equidistant requests resolve to the smaller recorded tau.
        idx = i - 1 if (tau - taus[i - 1]) <= (taus[i] - tau) else i
    tau_actual = float(taus[idx])

    if dataset.sweeps is not None:
        if not 1 <= m <= dataset.m_total:
            raise ValueError(f"m must lie in [1, {dataset.m_total}], got {m}")
        if selection == "block":
            chosen = dataset.sweeps[idx, :m]
        else:
            cols = rng.choice(dataset.m_total, size=m, replace=False)
            chosen = dataset.sweeps[idx, cols]
        n = int(chosen.astype(np.int64).sum())
        p1_hat = None
    else:
        n = None
        p1_hat = float(np.clip(dataset.mean_pl[idx], 0.0, 1.0))

    duration = m * (tau_actual + overheads.per_sequence)
    return EpochDatum(
        tau_requested=tau,
        tau=tau_actual,
        n=n,
        p1_hat=p1_hat,
        t_field=t_now,
        duration=duration,
        m=m,
    )


def outcome_majority(n: int, n_bar: float) -> int:
    """Majority-vote datum: 1 iff the count exceeds the fringe mean."""
    if n < 0:
        raise ValueError(f"count must be >= 0, got {n}")
    return 1 if n > n_bar else 0


def outcome_probabilistic(n: int, n_max: float, rng: np.random.Generator) -> int:
    """Probabilistic datum: 1 with probability n / n_max.

    Counts above n_max (multi-photon events beyond the characterisation
    reference) are clamped with a warning.
    """
    if n < 0:
        raise ValueError(f"count must be >= 0, got {n}")
    if n_max <= 0.0:
        raise ValueError(f"n_max must be > 0, got {n_max}")
    if n > n_max:
        warnings.warn(
            f"count {n} exceeds n_max {n_max}; clamping (multi-photon event)",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1
    return 1 if rng.random() < n / n_max else 0


@dataclass(frozen=True)
class MajorityVote:
    """Threshold outcome extraction against the calibrated fringe mean."""

    n_bar: float

    def __post_init__(self) -> None:
        if self.n_bar < 0.0:
            raise ValueError(f"n_bar must be >= 0, got {self.n_bar}")


@dataclass(frozen=True)
class ProbabilisticVote:
    """Outcome-1 with probability n / n_max against the calibrated maximum."""

    n_max: float

    def __post_init__(self) -> None:
        if self.n_max <= 0.0:
            raise ValueError(f"n_max must be > 0, got {self.n_max}")


def extract_outcome(
    datum: EpochDatum,
    extractor: MajorityVote | ProbabilisticVote,
    rng: np.random.Generator,
) -> int:
    """Convert an epoch's raw output into a binary datum.

    Mean-PL replay data carries an empirical likelihood instead of counts;
    the datum is then drawn directly from it regardless of the extractor.
    """
    if datum.n is None:
        return 1 if rng.random() < datum.p1_hat else 0
    if isinstance(extractor, MajorityVote):
        return outcome_majority(datum.n, extractor.n_bar)
    return outcome_probabilistic(datum.n, extractor.n_max, rng)


def calibrate(
    source: SimulatorBackend | ReplayBackend | FringeDataset,
    m: int | None = None,
    n_cal: int = 100,
) -> tuple[float, float]:
    """Operational (n_bar, n_max) at bunching factor m.

    Simulators are calibrated analytically: the fringe-averaged expected
    count is m (p_click_1 + p_click_0) / 2 and the reference maximum is
    m * p_click_1.  Datasets are calibrated empirically from n_cal
    records evenly spanning the fringe, using the leading m sweeps of
    each so the calibration is deterministic.
    """
    if n_cal < 2:
        raise ValueError(f"n_cal must be >= 2, got {n_cal}")
    if isinstance(source, SimulatorBackend):
        cfg = source.config
        m = cfg.m if m is None else m
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        if cfg.p_click_1 <= 0.0:
            raise ValueError("p_click_1 = 0 leaves the detector dark; cannot calibrate")
        return m * (cfg.p_click_1 + cfg.p_click_0) / 2.0, m * cfg.p_click_1

    dataset = source.dataset if isinstance(source, ReplayBackend) else source
    if m is None:
        if isinstance(source, ReplayBackend):
            m = source.m
        else:
            raise ValueError("m is required when calibrating a bare dataset")
    if dataset.sweeps is None:
        if dataset.n_bar is None or dataset.n_max is None:
            raise ValueError("mean-PL datasets need header n_bar and n_max to calibrate")
        return m * dataset.n_bar, m * dataset.n_max
    if not 1 <= m <= dataset.m_total:
        raise ValueError(f"m must lie in [1, {dataset.m_total}], got {m}")
    idx = np.unique(np.round(np.linspace(0, dataset.n_tau - 1, min(n_cal, dataset.n_tau))).astype(int))
    counts = dataset.sweeps[idx, :m].astype(np.int64).sum(axis=1)
    n_max = float(counts.max())
    if n_max <= 0.0:
        raise ValueError("calibration records contain no photons")
    return float(counts.mean()), n_max


def simulate_fringe(
    config: SimulatorConfig,
    taus,
    m_total: int,
    seed: int | np.random.SeedSequence = 0,
    constants: PhysicalConstants = PhysicalConstants(),
) -> FringeDataset:
    """Record a full synthetic fringe: m_total sweeps at every grid point.

    The waveform clock advances exactly as it would during acquisition,
    so slow drifts leave their realistic imprint on the sweep record.
    """
    if m_total < 1:
        raise ValueError(f"m_total must be >= 1, got {m_total}")
    taus = np.asarray(taus, dtype=float)
    rng = np.random.default_rng(seed)
    rows = np.empty((taus.size, m_total), dtype=np.uint32)
    t = 0.0
    for i, tau in enumerate(taus):
        omega = config.waveform.omega_at(t)
        p1 = 1.0 - float(ramsey_p0(omega, tau, config.inv_t2))
        spins = rng.random(m_total) < p1
        clicks = rng.random(m_total) < np.where(spins, config.p_click_1, config.p_click_0)
        rows[i] = clicks.astype(np.uint32)
        t += m_total * (tau + config.overheads.per_sequence)
    return FringeDataset(
        taus=taus,
        sweeps=rows,
        gamma=constants.gamma,
        n_bar=float(rows.mean()),
        n_max=float(max(rows.max(), 1)),
    )
