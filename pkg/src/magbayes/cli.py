"""Command line interface.

Subcommands::

    estimate   adaptive estimation runs from a config document
    track      tracking runs (prior resets enabled) from a config document
    sweep      repeat estimation across bunching factors M
    fft        non-adaptive spectroscopy of a fringe file
    ingest     validate a fringe file, optionally converting its format
    bench      per-epoch inference cost across ensemble sizes

Run configs are YAML (JSON works too) with the sections shown in the
repository's configs/ directory; command line flags override the config's
seed and run count.  Progress goes to stderr, machine-readable tables to
stdout, and artifacts into --out.  Files are written under a ``.partial``
name and renamed only once complete, so an interrupted command never
leaves a truncated file behind without the marker.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .analysis import (
    OverheadBudget,
    absolute_time,
    fft_estimate,
    fit_scaling,
    percentile_bands,
    saturation_epoch,
    sensitivity,
)
from .experiments import (
    MajorityVote,
    ProbabilisticVote,
    ReplayBackend,
    SimulatorBackend,
    SimulatorConfig,
    calibrate,
)
from .fringeio import FringeFormatError, load_fringe, save_fringe
from .heuristics import HeuristicConfig
from .inference import (
    ParticleEnsemble,
    ResamplerConfig,
    UniformPrior,
    particle_count_rule,
)
from .model import PhysicalConstants, RamseyLikelihood
from .protocol import InferenceConfig, TrackerConfig, nms_error, run_estimation, run_tracking
from .waveforms import (
    ChirpedField,
    ConstantField,
    OrnsteinUhlenbeckField,
    SinusoidField,
    StepwiseField,
)

__all__ = ["main"]

_CONSTANTS = PhysicalConstants()


# ---------------------------------------------------------------------------
# config document handling


def _load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        config = yaml.safe_load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"{path}: config must be a mapping, got {type(config).__name__}")
    return config


def _config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _section(config: dict, name: str) -> dict:
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    return dict(value)


def build_waveform(spec: dict, seed: int = 0):
    kind = spec.get("kind")
    gamma = _CONSTANTS.gamma
    if kind == "constant":
        return ConstantField(gamma * float(spec["b0_tesla"]))
    if kind == "stepwise":
        return StepwiseField([(float(t), gamma * float(b)) for t, b in spec["steps"]])
    if kind == "sinusoid":
        return SinusoidField(
            gamma * float(spec["b0_tesla"]),
            gamma * float(spec["b_amp_tesla"]),
            float(spec["nu_rad_s"]),
        )
    if kind == "chirp":
        return ChirpedField(
            gamma * float(spec["b0_tesla"]),
            gamma * float(spec["b_amp_tesla"]),
            float(spec["nu0_rad_s"]),
            float(spec["k_rad_s2"]),
        )
    if kind == "ou":
        reversion = 1.0 / float(spec["correlation_time_s"])
        sigma = gamma * float(spec["stationary_std_tesla"])
        return OrnsteinUhlenbeckField(
            mean=gamma * float(spec["b_mean_tesla"]),
            reversion=reversion,
            diffusion=2.0 * reversion * sigma * sigma,
            seed=int(spec.get("seed", seed)),
        )
    raise ValueError(f"unknown waveform kind {kind!r}")


def _build_overheads(spec: dict) -> OverheadBudget:
    defaults = OverheadBudget()
    return OverheadBudget(
        tau_laser=float(spec.get("tau_laser", defaults.tau_laser)),
        tau_wait=float(spec.get("tau_wait", defaults.tau_wait)),
        tau_ttl=float(spec.get("tau_ttl", defaults.tau_ttl)),
        tau_mw=float(spec.get("tau_mw", defaults.tau_mw)),
        tau_comp_per_particle=float(
            spec.get("tau_comp_per_particle", defaults.tau_comp_per_particle)
        ),
    )


def build_backend(spec: dict, seed: int, waveform_seed: int = 0):
    kind = spec.get("kind", "simulator")
    overheads = _build_overheads(_section(spec, "overheads"))
    if kind == "simulator":
        config = SimulatorConfig(
            waveform=build_waveform(_section(spec, "waveform"), seed=waveform_seed),
            inv_t2=float(spec.get("inv_t2", 0.0)),
            m=int(spec.get("m", 1)),
            p_click_1=float(spec.get("p_click_1", 1.0)),
            p_click_0=float(spec.get("p_click_0", 0.0)),
            overheads=overheads,
        )
        return SimulatorBackend(config, seed=seed, constants=_CONSTANTS)
    if kind == "replay":
        dataset = load_fringe(spec["path"])
        return ReplayBackend(
            dataset,
            m=int(spec.get("m", 1)),
            selection=spec.get("selection", "random"),
            seed=seed,
            overheads=overheads,
        )
    raise ValueError(f"unknown backend kind {kind!r}")


def build_prior(spec: dict) -> UniformPrior:
    gamma = _CONSTANTS.gamma
    b_min = float(spec.get("b_min_tesla", 0.0))
    b_max = float(spec["b_max_tesla"])
    bounds = [(gamma * b_min, gamma * b_max)]
    t2_min = spec.get("t2_min")
    t2_max = spec.get("t2_max")
    if (t2_min is None) != (t2_max is None):
        raise ValueError("set both t2_min and t2_max to learn T2*, or neither")
    if t2_min is not None:
        t2_min, t2_max = float(t2_min), float(t2_max)
        if not 0.0 < t2_min < t2_max:
            raise ValueError(f"need 0 < t2_min < t2_max, got [{t2_min}, {t2_max}]")
        bounds.append((1.0 / t2_max, 1.0 / t2_min))
    return UniformPrior(bounds)


def build_likelihood(spec: dict) -> RamseyLikelihood:
    return RamseyLikelihood(
        inv_t2=float(spec.get("inv_t2", 0.0)),
        xi=float(spec.get("xi", 1.0)),
    )


def build_inference(spec: dict, m: int) -> InferenceConfig:
    if spec.get("auto_budget"):
        budget = particle_count_rule(m, int(spec.get("m_max", m)))
        return InferenceConfig(
            n_particles=budget.n_particles, resampler=budget.resampler()
        )
    return InferenceConfig(
        n_particles=int(spec.get("n_particles", 1500)),
        resampler=ResamplerConfig(
            a=float(spec.get("resample_a", 0.9)),
            threshold=float(spec.get("resample_threshold", 0.5)),
        ),
    )


def build_heuristic(spec: dict) -> HeuristicConfig:
    def _opt(key):
        value = spec.get(key)
        return None if value is None else float(value)

    return HeuristicConfig(
        tau_min=_opt("tau_min"),
        tau_max=_opt("tau_max"),
        multiparam_epoch=int(spec.get("multiparam_epoch", 100)),
        norm_b=_opt("norm_b"),
        norm_t2=_opt("norm_t2"),
    )


def build_extractor(spec: dict, backend):
    kind = spec.get("kind", "majority")
    n_bar = spec.get("n_bar")
    n_max = spec.get("n_max")
    if n_bar is None or n_max is None:
        cal_bar, cal_max = calibrate(backend, m=backend.m, n_cal=int(spec.get("n_cal", 100)))
        n_bar = cal_bar if n_bar is None else float(n_bar)
        n_max = cal_max if n_max is None else float(n_max)
    if kind == "majority":
        return MajorityVote(float(n_bar))
    if kind == "probabilistic":
        return ProbabilisticVote(float(n_max))
    raise ValueError(f"outcome kind must be 'majority' or 'probabilistic', got {kind!r}")


# ---------------------------------------------------------------------------
# output helpers


def _write_atomic(path: Path, text: str) -> None:
    partial = path.with_name(path.name + ".partial")
    partial.write_text(text, encoding="utf-8")
    os.replace(partial, path)


def _emit_table(header: list[str], rows: list[list], stream, preamble: list[str] = ()) -> str:
    lines = [f"# {line}" for line in preamble]
    lines.append("\t".join(header))
    for row in rows:
        lines.append("\t".join(str(v) for v in row))
    text = "\n".join(lines) + "\n"
    stream.write(text)
    return text


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# run orchestration


def _run_seeds(master_seed: int, runs: int) -> list[tuple[int, int]]:
    state = np.random.SeedSequence(int(master_seed)).generate_state(2 * runs, dtype=np.uint64)
    return [(int(state[2 * i]), int(state[2 * i + 1])) for i in range(runs)]


def _single_run(args: tuple) -> "object":
    config, run_seed, backend_seed, tracking = args
    backend = build_backend(_section(config, "backend"), seed=backend_seed,
                            waveform_seed=backend_seed)
    likelihood = build_likelihood(_section(config, "likelihood"))
    prior = build_prior(_section(config, "prior"))
    heuristic = build_heuristic(_section(config, "heuristic"))
    inference = build_inference(_section(config, "inference"), backend.m)
    extractor = build_extractor(_section(config, "outcome"), backend)
    run = _section(config, "run")
    n_epochs = int(run.get("n_epochs", 150))
    if tracking:
        t = _section(config, "tracking")
        tracker = TrackerConfig(
            n_epochs=n_epochs,
            r_resample=int(t.get("r_resample", 5)),
            p_reset=int(t.get("p_reset", 3)),
            inference=inference,
            heuristic=heuristic,
        )
        trace = run_tracking(
            backend, likelihood, prior, tracker, seed=run_seed,
            extractor=extractor, constants=_CONSTANTS,
        )
    else:
        trace = run_estimation(
            backend, likelihood, prior, heuristic, n_epochs=n_epochs, seed=run_seed,
            inference=inference, extractor=extractor, constants=_CONSTANTS,
        )
    if isinstance(backend, SimulatorBackend):
        truth = backend.config.waveform
        if truth.nominal_omega > 0.0:
            trace.meta["nms_omega"] = nms_error(trace, truth)
    return trace


def _execute_runs(config: dict, runs: int, jobs: int, tracking: bool) -> list:
    master_seed = int(_section(config, "run").get("seed", 0))
    seeds = _run_seeds(master_seed, runs)
    tasks = [(config, rs, bs, tracking) for rs, bs in seeds]
    traces = []
    started = time.monotonic()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, trace in enumerate(pool.map(_single_run, tasks)):
                traces.append(trace)
                _progress(f"run {i + 1}/{runs} done ({time.monotonic() - started:.1f}s)")
    else:
        for i, task in enumerate(tasks):
            traces.append(_single_run(task))
            _progress(f"run {i + 1}/{runs} done ({time.monotonic() - started:.1f}s)")
    return traces


def _summaries(traces, budget: OverheadBudget):
    rows = []
    for i, trace in enumerate(traces):
        total_tau, eta = sensitivity(trace)
        t_bar = absolute_time(trace, budget)
        eta_bar = trace.b_err[-1] * math.sqrt(t_bar[-1])
        rows.append(
            [
                i,
                trace.seed,
                f"{trace.b_est[-1]:.6e}",
                f"{trace.b_err[-1]:.6e}",
                f"{total_tau[-1]:.6e}",
                f"{t_bar[-1]:.6e}",
                f"{eta[-1]:.6e}",
                f"{eta_bar:.6e}",
                trace.n_resamples,
                trace.n_resets,
            ]
        )
    return rows


def _band_table(traces, budget: OverheadBudget):
    """Per-epoch ensemble table: medians and 68.27% bands."""
    taus = np.vstack([t.taus for t in traces])
    sig_b = np.vstack([t.b_err for t in traces])
    total_tau = np.cumsum(taus, axis=1)
    eta = sig_b * np.sqrt(total_tau)
    t_bar = np.vstack([absolute_time(t, budget) for t in traces])
    eta_bar = sig_b * np.sqrt(t_bar)
    rows = []
    tau_med = np.median(taus, axis=0)
    sig_med, sig_lo, sig_hi = percentile_bands(sig_b)
    eta_med, eta_lo, eta_hi = percentile_bands(eta)
    ebar_med, ebar_lo, ebar_hi = percentile_bands(eta_bar)
    t_med = np.median(total_tau, axis=0)
    tbar_med = np.median(t_bar, axis=0)
    for k in range(taus.shape[1]):
        rows.append(
            [
                k + 1,
                f"{tau_med[k]:.6e}",
                f"{t_med[k]:.6e}",
                f"{tbar_med[k]:.6e}",
                f"{sig_med[k]:.6e}",
                f"{sig_lo[k]:.6e}",
                f"{sig_hi[k]:.6e}",
                f"{eta_med[k]:.6e}",
                f"{eta_lo[k]:.6e}",
                f"{eta_hi[k]:.6e}",
                f"{ebar_med[k]:.6e}",
                f"{ebar_lo[k]:.6e}",
                f"{ebar_hi[k]:.6e}",
            ]
        )
    header = [
        "epoch",
        "tau_med_s",
        "T_med_s",
        "Tbar_med_s",
        "sigma_b_med_t",
        "sigma_b_lo_t",
        "sigma_b_hi_t",
        "eta_med",
        "eta_lo",
        "eta_hi",
        "etabar_med",
        "etabar_lo",
        "etabar_hi",
    ]
    return header, rows


def _save_artifacts(out_dir: Path, resolved: dict, cfg_hash: str, traces, budget, label: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(out_dir / "config.resolved.yaml", yaml.safe_dump(resolved, sort_keys=False))
    for i, trace in enumerate(traces):
        trace.meta["config_sha256"] = cfg_hash
        trace.meta["run_index"] = i
        final = out_dir / f"{label}_run{i:03d}.ndjson"
        partial = final.with_name(final.name + ".partial")
        trace.save(partial)
        os.replace(partial, final)
    header, rows = _band_table(traces, budget)
    text = "\n".join(
        [f"# schema=magbayes.bands/1", f"# config_sha256={cfg_hash}"]
        + ["\t".join(header)]
        + ["\t".join(str(v) for v in row) for row in rows]
    )
    _write_atomic(out_dir / "bands.tsv", text + "\n")


_RUN_HEADER = [
    "run",
    "seed",
    "b_est_t",
    "b_err_t",
    "T_s",
    "Tbar_s",
    "eta",
    "eta_bar",
    "n_resamples",
    "n_resets",
]


def _resolve(config: dict, args) -> tuple[dict, int, int]:
    resolved = json.loads(json.dumps(config))
    run = resolved.setdefault("run", {})
    if args.seed is not None:
        run["seed"] = args.seed
    if args.runs is not None:
        run["runs"] = args.runs
    run.setdefault("seed", 0)
    run.setdefault("runs", 1)
    return resolved, int(run["seed"]), int(run["runs"])


def cmd_estimate(args) -> int:
    config = _load_config(args.config)
    resolved, seed, runs = _resolve(config, args)
    cfg_hash = _config_hash(resolved)
    budget = _build_overheads(_section(_section(resolved, "backend"), "overheads"))
    traces = _execute_runs(resolved, runs, args.jobs, tracking=False)
    _save_artifacts(Path(args.out), resolved, cfg_hash, traces, budget, "trace")
    _emit_table(
        _RUN_HEADER,
        _summaries(traces, budget),
        sys.stdout,
        preamble=[f"config_sha256={cfg_hash}", f"seed={seed}"],
    )
    return 0


def cmd_track(args) -> int:
    config = _load_config(args.config)
    resolved, seed, runs = _resolve(config, args)
    cfg_hash = _config_hash(resolved)
    budget = _build_overheads(_section(_section(resolved, "backend"), "overheads"))
    traces = _execute_runs(resolved, runs, args.jobs, tracking=True)
    _save_artifacts(Path(args.out), resolved, cfg_hash, traces, budget, "track")
    rows = _summaries(traces, budget)
    for row, trace in zip(rows, traces):
        row.append(f"{trace.meta.get('nms_omega', float('nan')):.6e}")
    _emit_table(
        _RUN_HEADER + ["nms_omega"],
        rows,
        sys.stdout,
        preamble=[f"config_sha256={cfg_hash}", f"seed={seed}"],
    )
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    resolved, seed, runs = _resolve(config, args)
    cfg_hash = _config_hash(resolved)
    sweep = _section(resolved, "sweep")
    m_values = [int(m) for m in sweep.get("m_values", [1])]
    m_max = int(sweep.get("m_max", max(m_values)))
    budget = _build_overheads(_section(_section(resolved, "backend"), "overheads"))
    heuristic = build_heuristic(_section(resolved, "heuristic"))
    if heuristic.tau_max is None:
        raise ValueError("sweep requires heuristic.tau_max for saturation detection")

    rows = []
    out_dir = Path(args.out)
    for m in m_values:
        cell = json.loads(json.dumps(resolved))
        cell["backend"]["m"] = m
        cell.setdefault("inference", {})["auto_budget"] = True
        cell["inference"]["m_max"] = m_max
        budget_rule = particle_count_rule(m, m_max)
        _progress(f"sweep cell m={m}: {runs} runs at {budget_rule.n_particles} particles")
        traces = _execute_runs(cell, runs, args.jobs, tracking=False)
        taus = np.vstack([t.taus for t in traces])
        tau_med = np.median(taus, axis=0)
        stop = saturation_epoch(tau_med, heuristic.tau_max)
        stop = taus.shape[1] if stop is None else stop
        start = min(10, max(0, stop - 3))
        slopes = []
        for trace in traces:
            total_tau, eta = sensitivity(trace)
            try:
                slopes.append(fit_scaling(total_tau, eta**2, (start, stop)).exponent)
            except ValueError:
                continue
        exponent = float(np.median(slopes)) if slopes else float("nan")
        sig_final = float(np.median([t.b_err[-1] for t in traces]))
        rows.append(
            [
                m,
                budget_rule.n_particles,
                f"{budget_rule.threshold:.4f}",
                f"{budget_rule.a:.5f}",
                runs,
                start,
                stop,
                f"{exponent:.4f}",
                f"{sig_final:.6e}",
            ]
        )
    header = [
        "m",
        "n_particles",
        "threshold",
        "a",
        "runs",
        "fit_start",
        "fit_stop",
        "eta2_vs_T_exponent",
        "sigma_b_final_med_t",
    ]
    out_dir.mkdir(parents=True, exist_ok=True)
    text = _emit_table(
        header, rows, sys.stdout, preamble=[f"config_sha256={cfg_hash}", f"seed={seed}"]
    )
    _write_atomic(out_dir / "sweep.tsv", text)
    return 0


def cmd_fft(args) -> int:
    dataset = load_fringe(args.data)
    estimate = fft_estimate(dataset)
    rows = [
        [
            estimate.n_points,
            f"{estimate.omega_peak / (2.0 * math.pi):.6e}",
            f"{estimate.omega_peak:.6e}",
            f"{estimate.sigma_omega:.6e}",
            f"{estimate.b_peak:.6e}",
            f"{estimate.b_sigma:.6e}",
            f"{estimate.amplitude:.6e}",
        ]
    ]
    header = [
        "n_points",
        "f_peak_hz",
        "omega_peak_rad_s",
        "sigma_omega_hwhm_rad_s",
        "b_peak_t",
        "b_sigma_t",
        "amplitude",
    ]
    text = _emit_table(header, rows, sys.stdout, preamble=[f"data={args.data}"])
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_atomic(out_dir / "fft.tsv", text)
    return 0


def cmd_ingest(args) -> int:
    dataset = load_fringe(args.input)
    _progress(
        f"{args.input}: {dataset.n_tau} evolution times, {dataset.m_total} sweeps, "
        f"dtau={dataset.dtau * 1e9:.3f} ns"
    )
    if args.output:
        out = Path(args.output)
        partial = out.with_name(out.name + ".partial")
        save_fringe(dataset, partial, fmt=args.to)
        os.replace(partial, out)
        _progress(f"wrote {out}")
    header = ["n_tau", "m_total", "dtau_ns", "gamma", "n_bar", "n_max"]
    n_bar, n_max = dataset.header_values()
    rows = [
        [
            dataset.n_tau,
            dataset.m_total,
            f"{dataset.dtau * 1e9:.6g}",
            f"{dataset.gamma:.6e}",
            f"{n_bar:.6g}",
            f"{n_max:.6g}",
        ]
    ]
    _emit_table(header, rows, sys.stdout)
    return 0


def cmd_bench(args) -> int:
    counts = [int(c) for c in args.particles.split(",")]
    prior = UniformPrior([(0.0, 2.0 * math.pi * 10e6)])
    likelihood = RamseyLikelihood()
    resampler = ResamplerConfig()
    rows = []
    times = []
    for n in counts:
        ensemble = ParticleEnsemble.from_prior(prior, n, seed=1)
        rng = np.random.default_rng(2)
        per_epoch = []
        for _ in range(args.epochs):
            tau = float(rng.uniform(1e-8, 1e-5))
            outcome = int(rng.integers(0, 2))
            start = time.perf_counter()
            ensemble.bayes_update(tau, outcome, likelihood)
            ensemble.maybe_resample(resampler)
            per_epoch.append(time.perf_counter() - start)
        median = float(np.median(per_epoch))
        times.append(median)
        rows.append(
            [
                n,
                f"{median * 1e3:.4f}",
                f"{float(np.percentile(per_epoch, 90)) * 1e3:.4f}",
            ]
        )
    preamble = []
    if len(counts) >= 3:
        slope = fit_scaling(np.asarray(counts, dtype=float), np.asarray(times)).exponent
        preamble.append(f"loglog_slope={slope:.3f}")
    _emit_table(["n_particles", "t_epoch_med_ms", "t_epoch_p90_ms"], rows, sys.stdout, preamble)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--runs", type=int, default=None, help="override run.runs")
    parser.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    parser.add_argument("--out", default="magbayes_out", help="artifact directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magbayes",
        description="Adaptive Bayesian magnetometry toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="adaptive estimation runs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("track", help="tracking runs with prior resets")
    _add_run_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("sweep", help="estimation across bunching factors")
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fft", help="fringe spectroscopy")
    p.add_argument("--data", required=True, help="fringe file (text or binary)")
    p.add_argument("--out", default=None, help="optional artifact directory")
    p.set_defaults(func=cmd_fft)

    p = sub.add_parser("ingest", help="validate and convert fringe files")
    p.add_argument("--input", required=True, help="fringe file to read")
    p.add_argument("--output", default=None, help="optional converted file to write")
    p.add_argument(
        "--to", default="auto", choices=["auto", "text", "binary"], help="output format"
    )
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("bench", help="inference cost across ensemble sizes")
    p.add_argument(
        "--particles", default="1000,10000,100000", help="comma-separated ensemble sizes"
    )
    p.add_argument("--epochs", type=int, default=200, help="epochs per ensemble size")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FringeFormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
