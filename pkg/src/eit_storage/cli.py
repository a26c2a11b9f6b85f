"""Command-line front end.

Subcommands
-----------
simulate        one storage shot -> result.csv, summary.json (+ detector traces)
sweep           efficiency, leak and phase along one scenario axis -> sweep.csv
process-traces  homodyne traces -> recovered probe intensity and relative phase
config          write the normalised form of a scenario file (or the defaults)

Exit codes: 0 success, 2 invalid input, 3 solver divergence, 4 LO phase
coverage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .analysis import (
    leak_level,
    phase_vs_detuning_curve,
    retrieved_phase,
    storage_efficiency,
    write_table,
)
from .bloch_core import StepSizeUnderflowError, eit_phase_shift
from .doppler import effective_gamma
from .homodyne import (
    PhaseCoverageError,
    estimate_contrast,
    extract_envelopes,
    extract_relative_phase,
    invert_interference,
    read_traces,
    resample,
    synthesize_scan,
    write_traces,
)
from .protocol import DivergenceError, SimulationResult, run_storage, write_result

log = logging.getLogger("eit_storage")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_COVERAGE = 0, 2, 3, 4
SWEEP_COLUMNS = ("axis_value", "efficiency", "leak_level", "phase_rad")


# --- scenario helpers ----------------------------------------------------------


def simulate(cfg: cfgmod.ScenarioConfig) -> SimulationResult:
    return run_storage(
        cfg.timeline_config(),
        cfg.cell_config(),
        cfg.lambda_params(),
        cfg.velocity_grid(),
        dt_max=cfg.run.dt_max_s,
        storage_decay=cfg.timeline.storage_decay,
    )


def closed_form_phase(cfg: cfgmod.ScenarioConfig) -> float:
    """phi_EIT for the scenario with the effective optical width."""
    p = cfg.lambda_params()
    return eit_phase_shift(replace(p, gamma_opt=effective_gamma(cfg.velocity_grid())))


def _phase_or_nan(result: SimulationResult) -> float:
    try:
        return retrieved_phase(result)
    except ValueError:
        return math.nan


def summarize(cfg: cfgmod.ScenarioConfig, result: SimulationResult) -> dict:
    phase = _phase_or_nan(result)
    return {
        "efficiency": storage_efficiency(result),
        "leak_level": leak_level(result),
        "phase_rad": None if math.isnan(phase) else phase,
        "phase_closed_form_rad": closed_form_phase(cfg),
        "leak_window_s": list(result.leak_window),
        "retrieved_window_s": list(result.retrieved_window),
        "n_steps": int(result.meta.get("n_steps", len(result.time_grid) - 1)),
        "seed": cfg.run.seed,
    }


def _rng(seed: int, stream: int) -> np.random.Generator:
    """Independent counter-based stream ``stream`` derived from the global seed."""
    child = np.random.SeedSequence(seed).spawn(stream + 1)[stream]
    return np.random.Generator(np.random.Philox(child))


def detector_traces(cfg: cfgmod.ScenarioConfig, result: SimulationResult):
    """Shot traces of the simulated exit field and a cw calibration segment."""
    hcfg = cfg.homodyne_config()
    scale = math.sqrt(hcfg.probe_peak_intensity) / abs(result.probe_in).max()
    times, field = resample(result.time_grid, result.homodyne_field() * scale, hcfg.sample_rate)
    traces = synthesize_scan(times, field, hcfg, rng=_rng(cfg.run.seed, 0))
    n_cal = max(2, int(round(cfg.homodyne.calibration_duration_s * hcfg.sample_rate)))
    cal_t = np.arange(n_cal) / hcfg.sample_rate
    cal_field = np.full(n_cal, math.sqrt(hcfg.probe_peak_intensity), complex)
    calibration = synthesize_scan(cal_t, cal_field, hcfg, rng=_rng(cfg.run.seed, 1))
    return traces, calibration


def sweep_row(cfg: cfgmod.ScenarioConfig, axis: str, value: float) -> tuple:
    point = cfg.with_axis_value(axis, value)
    result = simulate(point)
    return (float(value), storage_efficiency(result), leak_level(result), _phase_or_nan(result))


def closed_form_rows(cfg: cfgmod.ScenarioConfig, values) -> list[tuple]:
    p = cfg.lambda_params()
    curve = phase_vs_detuning_curve(
        p.gamma_raman, p.gamma_opt, p.rabi_coupling, [2 * math.pi * v for v in values]
    )
    return [(float(v), math.nan, math.nan, phi) for v, (_, phi) in zip(values, curve)]


# --- subcommands -------------------------------------------------------------------


def _load(args) -> cfgmod.ScenarioConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise cfgmod.ConfigError("--seed must be >= 0")
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    return cfg


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = simulate(cfg)
    write_result(result, out / "result.csv")
    summary = summarize(cfg, result)
    _write_json(out / "summary.json", summary)
    if args.emit_traces:
        traces, calibration = detector_traces(cfg, result)
        write_traces(traces, out / "traces.csv")
        write_traces(calibration, out / "calibration_traces.csv")
    log.info("efficiency %.4g, leak %.4g, phase %s", summary["efficiency"], summary["leak_level"], summary["phase_rad"])
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    sweep = cfg.sweep
    if args.axis is not None:
        sweep = replace(sweep, axis=args.axis)
    if args.points is not None:
        sweep = replace(sweep, points=args.points)
    cfg = replace(cfg, sweep=sweep)
    try:
        cfg.validate()
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None
    values = cfg.axis_values()
    if args.closed_form:
        if sweep.axis != "detuning":
            raise cfgmod.ConfigError("--closed-form needs the detuning axis")
        rows = closed_form_rows(cfg, values)
    elif cfg.run.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            rows = list(pool.map(sweep_row, [cfg] * len(values), [sweep.axis] * len(values), values))
    else:
        rows = [sweep_row(cfg, sweep.axis, v) for v in values]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return EXIT_OK


def _windows(args) -> tuple[tuple[float, float], tuple[float, float]]:
    if args.summary:
        data = json.loads(Path(args.summary).read_text())
        leak, ret = tuple(data["leak_window_s"]), tuple(data["retrieved_window_s"])
    else:
        leak, ret = args.leak_window, args.retrieved_window
        if leak is None or ret is None:
            raise ValueError("give --summary or both --leak-window and --retrieved-window")
    return tuple(map(float, leak)), tuple(map(float, ret))


def cmd_process_traces(args) -> int:
    traces = read_traces(args.traces)
    if args.estimate_contrast:
        if not args.calibration:
            raise ValueError("--estimate-contrast needs --calibration")
        contrast = estimate_contrast(read_traces(args.calibration), args.lo_intensity, args.probe_intensity)
    elif args.contrast is not None:
        contrast = args.contrast
    else:
        raise ValueError("give --contrast or --estimate-contrast")
    env = extract_envelopes(traces, smoothing=args.smoothing)
    inv = invert_interference(env, args.lo_intensity, contrast)
    leak, ret = _windows(args)
    phase = extract_relative_phase(traces, leak, ret, noise_rms=args.noise_rms)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(
        out / "probe_intensity.csv",
        ("time_s", "probe_intensity", "residual", "clamped_flag"),
        [(float(t), float(i), float(r), int(c)) for t, i, r, c in zip(env.times, inv.intensity, inv.residual, inv.clamped)],
    )
    _write_json(
        out / "phase.json",
        {
            "relative_phase_rad": phase,
            "contrast": contrast,
            "lo_intensity": args.lo_intensity,
            "leak_window_s": list(leak),
            "retrieved_window_s": list(ret),
            "n_clamped": int(inv.clamped.sum()),
        },
    )
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = _load(args)
    text = cfgmod.dumps(cfg)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eit-storage", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario(p, out_help):
        p.add_argument("--config", help="scenario TOML file (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--out", required=out_help is not None, help=out_help)

    p = sub.add_parser("simulate", help="simulate one storage shot")
    scenario(p, "output directory")
    p.add_argument("--emit-traces", action="store_true", help="also write synthetic detector traces")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one scenario axis")
    scenario(p, "output directory")
    p.add_argument("--axis", choices=cfgmod.AXES)
    p.add_argument("--points", type=int)
    p.add_argument("--closed-form", action="store_true", help="closed-form phase curve, no simulation")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("process-traces", help="recover probe intensity and phase from traces")
    p.add_argument("traces")
    p.add_argument("--lo-intensity", type=float, required=True, help="I_C in detector units")
    p.add_argument("--contrast", type=float, help="interference contrast alpha")
    p.add_argument("--estimate-contrast", action="store_true")
    p.add_argument("--calibration", help="cw calibration traces for --estimate-contrast")
    p.add_argument("--probe-intensity", type=float, help="known calibration probe intensity")
    p.add_argument("--summary", help="summary.json giving the leak and retrieved windows")
    p.add_argument("--leak-window", type=float, nargs=2, metavar=("START", "STOP"))
    p.add_argument("--retrieved-window", type=float, nargs=2, metavar=("START", "STOP"))
    p.add_argument("--smoothing", type=int, default=1)
    p.add_argument("--noise-rms", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_process_traces)

    p = sub.add_parser("config", help="write the normalised scenario")
    scenario(p, None)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PhaseCoverageError as exc:
        print(f"error: LO phase coverage: {exc}", file=sys.stderr)
        return EXIT_COVERAGE
    except (DivergenceError, StepSizeUnderflowError) as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
