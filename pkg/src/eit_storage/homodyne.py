"""Homodyne detection with the coupling leak as local oscillator.

A detector behind the polariser sees

    I = I_C + I_P + alpha * sqrt(I_C * I_P) * cos(phi_probe - phi_LO),

with alpha <= 2 absorbing imperfect mode overlap.  The LO phase is scanned
slowly by a piezo mirror, so each shot (trace) has its own, constant LO
phase.  Processing follows the accumulate-and-envelope method: the upper and
lower envelopes over many shots sit at relative phases 0 and pi.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d

from .bloch_core import wrap_phase


class PhaseCoverageError(ValueError):
    """LO phases do not cover a full period."""


class DegenerateFitError(ValueError):
    """Interference signal in a window is indistinguishable from noise."""


class ZeroProbeError(ValueError):
    """Calibration probe intensity too small to measure the contrast."""


class ScanTooFastWarning(UserWarning):
    """LO phase drifts appreciably during one shot."""


@dataclass(frozen=True)
class HomodyneConfig:
    lo_intensity: float = 1.0
    contrast: float = 1.65
    scan_frequency: float = 0.02  # Hz
    scan_amplitude: float = 10 * np.pi  # rad
    sample_rate: float = 250e6  # Hz
    noise_rms: float = 0.0
    n_phases: int = 64
    probe_peak_intensity: float = 0.04  # detector units at the input pulse peak

    def __post_init__(self):
        if not 0 < self.contrast <= 2:
            raise ValueError(f"contrast must lie in (0, 2], got {self.contrast}")
        if self.lo_intensity <= 0:
            raise ValueError("lo_intensity must be > 0")
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be >= 0")
        if self.sample_rate <= 0 or self.scan_frequency < 0:
            raise ValueError("sample_rate must be > 0 and scan_frequency >= 0")


@dataclass(frozen=True)
class DetectorTrace:
    times: np.ndarray
    intensity: np.ndarray
    lo_phase: float | np.ndarray
    shot_id: int = 0

    @property
    def mean_lo_phase(self) -> float:
        return float(np.mean(self.lo_phase))


class EnvelopePair(NamedTuple):
    times: np.ndarray
    upper: np.ndarray
    lower: np.ndarray


class Inversion(NamedTuple):
    intensity: np.ndarray
    residual: np.ndarray
    clamped: np.ndarray


def resample(times, field, sample_rate: float):
    """Complex field interpolated onto a uniform grid at ``sample_rate``."""
    times = np.asarray(times, float)
    n = int(np.floor((times[-1] - times[0]) * sample_rate)) + 1
    grid = times[0] + np.arange(n) / sample_rate
    field = np.asarray(field, complex)
    return grid, np.interp(grid, times, field.real) + 1j * np.interp(grid, times, field.imag)


def synthesize_trace(
    times,
    probe,
    cfg: HomodyneConfig,
    lo_phase: float,
    *,
    shot_id: int = 0,
    rng: np.random.Generator | None = None,
) -> DetectorTrace:
    """Detector signal for one shot; ``probe`` is in sqrt(detector units), LO-referenced."""
    times = np.asarray(times, float)
    probe = np.asarray(probe, complex)
    duration = times[-1] - times[0] if len(times) else 0.0
    if cfg.scan_frequency * duration > 0.01:
        warnings.warn(
            f"LO scan drifts {cfg.scan_frequency * duration:.3g} periods during one shot",
            ScanTooFastWarning,
            stacklevel=2,
        )
    ip = np.abs(probe) ** 2
    ic = cfg.lo_intensity
    signal = ic + ip + cfg.contrast * np.sqrt(ic) * np.real(probe * np.exp(-1j * lo_phase))
    if cfg.noise_rms > 0:
        rng = rng if rng is not None else np.random.default_rng()
        signal = signal + rng.normal(0.0, cfg.noise_rms, size=signal.shape)
    return DetectorTrace(times, signal, float(lo_phase), shot_id)


def scan_phases(cfg: HomodyneConfig, offset: float = 0.0) -> np.ndarray:
    """LO phases of ``cfg.n_phases`` shots spread evenly over one monotone sweep of the piezo."""
    return offset + cfg.scan_amplitude * np.arange(cfg.n_phases) / cfg.n_phases


def synthesize_scan(
    times,
    probe,
    cfg: HomodyneConfig,
    *,
    offset: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[DetectorTrace]:
    phases = scan_phases(cfg, offset)
    return [
        synthesize_trace(times, probe, cfg, phi, shot_id=j, rng=rng) for j, phi in enumerate(phases)
    ]


def check_phase_coverage(traces: Sequence[DetectorTrace]) -> None:
    """Require >= 8 distinct LO phases whose recorded sweep covers a full period.

    A sweep of n phases from phi_min to phi_max is credited with
    (phi_max - phi_min) * n / (n - 1), one sample spacing beyond the span.
    """
    phases = np.unique([t.mean_lo_phase for t in traces])
    if len(phases) < 8:
        raise PhaseCoverageError(f"need >= 8 distinct LO phases, got {len(phases)}")
    n = len(phases)
    coverage = (phases[-1] - phases[0]) * n / (n - 1)
    if coverage < 2 * np.pi - 1e-9:
        raise PhaseCoverageError(f"LO phases cover {coverage:.4g} rad < 2 pi")


def _stack(traces: Sequence[DetectorTrace]) -> tuple[np.ndarray, np.ndarray]:
    times = traces[0].times
    for tr in traces[1:]:
        if len(tr.times) != len(times) or not np.array_equal(tr.times, times):
            raise ValueError("traces must share a common time grid")
    return times, np.vstack([tr.intensity for tr in traces])


def extract_envelopes(traces: Sequence[DetectorTrace], smoothing: int = 1) -> EnvelopePair:
    """Per-sample max and min over the shots, after an optional moving average."""
    check_phase_coverage(traces)
    times, stack = _stack(traces)
    if smoothing > 1:
        stack = uniform_filter1d(stack, smoothing, axis=1, mode="nearest")
    return EnvelopePair(times, stack.max(axis=0), stack.min(axis=0))


def invert_interference(env: EnvelopePair, lo_intensity: float, contrast: float) -> Inversion:
    """Probe intensity from the envelope mean; negative values are clamped and flagged."""
    if not contrast > 0:
        raise ValueError("contrast must be > 0")
    ip = 0.5 * (env.upper + env.lower) - lo_intensity
    clamped = ip < 0
    ip = np.where(clamped, 0.0, ip)
    residual = np.abs((env.upper - env.lower) - 2 * contrast * np.sqrt(lo_intensity * ip))
    return Inversion(ip, residual, clamped)


def _window_means(traces, window):
    times, stack = _stack(traces)
    mask = (times >= window[0]) & (times <= window[1])
    if not mask.any():
        raise ValueError(f"window {window} contains no samples")
    return stack[:, mask].mean(axis=1), int(mask.sum())


def estimate_contrast(
    traces: Sequence[DetectorTrace],
    lo_intensity: float,
    probe_intensity: float | None = None,
    window: tuple[float, float] | None = None,
    threshold: float = 1e-9,
) -> float:
    """Contrast factor from a cw calibration segment.

    Each shot is averaged over ``window`` (the whole trace by default) before
    taking the extrema, which acts as a smoothing window spanning the
    segment.  Without ``probe_intensity`` the probe level is read off the
    envelope mean.
    """
    check_phase_coverage(traces)
    if window is None:
        window = (traces[0].times[0], traces[0].times[-1])
    means, _ = _window_means(traces, window)
    upper, lower = means.max(), means.min()
    ip = probe_intensity if probe_intensity is not None else 0.5 * (upper + lower) - lo_intensity
    if ip < threshold:
        raise ZeroProbeError(f"calibration probe intensity {ip:.3g} below threshold")
    return float((upper - lower) / (2 * np.sqrt(lo_intensity * ip)))


def window_phase(
    traces: Sequence[DetectorTrace], window: tuple[float, float], noise_rms: float = 0.0
) -> tuple[float, float]:
    """(phase, amplitude) of the interference term averaged over ``window``.

    Shot means follow c + A cos(phi_window - phi_LO); the linear least-squares
    fit in (1, cos phi_LO, sin phi_LO) gives phi_window.
    """
    means, n_samples = _window_means(traces, window)
    phases = np.array([t.mean_lo_phase for t in traces])
    design = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)])
    coef, *_ = np.linalg.lstsq(design, means, rcond=None)
    amp = float(np.hypot(coef[1], coef[2]))
    resid = means - design @ coef
    floor = max(
        float(np.sqrt(np.mean(resid**2))),
        noise_rms / np.sqrt(n_samples),
        1e-13 * float(np.max(np.abs(means))),
    )
    if amp <= 3 * floor:
        raise DegenerateFitError(
            f"interference amplitude {amp:.3g} within 3x noise floor {floor:.3g} in window {window}"
        )
    return float(np.arctan2(coef[2], coef[1])), amp


def extract_relative_phase(
    traces: Sequence[DetectorTrace],
    leak_window: tuple[float, float],
    retrieved_window: tuple[float, float],
    noise_rms: float = 0.0,
) -> float:
    """Phase of the retrieved pulse relative to the leak, wrapped to (-pi, pi]."""
    check_phase_coverage(traces)
    leak, _ = window_phase(traces, leak_window, noise_rms)
    ret, _ = window_phase(traces, retrieved_window, noise_rms)
    return wrap_phase(ret - leak)


# --- file format --------------------------------------------------------------

TRACE_COLUMNS = ("time_s", "intensity", "lo_phase_rad", "shot_id")


def write_traces(traces: Sequence[DetectorTrace], path) -> Path:
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for tr in traces:
            lo = np.broadcast_to(np.asarray(tr.lo_phase, float), tr.times.shape)
            for t, i, phi in zip(tr.times, tr.intensity, lo):
                fh.write("%.17g,%.17g,%.17g,%d\n" % (t, i, phi, tr.shot_id))
    return path


def read_traces(path) -> list[DetectorTrace]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    shots = data[:, 3].astype(int)
    traces = []
    for shot in dict.fromkeys(shots):
        rows = data[shots == shot]
        lo = rows[:, 2]
        lo_phase = float(lo[0]) if np.all(lo == lo[0]) else lo.copy()
        traces.append(DetectorTrace(rows[:, 0].copy(), rows[:, 1].copy(), lo_phase, int(shot)))
    return traces
