"""Storage metrics, decay fits, phase curves and regime diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import curve_fit

from .bloch_core import LambdaParams, eit_phase_shift, wrap_phase
from .protocol import SimulationResult


class ZeroReferenceError(ValueError):
    """Reference pulse carries no energy."""


class FitError(RuntimeError):
    """Decay fit did not converge."""


@dataclass(frozen=True)
class EfficiencyPoint:
    storage_time: float
    detuning: float
    efficiency: float

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")


class DecayFit(NamedTuple):
    amplitude: float
    decay_time: float
    residual: float
    decaying: bool


def _energy(t, intensity, window=None):
    t = np.asarray(t, float)
    intensity = np.asarray(intensity, float)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        t, intensity = t[mask], intensity[mask]
    if len(t) < 2:
        return 0.0
    return float(trapezoid(intensity, t))


def storage_efficiency(signal, reference=None, *, time=None, window=None) -> float:
    """Retrieved energy over the energy of a pulse sent through an empty cell.

    Pass a :class:`SimulationResult`, or probe-intensity arrays ``signal`` and
    ``reference`` on the common ``time`` grid; ``window`` restricts the
    signal integral to the retrieved pulse.
    """
    if isinstance(signal, SimulationResult):
        res = signal
        t = res.time_grid
        num = _energy(t, np.abs(res.probe_out_amplitude) ** 2, res.retrieved_window)
        den = _energy(t, np.abs(res.reference_out_amplitude) ** 2)
    else:
        if time is None or reference is None:
            raise ValueError("array input needs reference and time")
        num = _energy(time, signal, window)
        den = _energy(time, reference)
    if den <= 0:
        raise ZeroReferenceError("reference pulse has zero energy")
    return num / den


def leak_level(result: SimulationResult) -> float:
    """Leak energy over incoming pulse energy."""
    t = result.time_grid
    den = _energy(t, np.abs(result.probe_in) ** 2)
    if den <= 0:
        raise ZeroReferenceError("input pulse has zero energy")
    return _energy(t, np.abs(result.probe_out_amplitude) ** 2, result.leak_window) / den


def _window_integral(result: SimulationResult, window) -> complex:
    mask = result.window_mask(window)
    return complex(trapezoid(result.homodyne_field()[mask], result.time_grid[mask]))


def retrieved_phase(result: SimulationResult) -> float:
    """Retrieved-minus-leak phase as the homodyne measurement sees it.

    Each window's phase is that of the LO-referenced field integrated over
    the window, which is what the shot-averaged interference term picks up.
    """
    leak = _window_integral(result, result.leak_window)
    ret = _window_integral(result, result.retrieved_window)
    if leak == 0 or ret == 0:
        raise ValueError("leak or retrieved window carries no field")
    return wrap_phase(np.angle(ret) - np.angle(leak))


def retrieval_onset_phase(result: SimulationResult, duration: float = 20e-9) -> float:
    """Phase of the first ``duration`` of retrieved light relative to the leak.

    Diagnostic for the short-time readout picture, in which the emitted
    field initially carries the phase of the stored coherence.
    """
    start = result.retrieved_window[0]
    leak = _window_integral(result, result.leak_window)
    onset = _window_integral(result, (start, start + duration))
    return wrap_phase(np.angle(onset) - np.angle(leak))


def fit_exponential_decay(points: Sequence[EfficiencyPoint], max_iter: int = 2000) -> DecayFit:
    """Least-squares fit of A * exp(-tau / T_d) on linear efficiency.

    Starts from a log-linear fit.  A non-positive fitted rate returns
    ``decay_time = inf`` with ``decaying=False``.
    """
    if len(points) < 3:
        raise ValueError("need at least 3 points")
    tau = np.array([pt.storage_time for pt in points], float)
    eff = np.array([pt.efficiency for pt in points], float)
    if len(np.unique(tau)) != len(tau):
        raise ValueError("storage times must be distinct")
    if np.any(eff <= 0):
        raise ValueError("efficiencies must be > 0")
    span = np.ptp(tau)
    slope, intercept = np.polyfit(tau, np.log(eff), 1)

    def model(x, amp, rate):
        return amp * np.exp(-rate * x)

    try:
        (amp, rate), _ = curve_fit(
            model, tau, eff, p0=(np.exp(intercept), -slope), maxfev=max_iter
        )
    except RuntimeError as exc:
        raise FitError(str(exc)) from exc
    residual = float(np.sqrt(np.mean((model(tau, amp, rate) - eff) ** 2)))
    if rate * span <= 1e-9:
        return DecayFit(float(amp), float("inf"), residual, False)
    return DecayFit(float(amp), float(1.0 / rate), residual, True)


def phase_vs_detuning_curve(
    gamma_raman: float, gamma_opt: float, rabi_coupling: complex, detunings
) -> list[tuple[float, float]]:
    """|phi_EIT| versus optical detuning (all arguments in rad/s)."""
    out = []
    for d in detunings:
        d = float(d)
        if not np.isfinite(d):
            raise ValueError("detunings must be finite")
        p = LambdaParams(
            gamma_opt=gamma_opt,
            gamma_raman=gamma_raman,
            gamma_pol=1.0,
            rabi_coupling=rabi_coupling,
            detuning_probe=d,
            detuning_coupling=d,
        )
        out.append((d, abs(eit_phase_shift(p))))
    return out


def optical_depth(alpha_l: float) -> float:
    if alpha_l < 0:
        raise ValueError("alphaL must be >= 0")
    return alpha_l / 2


def adiabaticity_parameter(duration: float, depth: float, gamma_pol: float) -> float:
    """T * d * gamma; storage is adiabatic when this is >> 1."""
    if min(duration, depth, gamma_pol) < 0:
        raise ValueError("arguments must be >= 0")
    return duration * depth * gamma_pol


def write_table(path, header: Sequence[str], rows) -> Path:
    """CSV with a header row, '.' decimals and '\\n' line endings."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return v
