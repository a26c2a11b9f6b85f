"""Storage protocol: field timelines, sliced-cell propagation and cw scans.

The cell is cut into ``n_slices`` slices along z.  Retardation (L/c ~ 0.2 ns)
is neglected, so in the co-moving frame the probe at every slice is known at
the same instants and a slice only needs the field leaving its upstream
neighbour.  Each slice holds one ensemble (optionally several Doppler classes)
whose full density matrix is stepped with exact exponentials of the
Liouvillian, each step split into a long part and a short end-point tail
(see ``_evolve_slice``).  The probe obeys

    d O_P / dz = -i kappa <sigma_{e,+1}>,

with the sign fixed so that a two-level medium absorbs, and ``kappa`` is
calibrated so that a weak cw probe with the coupling off, at line centre,
is transmitted with intensity exp(-absorption_depth).  Slices are coupled
with a midpoint rule (the atoms see the field half way through the slice),
which is second order in the slice thickness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .bloch_core import (
    _COMM,
    E,
    M,
    P,
    DensityMatrix3,
    LambdaParams,
    expm_batch,
    liouvillian,
    relaxation_superoperator,
    steady_state,
)
from .doppler import VelocityGrid, single_class

log = logging.getLogger(__name__)

DEFAULT_RAMP = 10e-9


class DivergenceError(RuntimeError):
    """The propagated probe grew beyond any physical bound."""


class NoPeakError(RuntimeError):
    """No transparency peak found in a cw scan."""


@dataclass(frozen=True)
class FieldTimeline:
    """Coupling and probe Rabi frequencies versus time for one storage shot.

    The probe rises as exp((t - cutoff)/rise) and is cut abruptly at
    ``probe_cutoff_time``; the coupling is on until ``coupling_off_time``,
    dark for ``storage_time`` and then on again at ``coupling_read_rabi``.
    Abrupt switches are linear ramps of ``ramp_time`` (0 gives ideal steps).
    Time zero is the start of the simulated shot.
    """

    probe_rise_time: float
    probe_cutoff_time: float
    probe_peak_rabi: complex
    coupling_on_rabi: complex
    coupling_off_time: float
    storage_time: float
    coupling_read_rabi: complex
    ramp_time: float = DEFAULT_RAMP
    retrieval_rises: float = 5.0

    def __post_init__(self):
        if not self.probe_rise_time > 0:
            raise ValueError("probe_rise_time must be > 0")
        if not 0 < self.probe_cutoff_time <= self.coupling_off_time:
            raise ValueError("need 0 < probe_cutoff_time <= coupling_off_time")
        if self.storage_time < 0:
            raise ValueError("storage_time must be >= 0")
        if self.ramp_time < 0:
            raise ValueError("ramp_time must be >= 0")

    @classmethod
    def standard(
        cls,
        p: LambdaParams,
        rise_time: float = 2e-6,
        storage_time: float = 3e-6,
        n_rise: float = 8.0,
        ramp_time: float = DEFAULT_RAMP,
    ) -> "FieldTimeline":
        """Probe cut and coupling switched off together, ``n_rise`` rise times into the shot."""
        cut = n_rise * rise_time
        return cls(
            probe_rise_time=rise_time,
            probe_cutoff_time=cut,
            probe_peak_rabi=p.rabi_probe,
            coupling_on_rabi=p.rabi_coupling,
            coupling_off_time=cut,
            storage_time=storage_time,
            coupling_read_rabi=p.rabi_coupling_read,
            ramp_time=ramp_time,
        )

    @property
    def reopen_time(self) -> float:
        return self.coupling_off_time + self.storage_time

    @property
    def end_time(self) -> float:
        return self.reopen_time + self.ramp_time + self.retrieval_rises * self.probe_rise_time

    @property
    def leak_window(self) -> tuple[float, float]:
        return 0.0, self.coupling_off_time + self.ramp_time

    @property
    def retrieved_window(self) -> tuple[float, float]:
        return self.reopen_time, self.reopen_time + self.retrieval_rises * self.probe_rise_time

    @property
    def dark_window(self) -> tuple[float, float]:
        return self.coupling_off_time, self.reopen_time

    def probe(self, t):
        t = np.asarray(t, float)
        cut, ramp = self.probe_cutoff_time, self.ramp_time
        rising = self.probe_peak_rabi * np.exp(np.minimum(t - cut, 0.0) / self.probe_rise_time)
        if ramp > 0:
            tail = self.probe_peak_rabi * np.clip(1 - (t - cut) / ramp, 0.0, 1.0)
        else:
            tail = np.zeros_like(rising)
        return np.where(t <= cut, rising, tail)

    def coupling(self, t):
        t = np.asarray(t, float)
        off, reopen, ramp = self.coupling_off_time, self.reopen_time, self.ramp_time
        if ramp > 0:
            down = self.coupling_on_rabi * np.clip(1 - (t - off) / ramp, 0.0, 1.0)
            up = self.coupling_read_rabi * np.clip((t - reopen) / ramp, 0.0, 1.0)
        else:
            down = np.zeros(t.shape, complex)
            up = np.full(t.shape, self.coupling_read_rabi, complex)
        return np.where(t < off, self.coupling_on_rabi, np.where(t < reopen, down, up))

    def fields(self, t: float) -> tuple[complex, complex]:
        return complex(self.coupling(t)), complex(self.probe(t))

    def event_times(self) -> list[float]:
        cut, off, reopen, ramp = (
            self.probe_cutoff_time,
            self.coupling_off_time,
            self.reopen_time,
            self.ramp_time,
        )
        ev = {cut, off, reopen}
        if ramp > 0:
            ev |= {cut + ramp, min(off + ramp, reopen), reopen + ramp}
        return sorted(ev)


@dataclass(frozen=True)
class CellConfig:
    """Vapour cell.  ``absorption_depth`` is the line-centre intensity exponent alpha*L."""

    length: float = 0.06
    absorption_depth: float = 6.8
    n_slices: int = 32
    pumped_fraction: float = 1.0
    coupling_attenuation: bool = False
    beer_coefficient: float = 0.0  # 1/m, intensity

    def __post_init__(self):
        if self.absorption_depth < 0:
            raise ValueError("absorption_depth must be >= 0")
        if self.n_slices < 1:
            raise ValueError("n_slices must be >= 1")
        if not 0 < self.pumped_fraction <= 1:
            raise ValueError("pumped_fraction must lie in (0, 1]")
        if self.length <= 0:
            raise ValueError("length must be > 0")
        if self.beer_coefficient < 0:
            raise ValueError("beer_coefficient must be >= 0")

    def coupling_factor(self, z: float) -> float:
        """Amplitude factor of the coupling beam at depth ``z``."""
        if not self.coupling_attenuation:
            return 1.0
        return float(np.exp(-0.5 * self.beer_coefficient * z))


@dataclass(frozen=True)
class SimulationResult:
    time_grid: np.ndarray
    probe_in: np.ndarray
    probe_out_amplitude: np.ndarray
    reference_out_amplitude: np.ndarray
    coupling_out: np.ndarray
    leak_window: tuple[float, float]
    retrieved_window: tuple[float, float]
    dark_window: tuple[float, float] = (0.0, 0.0)
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def coupling_on(self) -> np.ndarray:
        return np.abs(self.coupling_out) > 0

    def lo_phase(self) -> np.ndarray:
        """Phase of the coupling leak used as local oscillator (held through dark gaps)."""
        phase = np.angle(self.coupling_out)
        on = self.coupling_on
        if not on.any():
            return np.zeros_like(phase)
        idx = np.where(on, np.arange(len(phase)), 0)
        np.maximum.accumulate(idx, out=idx)
        first = np.argmax(on)
        idx[:first] = first
        return phase[idx]

    def homodyne_field(self) -> np.ndarray:
        """Exit probe referenced to the local-oscillator phase."""
        return self.probe_out_amplitude * np.exp(-1j * self.lo_phase())

    def window_mask(self, window: tuple[float, float]) -> np.ndarray:
        t = self.time_grid
        return (t >= window[0]) & (t <= window[1])


# --- time grid ---------------------------------------------------------------


def time_grid(
    events,
    t_end: float,
    dt_max: float = 20e-9,
    dt_fine: float = 1e-9,
    grading: float = 0.2,
    quiet: tuple[tuple[float, float], ...] = (),
    dt_quiet: float = 250e-9,
) -> np.ndarray:
    """Graded grid: ``dt_fine`` next to switching events, growing linearly to ``dt_max``.

    Inside the ``quiet`` intervals (no applied fields) the cap is ``dt_quiet``.
    """
    events = np.array(sorted({0.0, *[e for e in events if 0 <= e <= t_end], t_end}))
    t = [0.0]
    while t[-1] < t_end:
        now = t[-1]
        d = np.min(np.abs(events - now))
        cap = dt_max
        if any(a <= now < b for a, b in quiet):
            cap = max(dt_max, dt_quiet)
        h = min(cap, dt_fine + grading * d)
        nxt = now + h
        ahead = events[events > now * (1 + 1e-15) + 1e-18]
        if ahead.size and ahead[0] < nxt + 0.5 * dt_fine:
            nxt = ahead[0]
        t.append(min(nxt, t_end))
    return np.array(t)


# --- calibration -------------------------------------------------------------


def _linear_response(p: LambdaParams, grid: VelocityGrid, omega_c: complex, delta: float = 0.0) -> complex:
    """<sigma_{e,+1}> / (-i O_P) for a weak cw probe, atoms fully in |+1>."""
    total = 0.0j
    for s, w in zip(grid.shifts, grid.weights):
        a = p.gamma_opt - 1j * (delta + s)
        b = p.gamma_raman - 1j * p.raman_detuning
        total += w * b / (a * b + abs(omega_c) ** 2) if omega_c != 0 else w / a
    return total


def calibrate_kappa_dz(p: LambdaParams, cell: CellConfig, grid: VelocityGrid) -> float:
    """kappa * dz so that the midpoint slice rule transmits exp(-alpha L) at line centre."""
    if cell.absorption_depth == 0:
        return 0.0
    r0 = _linear_response(replace(p, detuning_probe=0.0, detuning_coupling=0.0), grid, 0.0)
    q = np.exp(-cell.absorption_depth / (2 * cell.n_slices))

    def gain(kdz):
        x = kdz * r0
        return abs(1 - x + 0.5 * x * x) - q

    upper = 1.0 / abs(r0)  # gain falls monotonically from 1 to 0.5 on [0, upper]
    if gain(upper) > 0:
        raise ValueError(
            f"absorption_depth {cell.absorption_depth} too large for {cell.n_slices} slices; "
            "increase n_slices"
        )
    return brentq(gain, 0.0, upper, xtol=1e-300, rtol=1e-15)


# --- propagation engine -------------------------------------------------------


def _slice_step_operators(p, grid, relax, relax_dark):
    """Field-independent part of the per-class Liouvillian, for light and dark steps."""
    base = liouvillian(p, 0.0, 0.0, grid.shifts, relaxation=relax)
    if relax_dark is relax:
        return base, base
    return base, liouvillian(p, 0.0, 0.0, grid.shifts, relaxation=relax_dark)


def _generators(base, base_dark, dark, oc, op):
    k_em, k_me = _COMM[E, M], _COMM[M, E]
    k_ep, k_pe = _COMM[E, P], _COMM[P, E]
    oc, op = oc[:, None, None, None], op[:, None, None, None]
    return np.where(dark[:, None, None, None], base_dark, base) + (
        oc * k_em + np.conj(oc) * k_me + op * k_ep + np.conj(op) * k_pe
    )


def _evolve_slice(
    times, probe, coupling, dark, rho0_vec, base, base_dark, weights, tail, chunk: int = 512
) -> np.ndarray:
    """Step one slice through the grid; returns <sigma_{e,+1}> at every grid time.

    Fields are piecewise linear between grid times.  Each step is split into
    a long part and a short ``tail`` (a few optical lifetimes) that carries
    the end-point fields, with the long part's fields chosen so the field
    integral over the step is exact.  The optical coherences then sit in
    equilibrium with the end-point fields, as they do physically; a plain
    midpoint step would leave them half a step behind, a first-order error
    of relative size h*|O_C|^2/(2*gamma_opt) in the EIT polarisation.

    The fields of a slice are known at every step before it is evolved, so
    the step propagators are built in batches and only the matrix-vector
    products run sequentially.
    """
    n_cls = len(weights)
    y = np.broadcast_to(rho0_vec, (n_cls, 9)).astype(complex)
    pol = np.zeros(len(times), complex)
    pol[0] = weights @ y[:, E * 3 + P]
    h = np.diff(times)
    eps = np.minimum(0.5 * h, tail)
    frac = eps / (h - eps)
    op_b, oc_b = probe[1:], coupling[1:]
    op_a = 0.5 * (probe[1:] + probe[:-1]) * (1 + frac) - frac * op_b
    oc_a = 0.5 * (coupling[1:] + coupling[:-1]) * (1 + frac) - frac * oc_b
    for start in range(0, len(h), chunk):
        sl = slice(start, start + chunk)
        u_a = expm_batch(_generators(base, base_dark, dark[sl], oc_a[sl], op_a[sl]) * (h[sl] - eps[sl])[:, None, None, None])
        u_b = expm_batch(_generators(base, base_dark, dark[sl], oc_b[sl], op_b[sl]) * eps[sl, None, None, None])
        u = u_b @ u_a
        for j in range(u.shape[0]):
            y = np.einsum("cij,cj->ci", u[j], y)
            pol[start + j + 1] = weights @ y[:, E * 3 + P]
    return pol


def propagate(
    times: np.ndarray,
    probe_in: np.ndarray,
    coupling_in,
    p: LambdaParams,
    cell: CellConfig,
    grid: VelocityGrid | None = None,
    dark_raman_decay: float | None = None,
) -> np.ndarray:
    """Probe amplitude at the cell exit for a given entrance probe series.

    ``probe_in`` and ``coupling_in`` are entrance Rabi frequencies at the
    grid times; both are treated as piecewise linear in between.  Steps
    where the coupling vanishes at both ends use ``dark_raman_decay``
    (default ``p.gamma_raman``) for the Raman coherence.
    """
    grid = grid or single_class()
    times = np.asarray(times, float)
    probe = np.asarray(probe_in, complex).copy()
    coupling_in = np.asarray(coupling_in, complex)
    if probe.shape != times.shape or coupling_in.shape != times.shape:
        raise ValueError("probe_in and coupling_in must match the time grid")
    kdz = calibrate_kappa_dz(p, cell, grid)
    if kdz == 0:
        return probe
    relax = relaxation_superoperator(p.gamma_opt, p.gamma_raman, p.gamma_pol)
    relax_dark = relax
    if dark_raman_decay is not None and dark_raman_decay != p.gamma_raman:
        relax_dark = relaxation_superoperator(p.gamma_opt, dark_raman_decay, p.gamma_pol)
    base, base_dark = _slice_step_operators(p, grid, relax, relax_dark)
    rho0 = DensityMatrix3.pumped(cell.pumped_fraction).elements.reshape(9)
    dark = (coupling_in[1:] == 0) & (coupling_in[:-1] == 0)
    tail = 10.0 / p.gamma_opt
    bound = 10 * max(np.max(np.abs(probe)), 1e-300)
    dz = cell.length / cell.n_slices
    for k in range(cell.n_slices):
        oc = coupling_in * cell.coupling_factor((k + 0.5) * dz)
        pol = _evolve_slice(times, probe, oc, dark, rho0, base, base_dark, grid.weights, tail)
        mid = probe - 0.5j * kdz * pol
        pol = _evolve_slice(times, mid, oc, dark, rho0, base, base_dark, grid.weights, tail)
        probe = probe - 1j * kdz * pol
        if not np.all(np.isfinite(probe)) or np.max(np.abs(probe)) > bound:
            raise DivergenceError(
                f"probe amplitude exceeded 10x the input peak after slice {k}; "
                "reduce dt_max or increase n_slices"
            )
    return probe


def run_storage(
    timeline: FieldTimeline,
    cell: CellConfig,
    p: LambdaParams,
    grid: VelocityGrid | None = None,
    *,
    dt_max: float = 20e-9,
    dt_fine: float | None = None,
    storage_decay: str = "efficiency",
) -> SimulationResult:
    """Simulate one write / store / read shot through the cell.

    ``storage_decay`` selects how the Raman coherence decays while the
    coupling is off: ``"efficiency"`` uses gamma_raman/2 so that the
    retrieved energy falls as exp(-gamma_raman * tau) (decay time
    1/gamma_raman), ``"coherence"`` keeps gamma_raman so the energy falls
    twice as fast.  Detunings come from ``p``; Rabi frequencies from the
    timeline.
    """
    if storage_decay not in ("efficiency", "coherence"):
        raise ValueError(f"unknown storage_decay {storage_decay!r}")
    grid = grid or single_class()
    if dt_fine is None:
        dt_fine = min(1e-9, timeline.ramp_time / 10) if timeline.ramp_time > 0 else 1e-9
    off_end = timeline.coupling_off_time + timeline.ramp_time
    quiet = ((off_end, timeline.reopen_time),) if timeline.reopen_time > off_end else ()
    t = time_grid(timeline.event_times(), timeline.end_time, dt_max, dt_fine, quiet=quiet)
    probe_in = timeline.probe(t).astype(complex)
    dark_decay = p.gamma_raman / 2 if storage_decay == "efficiency" else p.gamma_raman
    out = propagate(t, probe_in, timeline.coupling(t), p, cell, grid, dark_raman_decay=dark_decay)
    exit_factor = cell.coupling_factor(cell.length)
    return SimulationResult(
        time_grid=t,
        probe_in=probe_in,
        probe_out_amplitude=out,
        reference_out_amplitude=probe_in.copy(),
        coupling_out=timeline.coupling(t) * exit_factor,
        leak_window=timeline.leak_window,
        retrieved_window=timeline.retrieved_window,
        dark_window=timeline.dark_window,
        meta={"n_steps": len(t) - 1, "storage_decay": storage_decay},
    )


def cw_transmission(
    p: LambdaParams,
    cell: CellConfig,
    grid: VelocityGrid | None = None,
    *,
    coupling: complex = 0.0,
    probe: complex | None = None,
    duration: float = 200e-9,
    n_steps: int = 200,
) -> float:
    """Intensity transmission of a cw probe after ``duration``, from the time-domain engine."""
    if probe is None:
        probe = 1e-6 * p.gamma_opt
    t = np.linspace(0.0, duration, n_steps + 1)
    probe_in = np.full(len(t), probe, complex)
    out = propagate(t, probe_in, np.full(len(t), coupling, complex), p, cell, grid)
    return float(abs(out[-1] / probe) ** 2)


def steady_transmission(
    p: LambdaParams, cell: CellConfig, grid: VelocityGrid | None = None, probe_fraction: float = 1e-3
) -> float:
    """Continuum-limit cw transmission from the exact stationary states of each class.

    With the coupling off the true stationary state has every atom pumped
    out of |+1> by the probe, so the weak-probe linear response is used
    instead (atoms held in |+1>, as in a pulse much shorter than the pumping
    time).
    """
    grid = grid or single_class()
    r0 = _linear_response(replace(p, detuning_probe=0.0, detuning_coupling=0.0), grid, 0.0)
    if p.rabi_coupling == 0:
        resp = _linear_response(replace(p, detuning_coupling=p.detuning_probe), grid, 0.0, p.detuning_probe)
        return float(np.exp(-cell.absorption_depth * resp.real / r0.real))
    omega_p = probe_fraction * abs(p.rabi_coupling)
    q = replace(p, rabi_probe=omega_p)
    resp = sum(
        w * steady_state(q, s).optical_probe / (-1j * omega_p) for s, w in zip(grid.shifts, grid.weights)
    )
    return float(np.exp(-cell.absorption_depth * resp.real / r0.real))


def transparency_window(
    p: LambdaParams, cell: CellConfig, grid: VelocityGrid | None = None, n_points: int = 401
) -> float:
    """FWHM (rad/s) of the cw probe transmission peak versus Raman detuning.

    The coupling detuning is held fixed and the probe detuning scanned.  The
    half level is taken half way between the peak and the off-window floor.
    """
    if abs(p.rabi_coupling) == 0:
        raise ValueError("transparency_window needs a nonzero coupling")
    grid = grid or single_class()
    dc = p.detuning_coupling
    width = p.gamma_raman + abs(p.rabi_coupling) ** 2 * p.gamma_opt / (p.gamma_opt**2 + dc**2)

    def scan(center, half_span):
        deltas = center + np.linspace(-half_span, half_span, n_points)
        trans = np.array(
            [steady_transmission(replace(p, detuning_probe=dc + d), cell, grid) for d in deltas]
        )
        return deltas, trans

    shift = abs(p.rabi_coupling) ** 2 * dc / (p.gamma_opt**2 + dc**2)
    deltas, trans = scan(shift, 40 * width + abs(shift))
    floor = min(trans[0], trans[-1])
    if trans.max() - floor < 1e-6:
        raise NoPeakError("transmission contrast below 1e-6")
    fwhm = _fwhm(deltas, trans, floor)
    peak = deltas[np.argmax(trans)]
    deltas, trans = scan(peak, 2 * fwhm)
    return _fwhm(deltas, trans, floor)


def _fwhm(x, y, floor):
    i = int(np.argmax(y))
    half = floor + 0.5 * (y[i] - floor)
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < len(y) - 1 and y[right] > half:
        right += 1
    if y[left] > half or y[right] > half:
        raise NoPeakError("transmission peak not bracketed by the scan")
    xl = np.interp(half, [y[left], y[left + 1]], [x[left], x[left + 1]])
    xr = np.interp(half, [y[right], y[right - 1]], [x[right], x[right - 1]])
    return float(xr - xl)


# --- file format --------------------------------------------------------------

RESULT_COLUMNS = ("time_s", "re_out", "im_out", "re_ref", "im_ref", "coupling_on_flag")


def write_result(result: SimulationResult, path) -> Path:
    path = Path(path)
    cols = np.column_stack(
        [
            result.time_grid,
            result.probe_out_amplitude.real,
            result.probe_out_amplitude.imag,
            result.reference_out_amplitude.real,
            result.reference_out_amplitude.imag,
            result.coupling_on.astype(float),
        ]
    )
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        for row in cols:
            fh.write("%.17g,%.17g,%.17g,%.17g,%.17g,%d\n" % (*row[:5], int(row[5])))
    return path


def read_result(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != RESULT_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {
        "time_s": data[:, 0],
        "probe_out": data[:, 1] + 1j * data[:, 2],
        "reference": data[:, 3] + 1j * data[:, 4],
        "coupling_on": data[:, 5].astype(bool),
    }
