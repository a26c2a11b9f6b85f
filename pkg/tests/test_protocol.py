import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from eit_storage import protocol
from eit_storage.analysis import leak_level, retrieved_phase, storage_efficiency
from eit_storage.doppler import make_grid
from eit_storage.protocol import (
    CellConfig,
    DivergenceError,
    FieldTimeline,
    NoPeakError,
    cw_transmission,
    read_result,
    run_storage,
    steady_transmission,
    time_grid,
    transparency_window,
    write_result,
)
from scenarios import TWO_PI, nominal_params, storage_run


# --- timeline and grid -----------------------------------------------------------


def test_standard_timeline_shapes(params):
    tl = FieldTimeline.standard(params)
    cut = tl.probe_cutoff_time
    assert cut == pytest.approx(16e-6)
    assert tl.probe(cut) == params.rabi_probe
    assert abs(tl.probe(cut - 2e-6)) == pytest.approx(abs(params.rabi_probe) / math.e, rel=1e-12)
    assert tl.probe(cut + tl.ramp_time) == 0
    assert tl.coupling(cut - 1e-9) == params.rabi_coupling
    assert tl.coupling(cut + 1e-6) == 0
    assert tl.coupling(tl.reopen_time + tl.ramp_time) == params.rabi_coupling_read
    assert tl.leak_window == (0.0, cut + tl.ramp_time)
    assert tl.retrieved_window[0] == tl.reopen_time


def test_ideal_switches(params):
    tl = FieldTimeline.standard(params, ramp_time=0.0)
    assert tl.probe(tl.probe_cutoff_time + 1e-12) == 0
    assert tl.coupling(tl.reopen_time) == params.rabi_coupling_read


def test_timeline_validation(params):
    with pytest.raises(ValueError):
        replace(FieldTimeline.standard(params), storage_time=-1.0)
    with pytest.raises(ValueError):
        replace(FieldTimeline.standard(params), probe_rise_time=0.0)


def test_time_grid_respects_events_and_caps():
    events = [1e-6, 1.01e-6, 4e-6]
    t = time_grid(events, 6e-6, dt_max=20e-9, dt_fine=1e-9, quiet=((1.01e-6, 4e-6),))
    assert t[0] == 0 and t[-1] == 6e-6
    assert np.all(np.diff(t) > 0)
    for e in events:
        assert e in t
    loud = (t[:-1] < 1e-6) | (t[:-1] >= 4e-6)
    assert np.diff(t)[loud].max() <= 20e-9 * (1 + 1e-9)
    assert np.diff(t).max() <= 250e-9 * (1 + 1e-9)
    assert np.diff(t)[np.searchsorted(t, 4e-6) - 1] <= 1.5e-9


# --- linear optics ----------------------------------------------------------------


def test_cw_line_centre_transmission(params):
    p = nominal_params(rabi_coupling=0.0)
    t = cw_transmission(p, CellConfig())
    assert abs(t / math.exp(-6.8) - 1) < 1e-3


def test_steady_transmission_coupling_off_matches_calibration():
    p = nominal_params(rabi_coupling=0.0)
    assert steady_transmission(p, CellConfig()) == pytest.approx(math.exp(-6.8), rel=1e-12)


def test_empty_cell_passes_probe_unchanged(params):
    res = storage_run(absorption_depth=0.0)
    assert np.array_equal(res.probe_out_amplitude, res.probe_in)
    assert storage_efficiency(res) < 1e-12
    assert leak_level(res) == pytest.approx(1.0, rel=1e-6)


def test_transparency_window_exceeds_half_megahertz(params):
    assert transparency_window(params, CellConfig()) > TWO_PI * 500e3


def test_transparency_window_power_broadens(params):
    widths = [
        transparency_window(replace(params, rabi_coupling=TWO_PI * oc), CellConfig())
        for oc in (5e6, 10e6, 23e6, 40e6)
    ]
    assert np.all(np.diff(widths) > 0)


def test_transparency_window_raman_width_thin_cell(params):
    """Thin cell: FWHM = 2 (G_R + |O_C|^2 / G), so doubling G_R adds 2 G_R."""
    thin = CellConfig(absorption_depth=0.01)
    p = replace(params, rabi_coupling=TWO_PI * 2e6)
    w1 = transparency_window(p, thin)
    w2 = transparency_window(replace(p, gamma_raman=2 * p.gamma_raman), thin)
    closed = 2 * (p.gamma_raman + abs(p.rabi_coupling) ** 2 / p.gamma_opt)
    assert w1 == pytest.approx(closed, rel=5e-3)
    assert w2 - w1 >= 0.99 * 2 * p.gamma_raman


def test_transparency_window_needs_coupling(params):
    with pytest.raises(ValueError):
        transparency_window(replace(params, rabi_coupling=0.0), CellConfig())


def test_no_peak_reported(params):
    with pytest.raises(NoPeakError):
        transparency_window(params, CellConfig(absorption_depth=0.0))


# --- storage runs -------------------------------------------------------------------


def test_resonant_retrieval_in_phase_with_leak():
    assert abs(retrieved_phase(storage_run(0.0))) < 1e-3


def test_energy_is_not_created():
    res = storage_run(0.0)
    t = res.time_grid
    e_in = trapezoid(np.abs(res.probe_in) ** 2, t)
    e_out = trapezoid(np.abs(res.probe_out_amplitude) ** 2, t)
    assert e_out < e_in
    assert leak_level(res) + storage_efficiency(res) < 1


def test_slice_doubling_changes_efficiency_by_less_than_one_percent():
    base = storage_efficiency(storage_run(0.0))
    fine = storage_efficiency(storage_run(0.0, n_slices=64))
    assert abs(fine / base - 1) < 0.01


def test_ramp_halving_changes_efficiency_by_less_than_a_tenth_percent(params):
    base = storage_efficiency(storage_run(0.0))
    half = run_storage(FieldTimeline.standard(params, ramp_time=5e-9), CellConfig(), params)
    assert abs(storage_efficiency(half) / base - 1) < 1e-3


def test_coherence_decay_convention_halves_storage_lifetime(params):
    short = FieldTimeline.standard(params, rise_time=0.5e-6, storage_time=1e-6)
    long_ = FieldTimeline.standard(params, rise_time=0.5e-6, storage_time=21e-6)
    cell = CellConfig(n_slices=16)
    ratio = {}
    for mode in ("efficiency", "coherence"):
        e1 = storage_efficiency(run_storage(short, cell, params, storage_decay=mode))
        e2 = storage_efficiency(run_storage(long_, cell, params, storage_decay=mode))
        ratio[mode] = math.log(e1 / e2) / 20e-6
    assert ratio["efficiency"] == pytest.approx(params.gamma_raman, rel=0.02)
    assert ratio["coherence"] == pytest.approx(2 * params.gamma_raman, rel=0.02)
    with pytest.raises(ValueError):
        run_storage(short, cell, params, storage_decay="other")


def test_doppler_grid_run_is_finite(params):
    p = replace(params, gamma_opt=TWO_PI * 0.1e9)
    tl = FieldTimeline.standard(p, rise_time=0.5e-6, storage_time=1e-6)
    res = run_storage(tl, CellConfig(n_slices=8, absorption_depth=2.0), p, make_grid(TWO_PI * 0.2e9, 3))
    assert 0 < storage_efficiency(res) < 1


def test_divergence_is_detected(params, monkeypatch):
    monkeypatch.setattr(protocol, "calibrate_kappa_dz", lambda *a: -3e9)
    tl = FieldTimeline.standard(params, rise_time=0.5e-6, storage_time=1e-6)
    with pytest.raises(DivergenceError):
        run_storage(tl, CellConfig(n_slices=8), params)


def test_result_file_round_trip(tmp_path):
    res = storage_run(0.0)
    path = write_result(res, tmp_path / "r.csv")
    back = read_result(path)
    assert np.array_equal(back["time_s"], res.time_grid)
    assert np.array_equal(back["probe_out"], res.probe_out_amplitude)
    assert np.array_equal(back["reference"], res.reference_out_amplitude)
    assert np.array_equal(back["coupling_on"], res.coupling_on)
    assert path.read_text().startswith("time_s,re_out,im_out,re_ref,im_ref,coupling_on_flag\n")
