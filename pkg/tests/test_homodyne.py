import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eit_storage.homodyne import (
    DegenerateFitError,
    DetectorTrace,
    EnvelopePair,
    HomodyneConfig,
    PhaseCoverageError,
    ScanTooFastWarning,
    ZeroProbeError,
    check_phase_coverage,
    estimate_contrast,
    extract_envelopes,
    extract_relative_phase,
    invert_interference,
    read_traces,
    synthesize_scan,
    synthesize_trace,
    write_traces,
)

T = np.arange(0, 4e-6, 4e-9)
LEAK = (0.0, 1.5e-6)
RETRIEVED = (2e-6, 4e-6)


def two_pulses(phase: float, leak_amp: float = 0.2, ret_amp: float = 0.1) -> np.ndarray:
    """Leak pulse near 1 us and retrieved pulse near 3 us, the latter offset by ``phase``."""
    leak = leak_amp * np.exp(-(((T - 1e-6) / 0.2e-6) ** 2))
    ret = ret_amp * np.exp(-(((T - 3e-6) / 0.2e-6) ** 2)) * np.exp(1j * phase)
    return (leak + ret).astype(complex) * np.exp(0.4j)


# --- synthesis ----------------------------------------------------------------------


def test_zero_probe_gives_lo_level():
    tr = synthesize_trace(T, np.zeros_like(T), HomodyneConfig(), 1.0)
    assert np.all(tr.intensity == 1.0)


@pytest.mark.parametrize(
    "alpha, ip, dphi, want",
    [(2.0, 0.04, 0.0, 1.44), (2.0, 0.04, math.pi, 0.64), (1.65, 0.01, 0.0, 1.175)],
)
def test_two_beam_arithmetic(alpha, ip, dphi, want):
    cfg = HomodyneConfig(contrast=alpha)
    tr = synthesize_trace(T[:3], np.full(3, math.sqrt(ip) * np.exp(1j * dphi)), cfg, 0.0)
    assert tr.intensity == pytest.approx(want, abs=1e-12)


def test_scan_too_fast_warns():
    cfg = HomodyneConfig(scan_frequency=1e4)
    with pytest.warns(ScanTooFastWarning):
        synthesize_trace(T, np.zeros_like(T), cfg, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        synthesize_trace(T, np.zeros_like(T), HomodyneConfig(), 0.0)


def test_contrast_range_enforced():
    with pytest.raises(ValueError):
        HomodyneConfig(contrast=2.5)


# --- envelopes and inversion -------------------------------------------------------


def _uniform_scan(probe, n, contrast=1.65):
    cfg = HomodyneConfig(contrast=contrast, n_phases=n, scan_amplitude=2 * math.pi)
    return synthesize_scan(T, probe, cfg)


def test_envelopes_of_constant_probe():
    ip = 0.04
    env = extract_envelopes(_uniform_scan(np.full(len(T), math.sqrt(ip) * np.exp(0.3j)), 64))
    inter = 1.65 * math.sqrt(ip)
    assert np.allclose(env.upper, 1 + ip + inter, rtol=5e-3)
    assert np.allclose(env.lower, 1 + ip - inter, rtol=5e-3)


def test_envelopes_without_probe():
    env = extract_envelopes(_uniform_scan(np.zeros(len(T), complex), 64))
    assert np.all(env.upper == 1.0) and np.all(env.lower == 1.0)


@given(st.floats(0, 2 * math.pi))
def test_coarse_phase_grid_bias_bound(phi):
    ip = 0.04
    env = extract_envelopes(_uniform_scan(np.full(len(T), math.sqrt(ip) * np.exp(1j * phi)), 8))
    inter = 1.65 * math.sqrt(ip)
    bound = (1 - math.cos(math.pi / 8)) * inter
    assert np.all((1 + ip + inter) - env.upper <= bound + 1e-12)
    assert np.all(env.lower - (1 + ip - inter) <= bound + 1e-12)
    assert np.all(env.upper <= 1 + ip + inter + 1e-12)


def test_inversion_examples():
    one = np.ones(1)
    inv = invert_interference(EnvelopePair(one, 1.44 * one, 0.64 * one), 1.0, 2.0)
    assert inv.intensity == pytest.approx(0.04, abs=1e-15)
    assert inv.residual == pytest.approx(0.0, abs=1e-15)
    inv = invert_interference(EnvelopePair(one, one, one), 1.0, 2.0)
    assert inv.intensity[0] == 0.0


def test_inversion_clamps_negative_intensity():
    one = np.ones(2)
    inv = invert_interference(EnvelopePair(one, np.array([0.99, 1.2]), np.array([0.98, 0.9])), 1.0, 1.65)
    assert inv.intensity[0] == 0.0 and inv.clamped[0] and not inv.clamped[1]


def test_pulse_intensity_round_trip():
    probe = two_pulses(-1.0)
    env = extract_envelopes(_uniform_scan(probe, 64))
    inv = invert_interference(env, 1.0, 1.65)
    peak = np.argmax(np.abs(probe))
    assert inv.intensity[peak] == pytest.approx(abs(probe[peak]) ** 2, rel=1e-3)


# --- contrast ------------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [1.65, 2.0])
def test_contrast_recovered(alpha):
    traces = synthesize_scan(T[:500], np.full(500, 0.2 + 0j), HomodyneConfig(contrast=alpha))
    assert estimate_contrast(traces, 1.0, 0.04) == pytest.approx(alpha, abs=0.01)
    assert estimate_contrast(traces, 1.0) == pytest.approx(alpha, abs=0.01)


def test_contrast_with_noise_over_seeds():
    cfg = HomodyneConfig(noise_rms=0.01)
    t = np.arange(500) / cfg.sample_rate
    errs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        traces = synthesize_scan(t, np.full(len(t), 0.2 + 0j), cfg, rng=rng)
        errs.append(abs(estimate_contrast(traces, 1.0, 0.04) - 1.65))
    assert max(errs) < 0.05


def test_contrast_needs_probe():
    traces = synthesize_scan(T[:100], np.zeros(100, complex), HomodyneConfig())
    with pytest.raises(ZeroProbeError):
        estimate_contrast(traces, 1.0)


# --- relative phase -----------------------------------------------------------------


@pytest.mark.parametrize("phase, tol", [(0.0, 1e-3), (-1.391, 0.01)])
def test_relative_phase_recovered(phase, tol):
    traces = synthesize_scan(T, two_pulses(phase), HomodyneConfig())
    assert extract_relative_phase(traces, LEAK, RETRIEVED) == pytest.approx(phase, abs=tol)


def test_antiphase_at_wrap_boundary():
    traces = synthesize_scan(T, two_pulses(math.pi), HomodyneConfig())
    assert abs(extract_relative_phase(traces, LEAK, RETRIEVED)) == pytest.approx(math.pi, abs=0.01)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.1, 3.1), st.floats(0, 2 * math.pi))
def test_relative_phase_independent_of_scan_offset(phase, offset):
    traces = synthesize_scan(T, two_pulses(phase), HomodyneConfig(), offset=offset)
    assert extract_relative_phase(traces, LEAK, RETRIEVED) == pytest.approx(phase, abs=1e-9)


def test_empty_window_is_degenerate():
    traces = synthesize_scan(T, two_pulses(0.5, ret_amp=0.0), HomodyneConfig())
    with pytest.raises(DegenerateFitError):
        extract_relative_phase(traces, LEAK, RETRIEVED)


# --- coverage and files ---------------------------------------------------------------


def test_insufficient_coverage_rejected():
    narrow = synthesize_scan(T, two_pulses(0.0), HomodyneConfig(scan_amplitude=math.pi))
    with pytest.raises(PhaseCoverageError):
        extract_relative_phase(narrow, LEAK, RETRIEVED)
    few = synthesize_scan(T, two_pulses(0.0), HomodyneConfig(n_phases=6, scan_amplitude=2 * math.pi))
    with pytest.raises(PhaseCoverageError):
        check_phase_coverage(few)


def test_trace_file_round_trip(tmp_path):
    traces = synthesize_scan(T[:50], two_pulses(0.3)[:50], HomodyneConfig(n_phases=8, noise_rms=0.01),
                             rng=np.random.default_rng(1))
    back = read_traces(write_traces(traces, tmp_path / "tr.csv"))
    assert len(back) == len(traces)
    for a, b in zip(traces, back):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.intensity, b.intensity)
        assert a.lo_phase == b.lo_phase and a.shot_id == b.shot_id


def test_mismatched_grids_rejected():
    traces = [DetectorTrace(T[:10], np.ones(10), 2 * math.pi * j / 8, j) for j in range(8)]
    traces[3] = DetectorTrace(T[1:11], np.ones(10), traces[3].lo_phase, 3)
    with pytest.raises(ValueError, match="common time grid"):
        extract_envelopes(traces)
