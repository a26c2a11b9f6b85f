import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eit_storage.bloch_core import steady_state_raman_coherence
from eit_storage.doppler import (
    VelocityGrid,
    average_response,
    effective_gamma,
    make_grid,
    single_class,
)
from scenarios import TWO_PI, nominal_params

HWHM = TWO_PI * 0.9e9


def test_single_class_grid():
    g = make_grid(HWHM, 1)
    assert g.classes == [(0.0, 1.0)]


def test_gaussian_width_from_hwhm():
    assert make_grid(HWHM, 201).sigma == pytest.approx(TWO_PI * 0.9e9 / math.sqrt(2 * math.log(2)), rel=1e-15)
    assert make_grid(HWHM, 201).sigma / TWO_PI == pytest.approx(0.76439e9, rel=1e-5)


@given(st.integers(0, 200).map(lambda k: 2 * k + 1), st.floats(1e6, 1e11), st.floats(1.0, 6.0))
def test_grid_is_normalised_and_symmetric(n, hwhm, span):
    g = make_grid(hwhm, n, span)
    assert abs(g.weights.sum() - 1) <= 1e-12
    assert np.array_equal(g.shifts, -g.shifts[::-1])
    assert np.allclose(g.weights, g.weights[::-1], rtol=1e-14, atol=0)


def test_even_class_count_rejected():
    with pytest.raises(ValueError):
        make_grid(HWHM, 200)


def test_invalid_weights_rejected():
    with pytest.raises(ValueError):
        VelocityGrid(np.zeros(2), np.array([0.5, 0.6]), 0.0)
    with pytest.raises(ValueError):
        VelocityGrid(np.zeros(2), np.array([1.0, 0.0]), 0.0)


def test_average_of_constant():
    g = make_grid(HWHM, 101)
    assert average_response(g, lambda s: 2 - 3j) == pytest.approx(2 - 3j, abs=1e-12)


def test_average_of_odd_response_vanishes():
    g = make_grid(HWHM, 101)
    assert abs(average_response(g, lambda s: s / HWHM + 1j * (s / HWHM) ** 3)) < 1e-12


def _class_coherence(p):
    return lambda s: steady_state_raman_coherence(p.shifted(s)).value


def test_quadrature_converges_on_doubling():
    p = nominal_params(1e9, gamma_opt=TWO_PI * 3e6, rabi_probe=TWO_PI * 1e6)
    coarse = average_response(make_grid(HWHM, 201), _class_coherence(p))
    fine = average_response(make_grid(HWHM, 401), _class_coherence(p))
    assert abs(fine / coarse - 1) < 1e-6


def test_quadrature_convergence_is_monotone():
    p = nominal_params(1e9, gamma_opt=TWO_PI * 3e6, rabi_probe=TWO_PI * 1e6)
    mags = [abs(average_response(make_grid(HWHM, n), _class_coherence(p))) for n in (51, 101, 201, 401)]
    steps = np.diff(mags)
    assert np.all(steps > 0) or np.all(steps < 0)
    assert np.all(np.abs(np.diff(steps) / steps[:-1]) < 1)


def test_effective_gamma_rule():
    assert effective_gamma(make_grid(HWHM, 201)) == pytest.approx(TWO_PI * 0.4e9, rel=1e-15)
    assert effective_gamma(single_class(HWHM, gamma_override=TWO_PI * 0.42e9)) == TWO_PI * 0.42e9
    assert effective_gamma(single_class(0.0)) == 0.0


def test_pumped_window_reweights():
    g = make_grid(HWHM, 41, pumped_window=lambda s: (np.abs(s) < HWHM).astype(float))
    assert np.all(np.abs(g.shifts) < HWHM)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        make_grid(HWHM, 41, pumped_window=lambda s: np.zeros_like(s))
