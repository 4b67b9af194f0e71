import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from squeezelab.crystal import (
    CrystalSpec,
    Sellmeier,
    lobe_wavenumber,
    longitudinal,
    phase_mismatch,
    pump_wavenumber,
    refractive_index_extraordinary,
    refractive_index_ordinary,
    signal_wavenumber,
    solve_phase_matching_angle,
    wave_vectors,
)
from squeezelab.errors import DomainError, PhaseMatchingError

import oracles

BBO_O = (2.7359, 0.01878, 0.01822, 0.01354)
BBO_E = (2.3753, 0.01224, 0.01667, 0.01516)

# Frozen from a plain-math evaluation of the BBO Sellmeier relation and an
# independent 200-step bisection on the scalar mismatch (tests/oracles.py).
N_O_795 = 1.660704193316926
N_E_3975 = 1.5682814197865402
N_O_3975 = 1.693549105603666
THETA0_COLLINEAR_DEG = 29.364129980572613
THETA0_NONCOLLINEAR_DEG = 29.776763989232673
N_EXT_THETA0 = 1.6598847360471478
Q0 = 412271.6332129465


def toy(n_o2=2.56, n_e2=2.56, angle=0.0, theta0=None):
    band = (0.2e-6, 2e-6)
    return CrystalSpec(1e-3, Sellmeier((n_o2,), band), Sellmeier((n_e2,), band), theta0, angle)


def test_ordinary_index_golden(bbo):
    assert refractive_index_ordinary(795e-9, bbo) == pytest.approx(N_O_795, rel=1e-14)
    assert oracles.sellmeier_index(BBO_O, 795e-9) == pytest.approx(N_O_795, rel=1e-15)


def test_dispersionless_medium():
    assert refractive_index_ordinary(600e-9, toy()) == pytest.approx(1.6, rel=1e-15)


def test_out_of_band_wavelength_names_band(bbo):
    with pytest.raises(DomainError, match="validity band"):
        refractive_index_ordinary(150e-9, bbo)


def test_extraordinary_limits(bbo):
    for wl in (397.5e-9, 500e-9):
        assert refractive_index_extraordinary(wl, 0.0, bbo) == pytest.approx(refractive_index_ordinary(wl, bbo), rel=1e-14)
    assert refractive_index_extraordinary(397.5e-9, np.pi / 2, bbo) == pytest.approx(N_E_3975, rel=1e-14)
    assert refractive_index_ordinary(397.5e-9, bbo) == pytest.approx(N_O_3975, rel=1e-14)


def test_extraordinary_at_theta0_golden(bbo):
    n = refractive_index_extraordinary(397.5e-9, bbo.theta0_rad, bbo)
    assert n == pytest.approx(N_EXT_THETA0, rel=1e-12)


def test_extraordinary_angle_domain(bbo):
    with pytest.raises(DomainError):
        refractive_index_extraordinary(397.5e-9, -0.1, bbo)
    with pytest.raises(DomainError):
        refractive_index_extraordinary(397.5e-9, 2.0, bbo)


def test_ordinary_index_decreases_over_band(bbo):
    wl = np.linspace(*bbo.sellmeier_ordinary.valid_range_m, 500)
    assert np.all(np.diff(refractive_index_ordinary(wl, bbo)) < 0)


def test_phase_matching_angles_golden(bbo):
    assert math.degrees(bbo.theta0_rad) == pytest.approx(THETA0_NONCOLLINEAR_DEG, abs=1e-9)
    collinear = solve_phase_matching_angle(bbo, 0.0)
    assert math.degrees(collinear) == pytest.approx(THETA0_COLLINEAR_DEG, abs=1e-9)
    assert lobe_wavenumber(bbo) == pytest.approx(Q0, rel=1e-14)


def test_root_contract(bbo):
    q0 = lobe_wavenumber(bbo)
    d = float(phase_mismatch(q0, -q0, 0.0, 0.0, bbo))
    assert abs(d) * bbo.length_m / 2 < 1e-6
    assert abs(d) < 1e-6 * 2 * np.pi / bbo.pump_wavelength_m


def test_no_phase_matching_in_dispersionless_toy():
    # n_p > n_s at every angle: no root on the bracket
    with pytest.raises(PhaseMatchingError):
        solve_phase_matching_angle(toy(2.56, 2.60, angle=0.01), 0.01)


def test_dispersionless_toy_root_is_analytic():
    # non-collinear: the pump must match n_o cos(a); index ellipsoid gives theta in closed form
    a = np.radians(5.0)
    crystal = toy(2.56, 2.40, angle=a)
    theta = solve_phase_matching_angle(crystal, a)
    n = 1.6 * np.cos(a)
    expected = np.arcsin(np.sqrt((1 / n**2 - 1 / 2.56) / (1 / 2.40 - 1 / 2.56)))
    assert theta == pytest.approx(expected, abs=1e-11)


@pytest.mark.parametrize("w", [0.0, 1e12, -3e12, 1.5e13])
def test_phase_mismatch_matches_scalar_chain(bbo, w):
    q0 = lobe_wavenumber(bbo)
    for q, qp, wa, wb in [(q0, -q0, w, 0.0), (q0 * 0.9, -q0 * 1.05, w / 2, -w / 3), (1e4, 2e4, w, w)]:
        got = float(phase_mismatch(q, qp, wa, wb, bbo))
        ref = oracles.phase_mismatch(q, qp, wa, wb, BBO_O, BBO_E, bbo.theta0_rad, bbo.signal_wavelength_m)
        assert got == pytest.approx(ref, abs=1e-6)


def test_evanescent_rejected(bbo):
    k = float(signal_wavenumber(0.0, bbo))
    with pytest.raises(DomainError, match="evanescent"):
        longitudinal(k, 1.01 * k)
    with pytest.raises(DomainError):
        phase_mismatch(1.01 * k, 0.0, 0.0, 0.0, bbo)


def test_wave_vectors_kz_bounded(bbo):
    q = np.linspace(-5e5, 5e5, 11)
    wv = wave_vectors(q, np.zeros_like(q), bbo)
    assert np.all(wv.k_z <= wv.k_s)
    assert np.all(wv.k_p > wv.k_s)


def test_pump_wavenumber_uses_walkoff_angle(bbo):
    k_plus = float(pump_wavenumber(1e5, 0.0, bbo))
    k_minus = float(pump_wavenumber(-1e5, 0.0, bbo))
    # the index changes with theta0 +- q / k_p, so the two sides differ
    assert k_plus != k_minus


def test_theta_must_be_solved_first(default_config):
    with pytest.raises(DomainError, match="theta0"):
        phase_mismatch(0.0, 0.0, 0.0, 0.0, default_config.crystal)


def test_crystal_rejects_bad_geometry():
    band = (0.2e-6, 2e-6)
    s = Sellmeier((2.56,), band)
    with pytest.raises(ValueError):
        CrystalSpec(0.0, s, s, None, 0.0)
    with pytest.raises(ValueError):
        CrystalSpec(1e-3, s, s, 2.0, 0.0)
    with pytest.raises(ValueError):
        CrystalSpec(1e-3, Sellmeier((0.9,), band), s, None, 0.0)


q_st = st.floats(-8e5, 8e5)
w_st = st.floats(-1e14, 1e14)


@settings(max_examples=60, deadline=None)
@given(q_st, q_st, w_st, w_st)
def test_phase_mismatch_exchange_symmetry(bbo, q, qp, w, wp):
    assert phase_mismatch(q, qp, w, wp, bbo) == phase_mismatch(qp, q, wp, w, bbo)


def test_phase_mismatch_symmetric_on_grid(small_kernel, bbo):
    qf, wf = small_kernel.grid.flat()
    d1 = phase_mismatch(qf[:, None], qf[None, :], wf[:, None], wf[None, :], bbo)
    assert np.array_equal(d1, d1.T)
