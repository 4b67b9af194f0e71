import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from squeezelab.crystal import CrystalSpec, Sellmeier, lobe_wavenumber, phase_mismatch
from squeezelab.errors import ConfigurationError, InputError, TraceIOError
from squeezelab.kernel import (
    GainKernel,
    PumpProfile,
    SpatioSpectralGrid,
    build_kernel,
    check_grid,
    load_kernel,
    phase_matching_acceptance,
    pump_amplitude,
    save_kernel,
    sinc,
)
from squeezelab.modes import takagi

import oracles

PUMP = PumpProfile()
# 1.82 nm at 397.5 nm through dnu = c dlambda / lambda^2, evaluated by hand
OMEGA_FWHM = 2 * math.pi * 299792458.0 * 1.82e-9 / (397.5e-9) ** 2


def toy_crystal(angle=np.radians(5.0)):
    band = (0.2e-6, 2e-6)
    c = CrystalSpec(2e-3, Sellmeier((2.56,), band), Sellmeier((2.40,), band), None, angle)
    return c.with_phase_matching()


def test_pump_amplitude_normalization():
    assert pump_amplitude(0.0, 0.0, PUMP) == 1.0
    assert pump_amplitude(2 / PUMP.waist_m, 0.0, PUMP) == pytest.approx(math.exp(-1), rel=1e-14)


def test_pump_fwhm_half_power():
    assert PUMP.omega_fwhm == pytest.approx(OMEGA_FWHM, rel=1e-14)
    assert pump_amplitude(0.0, OMEGA_FWHM / 2, PUMP) ** 2 == pytest.approx(0.5, rel=1e-12)


def test_pump_amplitude_chirp_phase():
    p = replace(PUMP, chirp_s2=1e-27)
    a = pump_amplitude(0.0, 3e12, p)
    assert abs(a) == pytest.approx(float(pump_amplitude(0.0, 3e12, PUMP)), rel=1e-14)
    assert np.angle(a) == pytest.approx(1e-27 * 9e24, rel=1e-12)
    assert not np.iscomplexobj(pump_amplitude(np.ones(3), np.ones(3), PUMP))


def test_pump_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        PumpProfile(spectral_fwhm_m=0.0)
    with pytest.raises(ConfigurationError):
        PumpProfile(waist_m=-1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50, allow_nan=False))
def test_sinc_series_branch_continuous(x):
    x = x * 1e-4 / 25
    assert sinc(x) == pytest.approx(1.0 if x == 0 else math.sin(x) / x, rel=1e-15, abs=1e-16)


def test_sinc_at_zero_is_one():
    assert sinc(0.0) == 1.0
    assert np.all(np.isfinite(sinc(np.array([0.0, 1e-300, -1e-12, 1.0]))))


def test_grid_validation():
    with pytest.raises(ConfigurationError, match="increasing"):
        SpatioSpectralGrid([0.0, -1.0], [0.0, 1.0])
    with pytest.raises(ConfigurationError, match="uniform"):
        SpatioSpectralGrid([0.0, 1.0, 3.0], [0.0, 1.0])
    g = SpatioSpectralGrid([0.0, 1.0], [0.0, 1.0, 2.0])
    assert g.index(1, 2) == 5
    q, w = g.flat()
    assert (q[5], w[5]) == (1.0, 2.0)


def test_experiment_grid_covers_lobes(bbo):
    g = SpatioSpectralGrid.for_experiment(bbo, PUMP)
    q0 = lobe_wavenumber(bbo)
    assert g.size == 4608
    assert g.q_points[0] <= -q0 - 4 / PUMP.waist_m and g.q_points[-1] >= q0 + 4 / PUMP.waist_m
    # +-q0 sit midway between samples
    frac = (q0 - g.q_points[0]) / g.dq % 1
    assert frac == pytest.approx(0.5, abs=1e-9)
    check_grid(g, PUMP, bbo)


def test_check_grid_rejects_narrow_spans(bbo):
    g = SpatioSpectralGrid.for_experiment(bbo, PUMP)
    with pytest.raises(ConfigurationError, match="lobes"):
        check_grid(SpatioSpectralGrid(g.q_points / 3, g.omega_points, g.lobe_center), PUMP, bbo)
    with pytest.raises(ConfigurationError, match="omega range"):
        check_grid(SpatioSpectralGrid(g.q_points, g.omega_points[40:-40], g.lobe_center), PUMP, bbo)
    assert phase_matching_acceptance(bbo) > 0


def test_grid_too_coarse(bbo):
    g = SpatioSpectralGrid(np.linspace(-1e6, 1e6, 8), np.linspace(-1e14, 1e14, 8))
    with pytest.raises(ConfigurationError, match="too coarse"):
        build_kernel(g, PUMP, bbo)


def test_single_point_collinear_kernel(bbo):
    crystal = replace(bbo, noncollinear_angle_rad=0.0, theta0_rad=None).with_phase_matching()
    k = build_kernel(SpatioSpectralGrid([0.0], [0.0]), PUMP, crystal, normalize=False)
    assert k.matrix.shape == (1, 1)
    assert k.matrix[0, 0] == pytest.approx(1.0, abs=1e-9)


def test_single_point_at_lobe(bbo):
    q0 = lobe_wavenumber(bbo)
    k = build_kernel(SpatioSpectralGrid([q0], [0.0]), PUMP, bbo, normalize=False)
    d = float(phase_mismatch(q0, q0, 0.0, 0.0, bbo))
    expected = math.exp(-((2 * q0) ** 2) * PUMP.waist_m**2 / 4) * math.sin(d * bbo.length_m / 2) / (d * bbo.length_m / 2)
    assert k.matrix[0, 0] == pytest.approx(expected, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("chirp", [0.0, 2e-27])
def test_kernel_matches_scalar_loop(chirp):
    crystal = toy_crystal()
    pump = replace(PUMP, chirp_s2=chirp)
    q0 = lobe_wavenumber(crystal)
    q = np.linspace(-1.5 * q0, 1.5 * q0, 16)
    dw = pump.omega_fwhm / 8
    w = (np.arange(16) - 7.5) * dw
    grid = SpatioSpectralGrid(q, w, q0)
    k = build_kernel(grid, pump, crystal, normalize=False, block_rows=37)

    def delta(qi, qj, wi, wj):
        return oracles.phase_mismatch(qi, qj, wi, wj, (2.56,), (2.40,), crystal.theta0_rad, crystal.signal_wavelength_m)

    ref = np.array(oracles.kernel_loop(list(q), list(w), pump.waist_m, pump.sigma_omega, chirp, crystal.length_m, delta))
    scale = np.max(np.abs(ref))
    assert np.max(np.abs(k.matrix - ref)) < 1e-9 * scale
    assert np.iscomplexobj(k.matrix) == (chirp != 0)


def test_kernel_exact_symmetry(small_kernel, bbo):
    m = small_kernel.matrix
    assert np.array_equal(m, m.T)
    assert small_kernel.is_real
    assert np.all(np.isfinite(m))
    chirped = build_kernel(small_kernel.grid, replace(PUMP, chirp_s2=5e-28), bbo)
    assert np.array_equal(chirped.matrix, chirped.matrix.T)
    assert np.any(chirped.matrix.imag != 0)


def test_kernel_normalized_to_unit_takagi_value(small_kernel):
    s = np.linalg.svd(small_kernel.matrix, compute_uv=False)
    assert s[0] == pytest.approx(1.0, rel=1e-10)


def test_kernel_is_immutable(small_kernel):
    with pytest.raises(ValueError):
        small_kernel.matrix[0, 0] = 1.0


def test_gain_scales_squeezing_linearly(small_kernel):
    d1 = takagi(small_kernel.with_gain(0.05))
    d2 = takagi(small_kernel.with_gain(0.10))
    assert np.array_equal(d2.squeezing_parameters, 2 * d1.squeezing_parameters)


def test_rank_falls_with_broader_pump_and_tighter_waist(bbo):
    # fixed grid; broadening the pump and tightening the waist moves toward the single-mode limit
    grid = SpatioSpectralGrid.for_experiment(bbo, PUMP, 16, 32)
    ranks = []
    for f_bw, f_w in ((1.0, 1.0), (2.0, 2 / 3), (4.0, 1 / 2)):
        p = replace(PUMP, spectral_fwhm_m=PUMP.spectral_fwhm_m * f_bw, waist_m=PUMP.waist_m * f_w)
        w = np.abs(np.linalg.eigvalsh(build_kernel(grid, p, bbo).matrix))
        ranks.append(int(np.sum(w > 1e-3 * w.max())))
    assert ranks[0] > ranks[1] > ranks[2]


def test_kernel_cache_round_trip(tmp_path, small_kernel, bbo):
    path = tmp_path / "k.bin"
    save_kernel(small_kernel, path, {"config_hash": "abc"})
    k2, header = load_kernel(path)
    assert header["config_hash"] == "abc"
    assert np.array_equal(k2.matrix, small_kernel.matrix)
    assert k2.grid == small_kernel.grid
    chirped = build_kernel(small_kernel.grid, replace(PUMP, chirp_s2=5e-28), bbo)
    save_kernel(chirped, path)
    assert np.array_equal(load_kernel(path)[0].matrix, chirped.matrix)


def test_kernel_cache_corruption(tmp_path, small_kernel):
    path = tmp_path / "k.bin"
    save_kernel(small_kernel, path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(TraceIOError, match="truncated"):
        load_kernel(path)
    path.write_bytes(b"garbage\n")
    with pytest.raises(TraceIOError):
        load_kernel(path)


def test_kernel_shape_checked(small_kernel):
    with pytest.raises(InputError):
        GainKernel(small_kernel.grid, np.eye(3), 0.0)
