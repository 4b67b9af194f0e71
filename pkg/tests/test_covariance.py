import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from squeezelab.covariance import (
    CovarianceBlocks,
    MeasuredVariances,
    analytic_blocks,
    check_orthonormal,
    covariance_from_measurements,
    covariance_from_traces,
    diagonalize_blocks,
    measurement_modes,
    multimode_verdict,
    read_blocks,
    simulate_covariance,
    simulate_traces,
    write_blocks,
)
from squeezelab.errors import IncompleteBasisError, InputError, TraceIOError
from squeezelab.homodyne import gain_factors
from squeezelab.kernel import SpatioSpectralGrid
from squeezelab.modes import AnalysisMode, SqueezingDecomposition, full_beam_profile, hermite_gauss_spectral

N = 5
GRID = SpatioSpectralGrid([0.0], np.arange(float(N)))


def toy_decomposition(r):
    """Eigenmodes are the grid points themselves; r are the squeezing parameters."""
    lam = np.zeros(N)
    lam[: len(r)] = r
    return SqueezingDecomposition(np.eye(N, dtype=complex), lam, 1.0, GRID)


def toy_basis(rows, prefix="A"):
    return [AnalysisMode(f"{prefix}{i}", np.asarray(v, dtype=float), GRID) for i, v in enumerate(rows)]


def random_orthonormal_rows(rng, m):
    q, _ = np.linalg.qr(rng.standard_normal((N, N)))
    return q[:m]


def test_uncorrelated_modes_have_zero_offdiagonal():
    dec = toy_decomposition([0.4, 0.2])
    basis = toy_basis(np.eye(N)[:2])
    vx, vp = analytic_blocks(basis, dec)
    assert vx[0, 1] == 0 and vp[0, 1] == 0
    blocks = simulate_covariance(basis, dec, effective_samples=None)
    assert abs(blocks.v_x[0, 1]) < 1e-12 and abs(blocks.v_p[0, 1]) < 1e-12


@pytest.mark.parametrize("m", [2, 3])
def test_against_propagation_oracle(rng, m):
    r = [0.5, 0.3, 0.1]
    dec = toy_decomposition(r)
    rows = random_orthonormal_rows(rng, m)
    f_minus, f_plus = gain_factors(dec.squeezing_parameters, "exponential")
    ox, op = oracles.propagated_covariance(rows.tolist(), f_minus.tolist(), f_plus.tolist())
    basis = toy_basis(rows)
    vx, vp = analytic_blocks(basis, dec)
    assert np.allclose(vx, ox, atol=1e-13) and np.allclose(vp, op, atol=1e-13)
    blocks = simulate_covariance(basis, dec, effective_samples=None)
    assert np.allclose(blocks.v_x, ox, atol=1e-11) and np.allclose(blocks.v_p, op, atol=1e-11)


def test_efficiency_in_blocks(rng):
    dec = toy_decomposition([0.5, 0.3])
    rows = random_orthonormal_rows(rng, 2)
    basis = toy_basis(rows)
    full = analytic_blocks(basis, dec)
    lossy = analytic_blocks(basis, dec, efficiency=0.7)
    for a, b in zip(full, lossy):
        assert np.allclose(b, 0.7 * a + 0.3 * np.eye(2), atol=1e-14)
    blocks = simulate_covariance(basis, dec, efficiency=0.7, effective_samples=None)
    assert np.allclose(blocks.v_x, lossy[0], atol=1e-11)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_sum_mode_identity_round_trip(m, seed):
    rng = np.random.default_rng(seed)
    labels = [f"m{i}" for i in range(m)]
    blocks = []
    for _ in range(2):
        a = rng.standard_normal((m, m))
        blocks.append(a @ a.T + 0.1 * np.eye(m))
    vx, vp = blocks
    diag = {lab: MeasuredVariances(vx[i, i], vp[i, i]) for i, lab in enumerate(labels)}
    sums = {
        (labels[i], labels[j]): MeasuredVariances(
            (vx[i, i] + vx[j, j] + 2 * vx[i, j]) / 2, (vp[i, i] + vp[j, j] + 2 * vp[i, j]) / 2
        )
        for i in range(m)
        for j in range(i + 1, m)
    }
    out = covariance_from_measurements(labels, diag, sums)
    assert np.allclose(out.v_x, vx, rtol=0, atol=1e-12 * np.max(np.abs(vx)))
    assert np.allclose(out.v_p, vp, rtol=0, atol=1e-12 * np.max(np.abs(vp)))
    assert np.array_equal(out.v_x, out.v_x.T)


def test_reversed_pair_key_and_error_propagation():
    diag = {"a": MeasuredVariances(0.9, 1.2, 0.02, 0.04), "b": MeasuredVariances(0.8, 1.3, 0.02, 0.04)}
    sums = {("b", "a"): MeasuredVariances(0.85, 1.25, 0.01, 0.03)}
    out = covariance_from_measurements(["a", "b"], diag, sums)
    assert out.v_x[0, 1] == pytest.approx(0.85 - 0.45 - 0.4)
    assert out.sigma_x[0, 1] == pytest.approx(math.sqrt(0.01**2 + 2 * 0.01**2))
    assert out.sigma_p[1, 0] == pytest.approx(math.sqrt(0.03**2 + 2 * 0.02**2))


def test_missing_measurements_listed():
    diag = {"a": MeasuredVariances(0.9, 1.1), "b": MeasuredVariances(0.9, 1.1)}
    with pytest.raises(IncompleteBasisError, match=r"c, a\+b, a\+c, b\+c"):
        covariance_from_measurements(["a", "b", "c"], diag, {})
    traces = simulate_traces(toy_basis(np.eye(N)[:2]), toy_decomposition([0.1]), effective_samples=None)
    del traces["A0+A1"]
    with pytest.raises(IncompleteBasisError, match=r"A0\+A1"):
        covariance_from_traces(["A0", "A1"], traces)


def test_non_orthogonal_basis_rejected():
    v = np.array([1.0, 1.0, 0, 0, 0]) / math.sqrt(2)
    basis = toy_basis([np.eye(N)[0], v])
    with pytest.raises(InputError, match="not orthonormal"):
        check_orthonormal(basis)
    with pytest.raises(InputError, match="not orthonormal"):
        simulate_covariance(basis, toy_decomposition([0.1]))


def test_measurement_modes_order():
    labels = [m.label for m in measurement_modes(toy_basis(np.eye(N)[:3]))]
    assert labels == ["A0", "A1", "A2", "A0+A1", "A0+A2", "A1+A2"]


def test_eigenbasis_gives_diagonal_blocks(small_decomposition):
    dec = small_decomposition.with_gain(0.1)
    basis = [AnalysisMode(f"S{k}", dec.modes[:, k], dec.grid) for k in (0, 2, 4)]
    vx, vp = analytic_blocks(basis, dec)
    r = dec.squeezing_parameters[[0, 2, 4]]
    assert np.allclose(vx, np.diag(np.exp(-2 * r)), atol=1e-12)
    assert np.allclose(vp, np.diag(np.exp(2 * r)), atol=1e-12)


def test_permutation_invariance(rng):
    dec = toy_decomposition([0.5, 0.3, 0.2])
    rows = random_orthonormal_rows(rng, 3)
    a = diagonalize_blocks(CovarianceBlocks(("0", "1", "2"), *analytic_blocks(toy_basis(rows), dec), np.zeros((3, 3)), np.zeros((3, 3))), 0)
    perm = [2, 0, 1]
    b = diagonalize_blocks(
        CovarianceBlocks(("2", "0", "1"), *analytic_blocks(toy_basis(rows[perm]), dec), np.zeros((3, 3)), np.zeros((3, 3))), 0
    )
    assert np.allclose(a.x_values, b.x_values, atol=1e-13)
    assert np.allclose(a.p_values, b.p_values, atol=1e-13)
    assert np.allclose(np.abs(a.x_vectors[perm]), np.abs(b.x_vectors), atol=1e-10)


def test_reciprocal_pairing(rng):
    # a real rotation of squeezed eigenmodes: X and P share eigenvectors, eigenvalues reciprocal
    r = [0.5, 0.3, 0.1]
    dec = toy_decomposition(r)
    rows = np.zeros((3, N))
    rows[:, :3], _ = np.linalg.qr(rng.standard_normal((3, 3)))
    vx, vp = analytic_blocks(toy_basis(rows), dec)
    z = np.zeros((3, 3))
    ana = diagonalize_blocks(CovarianceBlocks(("a", "b", "c"), vx, vp, z, z), 0)
    assert np.allclose(ana.x_values * ana.p_values, 1.0, atol=1e-12)
    assert np.allclose(ana.x_values, np.exp(-2 * np.array(r)), atol=1e-12)
    assert np.allclose(np.abs(ana.x_vectors.T @ ana.p_vectors), np.eye(3), atol=1e-10)


def noisy_blocks(seed=0):
    dec = toy_decomposition([0.3, 0.15])
    rows = np.zeros((2, N))
    rows[0, :2] = [1 / math.sqrt(2), 1 / math.sqrt(2)]
    rows[1, :2] = [1 / math.sqrt(2), -1 / math.sqrt(2)]
    return simulate_covariance(toy_basis(rows), dec, effective_samples=20_000, seed=seed)


def test_bootstrap_determinism_and_rounds():
    blocks = noisy_blocks()
    a = diagonalize_blocks(blocks, 200, seed=7)
    b = diagonalize_blocks(blocks, 200, seed=7)
    c = diagonalize_blocks(blocks, 200, seed=8)
    assert np.array_equal(a.x_value_sigma, b.x_value_sigma)
    assert not np.array_equal(a.x_value_sigma, c.x_value_sigma)
    assert np.all(a.x_value_sigma > 0) and a.bootstrap_rounds == 200
    for bad in (1, -3):
        with pytest.raises(InputError, match="at least 2 rounds"):
            diagonalize_blocks(blocks, bad)
    none = diagonalize_blocks(blocks, 0)
    assert np.array_equal(none.x_value_sigma, np.zeros(2))


def test_bootstrap_error_tracks_simulation_scatter():
    seeds = range(40)
    values = np.array([diagonalize_blocks(noisy_blocks(s), 0).x_values for s in seeds])
    quoted = diagonalize_blocks(noisy_blocks(0), 400, seed=1).x_value_sigma
    spread = values.std(axis=0, ddof=1)
    assert np.all(quoted / spread > 0.5) and np.all(quoted / spread < 2.0)


def test_identity_blocks_mean_no_squeezing():
    z = np.zeros((3, 3))
    ana = diagonalize_blocks(CovarianceBlocks(("a", "b", "c"), np.eye(3), np.eye(3), z, z), 0)
    v = multimode_verdict(ana)
    assert (v.count_x, v.count_p, v.multimode, v.label) == (0, 0, False, "no squeezing")


@pytest.mark.parametrize("noise", [None, 20_000])
def test_single_squeezer_is_not_multimode(noise):
    # one squeezed eigenmode shared by two orthonormal analysis modes
    dec = toy_decomposition([0.3])
    rows = np.zeros((2, N))
    rows[0, :3] = [0.6, 0.8, 0.0]
    rows[1, :3] = [0.48, -0.36, 0.8]
    blocks = simulate_covariance(toy_basis(rows), dec, effective_samples=noise, seed=2)
    ana = diagonalize_blocks(blocks, 0 if noise is None else 500, seed=3)
    v = multimode_verdict(ana)
    assert v.label == "single-mode" and not v.multimode
    assert v.count_x == 1 and v.count_p == 1


def test_two_squeezers_are_multimode():
    blocks = noisy_blocks()
    v = multimode_verdict(diagonalize_blocks(blocks, 500, seed=1))
    assert v.multimode and v.label == "multimode"


def test_hg_basis_on_kernel_modes(small_decomposition):
    dec = small_decomposition.with_gain(0.04)
    prof = full_beam_profile(dec)
    basis = [hermite_gauss_spectral(n, dec.grid, prof) for n in range(3)]
    vx, vp = analytic_blocks(basis, dec)
    blocks = simulate_covariance(basis, dec, effective_samples=None)
    assert np.allclose(blocks.v_x, vx, atol=1e-10)
    assert np.allclose(blocks.v_p, vp, atol=1e-10)
    assert np.all(np.linalg.eigvalsh(vx) <= 1 + 1e-12)
    assert np.all(np.linalg.eigvalsh(vp) >= 1 - 1e-12)


def test_blocks_validation():
    z = np.zeros((2, 2))
    with pytest.raises(InputError, match="not symmetric"):
        CovarianceBlocks(("a", "b"), np.array([[1, 0.1], [0.2, 1]]), np.eye(2), z, z)
    with pytest.raises(InputError, match="shape"):
        CovarianceBlocks(("a", "b"), np.eye(3), np.eye(2), z, z)
    with pytest.raises(InputError, match="positive"):
        CovarianceBlocks(("a", "b"), np.diag([1.0, 0.0]), np.eye(2), z, z)
    b = CovarianceBlocks(("a", "b"), np.eye(2), np.eye(2), z, z)
    with pytest.raises(ValueError):
        b.v_x[0, 0] = 2


def test_block_csv_round_trip(tmp_path):
    blocks = noisy_blocks()
    write_blocks(blocks, tmp_path, "temporal")
    back = read_blocks(tmp_path, "temporal")
    for name in ("v_x", "v_p", "sigma_x", "sigma_p"):
        assert np.array_equal(getattr(back, name), getattr(blocks, name))
    assert back.basis_labels == blocks.basis_labels and back.provenance == "ingested"


def test_block_csv_errors(tmp_path):
    write_blocks(noisy_blocks(), tmp_path, "t")
    p = tmp_path / "t_vp.csv"
    lines = p.read_text().splitlines()
    lines[2] = lines[2].rsplit(",", 1)[0]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(TraceIOError, match=r"t_vp.csv:3: expected 2 values"):
        read_blocks(tmp_path, "t")
    (tmp_path / "t_vx.csv").unlink()
    with pytest.raises(TraceIOError, match="t_vx.csv"):
        read_blocks(tmp_path, "t")
