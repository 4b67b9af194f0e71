"""Takagi factorization of the gain kernel and the analysis (local-oscillator) modes.

A Takagi factorization writes a complex-symmetric K as U diag(L) U^T with U
unitary and L >= 0 sorted descending. Column k of U is the squeezed eigenmode
S_k; its squeezing parameter is g * L_k.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c
from scipy.special import eval_hermite

from .errors import ConfigurationError, InputError
from .kernel import FWHM_PER_SIGMA, GainKernel, SpatioSpectralGrid, wavelength_to_omega_width

SYMMETRY_RTOL = 1e-12
# Takagi values closer than this (relative) share a canonicalized basis. Rotating
# inside a block of spread s perturbs the reconstruction by about s, so the
# tolerance stays below the 1e-10 reconstruction budget.
DEGENERACY_RTOL = 1e-11
TRUNCATION_RTOL = 1e-6
MODE_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class SqueezingDecomposition:
    """Eigenmodes (columns of ``modes``) and Takagi values of a gain kernel.

    ``discarded_weight`` is the fraction of sum(L_k^2) dropped by truncation.
    """

    modes: np.ndarray
    lambdas: np.ndarray
    gain: float
    grid: SpatioSpectralGrid | None = None
    discarded_weight: float = 0.0

    def __post_init__(self):
        for name in ("modes", "lambdas"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.modes.shape[1] != self.lambdas.size:
            raise InputError("mode count does not match number of Takagi values")

    @property
    def n_modes(self) -> int:
        return self.lambdas.size

    @property
    def squeezing_parameters(self) -> np.ndarray:
        """r_k = g * L_k."""
        return self.gain * self.lambdas

    def with_gain(self, gain: float) -> "SqueezingDecomposition":
        return SqueezingDecomposition(self.modes, self.lambdas, float(gain), self.grid, self.discarded_weight)

    def truncated(self, rtol: float = TRUNCATION_RTOL) -> "SqueezingDecomposition":
        """Keep modes with L_k > rtol * L_0 and record the discarded weight."""
        if self.n_modes == 0 or self.lambdas[0] == 0:
            return self
        keep = self.lambdas > rtol * self.lambdas[0]
        total = np.sum(self.lambdas**2)
        dropped = np.sum(self.lambdas[~keep] ** 2) / total
        return SqueezingDecomposition(
            np.ascontiguousarray(self.modes[:, keep]),
            self.lambdas[keep].copy(),
            self.gain,
            self.grid,
            float(self.discarded_weight + (1 - self.discarded_weight) * dropped),
        )

    def reconstruct(self) -> np.ndarray:
        return (self.modes * self.lambdas) @ self.modes.T

    def mode_grid(self, k: int) -> np.ndarray:
        """Mode k reshaped to (n_q, n_omega)."""
        if self.grid is None:
            raise InputError("decomposition carries no grid")
        return self.modes[:, k].reshape(self.grid.n_q, self.grid.n_omega)


def _gram_schmidt_rows(rows: np.ndarray, d: int, tol: float = 1e-10) -> np.ndarray:
    """First ``d`` orthonormal directions obtained by Gram-Schmidt over ``rows`` in order."""
    basis = []
    for r in rows:
        v = r.copy()
        for b in basis:
            v -= (b @ v) * b
        for b in basis:
            v -= (b @ v) * b
        nrm = np.linalg.norm(v)
        if nrm > tol:
            basis.append(v / nrm)
            if len(basis) == d:
                break
    if len(basis) < d:
        raise InputError("degenerate block is rank deficient")
    return np.array(basis).T


def canonicalize_block(block: np.ndarray) -> np.ndarray:
    """Canonical basis of a Takagi-degenerate block of columns.

    Within a degenerate block the factorization is fixed only up to a real
    orthogonal rotation. The canonical choice Gram-Schmidts the real and
    imaginary parts of the block's rows in grid-index order, so the result
    does not depend on which basis the eigensolver happened to return.
    """
    n, d = block.shape
    rows = np.empty((2 * n, d))
    rows[0::2] = block.real
    rows[1::2] = block.imag
    scale = np.max(np.abs(rows))
    rot = _gram_schmidt_rows(rows, d, tol=1e-8 * scale)
    return block @ rot


def _fix_phase(u: np.ndarray) -> np.ndarray:
    """Flip each column's sign so its largest component points along +1 or +i.

    A Takagi vector can only be multiplied by +-1; the component is made to have
    positive real part (or positive imaginary part when it is mostly imaginary).
    """
    idx = np.argmax(np.abs(u), axis=0)
    z = u[idx, np.arange(u.shape[1])]
    flip = np.where(np.abs(z.real) >= np.abs(z.imag), z.real < 0, z.imag < 0)
    u[:, flip] *= -1
    return u


def _groups(values: np.ndarray, tol: float):
    """Runs of consecutive (sorted) values closer than ``tol``."""
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or abs(values[i] - values[i - 1]) > tol:
            if i - start > 1:
                yield slice(start, i)
            start = i


def _takagi_real(k: np.ndarray):
    w, v = np.linalg.eigh(k)
    lam0 = np.max(np.abs(w)) if w.size else 0.0
    # degenerate eigenvalues of equal sign share a real eigenspace
    for grp in _groups(w, DEGENERACY_RTOL * lam0):
        if np.min(np.abs(w[grp])) > TRUNCATION_RTOL * lam0:
            v[:, grp] = canonicalize_block(v[:, grp]).real
            # equal values keep the canonical column order through the final sort
            w[grp] = np.mean(w[grp])
    u = v.astype(complex)
    u[:, w < 0] *= 1j
    return np.abs(w), u


def _takagi_complex(k: np.ndarray):
    # Real embedding: for K = A + iB, M = [[A, B], [B, -A]] has eigenpairs
    # (+s, [x; y]) and (-s, [-y; x]); u = x + iy then satisfies K conj(u) = s u.
    n = k.shape[0]
    a, b = k.real, k.imag
    m = np.block([[a, b], [b, -a]])
    w, v = np.linalg.eigh(m)
    order = np.argsort(-w, kind="stable")[:n]
    w, v = w[order], v[:, order]
    lam0 = max(w[0], 0.0) if n else 0.0
    good = w > max(1e-13 * lam0, np.finfo(float).tiny)
    u = v[:n, good] + 1j * v[n:, good]
    lam = w[good]
    missing = n - u.shape[1]
    if missing:
        # zero Takagi values: any orthonormal completion of the range works
        q, _ = np.linalg.qr(np.hstack([u, np.eye(n, dtype=complex)]))
        u = np.hstack([u, q[:, u.shape[1] : n]])
        lam = np.concatenate([lam, np.zeros(missing)])
    return lam, u


def takagi(kernel: GainKernel | np.ndarray, gain: float | None = None) -> SqueezingDecomposition:
    """Takagi factorization K = U diag(L) U^T of a complex-symmetric kernel.

    Real kernels go through a symmetric eigendecomposition with negative
    eigenvalues absorbed as a factor i in their column; complex kernels through
    a real symmetric embedding of twice the size. Modes whose Takagi values
    agree to 1e-11 relative are put in a canonical basis, and each column's sign
    is fixed so the output is reproducible bit for bit.
    """
    grid = None
    if isinstance(kernel, GainKernel):
        grid = kernel.grid
        gain = kernel.gain if gain is None else gain
        k = kernel.matrix
    else:
        k = np.asarray(kernel)
    gain = 1.0 if gain is None else float(gain)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise InputError("kernel must be a square matrix")
    kmax = np.max(np.abs(k)) if k.size else 0.0
    if kmax and np.max(np.abs(k - k.T)) > SYMMETRY_RTOL * kmax:
        raise InputError("kernel is not complex symmetric (K != K^T)")
    if np.iscomplexobj(k) and np.any(k.imag):
        lam, u = _takagi_complex(k)
        lam0 = lam[0] if lam.size else 0.0
        for grp in _groups(lam, DEGENERACY_RTOL * lam0):
            if lam[grp.stop - 1] > TRUNCATION_RTOL * lam0:
                u[:, grp] = canonicalize_block(u[:, grp])
                lam[grp] = np.mean(lam[grp])
    else:
        lam, u = _takagi_real(np.asarray(k.real if np.iscomplexobj(k) else k, dtype=float))
    order = np.argsort(-lam, kind="stable")
    lam, u = lam[order], np.ascontiguousarray(u[:, order])
    u = _fix_phase(u)
    return SqueezingDecomposition(modes=u, lambdas=lam, gain=gain, grid=grid)


@dataclass(frozen=True, eq=False)
class AnalysisMode:
    """A unit-norm local-oscillator mode on the grid."""

    label: str
    vector: np.ndarray
    grid: SpatioSpectralGrid
    spectral_part: dict = field(default_factory=dict)
    spatial_part: str = "full"

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex)
        if v.shape != (self.grid.size,):
            raise InputError(f"mode '{self.label}' has {v.size} samples, grid has {self.grid.size}")
        nrm = np.linalg.norm(v)
        if abs(nrm - 1) > 1e-9:
            raise InputError(f"mode '{self.label}' is not unit norm (|v| = {nrm:.12g})")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def as_grid(self) -> np.ndarray:
        return self.vector.reshape(self.grid.n_q, self.grid.n_omega)


def full_beam_profile(decomposition: SqueezingDecomposition) -> np.ndarray:
    """Transverse profile of the dominant eigenmode: sqrt(sum_W |S_0(q, W)|^2), unit norm."""
    prof = np.sqrt(np.sum(np.abs(decomposition.mode_grid(0)) ** 2, axis=1))
    return prof / np.linalg.norm(prof)


def hermite_gauss_spectra(
    max_order: int,
    grid: SpatioSpectralGrid,
    *,
    center_wavelength: float = 795e-9,
    fwhm: float = 15e-9,
    carrier_wavelength: float = 795e-9,
) -> np.ndarray:
    """Sampled HG_0..HG_max_order spectral amplitudes, shape (max_order + 1, n_omega).

    ``fwhm`` is the intensity FWHM of HG_0 in wavelength. The sampled set is
    orthonormalized in order of increasing order so the modes are orthogonal on
    the grid to rounding error, not just to quadrature accuracy.
    """
    if not 0 <= max_order <= 10:
        raise ConfigurationError("Hermite-Gauss order must lie in 0..10")
    center = 2 * np.pi * c * (1 / center_wavelength - 1 / carrier_wavelength)
    sigma = wavelength_to_omega_width(fwhm, center_wavelength) / FWHM_PER_SIGMA
    w = grid.omega_points
    if grid.n_omega > 1 and sigma < 4 * grid.domega:
        raise ConfigurationError(
            f"Hermite-Gauss envelope (sigma {sigma:.3g} rad/s) is under-resolved by the "
            f"grid spacing {grid.domega:.3g} rad/s"
        )
    if w[0] > center - 4 * sigma or w[-1] < center + 4 * sigma:
        raise ConfigurationError("omega grid does not cover +-4 sigma of the Hermite-Gauss envelope")
    x = (w - center) / (np.sqrt(2) * sigma)
    raw = np.array([eval_hermite(n, x) * np.exp(-(x**2) / 2) for n in range(max_order + 1)]).T
    q, r = np.linalg.qr(raw)
    q *= np.sign(np.diag(r))
    return q.T


def hermite_gauss_spectral(
    order: int,
    grid: SpatioSpectralGrid,
    spatial_profile: np.ndarray,
    *,
    center_wavelength: float = 795e-9,
    fwhm: float = 15e-9,
    carrier_wavelength: float = 795e-9,
    label: str | None = None,
) -> AnalysisMode:
    """HG_order spectral mode times a transverse profile (usually :func:`full_beam_profile`)."""
    spec = hermite_gauss_spectra(
        order, grid, center_wavelength=center_wavelength, fwhm=fwhm, carrier_wavelength=carrier_wavelength
    )[order]
    prof = np.asarray(spatial_profile, dtype=complex)
    if prof.shape != (grid.n_q,):
        raise InputError("spatial profile length does not match the q axis")
    vec = np.outer(prof, spec).ravel()
    vec /= np.linalg.norm(vec)
    return AnalysisMode(
        label=label or f"HG{order}",
        vector=vec,
        grid=grid,
        spectral_part={"order": order, "center_m": center_wavelength, "fwhm_m": fwhm},
        spatial_part="full",
    )


def cut_coordinate(grid: SpatioSpectralGrid) -> np.ndarray:
    """Signed transverse offset from the cut plane for every q sample.

    With lobes at +-q0 the recombined beam's Fourier-plane coordinate is
    |q| - q0, so the left cut keeps the inner half of each lobe. For a
    collinear grid it is q itself.
    """
    q = grid.q_points
    if grid.lobe_center > 0:
        return np.abs(q) - grid.lobe_center
    return q


def half_cut_spatial(side: str, base: AnalysisMode) -> AnalysisMode:
    """Left- or right-cut version of ``base``: zero the other half, renormalize."""
    if side not in ("left", "right"):
        raise InputError("side must be 'left' or 'right'")
    x = cut_coordinate(base.grid)
    keep = x < 0 if side == "left" else x >= 0
    v = base.as_grid() * keep[:, None]
    nrm = np.linalg.norm(v)
    if nrm < 1e-12:
        raise InputError(f"mode '{base.label}' has no power on the {side} side of the cut")
    tag = "L" if side == "left" else "R"
    return AnalysisMode(
        label=f"{base.label}-{tag}" if base.label else tag,
        vector=(v / nrm).ravel(),
        grid=base.grid,
        spectral_part=dict(base.spectral_part),
        spatial_part=f"{side}-cut",
    )


def cut_powers(base: AnalysisMode) -> tuple[float, float]:
    """Fractions of the mode's power on the left and right of the cut."""
    x = cut_coordinate(base.grid)
    p = np.sum(np.abs(base.as_grid()) ** 2, axis=1)
    return float(np.sum(p[x < 0])), float(np.sum(p[x >= 0]))


def sum_mode(a: AnalysisMode, b: AnalysisMode) -> AnalysisMode:
    """Normalized superposition (a + b) / |a + b| used for off-diagonal measurements."""
    if a.grid != b.grid:
        raise InputError("modes live on different grids")
    v = a.vector + b.vector
    return AnalysisMode(f"{a.label}+{b.label}", v / np.linalg.norm(v), a.grid, {}, "sum")


def overlaps(mode: AnalysisMode, decomposition: SqueezingDecomposition) -> np.ndarray:
    """c_k = <S_k, mode> for every retained eigenmode."""
    if decomposition.grid is not None and mode.grid != decomposition.grid:
        raise InputError(f"mode '{mode.label}' is defined on a different grid than the decomposition")
    if mode.vector.size != decomposition.modes.shape[0]:
        raise InputError("mode length does not match the decomposition")
    return decomposition.modes.conj().T @ mode.vector


def export_modes(decomposition: SqueezingDecomposition, directory, n_modes: int) -> list[Path]:
    """Write the leading eigenmodes as text files ``mode_XXX.txt``.

    Each file starts with ``#`` header lines (format version, mode index,
    Takagi value, gain, grid shape, column names) followed by one row per
    grid point: q [rad/m], W [rad/s], Re S, Im S.
    """
    grid = decomposition.grid
    if grid is None:
        raise InputError("decomposition carries no grid")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    qf, wf = grid.flat()
    paths = []
    for k in range(min(n_modes, decomposition.n_modes)):
        s = decomposition.modes[:, k]
        path = directory / f"mode_{k:03d}.txt"
        lines = [
            f"# squeezelab-mode v{MODE_FORMAT_VERSION}",
            f"# index: {k}",
            f"# lambda: {float(decomposition.lambdas[k])!r}",
            f"# gain: {decomposition.gain!r}",
            f"# n_q: {grid.n_q}",
            f"# n_omega: {grid.n_omega}",
            "# columns: q_rad_per_m omega_rad_per_s re im",
        ]
        lines += [f"{float(q)!r} {float(w)!r} {float(z.real)!r} {float(z.imag)!r}" for q, w, z in zip(qf, wf, s)]
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return paths


def read_mode(path) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray]:
    """Read a mode file back: (header, q, W, complex amplitudes)."""
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if val:
                header[key.strip()] = val.strip()
        elif line.strip():
            rows.append([float(x) for x in line.split()])
    a = np.array(rows)
    return header, a[:, 0], a[:, 1], a[:, 2] + 1j * a[:, 3]


def takagi_residuals(k: np.ndarray, decomposition: SqueezingDecomposition) -> tuple[float, float]:
    """(relative Frobenius reconstruction error, max |U^H U - I|).

    When every column is a real vector times a phase (the real-kernel path),
    the products are formed in real arithmetic.
    """
    u, lam = decomposition.modes, decomposition.lambdas
    k = np.asarray(k)
    idx = np.argmax(np.abs(u), axis=0)
    z = u[idx, np.arange(u.shape[1])]
    ph = z / np.abs(z)
    r = u * ph.conj()
    if not np.any(r.imag):
        r = np.ascontiguousarray(r.real)
        recon = (r * (lam * ph**2)) @ r.T
        gram = r.T @ r
    else:
        recon = (u * lam) @ u.T
        gram = u.conj().T @ u
    knorm = np.linalg.norm(k)
    err = np.linalg.norm(k - recon) / knorm if knorm else float(np.linalg.norm(recon))
    ortho = np.max(np.abs(gram - np.eye(gram.shape[0]))) if gram.size else 0.0
    return float(err), float(ortho)


def save_decomposition(decomposition: SqueezingDecomposition, path, all_lambdas=None):
    """Store a (usually truncated) decomposition as ``.npz``.

    ``all_lambdas`` keeps the full Takagi spectrum next to the stored modes.
    """
    g = decomposition.grid
    if g is None:
        raise InputError("decomposition carries no grid")
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format_version=np.array(MODE_FORMAT_VERSION),
            modes=decomposition.modes,
            lambdas=decomposition.lambdas,
            all_lambdas=decomposition.lambdas if all_lambdas is None else np.asarray(all_lambdas),
            gain=np.array(decomposition.gain),
            discarded_weight=np.array(decomposition.discarded_weight),
            q_points=g.q_points,
            omega_points=g.omega_points,
            lobe_center=np.array(g.lobe_center),
        )


def load_decomposition(path) -> tuple[SqueezingDecomposition, np.ndarray]:
    """Inverse of :func:`save_decomposition`: (decomposition, full Takagi spectrum)."""
    with np.load(path) as f:
        if int(f["format_version"]) != MODE_FORMAT_VERSION:
            raise InputError(f"{path}: unsupported decomposition format")
        grid = SpatioSpectralGrid(f["q_points"], f["omega_points"], float(f["lobe_center"]))
        dec = SqueezingDecomposition(
            f["modes"], f["lambdas"], float(f["gain"]), grid, float(f["discarded_weight"])
        )
        return dec, f["all_lambdas"]
