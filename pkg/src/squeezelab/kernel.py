"""Pump amplitude, spatio-spectral grid and the discretized down-conversion gain kernel."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c
from scipy.optimize import brentq
from scipy.sparse.linalg import eigsh, svds

from .crystal import CrystalSpec, lobe_wavenumber, longitudinal, phase_mismatch, signal_wavenumber, pump_wavenumber
from .errors import ConfigurationError, InputError, TraceIOError

FWHM_PER_SIGMA = 2 * np.sqrt(2 * np.log(2))
MIN_POINTS_PER_PUMP_FWHM = 8
KERNEL_MAGIC = b"SQZKERNEL\n"
KERNEL_FORMAT_VERSION = 1


def sinc(x):
    """Unnormalized sin(x)/x with a Taylor branch below |x| < 1e-4."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-4
    xs = x[small] ** 2
    out[small] = 1 - xs / 6 + xs**2 / 120 - xs**3 / 5040
    xl = x[~small]
    out[~small] = np.sin(xl) / xl
    return out


def wavelength_to_omega_width(fwhm_m: float, center_m: float) -> float:
    """Convert a wavelength FWHM to angular frequency via dnu = c dlambda / lambda^2."""
    return 2 * np.pi * c * fwhm_m / center_m**2


@dataclass(frozen=True)
class PumpProfile:
    """Separable Gaussian pump. ``gain`` is the dimensionless peak gain g."""

    center_wavelength_m: float = 397.5e-9
    spectral_fwhm_m: float = 1.82e-9
    waist_m: float = 49e-6
    chirp_s2: float = 0.0
    gain: float = 0.0

    def __post_init__(self):
        if not self.spectral_fwhm_m > 0:
            raise ConfigurationError("pump spectral_fwhm must be positive")
        if not self.waist_m > 0:
            raise ConfigurationError("pump waist must be positive")
        if self.gain < 0:
            raise ConfigurationError("gain must be non-negative")

    @property
    def omega_fwhm(self) -> float:
        """Intensity FWHM of the pump spectrum in rad/s."""
        return wavelength_to_omega_width(self.spectral_fwhm_m, self.center_wavelength_m)

    @property
    def sigma_omega(self) -> float:
        """Standard deviation of |A_p|^2 along the frequency axis."""
        return self.omega_fwhm / FWHM_PER_SIGMA


def pump_amplitude(q_sum, omega_sum, pump: PumpProfile):
    """Normalized pump amplitude A_p(q, W).

    exp(-q^2 w0^2 / 4) exp(-W^2 / (4 sigma^2)) exp(i chirp W^2), equal to 1 at the
    origin. Returns a real array when the chirp is zero.
    """
    q_sum = np.asarray(q_sum, dtype=float)
    omega_sum = np.asarray(omega_sum, dtype=float)
    amp = np.exp(-(q_sum**2) * pump.waist_m**2 / 4 - omega_sum**2 / (4 * pump.sigma_omega**2))
    if pump.chirp_s2 == 0:
        return amp
    return amp * np.exp(1j * pump.chirp_s2 * omega_sum**2)


def _check_uniform(axis: np.ndarray, name: str):
    if axis.ndim != 1 or axis.size == 0:
        raise ConfigurationError(f"{name} must be a non-empty 1-D array")
    if axis.size > 1:
        d = np.diff(axis)
        if np.any(d <= 0):
            raise ConfigurationError(f"{name} must be strictly increasing")
        if np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
            raise ConfigurationError(f"{name} must be uniformly spaced")


@dataclass(frozen=True, eq=False)
class SpatioSpectralGrid:
    """Product grid over transverse wavenumber q_y and signal detuning W.

    Flattened index = iq * n_omega + iW. ``lobe_center`` is the transverse
    wavenumber q0 of the signal lobe (0 for a collinear beam); the half-cut
    spatial modes are split at |q| = lobe_center.
    """

    q_points: np.ndarray
    omega_points: np.ndarray
    lobe_center: float = 0.0

    def __post_init__(self):
        q = np.array(self.q_points, dtype=float)
        w = np.array(self.omega_points, dtype=float)
        _check_uniform(q, "q_points")
        _check_uniform(w, "omega_points")
        q.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "q_points", q)
        object.__setattr__(self, "omega_points", w)
        object.__setattr__(self, "lobe_center", float(self.lobe_center))

    @property
    def n_q(self) -> int:
        return self.q_points.size

    @property
    def n_omega(self) -> int:
        return self.omega_points.size

    @property
    def size(self) -> int:
        return self.n_q * self.n_omega

    @property
    def dq(self) -> float:
        return float(self.q_points[1] - self.q_points[0]) if self.n_q > 1 else 1.0

    @property
    def domega(self) -> float:
        return float(self.omega_points[1] - self.omega_points[0]) if self.n_omega > 1 else 1.0

    def flat(self):
        """Flattened (q, W) coordinates of every grid point."""
        q = np.repeat(self.q_points, self.n_omega)
        w = np.tile(self.omega_points, self.n_q)
        return q, w

    def index(self, iq: int, iw: int) -> int:
        return iq * self.n_omega + iw

    def __eq__(self, other):
        if not isinstance(other, SpatioSpectralGrid):
            return NotImplemented
        return (
            np.array_equal(self.q_points, other.q_points)
            and np.array_equal(self.omega_points, other.omega_points)
            and self.lobe_center == other.lobe_center
        )

    __hash__ = None

    @classmethod
    def for_experiment(
        cls,
        crystal: CrystalSpec,
        pump: PumpProfile,
        n_q: int = 48,
        n_omega: int = 96,
        q_margin: float = 4.0,
        points_per_pump_fwhm: float = MIN_POINTS_PER_PUMP_FWHM,
    ) -> "SpatioSpectralGrid":
        """Symmetric grid covering both lobes at +-q0 with ``q_margin / w0`` to spare.

        The q spacing is chosen so that +-q0 fall midway between grid points,
        which makes the half-cut split land between samples.
        """
        if n_q < 2 or n_omega < 2:
            raise ConfigurationError("grid needs at least two points per axis")
        q0 = lobe_wavenumber(crystal)
        reach = q0 + q_margin / pump.waist_m
        half = (n_q - 1) / 2
        dq_min = reach / half
        offset = 0.0 if n_q % 2 == 0 else 0.5
        if q0 > 0:
            m = np.floor(q0 / dq_min - offset)
            if m < 1:
                raise ConfigurationError(f"grid.n_q = {n_q} is too small to place the lobes")
            dq = q0 / (m + offset)
        else:
            dq = dq_min
        q = (np.arange(n_q) - half) * dq
        dw = pump.omega_fwhm / points_per_pump_fwhm
        w = (np.arange(n_omega) - (n_omega - 1) / 2) * dw
        return cls(q, w, lobe_center=q0)


def phase_matching_acceptance(crystal: CrystalSpec) -> float:
    """Pump-detuning half-width (rad/s) at the first zero of the sinc on the lobe center.

    Evaluated for the pair (+q0, W/2), (-q0, W/2), i.e. along the pump-frequency direction.
    """
    q0 = lobe_wavenumber(crystal)
    half_length = crystal.length_m / 2

    def arg(w):
        return abs(float(phase_mismatch(q0, -q0, w / 2, w / 2, crystal))) * half_length - np.pi

    w_hi = 1e12
    while arg(w_hi) < 0:
        w_hi *= 2
        if w_hi > 1e16:
            return np.inf
    return brentq(arg, 0.0, w_hi, xtol=1e3)


def check_grid(grid: SpatioSpectralGrid, pump: PumpProfile, crystal: CrystalSpec, q_margin: float = 4.0):
    """Validate lobe coverage, spectral coverage and pump resolution of an experiment grid."""
    q0 = lobe_wavenumber(crystal)
    reach = q0 + q_margin / pump.waist_m
    if grid.q_points[0] > -reach or grid.q_points[-1] < reach:
        raise ConfigurationError(
            f"q range [{grid.q_points[0]:.4g}, {grid.q_points[-1]:.4g}] rad/m does not cover "
            f"the lobes out to +-{reach:.4g} rad/m"
        )
    need = 3 * pump.sigma_omega + phase_matching_acceptance(crystal)
    if min(-grid.omega_points[0], grid.omega_points[-1]) < need:
        raise ConfigurationError(
            f"omega range must extend to +-{need:.4g} rad/s (3 pump sigma plus phase-matching acceptance)"
        )
    _check_resolution(grid, pump)


def _check_resolution(grid: SpatioSpectralGrid, pump: PumpProfile):
    if grid.n_omega > 1 and grid.domega > pump.omega_fwhm / MIN_POINTS_PER_PUMP_FWHM * (1 + 1e-9):
        raise ConfigurationError(
            f"grid too coarse: {pump.omega_fwhm / grid.domega:.2f} points per pump bandwidth, "
            f"need at least {MIN_POINTS_PER_PUMP_FWHM}"
        )


@dataclass(frozen=True, eq=False)
class GainKernel:
    """Discretized kernel K_ij = A_p(q_i + q_j, W_i + W_j) sinc(Delta_ij l / 2) dq dW / scale.

    ``scale`` is the divisor applied during assembly (the largest Takagi value of
    the measure-weighted kernel when normalized), so that ``matrix * scale``
    recovers the raw discretization.
    """

    grid: SpatioSpectralGrid
    matrix: np.ndarray
    gain: float
    scale: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.shape != (self.grid.size, self.grid.size):
            raise InputError(f"kernel shape {m.shape} does not match grid size {self.grid.size}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.matrix)

    def with_gain(self, gain: float) -> "GainKernel":
        return GainKernel(self.grid, self.matrix, float(gain), self.scale, dict(self.metadata))


def _row_block(qf, wf, rows: slice, cols: slice, pump: PumpProfile, crystal: CrystalSpec, ksz):
    qi, qj = qf[rows, None], qf[None, cols]
    wi, wj = wf[rows, None], wf[None, cols]
    q_sum = qi + qj
    w_sum = wi + wj
    kpz = longitudinal(pump_wavenumber(q_sum, w_sum, crystal), q_sum)
    delta = ksz[rows, None] + ksz[None, cols] - kpz
    return pump_amplitude(q_sum, w_sum, pump) * sinc(delta * crystal.length_m / 2)


def build_kernel(
    grid: SpatioSpectralGrid,
    pump: PumpProfile,
    crystal: CrystalSpec,
    *,
    normalize: bool = True,
    block_rows: int = 256,
) -> GainKernel:
    """Assemble the gain kernel on ``grid``.

    Only the upper triangle is evaluated; the lower one is a mirrored copy, so
    the result is exactly symmetric. With ``normalize`` the matrix is divided by
    its largest Takagi value, which makes r_0 = g for the leading eigenmode.
    """
    _check_resolution(grid, pump)
    crystal.require_theta0()
    qf, wf = grid.flat()
    ksz = longitudinal(signal_wavenumber(wf, crystal), qf)
    n = grid.size
    dtype = float if pump.chirp_s2 == 0 else complex
    k = np.empty((n, n), dtype=dtype)
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        blk = _row_block(qf, wf, slice(start, stop), slice(start, n), pump, crystal, ksz)
        diag = blk[:, : stop - start]
        blk[:, : stop - start] = np.triu(diag) + np.triu(diag, 1).T
        k[start:stop, start:] = blk
        k[start:, start:stop] = blk.T
    k *= grid.dq * grid.domega
    scale = 1.0
    if normalize:
        scale = largest_takagi_value(k)
        if scale == 0:
            raise ConfigurationError("kernel vanishes on the grid; check lobe placement and phase matching")
        k /= scale
    meta = {"theta0_rad": crystal.theta0_rad, "measure": grid.dq * grid.domega}
    return GainKernel(grid=grid, matrix=k, gain=pump.gain, scale=float(scale), metadata=meta)


def largest_takagi_value(k: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix (its largest Takagi value)."""
    n = k.shape[0]
    if n <= 64:
        return float(np.linalg.norm(k, 2))
    v0 = np.ones(n)
    if np.iscomplexobj(k):
        s = svds(k, k=1, v0=v0, return_singular_vectors=False, tol=0)
        return float(s[0])
    w = eigsh(k, k=1, which="LM", v0=v0, return_eigenvectors=False, tol=0)
    return float(abs(w[0]))


def save_kernel(kernel: GainKernel, path, extra: dict | None = None):
    """Write a kernel cache file.

    Layout: the magic line ``SQZKERNEL``, one JSON header line (format version,
    q and W axes, lobe center, gain, scale, extra fields), then n*n complex
    values as little-endian float64 (re, im) pairs in row-major order.
    """
    g = kernel.grid
    header = {
        "format_version": KERNEL_FORMAT_VERSION,
        "n_q": g.n_q,
        "n_omega": g.n_omega,
        "q_points": g.q_points.tolist(),
        "omega_points": g.omega_points.tolist(),
        "lobe_center": g.lobe_center,
        "gain": kernel.gain,
        "scale": kernel.scale,
        "metadata": kernel.metadata,
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(KERNEL_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(kernel.matrix, dtype="<c16").tobytes())


def load_kernel(path) -> tuple[GainKernel, dict]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            if fh.readline() != KERNEL_MAGIC:
                raise TraceIOError(f"{path}: not a kernel cache file")
            header = json.loads(fh.readline())
            raw = fh.read()
    except (OSError, json.JSONDecodeError) as exc:
        raise TraceIOError(f"{path}: {exc}") from exc
    if header.get("format_version") != KERNEL_FORMAT_VERSION:
        raise TraceIOError(f"{path}: unsupported kernel format {header.get('format_version')}")
    n = header["n_q"] * header["n_omega"]
    if len(raw) != 16 * n * n:
        raise TraceIOError(f"{path}: truncated kernel data")
    m = np.frombuffer(raw, dtype="<c16").reshape(n, n).astype(complex)
    if not np.any(m.imag):
        m = m.real.copy()
    grid = SpatioSpectralGrid(header["q_points"], header["omega_points"], header["lobe_center"])
    kern = GainKernel(grid, m, header["gain"], header["scale"], header.get("metadata", {}))
    return kern, header
