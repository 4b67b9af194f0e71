"""Dispersion and phase matching for a negative uniaxial crystal (type I, o + o -> e).

Signal and idler see the ordinary index; the pump travels as an extraordinary
wave whose index depends on the angle to the optical axis. Wavelengths are in
meters, angles in radians, wavenumbers in rad/m and detunings in rad/s.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import c
from scipy.optimize import bisect

from .errors import DomainError, PhaseMatchingError

# Bisection bracket for the phase-matching angle.
THETA_BRACKET = (np.radians(1.0), np.radians(89.0))
THETA_XTOL = 1e-12


@dataclass(frozen=True)
class Sellmeier:
    """Sellmeier relation n^2 = A + B / (lambda^2 - C) - D * lambda^2, lambda in microns.

    Shorter coefficient lists are padded with zeros, so ``Sellmeier((2.56,), ...)``
    is a dispersionless medium with n = 1.6.
    """

    coefficients: tuple[float, ...]
    valid_range_m: tuple[float, float]

    def __post_init__(self):
        coeffs = tuple(float(x) for x in self.coefficients)
        if not 1 <= len(coeffs) <= 4:
            raise ValueError("Sellmeier relation takes 1 to 4 coefficients (A, B, C, D)")
        lo, hi = (float(x) for x in self.valid_range_m)
        if not 0 < lo < hi:
            raise ValueError(f"invalid Sellmeier validity range {self.valid_range_m}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "valid_range_m", (lo, hi))

    def check_band(self, wavelength):
        lo, hi = self.valid_range_m
        wl = np.asarray(wavelength, dtype=float)
        if wl.size and (np.min(wl) < lo or np.max(wl) > hi):
            raise DomainError(
                f"wavelength {np.min(wl):.6g}..{np.max(wl):.6g} m outside the Sellmeier "
                f"validity band [{lo:.6g}, {hi:.6g}] m"
            )

    def index_squared(self, wavelength):
        self.check_band(wavelength)
        a, b, cc, d = (self.coefficients + (0.0, 0.0, 0.0))[:4]
        lam2 = (np.asarray(wavelength, dtype=float) * 1e6) ** 2
        if b == 0.0:
            return a - d * lam2 + 0.0 * lam2
        return a + b / (lam2 - cc) - d * lam2

    def index(self, wavelength):
        return np.sqrt(self.index_squared(wavelength))


@dataclass(frozen=True)
class CrystalSpec:
    """Geometry and dispersion data of the down-conversion crystal.

    ``theta0_rad`` may be ``None`` until :func:`solve_phase_matching_angle`
    has been run; :meth:`with_phase_matching` returns a solved copy.
    ``signal_wavelength_m`` is the degenerate signal carrier; the pump carrier
    sits at half of it.
    """

    length_m: float
    sellmeier_ordinary: Sellmeier
    sellmeier_extraordinary: Sellmeier
    theta0_rad: float | None
    noncollinear_angle_rad: float
    signal_wavelength_m: float = 795e-9

    def __post_init__(self):
        if not self.length_m > 0:
            raise ValueError("crystal length must be positive")
        if self.theta0_rad is not None and not 0 < self.theta0_rad < np.pi / 2:
            raise ValueError("theta0 must lie in (0, pi/2)")
        if not 0 <= self.noncollinear_angle_rad < np.pi / 2:
            raise ValueError("non-collinear angle must lie in [0, pi/2)")
        for name in ("sellmeier_ordinary", "sellmeier_extraordinary"):
            s = getattr(self, name)
            band = np.linspace(*s.valid_range_m, 257)
            if np.any(s.index_squared(band) <= 1.0):
                raise ValueError(f"{name} gives n <= 1 inside its validity band")
        for wl in (self.signal_wavelength_m, self.pump_wavelength_m):
            self.sellmeier_ordinary.check_band(wl)

    @property
    def pump_wavelength_m(self) -> float:
        return self.signal_wavelength_m / 2

    @property
    def signal_omega(self) -> float:
        """Signal carrier angular frequency (rad/s)."""
        return 2 * np.pi * c / self.signal_wavelength_m

    def with_phase_matching(self) -> "CrystalSpec":
        theta = solve_phase_matching_angle(self, self.noncollinear_angle_rad)
        return replace(self, theta0_rad=theta)

    def require_theta0(self) -> float:
        if self.theta0_rad is None:
            raise DomainError("theta0 has not been solved; call with_phase_matching() first")
        return self.theta0_rad


@dataclass(frozen=True)
class WaveVectors:
    k_s: np.ndarray
    k_p: np.ndarray
    k_z: np.ndarray


def _wavelength(omega):
    return 2 * np.pi * c / np.asarray(omega, dtype=float)


def refractive_index_ordinary(wavelength, crystal: CrystalSpec):
    return crystal.sellmeier_ordinary.index(wavelength)


def refractive_index_extraordinary(wavelength, angle, crystal: CrystalSpec, *, check_angle=True):
    """Index seen by an extraordinary wave at ``angle`` from the optical axis.

    Uses the index ellipsoid, 1/n^2 = cos^2/n_o^2 + sin^2/n_e^2.
    """
    angle = np.asarray(angle, dtype=float)
    if check_angle and (np.any(angle < 0) or np.any(angle > np.pi / 2)):
        raise DomainError("propagation angle must lie in [0, pi/2]")
    no2 = crystal.sellmeier_ordinary.index_squared(wavelength)
    ne2 = crystal.sellmeier_extraordinary.index_squared(wavelength)
    return 1.0 / np.sqrt(np.cos(angle) ** 2 / no2 + np.sin(angle) ** 2 / ne2)


def signal_wavenumber(omega, crystal: CrystalSpec):
    """k_s at detuning ``omega`` from the signal carrier (ordinary wave)."""
    w = crystal.signal_omega + np.asarray(omega, dtype=float)
    return crystal.sellmeier_ordinary.index(_wavelength(w)) * w / c


def _pump_wavenumber(q_y, omega, crystal: CrystalSpec, theta0: float):
    w = 2 * crystal.signal_omega + np.asarray(omega, dtype=float)
    kp00 = refractive_index_extraordinary(
        crystal.pump_wavelength_m, theta0, crystal, check_angle=False
    ) * 2 * crystal.signal_omega / c
    # first-order walk-off: the pump index is taken at theta0 + q_y / k_p(0, 0)
    angle = theta0 + np.asarray(q_y, dtype=float) / kp00
    return refractive_index_extraordinary(_wavelength(w), angle, crystal, check_angle=False) * w / c


def pump_wavenumber(q_y, omega, crystal: CrystalSpec):
    """k_p at transverse wavenumber ``q_y`` and pump detuning ``omega``."""
    return _pump_wavenumber(q_y, omega, crystal, crystal.require_theta0())


def longitudinal(k, q):
    """sqrt(k^2 - q^2); raises for evanescent components."""
    arg = np.asarray(k) ** 2 - np.asarray(q, dtype=float) ** 2
    if np.any(arg <= 0):
        raise DomainError("evanescent component: |q| >= k")
    return np.sqrt(arg)


def wave_vectors(q, omega, crystal: CrystalSpec) -> WaveVectors:
    """Signal and pump wavenumbers at (q, omega) plus the signal's longitudinal projection."""
    k_s = signal_wavenumber(omega, crystal)
    k_p = pump_wavenumber(q, omega, crystal)
    return WaveVectors(k_s=k_s, k_p=k_p, k_z=longitudinal(k_s, q))


def phase_mismatch(q, q_prime, omega, omega_prime, crystal: CrystalSpec):
    """Longitudinal mismatch k_sz(q, W) + k_sz(q', W') - k_pz(q + q', W + W') in rad/m.

    Arguments broadcast against each other. The expression is symmetric under
    (q, W) <-> (q', W') bit for bit, since only commutative sums enter.
    """
    q = np.asarray(q, dtype=float)
    q_prime = np.asarray(q_prime, dtype=float)
    omega = np.asarray(omega, dtype=float)
    omega_prime = np.asarray(omega_prime, dtype=float)
    ksz = longitudinal(signal_wavenumber(omega, crystal), q)
    ksz_prime = longitudinal(signal_wavenumber(omega_prime, crystal), q_prime)
    q_sum = q + q_prime
    kpz = longitudinal(pump_wavenumber(q_sum, omega + omega_prime, crystal), q_sum)
    return ksz + ksz_prime - kpz


def lobe_wavenumber(crystal: CrystalSpec, noncollinear_angle: float | None = None) -> float:
    """Transverse wavenumber q0 = k_s(0) sin(alpha) of the signal lobe."""
    if noncollinear_angle is None:
        noncollinear_angle = crystal.noncollinear_angle_rad
    return float(signal_wavenumber(0.0, crystal) * np.sin(noncollinear_angle))


def _design_mismatch(theta, crystal: CrystalSpec, q0: float):
    ks = signal_wavenumber(0.0, crystal)
    # the degenerate pair (+q0, -q0) has zero transverse sum, so k_pz = k_p(0, 0)
    return float(2 * longitudinal(ks, q0) - _pump_wavenumber(0.0, 0.0, crystal, theta))


def solve_phase_matching_angle(crystal: CrystalSpec, noncollinear_angle: float) -> float:
    """Angle theta0 between pump and optical axis that phase-matches the pair (+q0, -q0).

    Bracketed bisection on [1 deg, 89 deg] to 1e-12 rad.
    """
    q0 = lobe_wavenumber(crystal, noncollinear_angle)
    lo, hi = THETA_BRACKET
    f_lo = _design_mismatch(lo, crystal, q0)
    f_hi = _design_mismatch(hi, crystal, q0)
    if np.sign(f_lo) == np.sign(f_hi):
        raise PhaseMatchingError(
            "no phase matching: the mismatch does not change sign for theta in "
            f"[{np.degrees(lo):.0f}, {np.degrees(hi):.0f}] deg "
            f"(non-collinear angle {np.degrees(noncollinear_angle):.4g} deg)"
        )
    return float(bisect(_design_mismatch, lo, hi, args=(crystal, q0), xtol=THETA_XTOL, rtol=4 * np.finfo(float).eps, maxiter=200))
