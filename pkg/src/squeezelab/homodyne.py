"""Quadrature variances of analysis modes and simulated phase-swept homodyne traces.

Variances are in shot-noise units (vacuum = 1). Sign convention: g * L_k >= 0
and X is the squeezed quadrature, measured at LO phase 0.
"""
from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import InputError, InsufficientDataError, TraceIOError
from .modes import AnalysisMode, SqueezingDecomposition, overlaps

MAPPINGS = ("linearized", "exponential")
TRACE_HEADER = ["time_s", "variance_snu"]
TRACE_FORMAT_VERSION = 1


def gain_factors(r, mapping: str):
    """(f_minus, f_plus) for squeezing parameters ``r``."""
    r = np.asarray(r, dtype=float)
    if mapping == "exponential":
        return np.exp(-2 * r), np.exp(2 * r)
    if mapping == "linearized":
        return (1 - r) ** 2, (1 + r) ** 2
    raise InputError(f"unknown mapping '{mapping}', expected one of {MAPPINGS}")


def apply_efficiency(v, efficiency: float):
    """V -> eta V + (1 - eta)."""
    if not 0 < efficiency <= 1:
        raise InputError(f"detection efficiency must lie in (0, 1], got {efficiency}")
    return efficiency * np.asarray(v) + (1 - efficiency)


@dataclass(frozen=True)
class QuadratureVariances:
    v_x: float
    v_p: float
    efficiency: float = 1.0
    mapping: str = "exponential"

    @property
    def squeezing_db(self) -> float:
        return 10 * np.log10(min(self.v_x, self.v_p))

    @property
    def antisqueezing_db(self) -> float:
        return 10 * np.log10(max(self.v_x, self.v_p))


def variances_from_overlaps(coeffs, squeezing, mapping="exponential", efficiency=1.0) -> QuadratureVariances:
    """V_X, V_P of a mode with overlaps ``coeffs`` on eigenmodes squeezed by ``squeezing``."""
    p = np.abs(np.asarray(coeffs)) ** 2
    f_minus, f_plus = gain_factors(squeezing, mapping)
    vacuum = 1 - np.sum(p)
    v_x = np.sum(p * f_minus) + vacuum
    v_p = np.sum(p * f_plus) + vacuum
    return QuadratureVariances(
        float(apply_efficiency(v_x, efficiency)),
        float(apply_efficiency(v_p, efficiency)),
        efficiency,
        mapping,
    )


def mode_variances(
    mode: AnalysisMode,
    decomposition: SqueezingDecomposition,
    mapping: str = "exponential",
    efficiency: float = 1.0,
) -> QuadratureVariances:
    """Quadrature variances of ``mode`` given the squeezed eigenmodes."""
    return variances_from_overlaps(
        overlaps(mode, decomposition), decomposition.squeezing_parameters, mapping, efficiency
    )


@dataclass(frozen=True)
class RampScan:
    """Linear LO phase ramp theta(t) = 2 pi rate t + start_phase."""

    rate_hz: float = 0.3
    duration_s: float = 10.0
    sample_rate_hz: float = 200.0
    start_phase_rad: float = 0.0

    @property
    def variance_period_s(self) -> float:
        # V(theta) has period pi in theta
        return 1 / (2 * self.rate_hz)


@dataclass(frozen=True)
class Extrema:
    mean_min: float
    mean_max: float
    se_min: float
    se_max: float
    n_periods: int
    period_s: float


@dataclass(frozen=True, eq=False)
class HomodyneTrace:
    timestamps: np.ndarray
    variance_samples: np.ndarray
    phase_ramp_rate: float | None = 0.3
    rng_seed: int | None = None
    label: str = ""
    effective_samples: float | None = None

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        v = np.asarray(self.variance_samples, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise InputError("timestamps and variance samples must be 1-D arrays of equal length")
        if np.any(v <= 0):
            raise InputError("variance samples must be positive")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "variance_samples", v)

    @property
    def segment_stats(self) -> Extrema:
        return extract_extrema(self)


def synthesize_trace_from_variances(
    variances: QuadratureVariances,
    scan: RampScan = RampScan(),
    effective_samples: float | None = 50_000,
    seed: int | None = 0,
    label: str = "",
) -> HomodyneTrace:
    """Phase-swept variance trace V(theta) = V_X cos^2 + V_P sin^2 with chi-squared scatter.

    Each sample is V(theta) * chi2(nu) / nu with nu = 2 * effective_samples;
    ``effective_samples=None`` gives the noiseless trace.
    """
    if effective_samples is not None and not effective_samples > 0:
        raise InputError("effective sample count must be positive")
    n = int(round(scan.duration_s * scan.sample_rate_hz))
    t = np.arange(n) / scan.sample_rate_hz
    theta = 2 * np.pi * scan.rate_hz * t + scan.start_phase_rad
    v = variances.v_x * np.cos(theta) ** 2 + variances.v_p * np.sin(theta) ** 2
    if effective_samples is not None and np.isfinite(effective_samples):
        nu = 2 * effective_samples
        rng = np.random.default_rng(seed)
        v = v * rng.chisquare(nu, size=n) / nu
    return HomodyneTrace(t, v, scan.rate_hz, seed, label, effective_samples)


def synthesize_trace(
    mode: AnalysisMode,
    decomposition: SqueezingDecomposition,
    scan: RampScan = RampScan(),
    effective_samples: float | None = 50_000,
    seed: int | None = 0,
    mapping: str = "exponential",
    efficiency: float = 1.0,
) -> HomodyneTrace:
    var = mode_variances(mode, decomposition, mapping, efficiency)
    return synthesize_trace_from_variances(var, scan, effective_samples, seed, mode.label)


def _design(t, freq):
    ph = 2 * np.pi * freq * t
    return np.column_stack([np.ones_like(t), np.cos(ph), np.sin(ph)])


def detect_period(t, y, nominal_period: float | None = None) -> float:
    """Oscillation period of a variance trace.

    Starts from ``nominal_period`` (or the FFT peak when none is given) and
    refines the frequency by nonlinear least squares when the oscillation is
    clearly above the scatter; otherwise the starting value is returned.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if nominal_period is not None:
        f0 = 1 / nominal_period
    else:
        dt = np.median(np.diff(t))
        spec = np.abs(np.fft.rfft(y - y.mean()))
        freqs = np.fft.rfftfreq(y.size, dt)
        if spec.size < 3:
            raise InsufficientDataError("trace too short to detect an oscillation")
        f0 = freqs[1 + np.argmax(spec[1:])]
    coef, *_ = np.linalg.lstsq(_design(t, f0), y, rcond=None)
    resid = y - _design(t, f0) @ coef
    amp = np.hypot(coef[1], coef[2])
    amp_se = np.std(resid) * np.sqrt(2 / y.size)
    if amp <= 10 * amp_se or amp <= 1e-12 * abs(coef[0]):
        if nominal_period is None:
            raise InsufficientDataError("no significant oscillation and no nominal ramp rate")
        return float(nominal_period)

    def residual(p):
        return p[0] + p[1] * np.cos(2 * np.pi * p[3] * t) + p[2] * np.sin(2 * np.pi * p[3] * t) - y

    fit = least_squares(residual, np.r_[coef, f0], x_scale=np.r_[amp, amp, amp, f0 * 1e-3], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    f = fit.x[3]
    if not 0.9 * f0 < f < 1.1 * f0:
        return 1 / f0
    return float(1 / f)


def extract_extrema(trace: HomodyneTrace, period: float | None = None) -> Extrema:
    """Averaged per-period minima and maxima of a phase-swept trace.

    The trace is cut into whole oscillation periods. Each period is fitted with
    a + b cos + c sin on a common time reference; its minimum and maximum are
    a -+ (b, c) projected on the mean oscillation phase. Means are taken over
    periods.

    The standard error of each mean is the larger of two estimates: the
    scatter of the per-period values, which catches drift between periods but
    has only n_periods - 1 degrees of freedom, and the propagated
    heteroscedasticity-robust (sandwich) covariance of the per-period fits,
    which uses every sample.
    """
    t, y = trace.timestamps, trace.variance_samples
    if t.size < 8:
        raise InsufficientDataError("trace has too few samples")
    if period is None:
        nominal = None
        if trace.phase_ramp_rate:
            nominal = 1 / (2 * trace.phase_ramp_rate)
        period = detect_period(t, y, nominal)
    dt = np.median(np.diff(t))
    n_periods = int(np.floor((t[-1] - t[0] + dt) / period + 1e-9))
    if n_periods < 2:
        raise InsufficientDataError(f"trace spans {n_periods} period(s), need at least 2")
    freq = 1 / period
    seg = np.floor((t - t[0]) / period + 1e-9).astype(int)
    coefs, covs = [], []
    for k in range(n_periods):
        sel = seg == k
        if np.count_nonzero(sel) < 4:
            raise InsufficientDataError("too few samples per period")
        x = _design(t[sel], freq)
        coef, *_ = np.linalg.lstsq(x, y[sel], rcond=None)
        resid = y[sel] - x @ coef
        # sandwich estimator: (X^T X)^-1 X^T diag(r^2) X (X^T X)^-1, with n/(n-3) correction
        a = np.linalg.pinv(x)
        n_k = resid.size
        covs.append((a * resid**2) @ a.T * n_k / max(n_k - 3, 1))
        coefs.append(coef)
    coefs = np.array(coefs)
    mean_osc = coefs[:, 1:].mean(axis=0)
    amp = np.hypot(*mean_osc)
    u = mean_osc / amp if amp > 0 else np.array([1.0, 0.0])
    proj = coefs[:, 1:] @ u
    mins = coefs[:, 0] - proj
    maxs = coefs[:, 0] + proj
    root_p = np.sqrt(n_periods)
    cov_sum = np.sum(covs, axis=0)
    within_min = np.sqrt(max(np.r_[1, -u] @ cov_sum @ np.r_[1, -u], 0.0)) / n_periods
    within_max = np.sqrt(max(np.r_[1, u] @ cov_sum @ np.r_[1, u], 0.0)) / n_periods
    return Extrema(
        mean_min=float(mins.mean()),
        mean_max=float(maxs.mean()),
        se_min=float(max(mins.std(ddof=1) / root_p, within_min)),
        se_max=float(max(maxs.std(ddof=1) / root_p, within_max)),
        n_periods=n_periods,
        period_s=float(period),
    )


def write_trace(trace: HomodyneTrace, path) -> tuple[Path, Path]:
    """Write ``path`` (CSV: time_s, variance_snu) and a JSON sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for ti, vi in zip(trace.timestamps, trace.variance_samples):
            w.writerow([repr(float(ti)), repr(float(vi))])
    meta = {
        "format_version": TRACE_FORMAT_VERSION,
        "label": trace.label,
        "seed": trace.rng_seed,
        "phase_ramp_rate_hz": trace.phase_ramp_rate,
        "effective_samples": trace.effective_samples,
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, side


def read_trace(path) -> HomodyneTrace:
    """Read a trace CSV and, when present, its JSON sidecar."""
    path = Path(path)
    times, values = [], []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != TRACE_HEADER:
                raise TraceIOError(f"{path}:1: expected header {','.join(TRACE_HEADER)}")
            for row in reader:
                if not row or not "".join(row).strip():
                    continue
                try:
                    if len(row) != 2:
                        raise ValueError(f"expected 2 columns, got {len(row)}")
                    ti, vi = float(row[0]), float(row[1])
                    if not (np.isfinite(ti) and np.isfinite(vi)) or vi <= 0:
                        raise ValueError("non-finite or non-positive value")
                except ValueError as exc:
                    raise TraceIOError(f"{path}:{reader.line_num}: {exc}") from None
                times.append(ti)
                values.append(vi)
    except TraceIOError:
        raise
    except OSError as exc:
        raise TraceIOError(f"{path}: {exc}") from exc
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise TraceIOError(f"{side}: {exc}") from exc
    return HomodyneTrace(
        np.array(times),
        np.array(values),
        meta.get("phase_ramp_rate_hz"),
        meta.get("seed"),
        meta.get("label", path.stem),
        meta.get("effective_samples"),
    )


def derive_seed(seed: int, label: str) -> int:
    """Deterministic per-trace seed from a run seed and a trace label."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])
