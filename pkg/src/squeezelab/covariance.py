"""X and P covariance blocks over a mode basis, their diagonalization and the multimode test."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import IncompleteBasisError, InputError, InvariantError, TraceIOError
from .homodyne import (
    Extrema,
    HomodyneTrace,
    RampScan,
    apply_efficiency,
    derive_seed,
    extract_extrema,
    gain_factors,
    mode_variances,
    synthesize_trace_from_variances,
)
from .modes import AnalysisMode, SqueezingDecomposition, overlaps, sum_mode

ORTHOGONALITY_TOL = 1e-8
RECONSTRUCTION_TOL = 1e-12


@dataclass(frozen=True)
class MeasuredVariances:
    v_x: float
    v_p: float
    sigma_x: float = 0.0
    sigma_p: float = 0.0

    @classmethod
    def from_extrema(cls, ext: Extrema) -> "MeasuredVariances":
        # the trace minimum is the squeezed quadrature X
        return cls(ext.mean_min, ext.mean_max, ext.se_min, ext.se_max)


@dataclass(frozen=True, eq=False)
class CovarianceBlocks:
    basis_labels: tuple[str, ...]
    v_x: np.ndarray
    v_p: np.ndarray
    sigma_x: np.ndarray
    sigma_p: np.ndarray
    provenance: str = "simulated"

    def __post_init__(self):
        m = len(self.basis_labels)
        object.__setattr__(self, "basis_labels", tuple(self.basis_labels))
        for name in ("v_x", "v_p", "sigma_x", "sigma_p"):
            a = np.array(getattr(self, name), dtype=float)
            if a.shape != (m, m):
                raise InputError(f"{name} has shape {a.shape}, expected {(m, m)}")
            if not np.array_equal(a, a.T):
                raise InputError(f"{name} is not symmetric")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(np.diag(self.v_x) <= 0) or np.any(np.diag(self.v_p) <= 0):
            raise InputError("covariance diagonals must be positive")

    @property
    def size(self) -> int:
        return len(self.basis_labels)


def _sym(a: np.ndarray) -> np.ndarray:
    up = np.triu(a)
    return up + np.triu(up, 1).T


def covariance_from_measurements(
    labels: Sequence[str],
    diag: Mapping[str, MeasuredVariances],
    sums: Mapping[tuple[str, str], MeasuredVariances],
    provenance: str = "simulated",
) -> CovarianceBlocks:
    """Assemble V^X and V^P from single-mode and pairwise sum-mode variances.

    Off-diagonals use Cov(X_i, X_j) = Var[(X_i + X_j)/sqrt 2] - Var[X_i]/2 - Var[X_j]/2,
    and likewise for P. Standard errors add in quadrature.
    """
    labels = list(labels)
    missing = [lab for lab in labels if lab not in diag]
    pairs = []
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            if (a, b) in sums:
                pairs.append(sums[(a, b)])
            elif (b, a) in sums:
                pairs.append(sums[(b, a)])
            else:
                missing.append(f"{a}+{b}")
                pairs.append(None)
    if missing:
        raise IncompleteBasisError("missing measurements: " + ", ".join(missing))
    m = len(labels)
    vx, vp, sx, sp = (np.zeros((m, m)) for _ in range(4))
    for i, lab in enumerate(labels):
        d = diag[lab]
        vx[i, i], vp[i, i], sx[i, i], sp[i, i] = d.v_x, d.v_p, d.sigma_x, d.sigma_p
    it = iter(pairs)
    for i in range(m):
        for j in range(i + 1, m):
            s = next(it)
            di, dj = diag[labels[i]], diag[labels[j]]
            vx[i, j] = s.v_x - di.v_x / 2 - dj.v_x / 2
            vp[i, j] = s.v_p - di.v_p / 2 - dj.v_p / 2
            sx[i, j] = np.sqrt(s.sigma_x**2 + (di.sigma_x / 2) ** 2 + (dj.sigma_x / 2) ** 2)
            sp[i, j] = np.sqrt(s.sigma_p**2 + (di.sigma_p / 2) ** 2 + (dj.sigma_p / 2) ** 2)
    return CovarianceBlocks(tuple(labels), _sym(vx), _sym(vp), _sym(sx), _sym(sp), provenance)


def check_orthonormal(basis: Sequence[AnalysisMode]):
    vecs = np.array([m.vector for m in basis])
    gram = vecs.conj() @ vecs.T
    off = np.max(np.abs(gram - np.eye(len(basis)))) if len(basis) else 0.0
    if off > ORTHOGONALITY_TOL:
        raise InputError(f"basis modes are not orthonormal (max Gram deviation {off:.3g})")


def analytic_blocks(
    basis: Sequence[AnalysisMode],
    decomposition: SqueezingDecomposition,
    mapping: str = "exponential",
    efficiency: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Direct projection V_ij = delta_ij + eta sum_k Re(c_ik conj c_jk) (f(g L_k) - 1)."""
    c = np.array([overlaps(m, decomposition) for m in basis])
    f_minus, f_plus = gain_factors(decomposition.squeezing_parameters, mapping)
    gram = c.conj()  # Re(c_ik conj(c_jk)) = Re((c * (f - 1)) @ c^H)
    vx = np.real((c * (f_minus - 1)) @ gram.T)
    vp = np.real((c * (f_plus - 1)) @ gram.T)
    apply_efficiency(1.0, efficiency)  # validates eta
    eye = np.eye(len(basis))
    return _sym(eye + efficiency * vx), _sym(eye + efficiency * vp)


def measurement_modes(basis: Sequence[AnalysisMode]) -> list[AnalysisMode]:
    """Basis modes followed by the normalized pairwise sum modes, in label order."""
    out = list(basis)
    for i, a in enumerate(basis):
        for b in basis[i + 1 :]:
            out.append(sum_mode(a, b))
    return out


def simulate_traces(
    basis: Sequence[AnalysisMode],
    decomposition: SqueezingDecomposition,
    mapping: str = "exponential",
    efficiency: float = 1.0,
    scan: RampScan = RampScan(),
    effective_samples: float | None = 50_000,
    seed: int = 0,
) -> dict[str, HomodyneTrace]:
    """One trace per basis mode and per pairwise sum mode, keyed by mode label."""
    check_orthonormal(basis)
    traces = {}
    for mode in measurement_modes(basis):
        var = mode_variances(mode, decomposition, mapping, efficiency)
        traces[mode.label] = synthesize_trace_from_variances(
            var, scan, effective_samples, derive_seed(seed, mode.label), mode.label
        )
    return traces


def covariance_from_traces(
    labels: Sequence[str], traces: Mapping[str, HomodyneTrace], provenance: str = "simulated"
) -> CovarianceBlocks:
    labels = list(labels)
    wanted = labels + [f"{a}+{b}" for i, a in enumerate(labels) for b in labels[i + 1 :]]
    missing = [w for w in wanted if w not in traces]
    if missing:
        raise IncompleteBasisError("missing traces: " + ", ".join(missing))
    meas = {w: MeasuredVariances.from_extrema(extract_extrema(traces[w])) for w in wanted}
    sums = {(a, b): meas[f"{a}+{b}"] for i, a in enumerate(labels) for b in labels[i + 1 :]}
    return covariance_from_measurements(labels, {lab: meas[lab] for lab in labels}, sums, provenance)


def simulate_covariance(
    basis: Sequence[AnalysisMode],
    decomposition: SqueezingDecomposition,
    mapping: str = "exponential",
    efficiency: float = 1.0,
    scan: RampScan = RampScan(),
    effective_samples: float | None = 50_000,
    seed: int = 0,
) -> CovarianceBlocks:
    """Blocks from simulated traces: synthesize, extract extrema, assemble."""
    traces = simulate_traces(basis, decomposition, mapping, efficiency, scan, effective_samples, seed)
    return covariance_from_traces([m.label for m in basis], traces)


@dataclass(frozen=True, eq=False)
class BlockEigenanalysis:
    """Eigensystems of both blocks.

    X values ascend (most squeezed first), P values descend (most
    anti-squeezed first). Eigenvectors are columns, each signed so its
    largest-magnitude component is positive.
    """

    basis_labels: tuple[str, ...]
    x_values: np.ndarray
    x_vectors: np.ndarray
    p_values: np.ndarray
    p_vectors: np.ndarray
    x_value_sigma: np.ndarray
    p_value_sigma: np.ndarray
    x_vector_sigma: np.ndarray
    p_vector_sigma: np.ndarray
    bootstrap_rounds: int = 0


def _eigensystem(a: np.ndarray, descending: bool):
    w, v = np.linalg.eigh(a)
    if descending:
        w, v = w[::-1], v[:, ::-1]
    idx = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[idx, np.arange(v.shape[1])])
    return w, np.ascontiguousarray(v)


def diagonalize_blocks(blocks: CovarianceBlocks, bootstrap_rounds: int = 1000, seed: int = 0) -> BlockEigenanalysis:
    """Diagonalize V^X and V^P; bootstrap errors by resampling entries from N(v, sigma).

    Each round draws a symmetric perturbation from its own child seed, so the
    error bars are reproducible. ``bootstrap_rounds=0`` skips the errors.
    """
    if bootstrap_rounds == 1 or bootstrap_rounds < 0:
        raise InputError("bootstrap needs at least 2 rounds (or 0 to skip errors)")
    xw, xv = _eigensystem(blocks.v_x, descending=False)
    pw, pv = _eigensystem(blocks.v_p, descending=True)
    for a, w, v in ((blocks.v_x, xw, xv), (blocks.v_p, pw, pv)):
        err = np.max(np.abs((v * w) @ v.T - a)) if a.size else 0.0
        if err > RECONSTRUCTION_TOL * max(1.0, np.max(np.abs(a))):
            raise InvariantError(f"block eigen-reconstruction error {err:.3g}")
    m = blocks.size
    sig = {k: np.zeros(m) for k in ("xw", "pw")}
    sig.update({k: np.zeros((m, m)) for k in ("xv", "pv")})
    if bootstrap_rounds:
        samples = {k: [] for k in sig}
        iu = np.triu_indices(m)
        for child in np.random.SeedSequence(seed).spawn(bootstrap_rounds):
            rng = np.random.default_rng(child)
            for key, mat, err, ref, desc in (
                ("x", blocks.v_x, blocks.sigma_x, xv, False),
                ("p", blocks.v_p, blocks.sigma_p, pv, True),
            ):
                z = np.zeros((m, m))
                z[iu] = rng.standard_normal(iu[0].size)
                z = _sym(z)
                w, v = np.linalg.eigh(mat + err * z)
                if desc:
                    w, v = w[::-1], v[:, ::-1]
                v = v * np.where(np.sum(v * ref, axis=0) < 0, -1.0, 1.0)
                samples[key + "w"].append(w)
                samples[key + "v"].append(v)
        sig = {k: np.std(np.array(s), axis=0, ddof=1) for k, s in samples.items()}
    return BlockEigenanalysis(
        blocks.basis_labels, xw, xv, pw, pv, sig["xw"], sig["pw"], sig["xv"], sig["pv"], bootstrap_rounds
    )


@dataclass(frozen=True)
class MultimodeVerdict:
    count_x: int
    count_p: int
    threshold_sigmas: float

    @property
    def multimode(self) -> bool:
        return max(self.count_x, self.count_p) >= 2

    @property
    def label(self) -> str:
        if self.multimode:
            return "multimode"
        return "single-mode" if max(self.count_x, self.count_p) == 1 else "no squeezing"


def multimode_verdict(analysis: BlockEigenanalysis, threshold_sigmas: float = 3.0, atol: float = 1e-9) -> MultimodeVerdict:
    """Count eigenvalues that differ from the vacuum value 1 by more than ``threshold_sigmas`` errors.

    ``atol`` is a floor on the deviation so that rounding noise in noiseless
    blocks is not counted.
    """

    def count(values, sigma):
        return int(np.sum(np.abs(values - 1) > np.maximum(threshold_sigmas * sigma, atol)))

    return MultimodeVerdict(
        count(analysis.x_values, analysis.x_value_sigma),
        count(analysis.p_values, analysis.p_value_sigma),
        threshold_sigmas,
    )


def analysis_summary(analysis: BlockEigenanalysis, verdict: MultimodeVerdict | None = None) -> dict:
    out = {
        "basis": list(analysis.basis_labels),
        "bootstrap_rounds": analysis.bootstrap_rounds,
        "x": {
            "eigenvalues": analysis.x_values.tolist(),
            "eigenvalue_sigma": analysis.x_value_sigma.tolist(),
            "eigenvectors": analysis.x_vectors.T.tolist(),
            "eigenvector_sigma": analysis.x_vector_sigma.T.tolist(),
        },
        "p": {
            "eigenvalues": analysis.p_values.tolist(),
            "eigenvalue_sigma": analysis.p_value_sigma.tolist(),
            "eigenvectors": analysis.p_vectors.T.tolist(),
            "eigenvector_sigma": analysis.p_vector_sigma.T.tolist(),
        },
    }
    if verdict is not None:
        out["verdict"] = {
            "label": verdict.label,
            "multimode": verdict.multimode,
            "count_x": verdict.count_x,
            "count_p": verdict.count_p,
            "threshold_sigmas": verdict.threshold_sigmas,
        }
    return out


BLOCK_FILES = {"v_x": "vx", "v_p": "vp", "sigma_x": "sigma_x", "sigma_p": "sigma_p"}


def _write_matrix(path: Path, labels, a: np.ndarray):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *labels])
        for lab, row in zip(labels, a):
            w.writerow([lab, *(repr(float(x)) for x in row)])


def _read_matrix(path: Path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise TraceIOError(f"{path}: {exc}") from exc
    if not rows or rows[0][0] != "label":
        raise TraceIOError(f"{path}:1: expected a 'label' header")
    labels = rows[0][1:]
    data = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            if row[0] != labels[n - 2]:
                raise ValueError(f"row label {row[0]!r} does not match header")
            if len(row) != len(labels) + 1:
                raise ValueError(f"expected {len(labels)} values, got {len(row) - 1}")
            data.append([float(x) for x in row[1:]])
        except (ValueError, IndexError) as exc:
            raise TraceIOError(f"{path}:{n}: {exc}") from None
    return labels, np.array(data)


def write_blocks(blocks: CovarianceBlocks, directory, prefix: str) -> list[Path]:
    """One CSV per matrix: ``<prefix>_vx.csv``, ``_vp``, ``_sigma_x``, ``_sigma_p``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for attr, suffix in BLOCK_FILES.items():
        p = directory / f"{prefix}_{suffix}.csv"
        _write_matrix(p, blocks.basis_labels, getattr(blocks, attr))
        paths.append(p)
    return paths


def read_blocks(directory, prefix: str, provenance: str = "ingested") -> CovarianceBlocks:
    directory = Path(directory)
    mats = {}
    labels = None
    for attr, suffix in BLOCK_FILES.items():
        labs, mats[attr] = _read_matrix(directory / f"{prefix}_{suffix}.csv")
        if labels is not None and labs != labels:
            raise TraceIOError(f"{prefix}_{suffix}.csv: labels differ from the other block files")
        labels = labs
    return CovarianceBlocks(tuple(labels), provenance=provenance, **mats)
