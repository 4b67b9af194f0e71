"""Experiment orchestration: kernel -> modes -> homodyne -> covariance -> report.

Each stage writes its artifacts below the output directory and can run on
its own from the artifacts of the previous stages. Every file is a pure
function of the configuration and seed, so repeated runs are byte-identical.

Layout::

    kernel/kernel.bin          cached kernel, keyed by the config hash
    kernel/summary.json
    modes/decomposition.npz    truncated Takagi decomposition
    modes/mode_XXX.txt         leading eigenmodes (text)
    modes/summary.json
    homodyne/traces/*.csv      phase-swept traces plus JSON sidecars
    homodyne/traces/manifest.json
    homodyne/variances.csv     analytic variances of every measured mode
    homodyne/hg_spectra.csv
    homodyne/summary.json
    covariance/<group>_*.csv   blocks and their standard errors
    covariance/<group>_summary.json
    report/report.json, report/verdict.json, report/fig*.csv
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.optimize import brentq

from .config import ExperimentConfig
from .covariance import (
    BlockEigenanalysis,
    CovarianceBlocks,
    MultimodeVerdict,
    analysis_summary,
    analytic_blocks,
    covariance_from_traces,
    diagonalize_blocks,
    measurement_modes,
    multimode_verdict,
    read_blocks,
    write_blocks,
)
from .errors import ConfigurationError, InvariantError, NumericalError, TraceIOError
from .homodyne import (
    Extrema,
    QuadratureVariances,
    derive_seed,
    extract_extrema,
    mode_variances,
    read_trace,
    synthesize_trace_from_variances,
    variances_from_overlaps,
    write_trace,
)
from .kernel import GainKernel, SpatioSpectralGrid, build_kernel, check_grid, load_kernel, save_kernel
from .modes import (
    AnalysisMode,
    SqueezingDecomposition,
    export_modes,
    full_beam_profile,
    half_cut_spatial,
    hermite_gauss_spectra,
    hermite_gauss_spectral,
    load_decomposition,
    overlaps,
    save_decomposition,
    takagi,
    takagi_residuals,
)

log = logging.getLogger(__name__)

STAGES = ("kernel", "modes", "homodyne", "covariance", "report")
MANIFEST_VERSION = 1
REPORT_VERSION = 1
TAKAGI_TOL = 1e-10
CALIBRATION_MODE = "HG0"


def _write_json(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise TraceIOError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TraceIOError(f"{path}:{exc.lineno}: {exc.msg}") from exc


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _db(v: float) -> float:
    return float(10 * np.log10(v))


# -- analysis modes and calibration ----------------------------------------


def temporal_modes(decomposition: SqueezingDecomposition, config: ExperimentConfig) -> list[AnalysisMode]:
    """HG_n spectral modes on the full-beam transverse profile."""
    an = config.analysis
    profile = full_beam_profile(decomposition)
    return [
        hermite_gauss_spectral(
            n,
            decomposition.grid,
            profile,
            center_wavelength=an.hg_center_wavelength_m,
            fwhm=an.hg_fwhm_m,
            carrier_wavelength=config.crystal.signal_wavelength_m,
        )
        for n in an.hg_orders
    ]


def spatial_modes(temporal: list[AnalysisMode]) -> dict[str, list[AnalysisMode]]:
    """Left/right half-cut pairs of every temporal mode, keyed by group name."""
    return {f"spatial_{m.label}": [half_cut_spatial("left", m), half_cut_spatial("right", m)] for m in temporal}


def calibrate_gain(
    mode: AnalysisMode,
    decomposition: SqueezingDecomposition,
    target_db: float,
    mapping: str = "exponential",
    efficiency: float = 1.0,
) -> float:
    """Gain g at which ``mode`` shows ``target_db`` of squeezing (scalar root find)."""
    if target_db == 0:
        return 0.0
    c = overlaps(mode, decomposition)
    lam = decomposition.lambdas

    def excess(g):
        return _db(variances_from_overlaps(c, g * lam, mapping, efficiency).v_x) - target_db

    hi = 1.0 / max(lam[0], 1e-300)
    while excess(hi) > 0:
        hi *= 2
        if hi * lam[0] > 50:
            raise NumericalError(
                f"calibration target {target_db} dB is out of reach for mode '{mode.label}'"
            )
    if mapping == "linearized":
        # (1 - r)^2 turns back up past r = 1; stay on the decreasing branch
        hi = min(hi, 1.0 / lam[0])
        if excess(hi) > 0:
            raise NumericalError(f"calibration target {target_db} dB is out of reach in linearized mapping")
    return float(brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


# -- trace ingestion -------------------------------------------------------


def _load_manifest(manifest) -> dict:
    if isinstance(manifest, Mapping):
        return dict(manifest)
    return _read_json(Path(manifest))


def ingest_traces(directory, manifest, provenance: str = "ingested") -> dict[str, CovarianceBlocks]:
    """Covariance blocks of every basis group listed in ``manifest``.

    The manifest is a JSON file or mapping with ``groups`` (group name ->
    ordered basis labels) and optionally ``traces`` (label -> CSV file name,
    default ``<label>.csv``). Each group needs one trace per basis label and
    one per pair sum ``"<a>+<b>"``.
    """
    directory = Path(directory)
    man = _load_manifest(manifest)
    groups = man.get("groups")
    if not isinstance(groups, Mapping) or not groups:
        raise TraceIOError("manifest: 'groups' must map group names to basis label lists")
    files = man.get("traces", {})
    needed = {}
    for name, labels in groups.items():
        if not isinstance(labels, list) or not labels:
            raise TraceIOError(f"manifest: group '{name}' needs a non-empty label list")
        for lab in [*labels, *(f"{a}+{b}" for i, a in enumerate(labels) for b in labels[i + 1 :])]:
            needed[lab] = directory / files.get(lab, f"{lab}.csv")
    missing = [f"{lab} ({p.name})" for lab, p in needed.items() if not p.is_file()]
    if missing:
        raise TraceIOError("missing trace files: " + ", ".join(missing))
    traces = {lab: read_trace(p) for lab, p in needed.items()}
    return {name: covariance_from_traces(labels, traces, provenance) for name, labels in groups.items()}


# -- the run bundle --------------------------------------------------------


@dataclass
class RunBundle:
    """In-memory results of a run; every field is also written to disk."""

    config: ExperimentConfig
    out_dir: Path
    kernel: GainKernel | None = None
    decomposition: SqueezingDecomposition | None = None
    all_lambdas: np.ndarray | None = None
    gain: float | None = None
    variances: dict[str, QuadratureVariances] = field(default_factory=dict)
    extrema: dict[str, Extrema] = field(default_factory=dict)
    groups: dict[str, list[str]] = field(default_factory=dict)
    blocks: dict[str, CovarianceBlocks] = field(default_factory=dict)
    oracle_blocks: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    analyses: dict[str, BlockEigenanalysis] = field(default_factory=dict)
    verdicts: dict[str, MultimodeVerdict] = field(default_factory=dict)
    report: dict | None = None


class Pipeline:
    """Runs the stages against one output directory.

    A stage takes its inputs from memory when an earlier stage ran in the same
    process and from the artifacts on disk otherwise.
    """

    def __init__(self, config: ExperimentConfig, out_dir=None, traces_dir=None, manifest=None):
        self.config = config
        self.out = Path(out_dir if out_dir is not None else config.output.directory)
        self.traces_dir = Path(traces_dir) if traces_dir is not None else self.out / "homodyne" / "traces"
        self.manifest = manifest
        self.bundle = RunBundle(config, self.out)
        self._crystal = None

    # paths
    @property
    def kernel_path(self) -> Path:
        return self.out / "kernel" / "kernel.bin"

    @property
    def decomposition_path(self) -> Path:
        return self.out / "modes" / "decomposition.npz"

    def _require(self, path: Path, stage: str):
        if not path.exists():
            raise TraceIOError(f"missing artifact {path}; run the '{stage}' stage first")

    @property
    def crystal(self):
        if self._crystal is None:
            cr = self.config.crystal
            self._crystal = cr if cr.theta0_rad is not None else cr.with_phase_matching()
        return self._crystal

    def grid(self) -> SpatioSpectralGrid:
        g = self.config.grid
        return SpatioSpectralGrid.for_experiment(
            self.crystal, self.config.pump, g.n_q, g.n_omega, g.q_margin_per_waist, g.points_per_pump_fwhm
        )

    # stages
    def kernel_stage(self) -> GainKernel:
        cfg = self.config
        chash = cfg.config_hash
        kern = None
        if cfg.output.kernel_cache and self.kernel_path.exists():
            try:
                cached, header = load_kernel(self.kernel_path)
                if header.get("config_hash") == chash:
                    kern = cached
                    log.info("kernel: using cache %s", self.kernel_path)
            except TraceIOError as exc:
                log.warning("kernel: ignoring unreadable cache (%s)", exc)
        grid = self.grid()
        check_grid(grid, cfg.pump, self.crystal, cfg.grid.q_margin_per_waist)
        if kern is None:
            log.info("kernel: building %d x %d", grid.size, grid.size)
            kern = build_kernel(grid, cfg.pump, self.crystal)
            m = kern.matrix
            if not np.all(np.isfinite(m)):
                raise InvariantError("kernel: non-finite entries")
            if not np.array_equal(m, m.T):
                raise InvariantError("kernel: matrix is not exactly symmetric")
            if cfg.output.kernel_cache:
                self.kernel_path.parent.mkdir(parents=True, exist_ok=True)
                save_kernel(kern, self.kernel_path, {"config_hash": chash})
        _write_json(
            self.out / "kernel" / "summary.json",
            {
                "config_hash": chash,
                "n_q": grid.n_q,
                "n_omega": grid.n_omega,
                "dq_rad_per_m": grid.dq,
                "domega_rad_per_s": grid.domega,
                "lobe_center_rad_per_m": grid.lobe_center,
                "theta0_deg": float(np.degrees(self.crystal.theta0_rad)),
                "normalization_scale": kern.scale,
                "real": kern.is_real,
            },
        )
        self.bundle.kernel = kern
        return kern

    def modes_stage(self) -> SqueezingDecomposition:
        kern = self.bundle.kernel if self.bundle.kernel is not None else self.kernel_stage()
        an = self.config.analysis
        log.info("modes: Takagi factorization of N = %d", kern.grid.size)
        full = takagi(kern, gain=1.0)
        err, ortho = takagi_residuals(kern.matrix, full)
        if err > TAKAGI_TOL or ortho > TAKAGI_TOL:
            raise InvariantError(f"modes: Takagi residual {err:.3g}, orthonormality error {ortho:.3g}")
        all_lam = np.array(full.lambdas)
        dec = full.truncated(an.truncation_rtol)
        del full
        self.out.joinpath("modes").mkdir(parents=True, exist_ok=True)
        save_decomposition(dec, self.decomposition_path, all_lam)
        export_modes(dec, self.out / "modes", self.config.output.n_mode_files)
        n_multi = int(np.sum(all_lam > an.multimode_rtol * all_lam[0]))
        _write_json(
            self.out / "modes" / "summary.json",
            {
                "n_grid": int(all_lam.size),
                "n_retained": dec.n_modes,
                "truncation_rtol": an.truncation_rtol,
                "discarded_weight": dec.discarded_weight,
                "multimode_rtol": an.multimode_rtol,
                "n_modes_above_multimode_rtol": n_multi,
                "reconstruction_residual": err,
                "orthonormality_error": ortho,
                "leading_lambdas": all_lam[:32].tolist(),
            },
        )
        self.bundle.decomposition, self.bundle.all_lambdas = dec, all_lam
        return dec

    def _decomposition(self) -> SqueezingDecomposition:
        if self.bundle.decomposition is None:
            self._require(self.decomposition_path, "modes")
            self.bundle.decomposition, self.bundle.all_lambdas = load_decomposition(self.decomposition_path)
        return self.bundle.decomposition

    def homodyne_stage(self) -> dict[str, QuadratureVariances]:
        cfg, an, noise = self.config, self.config.analysis, self.config.noise
        dec = self._decomposition()
        temporal = temporal_modes(dec, cfg)
        by_label = {m.label: m for m in temporal}
        if an.calibration_target_db is not None:
            gain = calibrate_gain(
                by_label[CALIBRATION_MODE], dec, an.calibration_target_db, an.mapping, an.detection_efficiency
            )
        else:
            gain = an.gain
        dec = dec.with_gain(gain)
        self.bundle.decomposition, self.bundle.gain = dec, gain

        groups = {"temporal": temporal}
        if an.half_cuts:
            groups.update(spatial_modes(temporal))
        measured = {}
        for basis in groups.values():
            for m in measurement_modes(basis):
                measured.setdefault(m.label, m)

        variances = {lab: mode_variances(m, dec, an.mapping, an.detection_efficiency) for lab, m in measured.items()}
        self._check_variances(variances, dec)
        tdir = self.out / "homodyne" / "traces"
        files = {}
        for lab, var in variances.items():
            trace = synthesize_trace_from_variances(var, noise.scan, noise.samples, derive_seed(noise.seed, lab), lab)
            write_trace(trace, tdir / f"{lab}.csv")
            files[lab] = f"{lab}.csv"
        _write_json(
            tdir / "manifest.json",
            {
                "format_version": MANIFEST_VERSION,
                "groups": {name: [m.label for m in basis] for name, basis in groups.items()},
                "traces": files,
            },
        )
        _write_csv(
            self.out / "homodyne" / "variances.csv",
            ["label", "v_x", "v_p", "squeezing_db", "antisqueezing_db", "overlap_weight"],
            [
                [lab, v.v_x, v.v_p, v.squeezing_db, v.antisqueezing_db, float(np.sum(np.abs(overlaps(measured[lab], dec)) ** 2))]
                for lab, v in variances.items()
            ],
        )
        spectra = hermite_gauss_spectra(
            max(an.hg_orders),
            dec.grid,
            center_wavelength=an.hg_center_wavelength_m,
            fwhm=an.hg_fwhm_m,
            carrier_wavelength=cfg.crystal.signal_wavelength_m,
        )
        w = dec.grid.omega_points
        wl = 2 * np.pi * SPEED_OF_LIGHT / (cfg.crystal.signal_omega + w)
        _write_csv(
            self.out / "homodyne" / "hg_spectra.csv",
            ["omega_rad_per_s", "wavelength_nm", *(f"HG{n}" for n in an.hg_orders)],
            [[wi, li * 1e9, *(spectra[n, i] for n in an.hg_orders)] for i, (wi, li) in enumerate(zip(w, wl))],
        )
        _write_json(
            self.out / "homodyne" / "summary.json",
            {
                "gain": gain,
                "calibration_mode": CALIBRATION_MODE if an.calibration_target_db is not None else None,
                "calibration_target_db": an.calibration_target_db,
                "mapping": an.mapping,
                "detection_efficiency": an.detection_efficiency,
                "effective_samples": noise.samples,
                "leading_squeezing_parameter": float(gain * dec.lambdas[0]) if dec.n_modes else 0.0,
            },
        )
        self.bundle.variances = variances
        return variances

    def _check_variances(self, variances, dec: SqueezingDecomposition):
        an = self.config.analysis
        r0 = float(dec.squeezing_parameters[0]) if dec.n_modes else 0.0
        if an.mapping == "linearized" and r0 > 2:
            return
        for lab, v in variances.items():
            if not (0 < v.v_x <= 1 + 1e-12 and v.v_p >= 1 - 1e-12):
                raise InvariantError(f"homodyne: mode '{lab}' violates V_X <= 1 <= V_P ({v.v_x:.6g}, {v.v_p:.6g})")

    def _manifest(self, required: bool = True) -> dict | None:
        manifest = self.manifest if self.manifest is not None else self.traces_dir / "manifest.json"
        if not isinstance(manifest, Mapping) and not Path(manifest).exists():
            if not required:
                return None
            self._require(Path(manifest), "homodyne")
        return _load_manifest(manifest)

    def _trace_path(self, man: dict, label: str) -> Path:
        return self.traces_dir / man.get("traces", {}).get(label, f"{label}.csv")

    def _load_extrema(self, man: dict):
        """Extrema of every basis-mode trace and the group layout."""
        self.bundle.groups = {k: list(v) for k, v in man["groups"].items()}
        for labels in man["groups"].values():
            for lab in labels:
                if lab not in self.bundle.extrema:
                    self.bundle.extrema[lab] = extract_extrema(read_trace(self._trace_path(man, lab)))

    def covariance_stage(self) -> dict[str, CovarianceBlocks]:
        an, noise = self.config.analysis, self.config.noise
        man = self._manifest()
        provenance = "simulated" if self.traces_dir == self.out / "homodyne" / "traces" else "ingested"
        blocks = ingest_traces(self.traces_dir, man, provenance)
        self._load_extrema(man)
        cdir = self.out / "covariance"
        for name, blk in blocks.items():
            write_blocks(blk, cdir, name)
            ana = diagonalize_blocks(blk, an.bootstrap_rounds, derive_seed(noise.seed, f"bootstrap/{name}"))
            verdict = multimode_verdict(ana, an.threshold_sigmas)
            _write_json(cdir / f"{name}_summary.json", {"provenance": blk.provenance, **analysis_summary(ana, verdict)})
            self.bundle.analyses[name], self.bundle.verdicts[name] = ana, verdict
        if provenance == "simulated":
            self._oracle_blocks(blocks)
        self.bundle.blocks = blocks
        return blocks

    def _oracle_blocks(self, blocks):
        """Analytic projection of each group; also checks V_X + V_P >= 2 I."""
        an = self.config.analysis
        dec = self.bundle.decomposition
        if dec is None or self.bundle.gain is None:
            dec = self._decomposition()
            summary = _read_json(self.out / "homodyne" / "summary.json")
            dec = dec.with_gain(summary["gain"])
            self.bundle.decomposition, self.bundle.gain = dec, summary["gain"]
        temporal = temporal_modes(dec, self.config)
        bases = {"temporal": temporal, **spatial_modes(temporal)}
        for name, blk in blocks.items():
            basis = bases.get(name)
            if basis is None or [m.label for m in basis] != list(blk.basis_labels):
                continue
            vx, vp = analytic_blocks(basis, dec, an.mapping, an.detection_efficiency)
            if np.min(np.linalg.eigvalsh(vx + vp - 2 * np.eye(len(basis)))) < -1e-12:
                raise InvariantError(f"covariance: analytic blocks of '{name}' violate V_X + V_P >= 2")
            self.bundle.oracle_blocks[name] = (vx, vp)

    def report_stage(self) -> dict:
        rdir = self.out / "report"
        rdir.mkdir(parents=True, exist_ok=True)
        if not self.bundle.analyses:
            self._load_covariance()
        report = {"format_version": REPORT_VERSION, "config_hash": self.config.config_hash}
        cfg_raw = {k: v for k, v in self.config.raw.items() if k != "output"}
        report["config"] = cfg_raw
        for stage in ("kernel", "modes", "homodyne"):
            p = self.out / stage / "summary.json"
            if p.exists():
                report[stage] = _read_json(p)
        var_rows = self._read_variances()
        ext = self.bundle.extrema
        squeezing = []
        for lab in sorted(set(var_rows) | set(ext)):
            row = {"label": lab}
            if lab in var_rows:
                row.update(var_rows[lab])
            if lab in ext:
                e = ext[lab]
                row.update(
                    measured_v_x=e.mean_min,
                    measured_v_x_se=e.se_min,
                    measured_v_p=e.mean_max,
                    measured_v_p_se=e.se_max,
                    measured_squeezing_db=_db(e.mean_min),
                    measured_antisqueezing_db=_db(e.mean_max),
                )
            squeezing.append(row)
        report["modes_measured"] = squeezing
        report["groups"] = {
            name: {
                "basis": list(self.bundle.analyses[name].basis_labels),
                "x_eigenvalues": self.bundle.analyses[name].x_values.tolist(),
                "p_eigenvalues": self.bundle.analyses[name].p_values.tolist(),
                "verdict": self.bundle.verdicts[name].label,
            }
            for name in self.bundle.analyses
        }
        verdict = {
            name: {
                "label": v.label,
                "multimode": v.multimode,
                "count_x": v.count_x,
                "count_p": v.count_p,
                "threshold_sigmas": v.threshold_sigmas,
            }
            for name, v in self.bundle.verdicts.items()
        }
        if "temporal" in verdict:
            verdict["overall"] = verdict["temporal"]["label"]
        _write_json(rdir / "verdict.json", verdict)
        _write_json(rdir / "report.json", report)
        self._figures(rdir)
        self.bundle.report = report
        return report

    def _read_variances(self) -> dict[str, dict]:
        path = self.out / "homodyne" / "variances.csv"
        if not path.exists():
            return {}
        with open(path, newline="") as fh:
            return {
                row["label"]: {k: float(v) for k, v in row.items() if k != "label"} for row in csv.DictReader(fh)
            }

    def _load_covariance(self):
        names = sorted(p.name[: -len("_summary.json")] for p in (self.out / "covariance").glob("*_summary.json"))
        if not names:
            raise TraceIOError(f"no covariance results in {self.out / 'covariance'}; run the 'covariance' stage first")
        an = self.config.analysis
        for name in names:
            blk = read_blocks(self.out / "covariance", name, _read_json(self.out / "covariance" / f"{name}_summary.json")["provenance"])
            ana = diagonalize_blocks(blk, an.bootstrap_rounds, derive_seed(self.config.noise.seed, f"bootstrap/{name}"))
            self.bundle.blocks[name] = blk
            self.bundle.analyses[name] = ana
            self.bundle.verdicts[name] = multimode_verdict(ana, an.threshold_sigmas)
        man = self._manifest(required=False)
        if man is not None:
            self._load_extrema(man)

    def _figures(self, rdir: Path):
        """Plot-ready tables; covariance blocks are shown with the identity removed."""
        spectra = self.out / "homodyne" / "hg_spectra.csv"
        if spectra.exists():
            (rdir / "fig2_hg_spectra.csv").write_text(spectra.read_text())
        man = self._manifest(required=False)
        if man is not None:
            labels = list(man["groups"].get("temporal", []))[:2]
            traces = [read_trace(self._trace_path(man, lab)) for lab in labels]
            if traces:
                _write_csv(
                    rdir / "fig2_traces.csv",
                    ["time_s", *labels],
                    [[t, *(tr.variance_samples[i] for tr in traces)] for i, t in enumerate(traces[0].timestamps)],
                )
        rows = []
        for name, labels in self.bundle.groups.items():
            if not name.startswith("spatial_"):
                continue
            whole = name[len("spatial_") :]
            for lab in [whole, *labels]:
                e = self.bundle.extrema.get(lab)
                if e is not None:
                    rows.append([whole, lab, e.mean_min, e.se_min, _db(e.mean_min), e.mean_max, e.se_max, _db(e.mean_max)])
        if rows:
            _write_csv(
                rdir / "fig3_spatial_squeezing.csv",
                ["temporal_mode", "label", "v_x", "v_x_se", "squeezing_db", "v_p", "v_p_se", "antisqueezing_db"],
                rows,
            )
        for name, blk in self.bundle.blocks.items():
            fig = "fig4" if name == "temporal" else "fig5"
            eye = np.eye(blk.size)
            for quad, mat, err in (("x", blk.v_x, blk.sigma_x), ("p", blk.v_p, blk.sigma_p)):
                _write_csv(
                    rdir / f"{fig}_{name}_{quad}_minus_identity.csv",
                    ["label", *blk.basis_labels, *(f"sigma_{lab}" for lab in blk.basis_labels)],
                    [[lab, *(mat - eye)[i], *err[i]] for i, lab in enumerate(blk.basis_labels)],
                )
            ana = self.bundle.analyses[name]
            _write_csv(
                rdir / f"{fig}_{name}_eigen.csv",
                ["block", "index", "eigenvalue", "eigenvalue_sigma", *blk.basis_labels, *(f"sigma_{lab}" for lab in blk.basis_labels)],
                [
                    [quad, k, vals[k], sig[k], *vecs[:, k], *vsig[:, k]]
                    for quad, vals, sig, vecs, vsig in (
                        ("x", ana.x_values, ana.x_value_sigma, ana.x_vectors, ana.x_vector_sigma),
                        ("p", ana.p_values, ana.p_value_sigma, ana.p_vectors, ana.p_vector_sigma),
                    )
                    for k in range(blk.size)
                ],
            )

    def run(self, stages=STAGES) -> RunBundle:
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigurationError(f"unknown stage(s): {', '.join(unknown)}")
        for s in STAGES:
            if s in stages:
                getattr(self, f"{s}_stage")()
        return self.bundle


def run_pipeline(config: ExperimentConfig, out_dir=None, stages=STAGES) -> RunBundle:
    """Run the requested stages (all by default) and return the in-memory bundle."""
    return Pipeline(config, out_dir).run(stages)


def ingest(config: ExperimentConfig, traces_dir, manifest, out_dir) -> RunBundle:
    """Analyze external traces: covariance blocks, eigenanalysis, verdict and report."""
    pipe = Pipeline(config, out_dir, traces_dir=traces_dir, manifest=manifest)
    pipe.covariance_stage()
    pipe.report_stage()
    return pipe.bundle
