"""Experiment configuration: YAML with unit-suffixed keys, parsed into SI values.

Every physical quantity must carry its unit in the key name, e.g.
``length_mm: 2`` or ``waist_um: 49``. A bare ``length: 2`` is rejected, as is
any key the schema does not know. Errors name the offending key path.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .crystal import CrystalSpec, Sellmeier
from .errors import ConfigurationError
from .homodyne import MAPPINGS, RampScan
from .kernel import PumpProfile

CONFIG_FORMAT_VERSION = 1

UNITS = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "angle": {"rad": 1.0, "deg": np.pi / 180},
    "chirp": {"s2": 1.0, "fs2": 1e-30, "ps2": 1e-24},
    "frequency": {"hz": 1.0, "khz": 1e3, "mhz": 1e6},
    "time": {"s": 1.0, "ms": 1e-3},
    "level": {"db": 1.0},
}


@dataclass(frozen=True)
class Field:
    kind: str  # a UNITS quantity, or int/float/str/bool/section
    required: bool = True
    nullable: bool = False
    shape: int | None = None  # list length; -1 for any length
    schema: dict | None = None


def _q(kind, **kw):
    return Field(kind, **kw)


SELLMEIER = {
    "coefficients_um": Field("float", shape=-1),
    "valid_range": _q("length", shape=2),
}

SCHEMA = {
    "format_version": Field("int", required=False),
    "crystal": Field("section", schema={
        "name": Field("str", required=False),
        "length": _q("length"),
        "noncollinear_angle": _q("angle"),
        "signal_wavelength": _q("length"),
        "theta0": _q("angle", required=False, nullable=True),
        "sellmeier_ordinary": Field("section", schema=SELLMEIER),
        "sellmeier_extraordinary": Field("section", schema=SELLMEIER),
    }),
    "pump": Field("section", schema={
        "center_wavelength": _q("length"),
        "spectral_fwhm": _q("length"),
        "waist": _q("length"),
        "chirp": _q("chirp", required=False),
    }),
    "grid": Field("section", schema={
        "n_q": Field("int"),
        "n_omega": Field("int"),
        "q_margin_per_waist": Field("float", required=False),
        "points_per_pump_fwhm": Field("float", required=False),
    }),
    "analysis": Field("section", schema={
        "hg_orders": Field("int", shape=-1),
        "hg_fwhm": _q("length"),
        "hg_center_wavelength": _q("length"),
        "half_cuts": Field("bool", required=False),
        "mapping": Field("str", required=False),
        "detection_efficiency": Field("float", required=False),
        "gain": Field("float", required=False),
        "calibration_target": _q("level", required=False),
        "truncation_rtol": Field("float", required=False),
        "multimode_rtol": Field("float", required=False),
        "bootstrap_rounds": Field("int", required=False),
        "threshold_sigmas": Field("float", required=False),
        "cross_block": Field("bool", required=False),
    }),
    "noise": Field("section", schema={
        "pulses_averaged": Field("int"),
        "rbw": _q("frequency"),
        "vbw": _q("frequency"),
        "effective_samples": Field("float", required=False, nullable=True),
        "ramp_rate": _q("frequency"),
        "duration": _q("time"),
        "sample_rate": _q("frequency"),
        "seed": Field("int", required=False),
    }),
    "output": Field("section", schema={
        "directory": Field("str"),
        "kernel_cache": Field("bool", required=False),
        "n_mode_files": Field("int", required=False),
    }),
}

# sections that define the physics of the kernel; they feed the cache hash
HASHED_SECTIONS = ("crystal", "pump", "grid")


def _split_key(key: str, schema: dict, path: str):
    """Map a file key to (schema name, SI factor)."""
    if key in schema:
        f = schema[key]
        if f.kind in UNITS:
            raise ConfigurationError(
                f"{path}{key}: physical quantity needs a unit suffix, e.g. {key}_{next(iter(UNITS[f.kind]))}"
            )
        return key, None
    base, _, unit = key.rpartition("_")
    if base in schema and schema[base].kind in UNITS:
        units = UNITS[schema[base].kind]
        if unit.lower() not in units:
            raise ConfigurationError(f"{path}{key}: unknown unit '{unit}', expected one of {sorted(units)}")
        return base, units[unit.lower()]
    raise ConfigurationError(f"{path}{key}: unknown key")


def _convert_scalar(value, kind: str, factor, where: str):
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true or false, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{where}: expected a number, got {value!r}")
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if not np.isfinite(value):
        raise ConfigurationError(f"{where}: value must be finite")
    return float(value) * (factor if factor is not None else 1.0)


def _parse_section(raw, schema: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path.rstrip('.') or 'config'}: expected a mapping")
    out = {}
    for key, value in raw.items():
        name, factor = _split_key(str(key), schema, path)
        where = f"{path}{key}"
        if name in out:
            raise ConfigurationError(f"{where}: '{name}' given more than once")
        f = schema[name]
        if f.kind == "section":
            out[name] = _parse_section(value, f.schema, where + ".")
        elif value is None:
            if not f.nullable:
                raise ConfigurationError(f"{where}: value may not be null")
            out[name] = None
        elif f.shape is not None:
            if not isinstance(value, list) or (f.shape >= 0 and len(value) != f.shape):
                n = "a list" if f.shape < 0 else f"a list of {f.shape}"
                raise ConfigurationError(f"{where}: expected {n}, got {value!r}")
            out[name] = [_convert_scalar(v, f.kind, factor, where) for v in value]
        else:
            out[name] = _convert_scalar(value, f.kind, factor, where)
    for name, f in schema.items():
        if f.required and name not in out:
            raise ConfigurationError(f"{path}{name}: required {'section' if f.kind == 'section' else 'key'} missing")
    return out


@dataclass(frozen=True)
class GridSettings:
    n_q: int = 48
    n_omega: int = 96
    q_margin_per_waist: float = 4.0
    points_per_pump_fwhm: float = 8.0


@dataclass(frozen=True)
class AnalysisSettings:
    hg_orders: tuple[int, ...] = (0, 1, 2, 3)
    hg_fwhm_m: float = 15e-9
    hg_center_wavelength_m: float = 795e-9
    half_cuts: bool = True
    mapping: str = "exponential"
    detection_efficiency: float = 1.0
    gain: float | None = None
    calibration_target_db: float | None = -0.35
    truncation_rtol: float = 1e-6
    multimode_rtol: float = 0.1
    bootstrap_rounds: int = 1000
    threshold_sigmas: float = 3.0


@dataclass(frozen=True)
class NoiseSettings:
    pulses_averaged: int = 15
    rbw_hz: float = 100e3
    vbw_hz: float = 30.0
    effective_samples: float | None = None
    ramp_rate_hz: float = 0.3
    duration_s: float = 10.0
    sample_rate_hz: float = 200.0
    seed: int = 0

    @property
    def samples(self) -> float:
        """Effective samples per variance estimate."""
        if self.effective_samples is not None:
            return self.effective_samples
        return self.pulses_averaged * self.rbw_hz / self.vbw_hz

    @property
    def scan(self) -> RampScan:
        return RampScan(self.ramp_rate_hz, self.duration_s, self.sample_rate_hz)


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "squeezelab-out"
    kernel_cache: bool = True
    n_mode_files: int = 8


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Parsed configuration. ``raw`` keeps the SI-normalized tree for hashing and reports."""

    crystal: CrystalSpec
    pump: PumpProfile
    grid: GridSettings
    analysis: AnalysisSettings
    noise: NoiseSettings
    output: OutputSettings
    raw: dict

    @property
    def config_hash(self) -> str:
        """SHA-256 over the crystal, pump and grid sections (the kernel inputs)."""
        sub = {k: self.raw[k] for k in HASHED_SECTIONS}
        return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()


def _build(tree: dict) -> ExperimentConfig:
    version = tree.get("format_version", CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigurationError(f"format_version: unsupported version {version}")
    cr, pu, gr, an, no, ou = (tree[k] for k in ("crystal", "pump", "grid", "analysis", "noise", "output"))
    try:
        sell = {
            name: Sellmeier(tuple(cr[name]["coefficients_um"]), tuple(cr[name]["valid_range"]))
            for name in ("sellmeier_ordinary", "sellmeier_extraordinary")
        }
    except ValueError as exc:
        raise ConfigurationError(f"crystal.sellmeier: {exc}") from None
    try:
        crystal = CrystalSpec(
            length_m=cr["length"],
            sellmeier_ordinary=sell["sellmeier_ordinary"],
            sellmeier_extraordinary=sell["sellmeier_extraordinary"],
            theta0_rad=cr.get("theta0"),
            noncollinear_angle_rad=cr["noncollinear_angle"],
            signal_wavelength_m=cr["signal_wavelength"],
        )
    except ValueError as exc:
        raise ConfigurationError(f"crystal: {exc}") from None
    if not np.isclose(pu["center_wavelength"], crystal.pump_wavelength_m, rtol=1e-9, atol=0):
        raise ConfigurationError(
            "pump.center_wavelength: must be half of crystal.signal_wavelength for degenerate down-conversion"
        )

    has_gain, has_target = "gain" in an, "calibration_target" in an
    if has_gain == has_target:
        raise ConfigurationError("analysis: give exactly one of 'gain' and 'calibration_target_db'")
    gain = an.get("gain")
    if gain is not None and gain < 0:
        raise ConfigurationError("analysis.gain: must be non-negative")
    try:
        pump = PumpProfile(
            center_wavelength_m=pu["center_wavelength"],
            spectral_fwhm_m=pu["spectral_fwhm"],
            waist_m=pu["waist"],
            chirp_s2=pu.get("chirp", 0.0),
            gain=gain or 0.0,
        )
    except ConfigurationError as exc:
        raise ConfigurationError(f"pump: {exc}") from None

    grid = GridSettings(**gr)
    if grid.n_q < 2 or grid.n_omega < 2:
        raise ConfigurationError("grid: n_q and n_omega must be at least 2")

    mapping = an.get("mapping", "exponential")
    if mapping not in MAPPINGS:
        raise ConfigurationError(f"analysis.mapping: expected one of {MAPPINGS}, got '{mapping}'")
    eta = an.get("detection_efficiency", 1.0)
    if not 0 < eta <= 1:
        raise ConfigurationError("analysis.detection_efficiency: must lie in (0, 1]")
    if an.get("cross_block", False):
        raise ConfigurationError("analysis.cross_block: X-P cross blocks are not supported; must be false")
    orders = tuple(an["hg_orders"])
    if not orders or len(set(orders)) != len(orders) or min(orders) < 0 or max(orders) > 10:
        raise ConfigurationError("analysis.hg_orders: need distinct orders between 0 and 10")
    if 0 not in orders:
        raise ConfigurationError("analysis.hg_orders: order 0 is required (calibration and the spatial split use HG0)")
    rounds = an.get("bootstrap_rounds", 1000)
    if rounds == 1 or rounds < 0:
        raise ConfigurationError("analysis.bootstrap_rounds: need 0 (no errors) or at least 2")
    analysis = AnalysisSettings(
        hg_orders=orders,
        hg_fwhm_m=an["hg_fwhm"],
        hg_center_wavelength_m=an["hg_center_wavelength"],
        half_cuts=an.get("half_cuts", True),
        mapping=mapping,
        detection_efficiency=eta,
        gain=gain,
        calibration_target_db=an.get("calibration_target"),
        truncation_rtol=an.get("truncation_rtol", 1e-6),
        multimode_rtol=an.get("multimode_rtol", 0.1),
        bootstrap_rounds=rounds,
        threshold_sigmas=an.get("threshold_sigmas", 3.0),
    )
    if analysis.calibration_target_db is not None and analysis.calibration_target_db > 0:
        raise ConfigurationError("analysis.calibration_target_db: squeezing targets must be <= 0 dB")

    noise = NoiseSettings(**no)
    for key in ("pulses_averaged", "rbw_hz", "vbw_hz", "ramp_rate_hz", "duration_s", "sample_rate_hz"):
        if not getattr(noise, key) > 0:
            raise ConfigurationError(f"noise.{key}: must be positive")
    if noise.effective_samples is not None and not noise.effective_samples > 0:
        raise ConfigurationError("noise.effective_samples: must be positive")
    output = OutputSettings(**ou)
    return ExperimentConfig(crystal, pump, grid, analysis, noise, output, tree)


def _rename_units(tree: dict) -> dict:
    """Attach canonical unit names to the SI-normalized fields."""
    out = copy.deepcopy(tree)
    renames = {
        "noise": {"rbw": "rbw_hz", "vbw": "vbw_hz", "ramp_rate": "ramp_rate_hz", "duration": "duration_s", "sample_rate": "sample_rate_hz"},
    }
    for section, mapping in renames.items():
        out[section] = {mapping.get(k, k): v for k, v in out[section].items()}
    return out


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a configuration tree (as loaded from YAML)."""
    if data is None:
        raise ConfigurationError("config: file is empty")
    tree = _parse_section(data, SCHEMA, "")
    tree = _rename_units(tree)
    return _build(tree)


def _set_override(data: dict, assignment: str):
    if "=" not in assignment:
        raise ConfigurationError(f"override '{assignment}': expected key.path=value")
    path, _, text = assignment.partition("=")
    keys = path.strip().split(".")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"override '{assignment}': {exc}") from None
    node = data
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigurationError(f"override '{path}': '{k}' is not a section")
        node = node[k]
    leaf = keys[-1]
    if keys[0] == "analysis" and leaf in ("gain", "calibration_target_db"):
        # the two gain settings are exclusive: setting one drops the other
        node.pop("calibration_target_db" if leaf == "gain" else "gain", None)
    node[leaf] = value


def load_config_data(path=None, overrides=()) -> dict:
    """Raw YAML tree with ``key.path=value`` overrides applied."""
    try:
        if path is None:
            text = resources.files("squeezelab").joinpath("data/default.yaml").read_text()
        else:
            text = Path(path).read_text()
        data = yaml.safe_load(text)
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config: top level must be a mapping")
    for item in overrides:
        _set_override(data, item)
    return data


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Load and validate a YAML config; ``path=None`` uses the packaged default."""
    return parse_config(load_config_data(path, overrides))


def default_config() -> ExperimentConfig:
    return load_config()
