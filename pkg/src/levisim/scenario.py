"""Line-oriented scenario files: the single input of a simulation run.

Format: ``[section]`` headers group ``key = value`` lines into dotted keys;
``#`` starts a comment.  Values are numbers with optional SI unit suffixes
(``radius = 50 um``), booleans, bare strings, or comma-separated lists (one
trailing unit applies to every element).  The random seed is mandatory: runs
are reproducible or they are not runs.

Parsing validates against the schema and reports every violation at once.
Serialization is canonical (sorted keys, SI base units, shortest float form),
so parse(serialize(s)) == s and the sha256 of the canonical text identifies
the physics of a run regardless of file cosmetics.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError

# Multiplier to SI base units, keyed by the unit text with spaces removed.
_UNITS = {
    "": 1.0,
    # length
    "fm": 1e-15, "pm": 1e-12, "nm": 1e-9, "um": 1e-6, "mm": 1e-3,
    "cm": 1e-2, "m": 1.0,
    # time
    "ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0,
    # frequency and rates
    "Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "1/s": 1.0, "rad/s": 1.0,
    # temperature
    "uK": 1e-6, "mK": 1e-3, "K": 1.0,
    # current
    "uA": 1e-6, "mA": 1e-3, "A": 1.0,
    # magnetic field and gradient
    "nT": 1e-9, "uT": 1e-6, "mT": 1e-3, "T": 1.0, "G": 1e-4,
    "T/m": 1.0, "T/A": 1.0, "A/m": 1.0,
    # mass and density
    "ng": 1e-12, "ug": 1e-9, "mg": 1e-6, "g": 1e-3, "kg": 1.0,
    "kg/m^3": 1.0,
    # energy, power, force, impulse
    "J": 1.0, "fW": 1e-15, "pW": 1e-12, "nW": 1e-9, "uW": 1e-6,
    "mW": 1e-3, "W": 1.0, "aN": 1e-18, "fN": 1e-15, "pN": 1e-12, "N": 1.0,
    "Ns": 1.0, "N*s": 1.0,
}

_NUMBER = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


@dataclass(frozen=True)
class FieldSpec:
    """One schema entry: value kind, default, and whether it must be given."""

    kind: str                      # float | int | bool | str | floats | strs
    default: object = None
    required: bool = False
    doc: str = ""


# Every key a scenario may contain.  SI base units throughout.
SCHEMA: dict[str, FieldSpec] = {
    "run.seed": FieldSpec("int", required=True, doc="root random seed"),
    "run.label": FieldSpec("str", "default", doc="free-form run name"),
    "run.stages": FieldSpec(
        "strs", ("camera", "intensity", "liftoff", "interferometric", "ringup"),
        doc="experimental stages, executed in order"),
    "run.analyses": FieldSpec(
        "strs", ("floor", "probe_tone", "mirror", "feasibility"),
        doc="analyses run after the stages"),

    "particle.density": FieldSpec("float", 11459.0, doc="kg/m^3"),
    "particle.radius": FieldSpec("float", 50e-6, doc="m"),
    "particle.quality": FieldSpec("float", 2.6e7, doc="mechanical Q"),
    "particle.roughness_sigma": FieldSpec("float", 50e-9, doc="surface RMS, m"),
    "particle.rotation_rate": FieldSpec("float", 10.0, doc="Hz"),
    "particle.correlation_length": FieldSpec(
        "float", 0.314e-6, doc="surface correlation length, m"),
    "particle.t_c": FieldSpec("float", 7.2, doc="critical temperature, K"),
    "particle.h0": FieldSpec("float", 6.4e4, doc="critical field, A/m"),

    "trap.axial_frequency": FieldSpec("float", 160.0, doc="Hz"),
    "trap.field_per_ampere": FieldSpec(
        "float", 1e-4, doc="probe-coil field at the particle, T/A"),

    "environment.bath_temperature": FieldSpec(
        "float", 4.509e10, doc="effective force-noise temperature, K"),
    "environment.cryostat_temperature": FieldSpec("float", 3.0, doc="K"),

    "readout.wavelength": FieldSpec("float", 637e-9, doc="m"),
    "readout.detected_flux": FieldSpec("float", 1e7, doc="signal photons/s"),
    "readout.lo_ratio": FieldSpec("float", 50.0, doc="LO/signal flux ratio"),
    "readout.record_rate": FieldSpec("float", 200e3, doc="detector records/s"),
    "readout.target_floor": FieldSpec(
        "float", 955e-12, doc="observed floor anchoring the roughness model, m/rtHz"),
    "readout.reference_roughness": FieldSpec(
        "float", 50e-9, doc="roughness at which target_floor was observed, m"),

    "lock.gain_hz_per_volt": FieldSpec("float", 8000.0, doc="Hz/V"),
    "lock.update_rate": FieldSpec("float", 200e3, doc="Hz"),
    "lock.enabled": FieldSpec("bool", True),

    "stages.camera.iterations": FieldSpec("int", 25),
    "stages.camera.separation": FieldSpec(
        "float", 0.2, doc="snapshot spacing, radial periods"),
    "stages.camera.wait": FieldSpec("float", 2.0, doc="periods before kick"),
    "stages.camera.kick_impulse": FieldSpec("float", 6.9e-12, doc="N s"),
    "stages.camera.pixel_pitch": FieldSpec("float", 1e-6, doc="m"),
    "stages.camera.centroid_noise": FieldSpec("float", 1e-7, doc="m"),
    "stages.camera.initial_amplitude": FieldSpec("float", 50e-6, doc="m"),

    "stages.intensity.fwhm": FieldSpec("float", 4e-6, doc="beam FWHM, m"),
    "stages.intensity.peak_flux": FieldSpec("float", 1.7e7, doc="1/s"),
    "stages.intensity.offset": FieldSpec("float", 1.7e-6, doc="beam offset, m"),
    "stages.intensity.sample_rate": FieldSpec("float", 8e3, doc="Hz"),
    "stages.intensity.duration": FieldSpec("float", 40.0, doc="s"),
    "stages.intensity.gain": FieldSpec("float", 1.0, doc="gamma_fb, rad/s"),
    "stages.intensity.bandwidth": FieldSpec("float", 16.0, doc="Hz"),

    "stages.interferometric.sample_rate": FieldSpec("float", 200e3, doc="Hz"),
    "stages.interferometric.duration": FieldSpec("float", 6.0, doc="s"),
    "stages.interferometric.gain": FieldSpec("float", 131.9, doc="gamma_fb, rad/s"),
    "stages.interferometric.bandwidth": FieldSpec("float", 40.0, doc="Hz"),
    "stages.interferometric.initial_amplitude": FieldSpec("float", 2e-6, doc="m"),
    "stages.interferometric.lock_gain": FieldSpec(
        "float", 9549.3, doc="normalized loop gain while cooling, Hz/unit"),

    "stages.ringup.duration": FieldSpec("float", 12.0, doc="s"),
    "stages.ringup.window": FieldSpec("float", 0.4, doc="occupation window, s"),

    "analysis.floor_band": FieldSpec("floats", (80.0, 320.0), doc="Hz"),
    "analysis.floor_duration": FieldSpec("float", 16.0, doc="s"),
    "analysis.floor_nperseg": FieldSpec("int", 65536),
    "analysis.drive_frequency": FieldSpec(
        "float", 217.0, doc="mirror-calibration tone, Hz"),
    "analysis.probe_frequencies": FieldSpec(
        "floats", (174.0, 186.0, 233.0), doc="Hz"),
    "analysis.probe_currents": FieldSpec("floats", (0.001, 0.002, 0.003), doc="A"),
    "analysis.calibration_gain": FieldSpec(
        "float", 13.0, doc="gamma_fb during calibration runs, rad/s"),
    "analysis.calibration_duration": FieldSpec("float", 16.0, doc="s"),
    "analysis.calibration_nperseg": FieldSpec("int", 262144),
    "analysis.mirror_amplitude": FieldSpec("float", 79.625e-9, doc="m"),
    "analysis.mirror_duration": FieldSpec("float", 8.0, doc="s"),
    "analysis.psd_nperseg": FieldSpec("int", 65536),

    "feasibility.frequency": FieldSpec("float", 200.0, doc="Hz"),
    "feasibility.eta_freespace": FieldSpec(
        "float", 1.0, doc="detection efficiency, free-space budget"),
    "feasibility.eta": FieldSpec(
        "float", 0.75, doc="total detection efficiency, cavity budget"),
    "feasibility.temperature": FieldSpec(
        "float", 0.015, doc="bath temperature for the cavity budget, K"),
    "feasibility.wavelength": FieldSpec("float", 1.55e-6, doc="m"),
    "feasibility.finesse": FieldSpec("float", 1e5),
    "feasibility.quench_field": FieldSpec("float", 5000.0, doc="A/m"),
    "feasibility.substrate_temperature": FieldSpec("float", 3.5, doc="K"),
    "feasibility.absorbed_power": FieldSpec("float", 3e-12, doc="W"),
}


def _parse_scalar(text: str, key: str, problems: list[str]):
    """Number-with-unit, boolean, or bare string."""
    token = text.strip()
    low = token.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf"):
        return math.inf
    m = _NUMBER.match(token)
    if m:
        unit = token[m.end():].strip().replace(" ", "")
        if unit in _UNITS:
            return float(m.group(0)) * _UNITS[unit]
        problems.append(f"{key}: unknown unit {unit!r} in {token!r}")
        return None
    return token


def _coerce(key: str, raw: str, spec: FieldSpec, problems: list[str]):
    before = len(problems)
    if spec.kind in ("floats", "strs") or "," in raw:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        values = [_parse_scalar(p, key, problems) for p in parts]
        if len(problems) > before:
            return None
        if spec.kind == "strs":
            bad = [v for v in values if not isinstance(v, str)]
            if bad:
                problems.append(f"{key}: expected names, got {bad}")
                return None
            return tuple(values)
        if spec.kind != "floats":
            problems.append(f"{key}: got a list, expected {spec.kind}")
            return None
        # One trailing unit applies to all: "5, 10, 15 mA" scales every element.
        last = parts[-1]
        m = _NUMBER.match(last)
        scale = _UNITS.get(last[m.end():].strip().replace(" ", ""), 1.0) if m else 1.0
        out = []
        for p, v in zip(parts, values):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                problems.append(f"{key}: element {p!r} is not a number")
                return None
            mm = _NUMBER.match(p)
            has_unit = bool(p[mm.end():].strip()) if mm else False
            out.append(float(v) if has_unit else float(v) * scale)
        return tuple(out)

    value = _parse_scalar(raw, key, problems)
    if len(problems) > before:
        return None
    if spec.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{key}: expected a number, got {raw!r}")
            return None
        return float(value)
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or float(value) != int(value):
            problems.append(f"{key}: expected an integer, got {raw!r}")
            return None
        return int(value)
    if spec.kind == "bool":
        if not isinstance(value, bool):
            problems.append(f"{key}: expected true/false, got {raw!r}")
            return None
        return value
    if spec.kind == "str":
        return str(value)
    raise AssertionError(f"unhandled kind {spec.kind}")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Scenario:
    """Validated, fully-defaulted scenario: a plain mapping of dotted keys."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        unknown = sorted(set(self.values) - set(SCHEMA))
        for key in unknown:
            problems.append(f"unknown key {key!r}")
        for key, spec in SCHEMA.items():
            if key not in self.values:
                if spec.required:
                    problems.append(f"missing required key {key!r}")
                else:
                    self.values[key] = spec.default
        if problems:
            raise ConfigError(problems)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self.values["run.seed"]

    def with_overrides(self, overrides: dict) -> Scenario:
        """New scenario with the given dotted keys replaced (re-validated)."""
        problems: list[str] = []
        merged = dict(self.values)
        for key, value in overrides.items():
            if key not in SCHEMA:
                problems.append(f"unknown key {key!r}")
                continue
            if isinstance(value, str):
                value = _coerce(key, value, SCHEMA[key], problems)
            merged[key] = value
        if problems:
            raise ConfigError(problems)
        return Scenario(merged)

    def canonical(self) -> str:
        """Canonical text: sorted sections and keys, SI base units, no comments."""
        by_section: dict[str, list[str]] = {}
        for key in sorted(self.values):
            section, _, name = key.rpartition(".")
            by_section.setdefault(section, []).append(name)
        lines = ["# canonical scenario (SI base units)"]
        for section in sorted(by_section):
            lines.append("")
            lines.append(f"[{section}]")
            for name in by_section[section]:
                lines.append(f"{name} = {_render(self.values[f'{section}.{name}'])}")
        return "\n".join(lines) + "\n"

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text, reporting every problem in one failure."""
    problems: list[str] = []
    values: dict[str, object] = {}
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                problems.append(f"line {lineno}: malformed section header {line!r}")
                continue
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        name, _, raw = line.partition("=")
        key = f"{section}.{name.strip()}" if section else name.strip()
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        spec = SCHEMA.get(key)
        if spec is None:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        value = _coerce(key, raw.strip(), spec, problems)
        if value is not None:
            values[key] = value
    for key, spec in SCHEMA.items():
        if spec.required and key not in values:
            problems.append(f"missing required key {key!r}")
    if problems:
        raise ConfigError(problems)
    return Scenario(values)


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def default_scenario(seed: int = 20260823) -> Scenario:
    """All schema defaults with the given seed."""
    return Scenario({"run.seed": int(seed)})
