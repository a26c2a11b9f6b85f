"""Scenario configuration: strict TOML loading, validation and normalised output.

Frequencies in the file are ordinary frequencies in Hz (the X/2pi values
quoted for the experiment).  The in-memory :class:`ScenarioConfig` keeps the
document values; :meth:`ScenarioConfig.lambda_params` is the single place
where they are multiplied by 2pi.
"""

from __future__ import annotations

import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bloch_core import LambdaParams
from .doppler import VelocityGrid, make_grid
from .homodyne import HomodyneConfig
from .protocol import CellConfig, FieldTimeline

TWO_PI = 2 * math.pi

AXES = ("detuning", "storage_time", "coupling_power")
STORAGE_DECAYS = ("efficiency", "coherence")


class ConfigError(ValueError):
    """Invalid scenario file; ``line`` points at the offending entry when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        self.message = message
        super().__init__(self.__str__())

    def __str__(self) -> str:
        where = self.path or "<config>"
        if self.line is not None:
            where = f"{where}:{self.line}"
        return f"{where}: {self.message}"


def _opt(default, kind=float):
    return field(default=default, metadata={"kind": kind})


@dataclass(frozen=True)
class SystemSection:
    gamma_raman_hz: float = _opt(14e3)
    gamma_opt_hz: float = _opt(0.4e9)
    gamma_pol_per_s: float = _opt(1.4e8)
    rabi_coupling_hz: float = _opt(23e6)
    coupling_phase_rad: float = _opt(0.0)
    rabi_coupling_read_hz: float = _opt(23e6)
    coupling_read_phase_rad: float = _opt(0.0)
    rabi_probe_hz: float = _opt(2e6)
    detuning_hz: float = _opt(0.0)
    raman_detuning_hz: float = _opt(0.0)


@dataclass(frozen=True)
class CellSection:
    length_m: float = _opt(0.06)
    absorption_depth: float = _opt(6.8)
    n_slices: int = _opt(32, int)
    pumped_fraction: float = _opt(1.0)
    coupling_attenuation: bool = _opt(False, bool)
    beer_coefficient_per_m: float = _opt(0.0)


@dataclass(frozen=True)
class TimelineSection:
    rise_time_s: float = _opt(2e-6)
    storage_time_s: float = _opt(3e-6)
    n_rise: float = _opt(8.0)
    ramp_time_s: float = _opt(10e-9)
    storage_decay: str = _opt("efficiency", str)


@dataclass(frozen=True)
class DopplerSection:
    hwhm_hz: float = _opt(0.9e9)
    n_classes: int = _opt(1, int)
    span_sigmas: float = _opt(4.0)
    gamma_override_hz: float | None = _opt(None)


@dataclass(frozen=True)
class HomodyneSection:
    lo_intensity: float = _opt(1.0)
    contrast: float = _opt(1.65)
    scan_frequency_hz: float = _opt(0.02)
    scan_amplitude_rad: float = _opt(10 * math.pi)
    sample_rate_hz: float = _opt(50e6)
    noise_rms: float = _opt(0.0)
    n_phases: int = _opt(64, int)
    probe_peak_intensity: float = _opt(0.04)
    calibration_duration_s: float = _opt(2e-6)


@dataclass(frozen=True)
class SweepSection:
    axis: str = _opt("detuning", str)
    start: float = _opt(-2.2e9)
    stop: float = _opt(2.2e9)
    points: int = _opt(9, int)


@dataclass(frozen=True)
class RunSection:
    seed: int = _opt(0, int)
    dt_max_s: float = _opt(20e-9)
    workers: int = _opt(1, int)


_SECTIONS = {
    "system": SystemSection,
    "cell": CellSection,
    "timeline": TimelineSection,
    "doppler": DopplerSection,
    "homodyne": HomodyneSection,
    "sweep": SweepSection,
    "run": RunSection,
}


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemSection = field(default_factory=SystemSection)
    cell: CellSection = field(default_factory=CellSection)
    timeline: TimelineSection = field(default_factory=TimelineSection)
    doppler: DopplerSection = field(default_factory=DopplerSection)
    homodyne: HomodyneSection = field(default_factory=HomodyneSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    run: RunSection = field(default_factory=RunSection)

    # --- physics objects (all conversion to rad/s happens here) --------------

    def lambda_params(self) -> LambdaParams:
        s = self.system
        oc = TWO_PI * s.rabi_coupling_hz * complex(math.cos(s.coupling_phase_rad), math.sin(s.coupling_phase_rad))
        oc2 = TWO_PI * s.rabi_coupling_read_hz * complex(
            math.cos(s.coupling_read_phase_rad), math.sin(s.coupling_read_phase_rad)
        )
        delta_p = TWO_PI * s.detuning_hz
        return LambdaParams(
            gamma_opt=TWO_PI * s.gamma_opt_hz,
            gamma_raman=TWO_PI * s.gamma_raman_hz,
            gamma_pol=s.gamma_pol_per_s,
            rabi_coupling=oc,
            rabi_coupling_read=oc2,
            rabi_probe=TWO_PI * s.rabi_probe_hz,
            detuning_probe=delta_p,
            detuning_coupling=delta_p - TWO_PI * s.raman_detuning_hz,
        )

    def cell_config(self) -> CellConfig:
        c = self.cell
        return CellConfig(
            length=c.length_m,
            absorption_depth=c.absorption_depth,
            n_slices=c.n_slices,
            pumped_fraction=c.pumped_fraction,
            coupling_attenuation=c.coupling_attenuation,
            beer_coefficient=c.beer_coefficient_per_m,
        )

    def timeline_config(self) -> FieldTimeline:
        t = self.timeline
        return FieldTimeline.standard(
            self.lambda_params(),
            rise_time=t.rise_time_s,
            storage_time=t.storage_time_s,
            n_rise=t.n_rise,
            ramp_time=t.ramp_time_s,
        )

    def velocity_grid(self) -> VelocityGrid:
        d = self.doppler
        override = None if d.gamma_override_hz is None else TWO_PI * d.gamma_override_hz
        return make_grid(TWO_PI * d.hwhm_hz, d.n_classes, d.span_sigmas, gamma_override=override)

    def homodyne_config(self) -> HomodyneConfig:
        h = self.homodyne
        return HomodyneConfig(
            lo_intensity=h.lo_intensity,
            contrast=h.contrast,
            scan_frequency=h.scan_frequency_hz,
            scan_amplitude=h.scan_amplitude_rad,
            sample_rate=h.sample_rate_hz,
            noise_rms=h.noise_rms,
            n_phases=h.n_phases,
            probe_peak_intensity=h.probe_peak_intensity,
        )

    def with_axis_value(self, axis: str, value: float) -> "ScenarioConfig":
        """Scenario for one sweep point.

        ``detuning`` sets the common optical detuning in Hz, ``storage_time``
        the dark time in s, and ``coupling_power`` scales both coupling Rabi
        frequencies by sqrt(value) (power relative to the file's value).
        """
        if axis == "detuning":
            return replace(self, system=replace(self.system, detuning_hz=float(value)))
        if axis == "storage_time":
            return replace(self, timeline=replace(self.timeline, storage_time_s=float(value)))
        if axis == "coupling_power":
            if value < 0:
                raise ValueError("coupling_power must be >= 0")
            k = math.sqrt(value)
            s = self.system
            return replace(
                self,
                system=replace(
                    s,
                    rabi_coupling_hz=s.rabi_coupling_hz * k,
                    rabi_coupling_read_hz=s.rabi_coupling_read_hz * k,
                ),
            )
        raise ValueError(f"unknown sweep axis {axis!r}")

    def axis_values(self) -> list[float]:
        sw = self.sweep
        if sw.points == 1:
            return [float(sw.start)]
        step = (sw.stop - sw.start) / (sw.points - 1)
        return [float(sw.start + j * step) for j in range(sw.points - 1)] + [float(sw.stop)]

    def validate(self) -> None:
        """Build every physics object once so their invariants are checked."""
        self.lambda_params()
        self.cell_config()
        self.timeline_config()
        self.velocity_grid()
        self.homodyne_config()
        if self.timeline.storage_decay not in STORAGE_DECAYS:
            raise ValueError(f"storage_decay must be one of {STORAGE_DECAYS}")
        if self.sweep.axis not in AXES:
            raise ValueError(f"sweep axis must be one of {AXES}")
        if self.sweep.points < 1:
            raise ValueError("sweep points must be >= 1")
        if self.run.dt_max_s <= 0:
            raise ValueError("dt_max_s must be > 0")
        if self.run.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.run.seed < 0:
            raise ValueError("seed must be >= 0")


# --- loading --------------------------------------------------------------------

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_\-]+)\s*\]")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``key`` in ``[section]`` (or of the header if ``key`` is None)."""
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section:
            m = _KEY.match(line)
            if m and m.group(1) == key:
                return n
    return None


def _coerce(value, kind, where: str):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where} must be a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where} must be an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{where} must be true or false, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ValueError(f"{where} must be a string, got {value!r}")
    return value


def loads(text: str, path: str | None = None) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, path) from None
    sections = {}
    for name, body in doc.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]", _locate(text, name), path)
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table", _locate(text, name) or _first_key(text, name), path)
        cls = _SECTIONS[name]
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in [{name}]", _locate(text, name, key), path)
            try:
                values[key] = _coerce(value, known[key].metadata["kind"], f"{name}.{key}")
            except ValueError as exc:
                raise ConfigError(str(exc), _locate(text, name, key), path) from None
        sections[name] = cls(**values)
    cfg = ScenarioConfig(**sections)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid value: {exc}", _blame(text, exc), path) from None
    return cfg


def _first_key(text, name):
    for n, line in enumerate(text.splitlines(), start=1):
        if line.strip().startswith(name):
            return n
    return None


def _blame(text: str, exc: Exception) -> int | None:
    """Best-effort line for a validation error: the first config key named in the message."""
    msg = str(exc)
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            stem = f.name.rsplit("_", 1)[0] if f.name.endswith(("_hz", "_s", "_m", "_rad")) else f.name
            if f.name in msg or re.search(rf"\b{re.escape(stem)}\b", msg):
                line = _locate(text, name, f.name)
                if line is not None:
                    return line
    return None


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return loads(text, str(path))


# --- normalised output -------------------------------------------------------------


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return json.dumps(v)


def dumps(cfg: ScenarioConfig) -> str:
    """Every key written explicitly, floats in round-trip ``repr`` form; ``None`` keys omitted."""
    out = []
    for name in _SECTIONS:
        out.append(f"[{name}]")
        for key, value in asdict(getattr(cfg, name)).items():
            if value is not None:
                out.append(f"{key} = {_toml_value(value)}")
        out.append("")
    return "\n".join(out)


def default_document() -> str:
    return dumps(ScenarioConfig())

