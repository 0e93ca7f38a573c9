"""TOML run configuration: schema, defaults, validation, and named presets.

Config files use ordinary frequencies (keys ending in ``_mhz`` / ``_ghz``)
and microseconds (``_us``). Conversion to angular units happens when the
:class:`~lambdaspin.experiments.ExperimentConfig` builds its parameters.

Example::

    experiment = "rabi"

    [physics]
    delta_avg_mhz = 1500
    omega_plus_mhz = 46

    [scan]
    start = 0.0
    stop = 10.0
    num = 201
"""

from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .ensemble import EnsembleSpec, GaussianSpec, HyperfineConfig
from .errors import InvalidSpecError, ParseError, ValidationError
from .experiments import ExperimentConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["EXPERIMENTS", "RunConfig", "load_config", "parse_config", "load_preset",
           "list_presets", "apply_overrides"]

EXPERIMENTS = ("rabi", "stirap", "ramsey", "cpt", "period-vs-detuning", "fidelity")

_FLOAT, _INT, _BOOL, _STR, _FLOATS, _SPIN = "float", "int", "bool", "str", "floats", "spin"

# section -> key -> (kind, default); default None means optional with no value
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "physics": {
        "delta_avg_mhz": (_FLOAT, 1500.0),
        "delta_two_photon_mhz": (_FLOAT, 0.0),
        "omega_plus_mhz": (_FLOAT, 46.0),
        "omega_minus_mhz": (_FLOAT, None),
        "decay": (_BOOL, True),
        "gamma_repop_mhz": (_FLOAT, 7.0),
        "gamma_opt_mhz": (_FLOAT, 7.0),
        "t2_us": (_FLOAT, 200.0),
        "leak_rate_mhz": (_FLOAT, 0.0),
    },
    "pulses": {
        "stirap_width_us": (_FLOAT, 1.5),
        "t_rise_us": (_FLOAT, 1.2),
        "shape": (_STR, "trapezoid"),
        "ramsey_omega_r_mhz": (_FLOAT, 2.5),
        "cpt_duration_us": (_FLOAT, 10.0),
    },
    "ensemble": {
        "delta_avg_fwhm_mhz": (_FLOAT, 500.0),
        "delta_avg_points": (_INT, 21),
        "two_photon_fwhm_mhz": (_FLOAT, 1.0),
        "two_photon_points": (_INT, 41),
        "span_sigmas": (_FLOAT, 3.0),
        "nuclear_spin": (_SPIN, "none"),
        "dip_spacing_mhz": (_FLOAT, 4.4),
        "laser_offset_mhz": (_FLOAT, 0.0),
        "hyperfine_a_mhz": (_FLOAT, 2.2),
        "zeeman_wb_mhz": (_FLOAT, 150.0),
    },
    "scan": {
        "values": (_FLOATS, None),
        "start": (_FLOAT, None),
        "stop": (_FLOAT, None),
        "num": (_INT, None),
        "delta_ghz": (_FLOATS, None),
        "intensity_scale": (_FLOATS, None),
        "participating_fraction": (_FLOAT, None),
    },
    "output": {
        "path": (_STR, None),
        "format": (_STR, "csv"),
    },
    "run": {
        "threads": (_INT, 1),
        "dt_us": (_FLOAT, None),
    },
}

# carried by written sidecars; accepted and ignored on input
_IGNORED_SECTIONS = ("meta",)
_SHAPES = ("square", "trapezoid", "sin2_ramp")


def _check(kind, key, value):
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(key, "expected a number")
        return float(value)
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(key, "expected an integer")
        return value
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise ValidationError(key, "expected true or false")
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ValidationError(key, "expected a string")
        return value
    if kind == _FLOATS:
        if not isinstance(value, list) or not value:
            raise ValidationError(key, "expected a non-empty list of numbers")
        return [_check(_FLOAT, key, v) for v in value]
    if kind == _SPIN:
        if value in ("none", "random") or (not isinstance(value, bool) and value in (-1, 0, 1)):
            return value
        raise ValidationError(key, 'expected "none", "random", -1, 0 or 1')
    raise AssertionError(kind)


def _resolve(data: dict, experiment: str | None = None) -> dict:
    """Validate ``data`` against :data:`SCHEMA` and fill in defaults.

    ``experiment`` is used when ``data`` does not name one.
    """
    resolved: dict = {}
    for key, value in data.items():
        if key == "experiment" or key in _IGNORED_SECTIONS:
            continue
        if key not in SCHEMA:
            raise ValidationError(key, "unknown key")
        if not isinstance(value, dict):
            raise ValidationError(key, "expected a [section]")
        for sub in value:
            if sub not in SCHEMA[key]:
                raise ValidationError(f"{key}.{sub}", "unknown key")
    experiment = data.get("experiment", experiment)
    if experiment is None:
        raise ValidationError("experiment", "missing")
    if experiment not in EXPERIMENTS:
        raise ValidationError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    resolved["experiment"] = experiment
    for section, keys in SCHEMA.items():
        given = data.get(section, {})
        out = {}
        for key, (kind, default) in keys.items():
            if key in given:
                out[key] = _check(kind, f"{section}.{key}", given[key])
            elif default is not None:
                out[key] = default
        resolved[section] = out
    _validate(resolved)
    return resolved


def _validate(r: dict) -> None:
    exp = r["experiment"]
    scan = r["scan"]
    if r["pulses"]["shape"] not in _SHAPES:
        raise ValidationError("pulses.shape", f"must be one of {', '.join(_SHAPES)}")
    if r["output"]["format"] != "csv":
        raise ValidationError("output.format", 'only "csv" is supported')
    if r["run"]["threads"] < 1:
        raise ValidationError("run.threads", "must be >= 1")
    if "dt_us" in r["run"] and r["run"]["dt_us"] <= 0:
        raise ValidationError("run.dt_us", "must be > 0")
    for key in ("delta_avg_points", "two_photon_points"):
        n = r["ensemble"][key]
        if n < 1 or n % 2 == 0:
            raise ValidationError(f"ensemble.{key}", "must be a positive odd integer")
    for key in ("delta_avg_fwhm_mhz", "two_photon_fwhm_mhz", "dip_spacing_mhz"):
        if r["ensemble"][key] < 0:
            raise ValidationError(f"ensemble.{key}", "must be >= 0")
    for key in ("gamma_repop_mhz", "gamma_opt_mhz", "leak_rate_mhz", "omega_plus_mhz"):
        if r["physics"][key] < 0:
            raise ValidationError(f"physics.{key}", "must be >= 0")
    if r["physics"]["t2_us"] <= 0:
        raise ValidationError("physics.t2_us", "must be > 0")
    if exp == "period-vs-detuning":
        for key in ("delta_ghz", "intensity_scale"):
            if key not in scan:
                raise ValidationError(f"scan.{key}", "required for period-vs-detuning")
        if any(d == 0 for d in scan["delta_ghz"]):
            raise ValidationError("scan.delta_ghz", "detunings must be non-zero")
        if any(s <= 0 for s in scan["intensity_scale"]):
            raise ValidationError("scan.intensity_scale", "scales must be > 0")
        return
    ranged = [k for k in ("start", "stop", "num") if k in scan]
    if "values" in scan and ranged:
        raise ValidationError(f"scan.{ranged[0]}", "give either scan.values or start/stop/num")
    if "values" not in scan:
        for key in ("start", "stop", "num"):
            if key not in scan:
                raise ValidationError(f"scan.{key}", f"required for {exp} (or give scan.values)")
        if scan["num"] < 1:
            raise ValidationError("scan.num", "must be >= 1")
    if "participating_fraction" in scan and not 0 < scan["participating_fraction"] <= 1:
        raise ValidationError("scan.participating_fraction", "must lie in (0, 1]")


@dataclass
class RunConfig:
    """Validated configuration with every default filled in."""

    settings: dict
    source: str | None = None

    @property
    def experiment(self) -> str:
        return self.settings["experiment"]

    def section(self, name: str) -> dict:
        return self.settings[name]

    @property
    def output_path(self) -> Path | None:
        path = self.settings["output"].get("path")
        return Path(path) if path else None

    def grid(self) -> np.ndarray:
        scan = self.settings["scan"]
        if "values" in scan:
            return np.asarray(scan["values"], dtype=float)
        return np.round(np.linspace(scan["start"], scan["stop"], scan["num"]), 12)

    def ensemble_spec(self) -> EnsembleSpec:
        e = self.settings["ensemble"]
        spin = e["nuclear_spin"]
        extra = dict(dip_spacing=e["dip_spacing_mhz"], hyperfine_A=e["hyperfine_a_mhz"],
                     zeeman_wB=e["zeeman_wb_mhz"])
        if spin == "none":
            hyperfine = None
        elif spin == "random":
            hyperfine = HyperfineConfig(**extra)
        else:
            hyperfine = HyperfineConfig.selected(spin, **extra)
        try:
            return EnsembleSpec(
                delta_avg=GaussianSpec(e["delta_avg_fwhm_mhz"], e["delta_avg_points"], e["span_sigmas"]),
                two_photon=GaussianSpec(e["two_photon_fwhm_mhz"], e["two_photon_points"], e["span_sigmas"]),
                hyperfine=hyperfine,
                laser_offset=e["laser_offset_mhz"],
            )
        except InvalidSpecError as exc:
            raise ValidationError("ensemble", str(exc)) from exc

    def experiment_config(self) -> ExperimentConfig:
        p = self.settings["physics"]
        pulses = self.settings["pulses"]
        run = self.settings["run"]
        return ExperimentConfig(
            delta_avg=p["delta_avg_mhz"],
            delta_two_photon=p["delta_two_photon_mhz"],
            omega_plus=p["omega_plus_mhz"],
            omega_minus=p.get("omega_minus_mhz"),
            decay=p["decay"],
            gamma_repop=p["gamma_repop_mhz"],
            gamma_opt=p["gamma_opt_mhz"],
            t2=p["t2_us"],
            leak_rate=p["leak_rate_mhz"],
            ensemble=self.ensemble_spec(),
            stirap_width=pulses["stirap_width_us"],
            pulse_shape=pulses["shape"],
            ramsey_omega_r=pulses["ramsey_omega_r_mhz"],
            dt=run.get("dt_us"),
            threads=run["threads"],
        )

    def resolved(self, include_output: bool = True) -> dict:
        """Nested plain dict suitable for writing back out as TOML."""
        out = copy.deepcopy(self.settings)
        if not include_output:
            out.pop("output")
        return out


_LINE = re.compile(r"line (\d+)")


def parse_config(text: str, source: str | None = None, experiment: str | None = None) -> RunConfig:
    if not text.strip():
        raise ParseError("configuration is empty", lineno=1)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        lineno = getattr(exc, "lineno", None)
        if lineno is None:
            m = _LINE.search(str(exc))
            lineno = int(m.group(1)) if m else None
        raise ParseError(getattr(exc, "msg", str(exc)), lineno=lineno) from exc
    if not data:
        raise ParseError("configuration has no settings", lineno=1)
    return RunConfig(_resolve(data, experiment), source)


def load_config(path, experiment: str | None = None) -> RunConfig:
    """Read, validate and default a TOML run configuration.

    Raises
    ------
    ParseError
        The file is empty or is not valid TOML (carries the line number).
    ValidationError
        A key is unknown, mistyped, out of range, or missing for the experiment.
    """
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path), experiment)


def list_presets() -> list[str]:
    folder = resources.files("lambdaspin") / "presets"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> RunConfig:
    resource = resources.files("lambdaspin") / "presets" / f"{name}.toml"
    if not resource.is_file():
        raise ValidationError("preset", f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return parse_config(resource.read_text(encoding="utf-8"), f"preset:{name}")


def _override_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Return a new config with ``section.key=value`` assignments applied.

    Values are read as TOML literals, falling back to plain strings.
    """
    data = config.resolved()
    for item in overrides:
        if "=" not in item:
            raise ValidationError(item, "override must look like section.key=value")
        dotted, text = item.split("=", 1)
        dotted = dotted.strip()
        value = _override_value(text.strip())
        if dotted == "experiment":
            data["experiment"] = value
            continue
        if "." not in dotted:
            raise ValidationError(dotted, "override key must be section.key")
        section, key = dotted.split(".", 1)
        if section not in SCHEMA:
            raise ValidationError(dotted, "unknown key")
        data.setdefault(section, {})[key] = value
        if section == "scan" and key == "values":
            for k in ("start", "stop", "num"):
                data["scan"].pop(k, None)
        elif section == "scan" and key in ("start", "stop", "num"):
            data["scan"].pop("values", None)
    return RunConfig(_resolve(data), config.source)
