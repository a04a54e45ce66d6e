"""Strict TOML configuration for scenario runs.

Unknown keys are fatal anywhere in the document.  Physics may be given
either dimensionless (rates as multiples of the drive amplitude, times
as multiples of its inverse) or in laboratory units (kHz rates, GHz
splitting, mK temperature, microsecond times); the two styles cannot be
mixed.  Internally everything is converted to angular units with
hbar = k_B = 1.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import tomli
from scipy import constants

from . import scenarios


class ConfigError(ValueError):
    """Configuration rejected; message names the offending key."""


# section -> key -> type description (checked after tomli parsing)
_SCHEMA = {
    "run": {"seed": int, "output": str, "formats": list, "label": str},
    "physics": {
        "gamma_over_lambda": float, "nbar": float, "detuning": float,
        "gamma_khz": float, "lambda_khz": float, "frequency_ghz": float,
        "temperature_mk": float, "detuning_khz": float,
    },
    "protocol": {
        "name": str, "tau0": float, "tau1": (float, str), "dt": float,
        "steps": int, "feedback": bool, "angle": float, "axis": str,
        "on_outcome": float,
    },
    "oracle": {"trajectories": int, "seed": int},
    "grid": {"step": float, "eps_tail": float, "tau_max": float},
    "sweep": {"parameter": str, "values": list, "start": float,
              "stop": float, "count": int, "spacing": str},
}

_LAB_KEYS = {"gamma_khz", "lambda_khz", "frequency_ghz", "temperature_mk",
             "detuning_khz"}
_DIMLESS_KEYS = {"gamma_over_lambda", "detuning"}

PROTOCOLS = ("inversion", "rabi", "custom")
_PROTOCOL_KEYS = {
    "inversion": {"name", "tau0", "tau1", "dt", "steps"},
    "rabi": {"name", "dt", "steps", "feedback"},
    "custom": {"name", "dt", "steps", "angle", "axis", "on_outcome"},
}


def _check_keys(raw):
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            want = _SCHEMA[section][key]
            kinds = want if isinstance(want, tuple) else (want,)
            ok = False
            for kind in kinds:
                if kind is float and isinstance(value, (int, float)) \
                        and not isinstance(value, bool):
                    ok = True
                elif kind is int and isinstance(value, int) \
                        and not isinstance(value, bool):
                    ok = True
                elif kind in (str, bool, list) and isinstance(value, kind):
                    ok = True
            if not ok:
                names = "/".join(k.__name__ for k in kinds)
                raise ConfigError(
                    f"{section}.{key} must be {names}, got "
                    f"{type(value).__name__}")


def angular_rate_khz(f_khz):
    """kHz technical frequency to angular rate in 1/s."""
    return 2.0 * math.pi * f_khz * 1e3


def bose_occupation_lab(frequency_ghz, temperature_mk):
    """Thermal occupation from a GHz splitting and a mK temperature."""
    if frequency_ghz <= 0 or temperature_mk <= 0:
        raise ConfigError("frequency and temperature must be positive")
    ratio = (constants.h * frequency_ghz * 1e9
             / (constants.k * temperature_mk * 1e-3))
    return 1.0 / np.expm1(ratio)


@dataclass(frozen=True)
class ResolvedConfig:
    """Scenario parameters in internal angular units.

    lam is 1 in dimensionless mode; times (tau0, tau1, dt) are absolute
    (so dimensionless inputs are divided by lam = 1, lab microseconds
    become seconds).
    """

    protocol: str
    gamma: float
    nbar: float
    lam: float
    detuning: float
    tau0: float
    tau1: float
    tau1_spec: object
    dt: float
    steps: int
    feedback: bool
    angle: float
    axis: str
    on_outcome: float
    seed: int
    trajectories: int
    grid_step: float
    grid_eps_tail: float
    grid_tau_max: float
    lab_units: bool
    time_unit: str
    formats: tuple
    label: str
    output: str
    raw: dict = field(repr=False)
    sweep: dict = field(repr=False, default=None)

    @property
    def config_hash(self):
        return config_hash(self.raw)

    def inversion_scenario(self):
        return scenarios.InversionScenario(
            gamma=self.gamma, nbar=self.nbar, lam=self.lam,
            tau0=self.tau0, tau1=self.tau1, detuning=self.detuning)

    def strobe_scenario(self):
        if self.protocol == "custom":
            return scenarios.StroboscopicScenario(
                gamma=self.gamma, nbar=self.nbar, lam=self.lam, dt=self.dt,
                feedback_angle=self.angle, feedback_axis=self.axis,
                feedback_outcome=self.on_outcome, detuning=self.detuning)
        return scenarios.StroboscopicScenario(
            gamma=self.gamma, nbar=self.nbar, lam=self.lam, dt=self.dt,
            detuning=self.detuning)


def config_hash(raw):
    """Stable hash of the fully resolved raw dictionary."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def load(path):
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
    return resolve(raw)


def loads(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return resolve(raw)


def resolve(raw):
    """Validate a parsed document and convert to internal units."""
    _check_keys(raw)
    physics = raw.get("physics")
    if physics is None:
        raise ConfigError("missing [physics] section")
    protocol_tbl = raw.get("protocol")
    if protocol_tbl is None or "name" not in protocol_tbl:
        raise ConfigError("missing protocol.name")
    name = protocol_tbl["name"]
    if name not in PROTOCOLS:
        raise ConfigError(f"protocol.name must be one of {PROTOCOLS}")
    extra = set(protocol_tbl) - _PROTOCOL_KEYS[name]
    if extra:
        raise ConfigError(
            f"keys not valid for protocol {name!r}: "
            + ", ".join(sorted(f"protocol.{k}" for k in extra)))

    lab = set(physics) & _LAB_KEYS
    dimless = set(physics) & _DIMLESS_KEYS
    if lab and dimless:
        raise ConfigError(
            "mix of laboratory and dimensionless physics keys: "
            + ", ".join(sorted(lab | dimless)))
    lab_units = bool(lab)

    has_nbar = "nbar" in physics
    has_temp = "temperature_mk" in physics
    if has_nbar == has_temp:
        raise ConfigError("give exactly one of physics.nbar and "
                          "physics.temperature_mk")
    if has_temp and not lab_units:
        raise ConfigError("physics.temperature_mk requires laboratory "
                          "units (physics.frequency_ghz)")

    if lab_units:
        for key in ("gamma_khz", "lambda_khz"):
            if key not in physics:
                raise ConfigError(f"laboratory units require physics.{key}")
        lam = angular_rate_khz(physics["lambda_khz"])
        gamma = angular_rate_khz(physics["gamma_khz"])
        detuning = angular_rate_khz(physics.get("detuning_khz", 0.0))
        if has_temp:
            if "frequency_ghz" not in physics:
                raise ConfigError("physics.temperature_mk requires "
                                  "physics.frequency_ghz")
            nbar = bose_occupation_lab(physics["frequency_ghz"],
                                       physics["temperature_mk"])
        else:
            nbar = float(physics["nbar"])
        time_scale = 1e-6          # config times in microseconds
        time_unit = "us"
    else:
        if "gamma_over_lambda" not in physics:
            raise ConfigError("dimensionless physics requires "
                              "physics.gamma_over_lambda")
        lam = 1.0
        gamma = float(physics["gamma_over_lambda"])
        detuning = float(physics.get("detuning", 0.0))
        nbar = float(physics["nbar"])
        time_scale = 1.0           # config times in units of 1/lambda
        time_unit = "1/lambda"
    if gamma < 0:
        raise ConfigError("damping rate must be non-negative")
    if nbar < 0:
        raise ConfigError("thermal occupation must be non-negative")

    tau0 = float(protocol_tbl.get("tau0", 0.0)) * time_scale
    tau1_spec = protocol_tbl.get("tau1", "optimal" if name == "inversion"
                                 else 0.0)
    if isinstance(tau1_spec, str):
        if tau1_spec != "optimal":
            raise ConfigError('protocol.tau1 must be a number or "optimal"')
        if name != "inversion":
            raise ConfigError('tau1 = "optimal" is only valid for the '
                              "inversion protocol")
        if lam <= 0 or not (0 <= gamma / lam < 4):
            raise ConfigError('tau1 = "optimal" requires 0 <= gamma/lambda '
                              "< 4")
        tau1 = scenarios.optimal_drive_time(gamma / lam, lam)
    else:
        tau1 = float(tau1_spec) * time_scale

    dt = protocol_tbl.get("dt")
    if dt is None:
        # the closed-form inversion run has no step size; strobe defaults
        # to a quarter Rabi period
        dt = None if name == "inversion" else 0.5 * math.pi / lam
    else:
        dt = float(dt) * time_scale
    if dt is not None and dt <= 0:
        raise ConfigError("protocol.dt must be positive")
    steps = int(protocol_tbl.get("steps", 200))
    if steps <= 0:
        raise ConfigError("protocol.steps must be positive")

    run_tbl = raw.get("run", {})
    oracle_tbl = raw.get("oracle", {})
    grid_tbl = raw.get("grid", {})
    formats = tuple(run_tbl.get("formats", ["csv", "json"]))
    for fmt in formats:
        if fmt not in ("csv", "json", "jsonl"):
            raise ConfigError(f"unknown output format {fmt!r}")

    sweep = raw.get("sweep")
    if sweep is not None:
        sweep = dict(sweep)
        if "parameter" not in sweep:
            raise ConfigError("sweep.parameter is required")
        has_values = "values" in sweep
        has_range = any(k in sweep for k in ("start", "stop", "count"))
        if has_values == has_range:
            raise ConfigError("give sweep.values or sweep.start/stop/count, "
                              "not both")
        if has_values:
            if not sweep["values"]:
                raise ConfigError("sweep.values must not be empty")
            sweep["values"] = [float(v) for v in sweep["values"]]
        else:
            for k in ("start", "stop", "count"):
                if k not in sweep:
                    raise ConfigError(f"sweep.{k} is required for a range "
                                      "sweep")
            if sweep["count"] < 1:
                raise ConfigError("sweep.count must be >= 1")
            spacing = sweep.get("spacing", "linear")
            if spacing == "linear":
                vals = np.linspace(sweep["start"], sweep["stop"],
                                   sweep["count"])
            elif spacing == "log":
                if sweep["start"] <= 0 or sweep["stop"] <= 0:
                    raise ConfigError("log spacing needs positive bounds")
                vals = np.geomspace(sweep["start"], sweep["stop"],
                                    sweep["count"])
            else:
                raise ConfigError('sweep.spacing must be "linear" or "log"')
            sweep["values"] = [float(v) for v in vals]

    return ResolvedConfig(
        protocol=name,
        gamma=gamma, nbar=nbar, lam=lam, detuning=detuning,
        tau0=tau0, tau1=tau1, tau1_spec=tau1_spec,
        dt=dt, steps=steps,
        feedback=bool(protocol_tbl.get("feedback", True)),
        angle=float(protocol_tbl.get("angle", math.pi)),
        axis=protocol_tbl.get("axis", "x"),
        on_outcome=float(protocol_tbl.get("on_outcome", 1.0)),
        seed=int(oracle_tbl.get("seed", run_tbl.get("seed", 0))),
        trajectories=int(oracle_tbl.get("trajectories", 20000)),
        grid_step=(None if "step" not in grid_tbl
                   else float(grid_tbl["step"]) * time_scale),
        grid_eps_tail=float(grid_tbl.get("eps_tail", 1e-8)),
        grid_tau_max=(None if "tau_max" not in grid_tbl
                      else float(grid_tbl["tau_max"]) * time_scale),
        lab_units=lab_units, time_unit=time_unit,
        formats=formats,
        label=run_tbl.get("label", ""),
        output=run_tbl.get("output", ""),
        raw=raw, sweep=sweep)


def override(raw, seed=None, trajectories=None):
    """Apply CLI overrides onto the raw dictionary (rehashing included)."""
    out = json.loads(json.dumps(raw))
    if seed is not None:
        out.setdefault("run", {})["seed"] = int(seed)
        if "oracle" in out and "seed" in out["oracle"]:
            out["oracle"]["seed"] = int(seed)
    if trajectories is not None:
        out.setdefault("oracle", {})["trajectories"] = int(trajectories)
    return out
