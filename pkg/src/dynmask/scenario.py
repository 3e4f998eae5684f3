"""Scenario configuration, end-to-end experiment runs and parameter sweeps.

Configs are TOML files with one table per concern::

    [scenario]        name, seed, out_dir
    [systems]         plant_num, plant_den, cipher_num, cipher_den | zero_shift,
                      noise_num, noise_den, noise_variance, reference_variance
    [controller]      builder ("pole-placement" | "explicit"), pole_radius,
                      feedback_num, feedback_den, reference_num, reference_den
    [masking_loop]    placement, threshold, calibrate, calibrate_quantile,
                      calibrate_runs, n_attack
    [adversary]       n_identify, nb, nf, estimator, noise_model, zero_policy,
                      amplitude, attack_start
    [privacy_metrics] delta

Every key is optional except the plant and ``scenario.seed``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adversary import (
    AttackExperiment,
    EstimationResult,
    ModelStructure,
    collect_disclosure,
    identify,
    run_attack_experiment,
)
from .design import feedback_controller, pole_placement_controller, shift_zeros
from .loop import LoopSystems, calibrate_threshold, detect
from .lti import TransferFunction, is_stable, tf_to_ss
from .privacy import PrivacyVerdict, zero_extractor

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "ExperimentReport",
    "load_config",
    "config_from_dict",
    "run_scenario",
    "run_identification",
    "sweep",
    "SWEEPABLE",
]

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid scenario configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n  " + "\n  ".join(self.errors))


_NUMS = "numbers"
# field -> (section, kind)
_FIELDS = {
    "name": ("scenario", str),
    "seed": ("scenario", int),
    "out_dir": ("scenario", str),
    "plant_num": ("systems", _NUMS),
    "plant_den": ("systems", _NUMS),
    "cipher_num": ("systems", _NUMS),
    "cipher_den": ("systems", _NUMS),
    "zero_shift": ("systems", float),
    "noise_num": ("systems", _NUMS),
    "noise_den": ("systems", _NUMS),
    "noise_variance": ("systems", float),
    "reference_variance": ("systems", float),
    "builder": ("controller", str),
    "pole_radius": ("controller", float),
    "feedback_num": ("controller", _NUMS),
    "feedback_den": ("controller", _NUMS),
    "reference_num": ("controller", _NUMS),
    "reference_den": ("controller", _NUMS),
    "placement": ("masking_loop", str),
    "threshold": ("masking_loop", float),
    "calibrate": ("masking_loop", bool),
    "calibrate_quantile": ("masking_loop", float),
    "calibrate_runs": ("masking_loop", int),
    "n_attack": ("masking_loop", int),
    "n_identify": ("adversary", int),
    "nb": ("adversary", int),
    "nf": ("adversary", int),
    "estimator": ("adversary", str),
    "noise_model": ("adversary", str),
    "zero_policy": ("adversary", str),
    "amplitude": ("adversary", float),
    "attack_start": ("adversary", int),
    "delta": ("privacy_metrics", float),
}
SECTIONS = ("scenario", "systems", "controller", "masking_loop", "adversary", "privacy_metrics")
SWEEPABLE = {"zero_shift": "zero_shift", "delta_shift": "zero_shift", "n_identify": "n_identify",
             "noise_variance": "noise_variance", "amplitude": "amplitude", "threshold": "threshold"}


@dataclass(frozen=True)
class ScenarioConfig:
    plant_num: tuple
    plant_den: tuple
    seed: int
    name: str = "scenario"
    out_dir: str = "out"
    cipher_num: Optional[tuple] = None
    cipher_den: Optional[tuple] = None
    zero_shift: Optional[float] = None
    noise_num: tuple = (1.0,)
    noise_den: tuple = (1.0,)
    noise_variance: float = 0.0
    reference_variance: float = 1.0
    builder: str = "pole-placement"
    pole_radius: float = 0.6
    feedback_num: Optional[tuple] = None
    feedback_den: Optional[tuple] = None
    reference_num: Optional[tuple] = None
    reference_den: Optional[tuple] = None
    placement: str = "d1"
    threshold: float = 0.5
    calibrate: bool = False
    calibrate_quantile: float = 0.999
    calibrate_runs: int = 200
    n_attack: int = 100
    n_identify: int = 2000
    nb: Optional[int] = None
    nf: Optional[int] = None
    estimator: str = "auto"
    noise_model: str = "none"
    zero_policy: str = "max"
    amplitude: float = 1e-3
    attack_start: int = 0
    delta: float = 0.01

    # derived objects ---------------------------------------------------
    @property
    def plant(self) -> TransferFunction:
        return TransferFunction(self.plant_num, self.plant_den)

    @property
    def cipher(self) -> TransferFunction:
        if self.zero_shift is not None:
            return shift_zeros(self.plant, self.zero_shift)
        if self.cipher_num is not None:
            return TransferFunction(self.cipher_num, self.cipher_den or self.plant_den)
        return self.plant

    @property
    def noise_filter(self) -> TransferFunction:
        return TransferFunction(self.noise_num, self.noise_den)

    def controller(self):
        if self.builder == "explicit":
            return feedback_controller(TransferFunction(self.feedback_num, self.feedback_den),
                                       TransferFunction(self.reference_num, self.reference_den))
        return pole_placement_controller(self.plant, self.pole_radius)

    def systems(self) -> LoopSystems:
        return LoopSystems(tf_to_ss(self.plant), tf_to_ss(self.cipher), self.controller(),
                           tf_to_ss(self.noise_filter))

    def structure(self) -> ModelStructure:
        est = self.estimator
        if est == "auto":
            est = "arx" if self.noise_variance == 0 else "pem"
        nb = self.nb if self.nb is not None else len(self.plant.num) - 1
        nf = self.nf if self.nf is not None else self.plant.order
        return ModelStructure(nb, nf, noise_model=self.noise_model, estimator=est)

    def to_dict(self) -> dict:
        """Every resolved setting, grouped by section (the config echo)."""
        out = {s: {} for s in SECTIONS}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[_FIELDS[f.name][0]][f.name] = list(val) if isinstance(val, tuple) else val
        return out

    def replace(self, **changes) -> "ScenarioConfig":
        return config_from_dict(_merge(self.to_dict(), changes))


def _merge(nested, flat_changes):
    nested = {s: dict(v) for s, v in nested.items()}
    for key, val in flat_changes.items():
        nested[_FIELDS[key][0]][key] = val
    return nested


def _coerce(key, kind, val, errors):
    if kind is _NUMS:
        if val is None:
            return None
        if (not isinstance(val, (list, tuple)) or not val
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)):
            errors.append(f"{key}: expected a non-empty list of numbers")
            return None
        return tuple(float(x) for x in val)
    if val is None:
        return None
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            errors.append(f"{key}: expected a number, got {val!r}")
            return None
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            errors.append(f"{key}: expected an integer, got {val!r}")
            return None
        return val
    if kind is bool:
        if not isinstance(val, bool):
            errors.append(f"{key}: expected true/false, got {val!r}")
            return None
        return val
    if not isinstance(val, str):
        errors.append(f"{key}: expected a string, got {val!r}")
        return None
    return val


_CHOICES = {
    "builder": ("pole-placement", "explicit"),
    "placement": ("d1", "d2"),
    "estimator": ("auto", "arx", "pem"),
    "noise_model": ("none", "independent"),
    "zero_policy": ("max", "min"),
}


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Validate a nested ``{section: {key: value}}`` mapping."""
    errors = []
    values = {}
    for section, table in raw.items():
        if section not in SECTIONS:
            errors.append(f"unknown section [{section}]")
            continue
        if not isinstance(table, dict):
            errors.append(f"[{section}] must be a table")
            continue
        for key, val in table.items():
            if key not in _FIELDS or _FIELDS[key][0] != section:
                errors.append(f"{section}.{key}: unknown key")
                continue
            coerced = _coerce(f"{section}.{key}", _FIELDS[key][1], val, errors)
            if coerced is not None:
                values[key] = coerced
    for key in ("plant_num", "plant_den", "seed"):
        if key not in values and not any(e.startswith(f"{_FIELDS[key][0]}.{key}") for e in errors):
            errors.append(f"{_FIELDS[key][0]}.{key}: required")
    for key, choices in _CHOICES.items():
        if key in values and values[key] not in choices:
            errors.append(f"{_FIELDS[key][0]}.{key}: must be one of {list(choices)}")
    if "zero_shift" in values and ("cipher_num" in values or "cipher_den" in values):
        errors.append("systems.zero_shift and systems.cipher_num/cipher_den are mutually exclusive")
    if values.get("builder") == "explicit":
        for key in ("feedback_num", "feedback_den", "reference_num", "reference_den"):
            if key not in values:
                errors.append(f"controller.{key}: required when builder = 'explicit'")
    for key in ("noise_variance", "amplitude", "threshold"):
        if key in values and values[key] < 0:
            errors.append(f"{_FIELDS[key][0]}.{key}: must be non-negative")
    for key in ("n_identify", "n_attack", "calibrate_runs"):
        if key in values and values[key] < 1:
            errors.append(f"{_FIELDS[key][0]}.{key}: must be positive")
    if errors:
        raise ConfigError(errors)
    cfg = ScenarioConfig(**values)
    _check_systems(cfg)
    return cfg


def _check_systems(cfg: ScenarioConfig):
    errors = []
    for label, build in (("plant", lambda: cfg.plant), ("cipher", lambda: cfg.cipher),
                         ("noise filter", lambda: cfg.noise_filter)):
        try:
            build()
        except ValueError as exc:
            errors.append(f"{label}: {exc}")
    if errors:
        raise ConfigError(errors)
    if not is_stable(cfg.cipher):
        errors.append("cipher plant S is unstable")
    if not is_stable(cfg.noise_filter):
        errors.append("noise filter is unstable")
    if not errors:
        try:
            cfg.systems()
        except ValueError as exc:
            errors.append(f"loop: {exc}")
    if errors:
        raise ConfigError(errors)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    scenario: str
    config: ScenarioConfig
    identification: EstimationResult
    identified_zero: complex
    plant_zero: complex
    cipher_zero: complex
    attack_zero: complex
    threshold: float
    detectors: dict
    benign_energy: float
    attacked_energy: float
    energy_divergent: bool
    privacy: PrivacyVerdict
    files: tuple = ()

    @property
    def zero_bias_vs_plant(self) -> complex:
        return self.identified_zero - self.plant_zero

    @property
    def zero_bias_vs_cipher(self) -> complex:
        return self.identified_zero - self.cipher_zero

    @property
    def alarm(self) -> bool:
        return self.detectors[self.config.placement].alarm

    def summary(self) -> dict:
        det = self.detectors
        return {
            "scenario": self.scenario,
            "seed": self.config.seed,
            "identified_zero": _num(self.identified_zero.real),
            "identified_zero_imag": _num(self.identified_zero.imag),
            "plant_zero": _num(self.plant_zero.real),
            "cipher_zero": _num(self.cipher_zero.real),
            "zero_bias_vs_plant": _num(abs(self.zero_bias_vs_plant)),
            "zero_bias_vs_cipher": _num(abs(self.zero_bias_vs_cipher)),
            "attack_zero": _num(self.attack_zero.real),
            "attack_zero_imag": _num(self.attack_zero.imag),
            "threshold": _num(self.threshold),
            "placement": self.config.placement,
            "alarm_d1": det["d1"].alarm,
            "first_alarm_d1": det["d1"].first_alarm_step,
            "energy_d1": _num(det["d1"].final_energy),
            "alarm_d2": det["d2"].alarm,
            "first_alarm_d2": det["d2"].first_alarm_step,
            "energy_d2": _num(det["d2"].final_energy),
            "benign_energy": _num(self.benign_energy),
            "attacked_energy": _num(self.attacked_energy),
            "energy_divergent": self.energy_divergent,
            "privacy_mse": _num(self.privacy.mse),
            "privacy_delta": _num(self.privacy.delta),
            "private": self.privacy.private,
            "identification_converged": self.identification.converged,
        }


def _num(x):
    return format(float(x), ".17g")


def energy_divergent(z: np.ndarray, windows: int = 4) -> bool:
    """True when the performance energy at least doubles between the last two windows."""
    per_step = np.sum(np.asarray(z) ** 2, axis=1)
    chunks = np.array_split(per_step, windows)
    prev, last = chunks[-2].sum(), chunks[-1].sum()
    return bool(last > 0 and last >= 2.0 * prev)


def _closest(values, target):
    values = np.asarray(values, dtype=complex)
    return complex(values[np.argmin(np.abs(values - target))])


def _write_summary(path, summary: dict):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        for k, v in summary.items():
            writer.writerow([k, "" if v is None else v])


def run_identification(config: ScenarioConfig, out_dir=None):
    """Benign run plus identification only; returns ``(EstimationResult, files)``."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, trace = collect_disclosure(config.systems(), config.n_identify,
                                     reference_variance=config.reference_variance,
                                     noise_variance=config.noise_variance, seed=config.seed)
    result = identify(data, config.structure())
    files = [out / "trace_identification.csv", out / "estimation.txt"]
    trace.to_csv(files[0])
    files[1].write_text(result.to_text())
    return result, tuple(str(f) for f in files)


def run_scenario(config: ScenarioConfig, out_dir=None) -> ExperimentReport:
    """Benign run, eavesdrop, identify, synthesize, attacked run, detect, metrics.

    Writes traces, the estimation record, the resolved config and a
    summary into ``out_dir`` (default ``config.out_dir``).  Output files
    depend only on ``config`` (including its seed).
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    systems = config.systems()
    threshold = config.threshold
    if config.calibrate:
        threshold = calibrate_threshold(systems, config.n_attack, config.noise_variance,
                                        config.calibrate_quantile, config.calibrate_runs,
                                        config.placement, config.seed)
    exp: AttackExperiment = run_attack_experiment(
        systems, config.n_identify, config.n_attack, structure=config.structure(),
        reference_variance=config.reference_variance, noise_variance=config.noise_variance,
        threshold=threshold, placement=config.placement, zero_policy=config.zero_policy,
        amplitude=config.amplitude, k0=config.attack_start, seed=config.seed)
    est = exp.identification
    plant_zero = complex(max(config.plant.zeros(), key=abs))
    cipher_zero = _closest(config.cipher.zeros(), plant_zero + (config.zero_shift or 0.0))
    extract = zero_extractor(plant_zero)
    identified = extract(est.model)
    mse = abs(identified - plant_zero) ** 2
    verdict = PrivacyVerdict("plant zero", plant_zero, np.array([identified]), mse, config.delta)
    detectors = {pl: detect(exp.attack_trace, pl, threshold) for pl in ("d1", "d2")}

    files = {
        "config": out / "config.json",
        "identification": out / "trace_identification.csv",
        "attack": out / "trace_attack.csv",
        "estimation": out / "estimation.txt",
        "summary": out / "summary.csv",
    }
    files["config"].write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    exp.benign_trace.to_csv(files["identification"])
    exp.attack_trace.to_csv(files["attack"])
    files["estimation"].write_text(est.to_text())
    report = ExperimentReport(
        scenario=config.name, config=config, identification=est, identified_zero=identified,
        plant_zero=plant_zero, cipher_zero=cipher_zero, attack_zero=complex(exp.plan.beta),
        threshold=threshold, detectors=detectors, benign_energy=exp.benign_energy,
        attacked_energy=exp.attacked_energy,
        energy_divergent=energy_divergent(exp.attack_trace.z), privacy=verdict,
        files=tuple(str(f) for f in files.values()))
    _write_summary(files["summary"], report.summary())
    return report


_SWEEP_COLUMNS = ["param", "value", "runs", "failures", "mean_zero", "bias_vs_plant",
                  "bias_vs_cipher", "variance", "median_abs_err_plant", "median_abs_err_cipher",
                  "alarm_rate", "median_first_alarm", "divergent_rate", "mean_attacked_energy"]


def sweep(config: ScenarioConfig, param: str, values: Sequence, replicates: int = 1,
          out_dir=None) -> list:
    """Run the scenario for each value of ``param`` (``replicates`` seeds each).

    Replicate ``j`` uses seed ``config.seed + j`` for every value, so values
    are compared on common random numbers.  Failed runs are logged and
    counted in ``sweep_<param>.csv``; the sweep continues.
    """
    if param not in SWEEPABLE:
        raise ConfigError([f"parameter {param!r} is not sweepable; choose from {sorted(SWEEPABLE)}"])
    field_name = SWEEPABLE[param]
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    rows = []
    for value in values:
        value = int(value) if _FIELDS[field_name][1] is int else float(value)
        group = []
        failures = 0
        for j in range(replicates):
            run_dir = out / f"{param}={value}" / f"seed{config.seed + j}"
            try:
                cfg = config.replace(**{field_name: value, "seed": config.seed + j})
                group.append(run_scenario(cfg, run_dir))
            except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
                failures += 1
                log.warning("sweep %s=%s seed %d failed: %s", param, value, config.seed + j, exc)
        reports.extend(group)
        rows.append(_sweep_row(param, value, group, failures))
    with open(out / f"sweep_{param}.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_SWEEP_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in _SWEEP_COLUMNS])
    return reports


def _sweep_row(param, value, group, failures):
    row = {"param": param, "value": value, "runs": len(group), "failures": failures}
    if not group:
        return {**row, **{c: "" for c in _SWEEP_COLUMNS[4:]}}
    z = np.array([r.identified_zero for r in group])
    zg, zs = group[0].plant_zero, group[0].cipher_zero
    first = [r.detectors[r.config.placement].first_alarm_step for r in group]
    first = [f for f in first if f is not None]
    row.update({
        "mean_zero": _num(np.mean(z).real),
        "bias_vs_plant": _num((np.mean(z) - zg).real),
        "bias_vs_cipher": _num((np.mean(z) - zs).real),
        "variance": _num(np.mean(np.abs(z - np.mean(z)) ** 2)),
        "median_abs_err_plant": _num(np.median(np.abs(z - zg))),
        "median_abs_err_cipher": _num(np.median(np.abs(z - zs))),
        "alarm_rate": _num(np.mean([r.alarm for r in group])),
        "median_first_alarm": _num(np.median(first)) if first else "",
        "divergent_rate": _num(np.mean([r.energy_divergent for r in group])),
        "mean_attacked_energy": _num(np.mean([r.attacked_energy for r in group])),
    })
    return row
