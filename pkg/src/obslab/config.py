"""Run configuration: JSON schema, validation, and default resolution.

Top-level keys: ``scenario`` (built-in id or custom profiles + rig),
``engine`` (rank-analysis parameters), ``gramian`` (trajectory length and
step shared by the trajectory-level instruments), ``ekf`` (noise levels and
initial uncertainties), ``seed`` and ``out_dir``.  Every report embeds the
fully resolved configuration so runs are reproducible from their outputs.
"""

from __future__ import annotations

import copy
import json

import jsonschema
import numpy as np

from . import model
from .ekf import EKFConfig
from .scenarios import RotationProfile, ScenarioSpec, pin_origin

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "id": {"enum": ["S1", "S2", "S3", "S4"]},
                "custom": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["profiles"],
                    "properties": {
                        "profiles": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["axis", "rate", "duration"],
                                "properties": {
                                    "axis": _VEC3,
                                    "rate": {"type": "number"},
                                    "duration": {"type": "number", "exclusiveMinimum": 0},
                                },
                            },
                        },
                        "rig": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "p_IC": _VEC3,
                                "extrinsic_axis": _VEC3,
                                "extrinsic_angle": {"type": "number"},
                            },
                        },
                    },
                },
            },
            "oneOf": [{"required": ["id"]}, {"required": ["custom"]}],
        },
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["full", "excited"]},
                "max_order": {"type": "integer", "minimum": 0, "maximum": 6},
                "rank_tol": {"type": "number", "exclusiveMinimum": 0},
                "row_normalize": {"type": "boolean"},
            },
        },
        "gramian": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "duration": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "ekf": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "meas_noise_std": {"type": "number", "exclusiveMinimum": 0},
                "gyro_noise": {"type": "number", "exclusiveMinimum": 0},
                "accel_noise": {"type": "number", "exclusiveMinimum": 0},
                "gyro_bias_rw": {"type": "number", "exclusiveMinimum": 0},
                "accel_bias_rw": {"type": "number", "exclusiveMinimum": 0},
                "init_att_std": {"type": "number", "exclusiveMinimum": 0},
                "init_bg_std": {"type": "number", "exclusiveMinimum": 0},
                "init_v_std": {"type": "number", "exclusiveMinimum": 0},
                "init_ba_std": {"type": "number", "exclusiveMinimum": 0},
                "init_p_std": {"type": "number", "exclusiveMinimum": 0},
                "init_extrot_std": {"type": "number", "exclusiveMinimum": 0},
                "init_pic_std": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
    },
}

DEFAULT_CONFIG = {
    "scenario": {"id": "S2"},
    "engine": {"mode": "excited", "max_order": 4, "rank_tol": 1e-8,
               "row_normalize": True},
    "gramian": {"enabled": True, "duration": 10.0, "dt": 0.005},
    "ekf": {"enabled": True, "meas_noise_std": 1e-3, "gyro_noise": 1e-4,
            "accel_noise": 1e-3, "gyro_bias_rw": 1e-6, "accel_bias_rw": 1e-5,
            "init_att_std": 0.05, "init_bg_std": 0.01, "init_v_std": 0.1,
            "init_ba_std": 0.01, "init_p_std": 0.1, "init_extrot_std": 0.1,
            "init_pic_std": 0.3},
    "seed": 0,
    "out_dir": "obslab_out",
}


class ConfigError(ValueError):
    """Configuration file or override rejected before any computation."""


def validate_config(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.message}") from exc


def resolve_config(raw: dict | None = None) -> dict:
    """Validate and expand a (possibly partial) configuration with defaults."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a JSON object")
    validate_config(raw)
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for section in ("engine", "gramian", "ekf"):
        cfg[section].update(raw.get(section, {}))
    if "scenario" in raw:
        cfg["scenario"] = copy.deepcopy(raw["scenario"])
    if "seed" in raw:
        cfg["seed"] = raw["seed"]
    if "out_dir" in raw:
        cfg["out_dir"] = raw["out_dir"]
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return resolve_config(raw)


def build_rig(rig_cfg: dict) -> model.CalibState:
    rig = model.default_rig()
    p_ic = np.asarray(rig_cfg.get("p_IC", rig.p_ic), dtype=float)
    axis = np.asarray(rig_cfg.get("extrinsic_axis", model.DEFAULT_EXTRINSIC_AXIS), float)
    angle = float(rig_cfg.get("extrinsic_angle", model.DEFAULT_EXTRINSIC_ANGLE))
    from . import so3
    return model.CalibState(q_gi=rig.q_gi, b_g=rig.b_g, v=rig.v, b_a=rig.b_a,
                            p=rig.p, q_ic=so3.axis_angle_to_quat(axis, angle),
                            p_ic=p_ic)


def build_scenario(cfg: dict, params: model.ModelParams | None = None) -> ScenarioSpec:
    """Scenario object from a resolved configuration."""
    from .scenarios import make_scenario

    params = params or model.default_params()
    sc = cfg["scenario"]
    dt = cfg["gramian"]["dt"]
    if "id" in sc:
        spec = make_scenario(sc["id"], params=params, dt=dt)
        from .scenarios import scenario_with_duration
        return scenario_with_duration(spec, cfg["gramian"]["duration"])
    custom = sc["custom"]
    rig = build_rig(custom.get("rig", {}))
    try:
        profiles = tuple(RotationProfile(np.asarray(p["axis"], float),
                                         float(p["rate"]), float(p["duration"]))
                         for p in custom["profiles"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ScenarioSpec(scenario_id="custom", profiles=profiles,
                        x0=pin_origin(rig), params=params, dt=dt)


def build_ekf_config(cfg: dict) -> EKFConfig:
    e = cfg["ekf"]
    try:
        return EKFConfig(
            meas_noise_std=e["meas_noise_std"], gyro_noise=e["gyro_noise"],
            accel_noise=e["accel_noise"], gyro_bias_rw=e["gyro_bias_rw"],
            accel_bias_rw=e["accel_bias_rw"], init_att_std=e["init_att_std"],
            init_bg_std=e["init_bg_std"], init_v_std=e["init_v_std"],
            init_ba_std=e["init_ba_std"], init_p_std=e["init_p_std"],
            init_extrot_std=e["init_extrot_std"], init_pic_std=e["init_pic_std"],
            seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
