"""Run configuration: an annotated INI-style document with strict parsing
(unknown keys rejected, line numbers in diagnostics), environment-variable
overrides, and a deterministic emitter so emit -> parse -> emit round-trips
byte-identically.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from . import objective, training, vehicle, world

ENV_PREFIX = "DRIVELAB_"

# (key, default, comment) per section; defaults are the reference settings
SCHEMA = {
    "vehicle": [
        ("mass", 1500.0, "vehicle mass [kg]"),
        ("yaw_inertia", 2500.0, "yaw moment of inertia [kg m^2]"),
        ("axle_front", 1.4, "CoG to front axle [m]"),
        ("axle_rear", 1.6, "CoG to rear axle [m]"),
        ("cornering_front", 88000.0, "front cornering stiffness [N/rad]"),
        ("cornering_rear", 94000.0, "rear cornering stiffness [N/rad]"),
        ("length", 4.8, "ego body length [m]"),
        ("width", 2.0, "ego body width [m]"),
        ("steer_min", -0.4, "front wheel angle lower bound [rad]"),
        ("steer_max", 0.4, "front wheel angle upper bound [rad]"),
        ("accel_min", -3.0, "acceleration lower bound [m/s^2]"),
        ("accel_max", 1.5, "acceleration upper bound [m/s^2]"),
        ("blend_low", 0.1, "below this speed the kinematic model is used [m/s]"),
        ("blend_high", 1.0, "above this speed the dynamic model is used [m/s]"),
        ("dt", 0.1, "control period [s]"),
    ],
    "world": [
        ("lane_width", 3.75, "motor lane width [m]"),
        ("bike_lane_width", 2.0, "bicycle lane width [m]"),
        ("sidewalk_width", 2.0, "sidewalk width [m]"),
        ("n_lanes", 3, "motor lanes per approach"),
        ("crosswalk_width", 3.0, "crosswalk band width [m]"),
        ("stopline_setback", 0.5, "stop line distance behind the crosswalk [m]"),
        ("extent", 120.0, "road length from the junction center [m]"),
        ("path_spacing", 0.5, "reference path sample spacing [m]"),
        ("speed_limit", 8.33, "motor lane target speed [m/s]"),
        ("bike_speed", 4.0, "bicycle cruise speed [m/s]"),
        ("ped_speed", 1.4, "pedestrian walking speed [m/s]"),
        ("lat_accel_max", 2.0, "lateral acceleration budget for target speeds [m/s^2]"),
        ("veh_flow_per_hour", 400.0, "vehicle arrivals per motor lane [1/h]"),
        ("bike_flow_per_hour", 100.0, "bicycle arrivals per bike lane [1/h]"),
        ("ped_flow_per_hour", 400.0, "pedestrian arrivals per crosswalk [1/h]"),
        ("episode_max_s", 180.0, "episode time cap [s]"),
        ("ego_speed_min", 3.0, "ego initial speed lower bound [m/s]"),
        ("ego_speed_max", 8.0, "ego initial speed upper bound [m/s]"),
        ("ego_spawn_near", 25.0, "ego spawn distance behind the stop line, min [m]"),
        ("ego_spawn_far", 55.0, "ego spawn distance behind the stop line, max [m]"),
        ("warm_time", 40.0, "traffic pre-roll before the ego appears [s]"),
        ("min_spawn_gap", 14.0, "entry headway required to insert a vehicle [m]"),
    ],
    "lights": [
        ("phase_durations", (20.0,) * 6, "six phase lengths, must sum to the cycle [s]"),
    ],
    "sensors": [
        ("camera_range", 80.0, "camera range [m]"),
        ("camera_half_fov_deg", 35.0, "camera half field of view [deg]"),
        ("radar_range", 60.0, "radar range [m]"),
        ("radar_half_fov_deg", 45.0, "radar half field of view [deg]"),
        ("lidar_range", 70.0, "lidar range [m], full surround"),
        ("noise_pos", 0.1, "position noise sigma [m]"),
        ("noise_speed", 0.1, "speed noise sigma [m/s]"),
        ("noise_heading", 0.02, "heading noise sigma [rad]"),
        ("noise_enabled", True, "apply observation noise"),
        ("max_vehicles", 10, "vehicle set size cap"),
        ("max_bicycles", 6, "bicycle set size cap"),
        ("max_pedestrians", 6, "pedestrian set size cap"),
    ],
    "objective": [
        ("w_speed_err", 0.05, "weight on squared speed error"),
        ("w_lateral_err", 0.8, "weight on squared lateral error"),
        ("w_heading_err", 30.0, "weight on squared heading error"),
        ("w_yaw_rate", 0.02, "weight on squared yaw rate"),
        ("w_steer", 2.5, "weight on squared steering"),
        ("w_steer_rate", 2.5, "weight on squared steering rate"),
        ("w_accel", 0.05, "weight on squared acceleration"),
        ("w_accel_rate", 0.05, "weight on squared acceleration rate"),
        ("r_ego", 1.75, "ego safety circle radius [m]"),
        ("r_vehicle", 1.75, "vehicle safety circle radius [m]"),
        ("r_bicycle", 2.0, "bicycle safety circle radius [m]"),
        ("r_pedestrian", 2.2, "pedestrian safety circle radius [m]"),
        ("stopline_margin", 0.5, "required clearance to the stop-line center [m]"),
        ("circle_offset_mode", "sum", "circle center offset: sum=(L+W)/2, diff=(L-W)/2"),
    ],
    "train": [
        ("representation", "dp", "state representation: dp (set encoding) or fp (sorted slots)"),
        ("hidden_width", 256, "hidden units per layer"),
        ("hidden_layers", 2, "hidden layers per network"),
        ("d3", 155, "encoder output width"),
        ("horizon", 25, "prediction steps per rollout"),
        ("batch_size", 256, "observations per update"),
        ("iterations", 200000, "optimization iterations"),
        ("lr_policy_start", 3e-4, "policy learning rate at iteration 0"),
        ("lr_policy_end", 1e-5, "policy learning rate at the final iteration"),
        ("lr_value_start", 8e-4, "value learning rate at iteration 0"),
        ("lr_value_end", 1e-5, "value learning rate at the final iteration"),
        ("lr_encoder_start", 8e-4, "encoder learning rate at iteration 0"),
        ("lr_encoder_end", 1e-5, "encoder learning rate at the final iteration"),
        ("adam_beta1", 0.9, "Adam first-moment decay"),
        ("adam_beta2", 0.999, "Adam second-moment decay"),
        ("adam_eps", 1e-8, "Adam denominator epsilon"),
        ("env_steps_per_iter", 2, "environment steps taken per iteration"),
        ("warmup_steps", 512, "buffer prefill before the first update"),
        ("task", "left", "driving task: left, straight or right"),
        ("log_interval", 1, "iterations between metric rows"),
        ("checkpoint_interval", 1000, "iterations between checkpoints"),
        ("actors", 1, "sampler workers"),
        ("learners", 1, "learner workers"),
        ("store_states", False, "stale-state ablation: reuse states frozen at collection"),
    ],
    "buffer": [
        ("capacity", 500000, "replay buffer capacity"),
    ],
    "penalty": [
        ("rho0", 1.0, "initial penalty factor"),
        ("amplifier", 1.1, "penalty growth factor"),
        ("update_interval", 100, "iterations between penalty amplifications"),
        ("rho_max", 1e4, "penalty factor cap"),
    ],
    "eval": [
        ("episodes", 50, "evaluation episodes"),
        ("task", "right", "evaluation task"),
    ],
    "mpc": [
        ("horizon", 25, "oracle horizon"),
        ("rho", 1e4, "oracle penalty factor"),
        ("restarts", 4, "random restarts besides the zero sequence"),
        ("budget", 400, "descent iterations per start"),
        ("grad_tol", 1e-6, "gradient infinity-norm stopping tolerance"),
    ],
}


class ConfigError(ValueError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError("expected a boolean")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError as e:
        raise ConfigError("%s: %s" % (where, e)) from e


@dataclass
class RunConfig:
    values: dict

    def get(self, section: str, key: str):
        return self.values[section][key]

    # -- dataclass views ---------------------------------------------------

    def vehicle_config(self) -> vehicle.VehicleConfig:
        v = self.values["vehicle"]
        return vehicle.VehicleConfig(
            mass=v["mass"], yaw_inertia=v["yaw_inertia"], axle_front=v["axle_front"],
            axle_rear=v["axle_rear"], corner_front=v["cornering_front"],
            corner_rear=v["cornering_rear"], length=v["length"], width=v["width"],
            steer_lo=v["steer_min"], steer_hi=v["steer_max"], accel_lo=v["accel_min"],
            accel_hi=v["accel_max"], blend_lo=v["blend_low"], blend_hi=v["blend_high"],
            dt=v["dt"])

    def world_config(self) -> world.WorldConfig:
        w = self.values["world"]
        s = self.values["sensors"]
        return world.WorldConfig(
            lane_width=w["lane_width"], bike_lane_width=w["bike_lane_width"],
            sidewalk_width=w["sidewalk_width"], n_lanes=w["n_lanes"],
            crosswalk_width=w["crosswalk_width"], stopline_setback=w["stopline_setback"],
            extent=w["extent"], path_spacing=w["path_spacing"],
            speed_limit=w["speed_limit"], bike_speed=w["bike_speed"],
            ped_speed=w["ped_speed"], lat_accel_max=w["lat_accel_max"],
            veh_flow_per_hour=w["veh_flow_per_hour"],
            bike_flow_per_hour=w["bike_flow_per_hour"],
            ped_flow_per_hour=w["ped_flow_per_hour"], episode_max_s=w["episode_max_s"],
            ego_speed_min=w["ego_speed_min"], ego_speed_max=w["ego_speed_max"],
            ego_spawn_near=w["ego_spawn_near"], ego_spawn_far=w["ego_spawn_far"],
            warm_time=w["warm_time"], min_spawn_gap=w["min_spawn_gap"],
            dt=self.values["vehicle"]["dt"],
            phase_durations=self.values["lights"]["phase_durations"],
            camera_range=s["camera_range"], camera_half_fov_deg=s["camera_half_fov_deg"],
            radar_range=s["radar_range"], radar_half_fov_deg=s["radar_half_fov_deg"],
            lidar_range=s["lidar_range"], noise_pos=s["noise_pos"],
            noise_speed=s["noise_speed"], noise_heading=s["noise_heading"],
            noise_enabled=s["noise_enabled"], max_vehicles=s["max_vehicles"],
            max_bicycles=s["max_bicycles"], max_pedestrians=s["max_pedestrians"])

    def objective_config(self) -> objective.ObjectiveConfig:
        o = self.values["objective"]
        return objective.ObjectiveConfig(
            w_dv=o["w_speed_err"], w_dp=o["w_lateral_err"], w_dphi=o["w_heading_err"],
            w_omega=o["w_yaw_rate"], w_steer=o["w_steer"], w_steer_rate=o["w_steer_rate"],
            w_accel=o["w_accel"], w_accel_rate=o["w_accel_rate"], r_ego=o["r_ego"],
            r_vehicle=o["r_vehicle"], r_bicycle=o["r_bicycle"],
            r_pedestrian=o["r_pedestrian"], stopline_margin=o["stopline_margin"],
            circle_offset_mode=o["circle_offset_mode"])

    def train_config(self) -> training.TrainConfig:
        t = self.values["train"]
        p = self.values["penalty"]
        return training.TrainConfig(
            representation=t["representation"], hidden_width=t["hidden_width"],
            hidden_layers=t["hidden_layers"], d3=t["d3"], horizon=t["horizon"],
            batch_size=t["batch_size"], iterations=t["iterations"],
            lr_policy_start=t["lr_policy_start"], lr_policy_end=t["lr_policy_end"],
            lr_value_start=t["lr_value_start"], lr_value_end=t["lr_value_end"],
            lr_encoder_start=t["lr_encoder_start"], lr_encoder_end=t["lr_encoder_end"],
            adam_beta1=t["adam_beta1"], adam_beta2=t["adam_beta2"],
            adam_eps=t["adam_eps"], env_steps_per_iter=t["env_steps_per_iter"],
            warmup_steps=t["warmup_steps"], task=t["task"],
            log_interval=t["log_interval"], checkpoint_interval=t["checkpoint_interval"],
            actors=t["actors"], learners=t["learners"],
            buffer_capacity=self.values["buffer"]["capacity"],
            store_states=t["store_states"],
            penalty=training.PenaltyConfig(
                rho0=p["rho0"], amplifier=p["amplifier"],
                update_interval=p["update_interval"], rho_max=p["rho_max"]))


def default_config() -> RunConfig:
    return RunConfig({sec: {k: v for k, v, _ in items} for sec, items in SCHEMA.items()})


def emit_config(cfg: RunConfig) -> str:
    out = []
    for sec, items in SCHEMA.items():
        out.append("[%s]" % sec)
        for key, _, comment in items:
            out.append("# %s" % comment)
            out.append("%s = %s" % (key, _fmt(cfg.values[sec][key])))
        out.append("")
    return "\n".join(out)


def parse_config_text(text: str) -> RunConfig:
    defaults = {sec: dict((k, v) for k, v, _ in items) for sec, items in SCHEMA.items()}
    values = {sec: dict(d) for sec, d in defaults.items()}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError("line %d: unknown section [%s]" % (lineno, section))
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key = value" % lineno)
        if section is None:
            raise ConfigError("line %d: key outside any section" % lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in defaults[section]:
            raise ConfigError("line %d: unknown key %s.%s" % (lineno, section, key))
        values[section][key] = _parse_value(value, defaults[section][key],
                                            "line %d (%s.%s)" % (lineno, section, key))
    cfg = RunConfig(values)
    _validate(cfg)
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        cfg = default_config()
    else:
        if not os.path.isfile(path):
            raise ConfigError("config file not found: %s" % path)
        with open(path) as f:
            cfg = parse_config_text(f.read())
    _apply_env_overrides(cfg)
    _validate(cfg)
    return cfg


def _apply_env_overrides(cfg: RunConfig):
    defaults = {sec: dict((k, v) for k, v, _ in items) for sec, items in SCHEMA.items()}
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        sec_key = name[len(ENV_PREFIX):]
        sec, _, key = sec_key.partition("__")
        sec = sec.lower()
        key = key.lower()
        if sec not in defaults or key not in defaults[sec]:
            continue
        cfg.values[sec][key] = _parse_value(raw, defaults[sec][key], "env %s" % name)


def _validate(cfg: RunConfig):
    durs = cfg.values["lights"]["phase_durations"]
    if len(durs) != 6:
        raise ConfigError("lights.phase_durations must list six phases")
    rep = cfg.values["train"]["representation"]
    if rep not in ("dp", "fp"):
        raise ConfigError("train.representation must be dp or fp")
    if cfg.values["train"]["task"] not in world.MOVEMENTS:
        raise ConfigError("train.task must be left, straight or right")
    if cfg.values["eval"]["task"] not in world.MOVEMENTS:
        raise ConfigError("eval.task must be left, straight or right")
    mode = cfg.values["objective"]["circle_offset_mode"]
    if mode not in ("sum", "diff"):
        raise ConfigError("objective.circle_offset_mode must be sum or diff")
