"""Online application of the trained networks (value-based path selection,
policy control), episode metrics, and the rule-based baseline controller.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import encoding, nn, vehicle, world
from .checkpoint import CheckpointBundle
from .encoding import Observation
from .kernels import wrap_angle


@dataclass
class EpisodeMetrics:
    completed: bool
    collided: bool
    reason: str                      # completed | collision | offroad | timeout
    time_to_pass: float | None
    comfort_index: float
    red_light_violations: int
    mean_latency_ms: float
    max_latency_ms: float
    steps: int
    seed: int


def comfort_index(a_lon, a_lat) -> float:
    """Root mean square of the combined planar acceleration."""
    a_lon = np.asarray(a_lon, dtype=np.float64)
    a_lat = np.asarray(a_lat, dtype=np.float64)
    if a_lon.size == 0:
        raise ValueError("empty acceleration trace")
    return float(np.sqrt(np.mean(a_lon ** 2 + a_lat ** 2)))


def select_path(obs: Observation, candidates, value_net: nn.MlpParams,
                encoder: nn.MlpParams | None, vehicle_cfg: vehicle.VehicleConfig,
                fp_mode: bool = False):
    """Pick the candidate whose value (predicted tracking cost) is lowest.

    Ties resolve to the lowest index.  Returns (index, values).
    """
    ego = vehicle.EgoState.from_array(obs.x_else[:6])
    phase = int(obs.x_else[encoding.XE_PHASE])
    if fp_mode:
        head = None
    elif len(obs.participants()):
        h, _ = nn.forward(encoder, obs.participants())
        head = h.sum(axis=0)
    else:
        head = np.zeros(encoder.n_out)
    states = []
    for path in candidates:
        xe = world.build_x_else(ego, phase, path, vehicle_cfg)
        if fp_mode:
            trial = Observation(obs.vehicles, obs.bicycles, obs.pedestrians, xe,
                                obs.cycle_time, obs.u_prev, obs.task)
            states.append(encoding.encode_fp(trial))
        else:
            states.append(np.concatenate([head, xe]))
    v, _ = nn.forward(value_net, np.stack(states, axis=0))
    values = v[:, 0]
    return int(np.argmin(values)), values


def exit_arc(path, wcfg: world.WorldConfig) -> float:
    """Arc position at which the path has cleared the junction and its
    far crosswalk (episode completion threshold)."""
    thr = wcfg.half + wcfg.crosswalk_width + 2.0
    inside = (np.abs(path.xs) <= wcfg.half) & (np.abs(path.ys) <= wcfg.half)
    enter = int(np.argmax(inside)) if inside.any() else 0
    outside_after = (np.abs(path.xs) > thr) | (np.abs(path.ys) > thr)
    outside_after[:enter] = False
    if not outside_after.any():
        return path.length
    return float(path.cum[int(np.argmax(outside_after))])


class PolicyDriver:
    """Value-selected path + policy control from a trained bundle."""

    def __init__(self, bundle: CheckpointBundle, vehicle_cfg: vehicle.VehicleConfig):
        self.policy = bundle.policy
        self.value = bundle.value
        self.encoder = bundle.encoder
        self.fp_mode = bundle.representation == "fp"
        self.vcfg = vehicle_cfg
        self.current_idx = 1

    def reset(self):
        self.current_idx = 1

    def act(self, w: world.World):
        t0 = time.perf_counter()
        obs = w.perceive(w.candidates[self.current_idx])
        idx, _ = select_path(obs, w.candidates, self.value, self.encoder,
                             self.vcfg, self.fp_mode)
        if idx != self.current_idx:
            ego = vehicle.EgoState.from_array(obs.x_else[:6])
            phase = int(obs.x_else[encoding.XE_PHASE])
            obs.x_else = world.build_x_else(ego, phase, w.candidates[idx], self.vcfg)
            self.current_idx = idx
        if self.fp_mode:
            s = encoding.encode_fp(obs)
        else:
            s = encoding.encode_dp(obs, self.encoder)
        raw, _ = nn.forward(self.policy, s)
        u, _ = vehicle.squash_action(raw, self.vcfg)
        latency_ms = (time.perf_counter() - t0) * 1e3
        return obs, u, idx, latency_ms


def rule_based_controller(obs: Observation, candidates, wcfg: world.WorldConfig,
                          vcfg: vehicle.VehicleConfig) -> np.ndarray:
    """Hand-written baseline: pure-pursuit steering on the middle candidate,
    safe-speed following, first-come-first-go conflict yielding, hard yield
    to pedestrians ahead, and a full stop at red lights."""
    path = candidates[1]
    ego = vehicle.EgoState.from_array(obs.x_else[:6])
    phase = int(obs.x_else[encoding.XE_PHASE])
    s_star = float(path.arc_of(ego.px, ego.py)[0])

    # steering: pure pursuit toward a speed-scaled look-ahead point
    look = float(np.clip(0.8 * ego.vx + 2.0, 3.0, 12.0))
    tx, ty = path.point_at(s_star + look)
    alpha = float(wrap_angle(math.atan2(ty - ego.py, tx - ego.px) - ego.phi))
    wheelbase = vcfg.axle_front + vcfg.axle_rear
    delta = float(np.clip(math.atan2(2.0 * wheelbase * math.sin(alpha), look),
                          vcfg.steer_lo, vcfg.steer_hi))

    v_des = float(path.vref_at(s_star))
    decel = 2.5
    ped_block = False
    for rows in (obs.vehicles, obs.bicycles, obs.pedestrians):
        for row in rows:
            ax = ego.px + row[encoding.F_RELX]
            ay = ego.py + row[encoding.F_RELY]
            s_a = float(path.arc_of(ax, ay)[0])
            px_, py_ = path.point_at(s_a)
            lat = math.hypot(ax - px_, ay - py_)
            ahead = s_a - s_star
            kind = int(row[encoding.F_KIND])
            if kind == 2:
                # anticipate walkers heading for the corridor
                fx = ax + 3.0 * row[encoding.F_SPEED] * math.cos(row[encoding.F_HEADING])
                fy = ay + 3.0 * row[encoding.F_SPEED] * math.sin(row[encoding.F_HEADING])
                s_f = float(path.arc_of(fx, fy)[0])
                px_f, py_f = path.point_at(s_f)
                lat_f = math.hypot(fx - float(px_f), fy - float(py_f))
                if min(lat, lat_f) < 4.0 and -2.0 < ahead < 30.0:
                    ped_block = True
                continue
            if lat < 2.2 and ahead > 0.0:
                # leader in the corridor
                h_path = float(path.heading_at(s_a))
                v_lead = max(0.0, row[encoding.F_SPEED]
                             * math.cos(row[encoding.F_HEADING] - h_path))
                gap = ahead - 0.5 * (vcfg.length + row[encoding.F_LENGTH]) - 1.5
                v_des = min(v_des, _safe_speed(gap, v_lead, decel))
            elif row[encoding.F_SPEED] > 0.3:
                # crossing stream: yield if the other arrives first
                hit = _ray_path_conflict(ax, ay, row[encoding.F_HEADING],
                                         row[encoding.F_SPEED], path, s_star)
                if hit is not None:
                    t_other, s_conf = hit
                    t_self = (s_conf - s_star) / max(ego.vx, 0.5)
                    if t_other < t_self + 1.0 and abs(t_other - t_self) < 4.0:
                        gap = s_conf - s_star - 0.5 * vcfg.length - 3.0
                        v_des = min(v_des, _safe_speed(gap, 0.0, decel))

    task = obs.task
    lights = world.LightSystem(wcfg.phase_durations)
    if task in ("left", "straight") and not lights.permits(phase, "S", task) \
            and not world.inside_junction(wcfg, ego.px, ego.py):
        sl = world.stop_line_center(wcfg, "S", world.ENTRY_LANE[task])
        s_sl = float(path.arc_of(sl[0], sl[1])[0])
        off_ego = (vcfg.length + vcfg.width) / 2.0
        gap = s_sl - s_star - off_ego - 0.8
        v_des = min(v_des, _safe_speed(gap, 0.0, decel))

    if ped_block:
        accel = vcfg.accel_lo
    else:
        accel = float(np.clip((v_des - ego.vx) / 0.8, vcfg.accel_lo, vcfg.accel_hi))
    return np.array([delta, accel])


def _safe_speed(gap: float, v_lead: float, decel: float, tau: float = 0.8) -> float:
    if gap <= 0.0:
        return 0.0
    return -decel * tau + math.sqrt(decel * decel * tau * tau
                                    + v_lead * v_lead + 2.0 * decel * gap)


def _ray_path_conflict(ax, ay, heading, speed, path, s_star, horizon=45.0):
    """Earliest point of the remaining path that the agent's constant-velocity
    ray passes close to; returns (agent time, path arc) or None."""
    cum = path.cum
    lo = np.searchsorted(cum, s_star)
    hi = np.searchsorted(cum, min(s_star + horizon, cum[-1]))
    if hi <= lo:
        return None
    step = max(1, (hi - lo) // 24)
    idx = np.arange(lo, hi, step)
    dx = path.xs[idx] - ax
    dy = path.ys[idx] - ay
    c, s = math.cos(heading), math.sin(heading)
    along = dx * c + dy * s
    perp = np.abs(-dx * s + dy * c)
    ok = (along > 0.0) & (perp < 1.8)
    if not ok.any():
        return None
    j = int(np.argmax(ok))
    return float(along[j] / max(speed, 0.1)), float(cum[idx[j]])


class RuleDriver:
    """Baseline driver with the fixed middle candidate."""

    def __init__(self, wcfg: world.WorldConfig, vcfg: vehicle.VehicleConfig):
        self.wcfg = wcfg
        self.vcfg = vcfg
        self.current_idx = 1

    def reset(self):
        pass

    def act(self, w: world.World):
        t0 = time.perf_counter()
        obs = w.perceive(w.candidates[1])
        u = rule_based_controller(obs, w.candidates, self.wcfg, self.vcfg)
        return obs, u, 1, (time.perf_counter() - t0) * 1e3


def run_episode(driver, w: world.World, seed: int, traj_rows: list | None = None):
    """Drive one episode to termination; returns EpisodeMetrics."""
    wcfg = w.cfg
    driver.reset()
    lights = w.lights
    sl = w.stop_line
    a_lon, a_lat, lats = [], [], []
    violations = 0
    t_enter = None
    reason = "timeout"
    max_steps = int(round(wcfg.episode_max_s / wcfg.dt))
    prev_arc = None
    for step_i in range(max_steps):
        obs, u, idx, latency = driver.act(w)
        path = w.candidates[idx]
        s_sl = float(path.arc_of(sl[0], sl[1])[0])
        arc = float(path.arc_of(w.ego.px, w.ego.py)[0])
        phase = lights.phase_at(w.cycle_t)
        if traj_rows is not None:
            traj_rows.append(_traj_row(w, u, idx, phase))
        crossing = prev_arc is not None and prev_arc < s_sl <= arc
        if t_enter is None and arc >= s_sl:
            t_enter = w.t
        if crossing and not lights.permits(phase, "S", w.task):
            violations += 1
        prev_arc = arc
        w.step(u)
        a_lon.append(u[1])
        a_lat.append(w.ego.vx * w.ego.omega)
        lats.append(latency)
        if w.ego_collision():
            reason = "collision"
            break
        if w.ego_off_road():
            reason = "offroad"
            break
        if float(path.arc_of(w.ego.px, w.ego.py)[0]) >= exit_arc(path, wcfg):
            reason = "completed"
            break
    completed = reason == "completed"
    ttp = (w.t - t_enter) if (completed and t_enter is not None) else None
    return EpisodeMetrics(
        completed=completed,
        collided=reason in ("collision", "offroad"),
        reason=reason,
        time_to_pass=ttp,
        comfort_index=comfort_index(a_lon, a_lat) if a_lon else 0.0,
        red_light_violations=violations,
        mean_latency_ms=float(np.mean(lats)) if lats else 0.0,
        max_latency_ms=float(np.max(lats)) if lats else 0.0,
        steps=len(a_lon),
        seed=seed,
    )


def _traj_row(w: world.World, u, path_idx: int, phase: int):
    ego = w.ego
    agents = ";".join("%d:%.3f:%.3f:%.4f:%.3f" % ((a.kind,) + a.pose() + (a.v,))
                      for a in w.agents)
    return [w.t, ego.px, ego.py, ego.vx, ego.vy, ego.phi, ego.omega,
            u[0], u[1], path_idx, phase, agents]


TRAJ_HEADER = ["t", "px", "py", "vx", "vy", "phi", "omega", "steer", "accel",
               "path_idx", "phase", "agents"]
