"""Signalized four-way intersection with mixed vehicle/bicycle/pedestrian
flow, six-phase lights, a range/FOV/occlusion/noise sensor model and the
candidate-path generator.

Geometry lives in a canonical approach frame (travel along +y, incoming
lanes on the driver's right at x > 0) and is rotated per arm.  Surrounding
vehicles and bicycles follow fixed routes under a safe-speed car-following
rule and never react to the ego; pedestrians walk the crosswalks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import encoding, kernels, vehicle
from .encoding import Observation
from .kernels import wrap_angle
from .paths import ReferencePath, bezier, resample, speed_profile

ARMS = ("S", "W", "N", "E")
MOVEMENTS = ("left", "straight", "right")
ENTRY_LANE = {"left": 0, "straight": 1, "right": 2}

# canonical->world transforms per arm and the heading added to canonical ones
_ARM_ROT = {
    "S": lambda x, y: (x, y),
    "W": lambda x, y: (y, -x),
    "N": lambda x, y: (-x, -y),
    "E": lambda x, y: (-y, x),
}
_ARM_HEADING = {"S": math.pi / 2, "W": 0.0, "N": -math.pi / 2, "E": math.pi}


def arm_to_world(arm, pts):
    x, y = _ARM_ROT[arm](pts[..., 0], pts[..., 1])
    return np.stack([x, y], axis=-1)


@dataclass
class WorldConfig:
    lane_width: float = 3.75
    bike_lane_width: float = 2.0
    sidewalk_width: float = 2.0
    n_lanes: int = 3
    crosswalk_width: float = 3.0
    stopline_setback: float = 0.5
    extent: float = 120.0
    path_spacing: float = 0.5
    speed_limit: float = 8.33
    bike_speed: float = 4.0
    ped_speed: float = 1.4
    lat_accel_max: float = 2.0
    veh_flow_per_hour: float = 400.0
    bike_flow_per_hour: float = 100.0
    ped_flow_per_hour: float = 400.0
    episode_max_s: float = 180.0
    ego_speed_min: float = 3.0
    ego_speed_max: float = 8.0
    ego_spawn_near: float = 25.0
    ego_spawn_far: float = 55.0
    warm_time: float = 40.0
    min_spawn_gap: float = 14.0
    dt: float = 0.1
    phase_durations: tuple = (20.0,) * 6
    # sensors
    camera_range: float = 80.0
    camera_half_fov_deg: float = 35.0
    radar_range: float = 60.0
    radar_half_fov_deg: float = 45.0
    lidar_range: float = 70.0
    noise_pos: float = 0.1
    noise_speed: float = 0.1
    noise_heading: float = 0.02
    noise_enabled: bool = True
    max_vehicles: int = 10
    max_bicycles: int = 6
    max_pedestrians: int = 6

    @property
    def motor_half(self) -> float:
        return self.n_lanes * self.lane_width

    @property
    def half(self) -> float:
        return self.motor_half + self.bike_lane_width + self.sidewalk_width

    @property
    def stop_line_dist(self) -> float:
        return self.half + self.crosswalk_width + self.stopline_setback

    @property
    def caps(self):
        return (self.max_vehicles, self.max_bicycles, self.max_pedestrians)

    def lane_center(self, i: int) -> float:
        return (i + 0.5) * self.lane_width

    @property
    def bike_center(self) -> float:
        return self.motor_half + 0.5 * self.bike_lane_width


# agent body shapes per kind (length, width)
AGENT_SHAPE = {0: (4.8, 2.0), 1: (2.0, 0.48), 2: (0.48, 0.48)}


class LightSystem:
    """Six phases; right turns are always permitted, through and left are
    synchronous per approach pair.  Phases 0-1: N/S movement (protected
    extension), 2: clearance, 3-4: E/W movement, 5: clearance."""

    NS_GO = (0, 1)
    EW_GO = (3, 4)

    def __init__(self, phase_durations=(20.0,) * 6):
        self.durations = tuple(float(d) for d in phase_durations)
        if len(self.durations) != 6:
            raise ValueError("exactly six phases required")
        self.cycle = sum(self.durations)
        self._edges = np.concatenate(([0.0], np.cumsum(self.durations)))

    def phase_at(self, cycle_t: float) -> int:
        t = math.fmod(cycle_t, self.cycle)
        if t < 0:
            t += self.cycle
        return min(int(np.searchsorted(self._edges, t, side="right")) - 1, 5)

    def phase_at_batch(self, cycle_ts: np.ndarray) -> np.ndarray:
        t = np.mod(np.asarray(cycle_ts, dtype=np.float64), self.cycle)
        return np.minimum(np.searchsorted(self._edges, t, side="right") - 1, 5)

    def permits(self, phase: int, arm: str, movement: str) -> bool:
        if movement == "right":
            return True
        go = self.NS_GO if arm in ("S", "N") else self.EW_GO
        return phase in go

    def ped_walk(self, phase: int, arm: str) -> bool:
        # pedestrians cross arm `arm`'s roadway while its through flow is held
        go = self.EW_GO if arm in ("S", "N") else self.NS_GO
        return phase in go


def build_route(cfg: WorldConfig, arm: str, movement: str, exit_lane: int,
                kind: int = 0, entry_lane: int | None = None) -> ReferencePath:
    """Route polyline for one approach/movement in world coordinates."""
    half = cfg.half
    ext = cfg.extent
    sp = cfg.path_spacing
    if kind == 1:  # bicycles ride their own lane straight through
        lc = cfg.bike_center
        raw = np.array([[lc, -ext], [lc, ext]])
        pts = resample(raw, sp)
        limit = cfg.bike_speed
    else:
        lc = cfg.lane_center(ENTRY_LANE[movement] if entry_lane is None else entry_lane)
        # turns begin before the junction edge and merge after it, keeping
        # the needed steering inside the actuator bound
        lead = {"left": 4.0, "straight": 0.0, "right": 9.0}[movement]
        p0 = np.array([lc, -(half + lead)])
        t0 = np.array([0.0, 1.0])
        xl = cfg.lane_center(exit_lane)
        if movement == "left":
            p3 = np.array([-(half + lead), xl])
            t3 = np.array([-1.0, 0.0])
            tail = np.array([-ext, xl])
        elif movement == "right":
            p3 = np.array([half + lead, -xl])
            t3 = np.array([1.0, 0.0])
            tail = np.array([ext, -xl])
        else:
            p3 = np.array([xl, half])
            t3 = np.array([0.0, 1.0])
            tail = np.array([xl, ext])
        d = np.linalg.norm(p3 - p0)
        ctrl = 0.5 * d
        conn = bezier(p0, p0 + ctrl * t0, p3 - ctrl * t3, p3, n=240)
        raw = np.concatenate([np.array([[lc, -ext]]), conn, tail[None, :]], axis=0)
        # round the curvature step where the connector meets the straights,
        # then resample at the final spacing
        fine = resample(raw, sp / 2.0)
        for _ in range(16):
            fine[1:-1] = 0.25 * (fine[:-2] + 2.0 * fine[1:-1] + fine[2:])
        pts = resample(fine, sp)
        limit = cfg.speed_limit
    world_pts = arm_to_world(arm, pts)
    v_ref = speed_profile(world_pts, limit, cfg.lat_accel_max)
    key = "%s:%s:%d:%d" % (arm, movement, exit_lane, kind)
    path = ReferencePath.from_points(world_pts, v_ref, task=movement,
                                     target_lane=exit_lane, key=key)
    return path


def generate_paths(cfg: WorldConfig, task: str, arm: str = "S") -> list:
    """The three candidate reference paths for a task (one per exit lane)."""
    if task not in MOVEMENTS:
        raise ValueError("unknown task %r" % (task,))
    return [build_route(cfg, arm, task, j) for j in range(3)]


def stop_line_center(cfg: WorldConfig, arm: str, lane: int) -> np.ndarray:
    pt = np.array([[cfg.lane_center(lane), -cfg.stop_line_dist]])
    return arm_to_world(arm, pt)[0]


def crosswalk_route(cfg: WorldConfig, arm: str, direction: int) -> ReferencePath:
    y = -(cfg.half + 0.5 * cfg.crosswalk_width)
    x0 = -(cfg.half + 0.5)
    raw = np.array([[x0, y], [-x0, y]], dtype=np.float64)
    if direction < 0:
        raw = raw[::-1]
    pts = resample(arm_to_world(arm, raw), cfg.path_spacing)
    v = np.full(len(pts), cfg.ped_speed)
    return ReferencePath.from_points(pts, v, task="cross", key="ped:%s:%d" % (arm, direction))


def inside_junction(cfg: WorldConfig, x, y) -> bool:
    return abs(x) <= cfg.half and abs(y) <= cfg.half


def off_road(cfg: WorldConfig, x, y) -> bool:
    if abs(x) <= cfg.motor_half or abs(y) <= cfg.motor_half:
        return False
    return not inside_junction(cfg, x, y)


def rectangles_overlap(c1, phi1, l1, w1, c2, phi2, l2, w2) -> bool:
    """Oriented-rectangle overlap via the separating-axis test."""
    def corners(c, phi, l, w):
        dx = np.array([math.cos(phi), math.sin(phi)]) * (l / 2)
        dy = np.array([-math.sin(phi), math.cos(phi)]) * (w / 2)
        return np.array([c + dx + dy, c + dx - dy, c - dx - dy, c - dx + dy])

    a = corners(np.asarray(c1, dtype=float), phi1, l1, w1)
    b = corners(np.asarray(c2, dtype=float), phi2, l2, w2)
    for phi in (phi1, phi1 + math.pi / 2, phi2, phi2 + math.pi / 2):
        axis = np.array([math.cos(phi), math.sin(phi)])
        pa = a @ axis
        pb = b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


@dataclass
class Agent:
    kind: int                   # 0 vehicle, 1 bicycle, 2 pedestrian
    route: ReferencePath
    s: float
    v: float
    arm: str
    lane: int                   # motor lane index, -1 for bikes/peds
    movement: str
    stop_arc: float             # arc position of the stop line on the route
    waiting: bool = False       # pedestrians held at the curb

    @property
    def shape(self):
        return AGENT_SHAPE[self.kind]

    def pose(self):
        x, y = self.route.point_at(self.s)
        return float(x), float(y), float(self.route.heading_at(self.s))

    def done(self) -> bool:
        return self.s >= self.route.length - 1e-6


def _krauss_safe(gap: float, v_lead: float, decel: float, tau: float) -> float:
    if gap <= 0.0:
        return 0.0
    return -decel * tau + math.sqrt(decel * decel * tau * tau
                                    + v_lead * v_lead + 2.0 * decel * gap)


class World:
    """One simulation instance; deterministic given its seed."""

    def __init__(self, cfg: WorldConfig, task: str, seed: int,
                 vehicle_cfg: vehicle.VehicleConfig | None = None):
        self.cfg = cfg
        self.task = task
        self.vehicle_cfg = vehicle_cfg or vehicle.VehicleConfig()
        self.lights = LightSystem(cfg.phase_durations)
        self.rng = np.random.default_rng(seed)
        self.candidates = generate_paths(cfg, task, arm="S")
        self.ego_arm = "S"
        self.stop_line = stop_line_center(cfg, "S", ENTRY_LANE[task])
        self._route_cache: dict = {}
        self.arrival_events = {"vehicle": 0, "bicycle": 0, "pedestrian": 0}
        self.reset()

    # -- setup ------------------------------------------------------------

    def _cached_route(self, arm, movement, exit_lane, kind, entry_lane=None):
        key = (arm, movement, exit_lane, kind, entry_lane)
        if key not in self._route_cache:
            self._route_cache[key] = build_route(self.cfg, arm, movement,
                                                 exit_lane, kind, entry_lane)
        return self._route_cache[key]

    def reset(self):
        cfg = self.cfg
        self.t = 0.0
        self.cycle_t = float(self.rng.uniform(0.0, self.lights.cycle))
        self.agents: list[Agent] = []
        self.pending: dict = {}
        self.u_prev = np.zeros(2)
        self.collided = False
        # let traffic build up before the ego appears
        warm_steps = int(round(cfg.warm_time / cfg.dt))
        self.ego = None
        for _ in range(warm_steps):
            self._step_traffic()
            self.cycle_t = math.fmod(self.cycle_t + cfg.dt, self.lights.cycle)
        lane = ENTRY_LANE[self.task]
        for _ in range(20):
            back = self.rng.uniform(cfg.ego_spawn_near, cfg.ego_spawn_far)
            start = np.array([[cfg.lane_center(lane), -(cfg.stop_line_dist + back)]])
            x0, y0 = arm_to_world("S", start)[0]
            if self._spawn_clear(float(x0), float(y0)):
                break
        else:
            # evict whoever blocks rather than start inside a collision
            self.agents = [a for a in self.agents
                           if not self._too_close(a, float(x0), float(y0))]
        v0 = float(self.rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max))
        self.ego = vehicle.EgoState(float(x0), float(y0), v0, 0.0, _ARM_HEADING["S"], 0.0)
        return self.ego

    def _too_close(self, agent: "Agent", x: float, y: float) -> bool:
        ax, ay, _ = agent.pose()
        if agent.kind == 0 and math.hypot(ax - x, ay - y) < 20.0:
            return True
        return math.hypot(ax - x, ay - y) < 8.0

    def _spawn_clear(self, x: float, y: float) -> bool:
        return not any(self._too_close(a, x, y) for a in self.agents)

    # -- traffic ----------------------------------------------------------

    def _spawn_attempts(self):
        cfg = self.cfg
        dt = cfg.dt
        p_veh = cfg.veh_flow_per_hour * dt / 3600.0
        p_bike = cfg.bike_flow_per_hour * dt / 3600.0
        p_ped = cfg.ped_flow_per_hour * dt / 3600.0
        for arm in ARMS:
            for lane in range(cfg.n_lanes):
                if self.rng.random() < p_veh:
                    self.arrival_events["vehicle"] += 1
                    self.pending[(arm, "veh", lane)] = \
                        self.pending.get((arm, "veh", lane), 0) + 1
            if self.rng.random() < p_bike:
                self.arrival_events["bicycle"] += 1
                self.pending[(arm, "bike", 0)] = self.pending.get((arm, "bike", 0), 0) + 1
            if self.rng.random() < p_ped:
                self.arrival_events["pedestrian"] += 1
                self.pending[(arm, "ped", 0)] = self.pending.get((arm, "ped", 0), 0) + 1
        for key, count in list(self.pending.items()):
            if count <= 0:
                continue
            if self._try_spawn(key):
                self.pending[key] = count - 1

    def _try_spawn(self, key) -> bool:
        arm, group, lane = key
        cfg = self.cfg
        if group == "veh":
            movement = MOVEMENTS[lane]
            exit_lane = int(self.rng.integers(0, 3))
            route = self._cached_route(arm, movement, exit_lane, 0, entry_lane=lane)
            same = [a for a in self.agents if a.kind == 0 and a.arm == arm
                    and a.lane == lane and a.s < cfg.min_spawn_gap * 2]
            if any(a.s < cfg.min_spawn_gap for a in same):
                return False
            v0 = float(route.vref_at(0.0) * self.rng.uniform(0.75, 1.0))
            stop_arc = float(route.arc_of(*stop_line_center(cfg, arm, lane))[0])
            self.agents.append(Agent(0, route, 0.0, v0, arm, lane, movement, stop_arc))
            return True
        if group == "bike":
            route = self._cached_route(arm, "straight", 0, 1)
            same = [a for a in self.agents if a.kind == 1 and a.arm == arm]
            if any(a.s < cfg.min_spawn_gap * 0.5 for a in same):
                return False
            sl = arm_to_world(arm, np.array([[cfg.bike_center, -cfg.stop_line_dist]]))[0]
            stop_arc = float(route.arc_of(*sl)[0])
            self.agents.append(Agent(1, route, 0.0, float(cfg.bike_speed), arm, -1,
                                     "straight", stop_arc))
            return True
        direction = 1 if self.rng.random() < 0.5 else -1
        ckey = ("ped", arm, direction)
        if ckey not in self._route_cache:
            self._route_cache[ckey] = crosswalk_route(cfg, arm, direction)
        self.agents.append(Agent(2, self._route_cache[ckey], 0.0, 0.0, arm, -1,
                                 "cross", -1.0, waiting=True))
        return True

    def _step_traffic(self):
        cfg = self.cfg
        dt = cfg.dt
        phase = self.lights.phase_at(self.cycle_t)
        self._spawn_attempts()
        # gaps computed on pre-step positions: update order has no effect
        snapshot = [(a.s, a.v) for a in self.agents]
        ego = self.ego
        groups: dict = {}
        for idx, a in enumerate(self.agents):
            if a.kind != 2:
                groups.setdefault((a.kind, a.arm, a.lane), []).append(idx)
        lead_of: dict = {}
        for idxs in groups.values():
            idxs.sort(key=lambda i: snapshot[i][0])
            for pos in range(len(idxs) - 1):
                lead_of[idxs[pos]] = idxs[pos + 1]
        for idx, agent in enumerate(self.agents):
            if agent.kind == 2:
                if agent.waiting:
                    if self.lights.ped_walk(phase, agent.arm):
                        agent.waiting = False
                        agent.v = cfg.ped_speed
                    continue
                agent.s += agent.v * dt
                continue
            decel = 4.5 if agent.kind == 0 else 3.0
            accel = 1.5 if agent.kind == 0 else 1.0
            v_max = float(agent.route.vref_at(agent.s))
            v_des = min(agent.v + accel * dt, v_max)
            s_self = snapshot[idx][0]
            lead = lead_of.get(idx)
            if lead is not None:
                # same kind, so leader length equals own length
                gap = snapshot[lead][0] - s_self - agent.shape[0] - 2.0
                v_des = min(v_des, _krauss_safe(gap, snapshot[lead][1], decel, 1.0))
            # the ego acts as a leader/obstacle when its body sits near the
            # route ahead (following, merging, or blocking mid-junction);
            # the standing margin keeps queues outside the safety-circle
            # radius, whose centers overhang the bumpers by 1 m
            if ego is not None:
                if abs(ego.px) < 70.0 and abs(ego.py) < 70.0:
                    s_e = float(agent.route.arc_of(ego.px, ego.py)[0])
                    if agent.s < s_e < agent.s + 60.0:
                        ex, ey = agent.route.point_at(s_e)
                        if math.hypot(ego.px - float(ex), ego.py - float(ey)) < 3.2:
                            gap = (s_e - s_self - 0.5 * agent.shape[0]
                                   - 0.5 * self.vehicle_cfg.length - 6.0)
                            v_des = min(v_des, _krauss_safe(gap, max(ego.vx, 0.0),
                                                            decel, 1.0))
            # hold at the stop line on red
            if (not self.lights.permits(phase, agent.arm, agent.movement)
                    and s_self < agent.stop_arc):
                gap = agent.stop_arc - s_self - 0.5 * agent.shape[0] - 0.2
                v_des = min(v_des, _krauss_safe(gap, 0.0, decel, 1.0))
            agent.v = max(0.0, v_des)
            agent.s += agent.v * dt
            if (not self.lights.permits(phase, agent.arm, agent.movement)
                    and s_self < agent.stop_arc):
                agent.s = min(agent.s, agent.stop_arc - 0.5 * agent.shape[0] - 0.05)
        self.agents = [a for a in self.agents if not a.done()]

    def step(self, action):
        """Advance lights, traffic and the ego by one control period."""
        cfg = self.cfg
        self._step_traffic()
        if self.ego is not None:
            nxt, _ = vehicle.step_bicycle(self.ego.as_array(),
                                          np.asarray(action, dtype=np.float64),
                                          self.vehicle_cfg, cfg.dt)
            self.ego = vehicle.EgoState.from_array(nxt)
            self.u_prev = np.asarray(action, dtype=np.float64).copy()
        self.t += cfg.dt
        self.cycle_t = math.fmod(self.cycle_t + cfg.dt, self.lights.cycle)
        return self.ego

    # -- perception ---------------------------------------------------------

    def perceive(self, path: ReferencePath) -> Observation:
        """Observation against the given reference path."""
        cfg = self.cfg
        ego = self.ego
        poses = np.array([a.pose() for a in self.agents]).reshape(-1, 3)
        n = len(self.agents)
        obs_rows = {0: [], 1: [], 2: []}
        if n:
            rel = poses[:, :2] - np.array([ego.px, ego.py])
            dist = np.hypot(rel[:, 0], rel[:, 1])
            bearing = np.abs(wrap_angle(np.arctan2(rel[:, 1], rel[:, 0]) - ego.phi))
            vis = ((dist <= cfg.camera_range)
                   & (bearing <= math.radians(cfg.camera_half_fov_deg)))
            vis |= ((dist <= cfg.radar_range)
                    & (bearing <= math.radians(cfg.radar_half_fov_deg)))
            vis |= dist <= cfg.lidar_range
            cand = np.nonzero(vis)[0]
            if cand.size:
                shapes = np.array([a.shape for a in self.agents])
                blocked = kernels.segments_blocked(
                    ego.px, ego.py,
                    np.ascontiguousarray(poses[cand, 0]),
                    np.ascontiguousarray(poses[cand, 1]),
                    cand.astype(np.int64),
                    np.ascontiguousarray(poses[:, 0]),
                    np.ascontiguousarray(poses[:, 1]),
                    np.ascontiguousarray(np.cos(poses[:, 2])),
                    np.ascontiguousarray(np.sin(poses[:, 2])),
                    np.ascontiguousarray(shapes[:, 0] / 2.0),
                    np.ascontiguousarray(shapes[:, 1] / 2.0))
                for j, a_idx in enumerate(cand):
                    if blocked[j]:
                        continue
                    agent = self.agents[a_idx]
                    row = np.array([rel[a_idx, 0], rel[a_idx, 1], agent.v,
                                    wrap_angle(poses[a_idx, 2]),
                                    agent.shape[0], agent.shape[1], float(agent.kind)])
                    if cfg.noise_enabled:
                        row[0] += self.rng.normal(0.0, cfg.noise_pos)
                        row[1] += self.rng.normal(0.0, cfg.noise_pos)
                        row[2] += self.rng.normal(0.0, cfg.noise_speed)
                        row[3] += self.rng.normal(0.0, cfg.noise_heading)
                    obs_rows[agent.kind].append(row)

        x_else = build_x_else(ego, self.lights.phase_at(self.cycle_t), path,
                              self.vehicle_cfg)
        obs = Observation(
            np.array(obs_rows[0]).reshape(-1, encoding.D1),
            np.array(obs_rows[1]).reshape(-1, encoding.D1),
            np.array(obs_rows[2]).reshape(-1, encoding.D1),
            x_else, cycle_time=self.cycle_t, u_prev=self.u_prev.copy(),
            task=self.task)
        return encoding.truncate_observation(obs, cfg.caps)

    # -- queries ------------------------------------------------------------

    def ego_collision(self) -> bool:
        ego = self.ego
        vc = self.vehicle_cfg
        for a in self.agents:
            x, y, h = a.pose()
            if abs(x - ego.px) > 10.0 or abs(y - ego.py) > 10.0:
                continue
            if rectangles_overlap((ego.px, ego.py), ego.phi, vc.length, vc.width,
                                  (x, y), h, a.shape[0], a.shape[1]):
                return True
        return False

    def ego_off_road(self) -> bool:
        return off_road(self.cfg, self.ego.px, self.ego.py)

    def stopline_context(self):
        """(stop-line point, active flag) for the ego's current situation."""
        phase = self.lights.phase_at(self.cycle_t)
        active = (self.task in ("left", "straight")
                  and not self.lights.permits(phase, self.ego_arm, self.task)
                  and not inside_junction(self.cfg, self.ego.px, self.ego.py))
        return self.stop_line, active


def build_x_else(ego: vehicle.EgoState, phase: int, path: ReferencePath,
                 vc: vehicle.VehicleConfig) -> np.ndarray:
    """Assemble the 24-wide ego/road vector against a reference path."""
    feat, _ = path.features(np.array([ego.px]), np.array([ego.py]),
                            np.array([ego.phi]), np.array([ego.vx]))
    xe = np.empty(encoding.D2)
    xe[encoding.XE_PX] = ego.px
    xe[encoding.XE_PY] = ego.py
    xe[encoding.XE_VX] = ego.vx
    xe[encoding.XE_VY] = ego.vy
    xe[encoding.XE_PHI] = ego.phi
    xe[encoding.XE_OMEGA] = ego.omega
    xe[encoding.XE_LEN] = vc.length
    xe[encoding.XE_WID] = vc.width
    xe[encoding.XE_PHASE] = float(phase)
    xe[encoding.XE_DP] = feat[0, 0]
    xe[encoding.XE_DV] = feat[0, 1]
    xe[encoding.XE_DPHI] = feat[0, 2]
    xe[encoding.XE_PREVIEW:] = feat[0, 3:]
    return xe
