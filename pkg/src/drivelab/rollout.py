"""Differentiable T-step prediction and its joint reverse pass.

The only quantities that carry gradients through time are the ego state and
the previous action; observed participants propagate at constant velocity
and heading, and the light clock is deterministic, so both are constants of
the rollout.  One forward pass records every primal needed; one backward
pass accumulates policy and encoder gradients (and, for the trajectory
optimizer, gradients w.r.t. a raw action sequence).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoding, nn, objective, vehicle, world
from .encoding import Observation
from .paths import ReferencePath


class RolloutNumericsError(RuntimeError):
    def __init__(self, step, term):
        super().__init__("non-finite value at prediction step %d in %s" % (step, term))
        self.step = step
        self.term = term


@dataclass
class RolloutResult:
    j_track: np.ndarray
    j_safe: np.ndarray
    rho: float
    g_policy: list | None = None
    g_encoder: list | None = None
    d_actions_raw: np.ndarray | None = None
    state0: np.ndarray | None = None
    actions: np.ndarray | None = None   # squashed actions, (b, T, 2)
    ego_traj: np.ndarray | None = None  # ego states entering each step, (b, T, 6)
    participant_traj: np.ndarray | None = None   # absolute positions, (T, P, 2)

    @property
    def j_total(self) -> np.ndarray:
        return self.j_track + self.rho * self.j_safe


@dataclass
class _StepCache:
    feat_caches: list
    enc_tape: object
    pol_tape: object
    th: np.ndarray | None
    u: np.ndarray
    uprev: np.ndarray
    ego: np.ndarray
    veh_cache: tuple
    part_cache: object
    sl_cache: object
    sl_active: np.ndarray
    feat: np.ndarray
    fp_slots: object = None


class RolloutEngine:
    """Batched rollout over a shared world/objective configuration."""

    def __init__(self, world_cfg: world.WorldConfig, vehicle_cfg: vehicle.VehicleConfig,
                 obj_cfg: objective.ObjectiveConfig, lights: world.LightSystem,
                 horizon: int = 25, fp_mode: bool = False, ego_arm: str = "S"):
        self.world_cfg = world_cfg
        self.vehicle_cfg = vehicle_cfg
        self.obj_cfg = obj_cfg
        self.lights = lights
        self.horizon = horizon
        self.dt = world_cfg.dt
        self.fp_mode = fp_mode
        self.ego_arm = ego_arm
        self.off_ego = float(obj_cfg.circle_offset(vehicle_cfg.length, vehicle_cfg.width))
        self._candidates: dict = {}
        self._stop_lines = {
            task: world.stop_line_center(world_cfg, ego_arm, world.ENTRY_LANE[task])
            for task in world.MOVEMENTS}

    def candidates(self, task: str) -> list:
        if task not in self._candidates:
            self._candidates[task] = world.generate_paths(self.world_cfg, task, self.ego_arm)
        return self._candidates[task]

    # ------------------------------------------------------------------

    def _flatten_participants(self, observations):
        rows = []
        sids = []
        for i, obs in enumerate(observations):
            p = obs.participants()
            if len(p):
                rows.append(p)
                sids.append(np.full(len(p), i, dtype=np.int64))
        if rows:
            feats = np.concatenate(rows, axis=0)
            sid = np.concatenate(sids)
        else:
            feats = np.zeros((0, encoding.D1))
            sid = np.zeros(0, dtype=np.int64)
        return feats, sid

    def run(self, observations, paths, policy, encoder, rho, *,
            horizon=None, actions_raw=None, actions_direct=None,
            step_weights=None, grad_seed=None, need_grads=True,
            need_state0=False, s0_override=None) -> RolloutResult:
        """Predict ``horizon`` steps from each observation along its path.

        Action source: the policy net by default, a raw (pre-squash) action
        sequence ``actions_raw`` (b, T, 2) for trajectory optimization, or
        bounded actions ``actions_direct`` for plain cost evaluation.
        ``s0_override`` replaces the step-0 network input with stored states
        (treated as constants; the stale-state ablation).
        """
        T = self.horizon if horizon is None else horizon
        dt = self.dt
        vcfg = self.vehicle_cfg
        ocfg = self.obj_cfg
        wcfg = self.world_cfg
        b = len(observations)
        half = wcfg.half

        ego = np.stack([obs.x_else[:6] for obs in observations], axis=0)
        uprev = np.stack([obs.u_prev for obs in observations], axis=0).astype(np.float64)

        feats0, sid = self._flatten_participants(observations)
        n_p = feats0.shape[0]
        abs0 = feats0[:, :2] + ego[sid, :2] if n_p else np.zeros((0, 2))
        pvel = np.zeros((n_p, 2))
        if n_p:
            pvel[:, 0] = feats0[:, encoding.F_SPEED] * np.cos(feats0[:, encoding.F_HEADING])
            pvel[:, 1] = feats0[:, encoding.F_SPEED] * np.sin(feats0[:, encoding.F_HEADING])
        poff = np.asarray(ocfg.circle_offset(feats0[:, encoding.F_LENGTH],
                                             feats0[:, encoding.F_WIDTH])) if n_p else np.zeros(0)
        prad = (ocfg.radius_of(feats0[:, encoding.F_KIND].astype(np.int64))
                if n_p else np.zeros(0))

        cycle0 = np.array([obs.cycle_time for obs in observations])
        phases = self.lights.phase_at_batch(cycle0[:, None] + dt * np.arange(T)[None, :])
        tasks = [obs.task for obs in observations]
        sl_task = np.array([t in ("left", "straight") for t in tasks])
        go = np.isin(phases, self.lights.NS_GO if self.ego_arm in ("S", "N")
                     else self.lights.EW_GO)
        red_steps = (~go) & sl_task[:, None]
        sl_xy = np.stack([self._stop_lines[t] for t in tasks], axis=0)

        groups: dict = {}
        for i, p in enumerate(paths):
            groups.setdefault(id(p), (p, []))[1].append(i)
        groups = {k: (p, np.asarray(idx, dtype=np.int64)) for k, (p, idx) in groups.items()}

        if step_weights is None:
            step_weights = np.ones(T)
        caches: list[_StepCache] = []
        j_track = np.zeros(b)
        j_safe = np.zeros(b)
        state0 = None
        part_traj = np.empty((T, n_p, 2))

        for i in range(T):
            feat = np.empty((b, 15))
            feat_caches = []
            for p, idx in groups.values():
                f, c = p.features(ego[idx, 0], ego[idx, 1], ego[idx, 4], ego[idx, 2])
                feat[idx] = f
                feat_caches.append((idx, c))
            x_else = np.empty((b, encoding.D2))
            x_else[:, :6] = ego
            x_else[:, encoding.XE_LEN] = vcfg.length
            x_else[:, encoding.XE_WID] = vcfg.width
            x_else[:, encoding.XE_PHASE] = phases[:, i]
            x_else[:, encoding.XE_DP:encoding.XE_DPHI + 1] = feat[:, :3]
            x_else[:, encoding.XE_PREVIEW:] = feat[:, 3:]

            if n_p:
                abs_i = abs0 + (i * dt) * pvel
                rel = abs_i - ego[sid, :2]
                pf = feats0.copy()
                pf[:, :2] = rel
            else:
                abs_i = abs0
                pf = feats0
            part_traj[i] = abs_i

            enc_tape = None
            fp_slots = None
            s = None
            uses_policy = actions_raw is None and actions_direct is None
            if uses_policy or (i == 0 and need_state0):
                if i == 0 and s0_override is not None:
                    s = np.asarray(s0_override, dtype=np.float64)
                elif self.fp_mode:
                    s, fp_slots = _fp_state(pf, sid, b, x_else)
                else:
                    if n_p:
                        h, enc_tape = nn.forward(encoder, pf)
                        x_set = encoding.kernels.segment_sum(h, sid, b)
                    else:
                        x_set = np.zeros((b, encoder.n_out))
                    s = np.concatenate([x_set, x_else], axis=1)
            if i == 0 and need_state0:
                state0 = s.copy()

            pol_tape = None
            th = None
            if actions_direct is not None:
                u = actions_direct[:, i]
            elif actions_raw is not None:
                u, th = vehicle.squash_action(actions_raw[:, i], vcfg)
            else:
                raw, pol_tape = nn.forward(policy, s)
                u, th = vehicle.squash_action(raw, vcfg)

            l_i = objective.utility_batch(feat[:, 0], feat[:, 1], feat[:, 2],
                                          ego[:, 5], u, uprev, dt, ocfg)
            if not np.all(np.isfinite(l_i)):
                raise RolloutNumericsError(i, "utility")

            pen, part_cache = objective.participant_penalty(
                ego[:, 0], ego[:, 1], ego[:, 4], abs_i[:, 0] if n_p else np.zeros(0),
                abs_i[:, 1] if n_p else np.zeros(0),
                feats0[:, encoding.F_HEADING] if n_p else np.zeros(0),
                poff, prad, sid, b, self.off_ego, ocfg.r_ego)
            outside = ~((np.abs(ego[:, 0]) <= half) & (np.abs(ego[:, 1]) <= half))
            sl_active = (red_steps[:, i] & outside).astype(np.float64)
            pen_sl, sl_cache = objective.stopline_penalty(
                ego[:, 0], ego[:, 1], ego[:, 4], sl_xy[:, 0], sl_xy[:, 1],
                sl_active, self.off_ego, ocfg.stopline_margin)
            pen = pen + pen_sl
            if not np.all(np.isfinite(pen)):
                raise RolloutNumericsError(i, "penalty")

            j_track += step_weights[i] * l_i
            j_safe += step_weights[i] * pen

            ego_next, veh_cache = vehicle.step_bicycle(ego, u, vcfg, dt)
            caches.append(_StepCache(feat_caches, enc_tape, pol_tape, th, u, uprev,
                                     ego, veh_cache, part_cache, sl_cache, sl_active,
                                     feat, fp_slots))
            uprev = u
            ego = ego_next

        result = RolloutResult(j_track, j_safe, float(rho), state0=state0,
                               actions=np.stack([c.u for c in caches], axis=1),
                               ego_traj=np.stack([c.ego for c in caches], axis=1),
                               participant_traj=part_traj)
        if not need_grads:
            return result

        # ------------------------------------------------------------------
        # reverse pass
        seed = np.ones(b) if grad_seed is None else np.asarray(grad_seed, dtype=np.float64)
        g_pol = _zero_grads(policy) if (actions_raw is None and actions_direct is None) else None
        g_enc = _zero_grads(encoder) if (not self.fp_mode and encoder is not None) else None
        d_raw = np.zeros((b, T, 2)) if actions_raw is not None else None

        d_ego = np.zeros((b, 6))
        d_uprev = np.zeros((b, 2))
        for i in range(T - 1, -1, -1):
            c = caches[i]
            sw = seed * step_weights[i]
            d_ego_cur, du = vehicle.step_bicycle_vjp(c.veh_cache, d_ego, vcfg)
            du = du + d_uprev

            ddp, ddv, ddphi, dom, du_l, duprev = objective.utility_vjp(
                sw, c.feat[:, 0], c.feat[:, 1], c.feat[:, 2], c.ego[:, 5],
                c.u, c.uprev, dt, ocfg)
            du = du + du_l
            d_ego_cur[:, 5] += dom

            dpen = sw * rho
            gx, gy, gphi = objective.participant_penalty_vjp(c.part_cache, dpen)
            d_ego_cur[:, 0] += gx
            d_ego_cur[:, 1] += gy
            d_ego_cur[:, 4] += gphi
            gx, gy, gphi = objective.stopline_penalty_vjp(c.sl_cache, dpen)
            d_ego_cur[:, 0] += gx
            d_ego_cur[:, 1] += gy
            d_ego_cur[:, 4] += gphi

            dfeat = np.zeros((b, 15))
            dfeat[:, 0] = ddp
            dfeat[:, 1] = ddv
            dfeat[:, 2] = ddphi

            ds = None
            if c.pol_tape is not None:
                draw = vehicle.squash_vjp(c.th, du, vcfg)
                gw, gb, ds = nn.backward(c.pol_tape, draw)
                _accumulate(g_pol, gw, gb)
                if i == 0 and s0_override is not None:
                    ds = None   # stored states are constants
            elif d_raw is not None:
                d_raw[:, i] = vehicle.squash_vjp(c.th, du, vcfg)

            if ds is not None:
                if self.fp_mode:
                    dxe = ds[:, -encoding.D2:]
                    _fp_state_vjp(ds, c.fp_slots, sid, d_ego_cur)
                else:
                    d3 = ds.shape[1] - encoding.D2
                    dxe = ds[:, d3:]
                    if c.enc_tape is not None:
                        dh = ds[:, :d3][sid]
                        gw, gb, dpf = nn.backward(c.enc_tape, dh)
                        _accumulate(g_enc, gw, gb)
                        drel = encoding.kernels.segment_sum(
                            np.ascontiguousarray(dpf[:, :2]), sid, b)
                        d_ego_cur[:, 0] -= drel[:, 0]
                        d_ego_cur[:, 1] -= drel[:, 1]
                d_ego_cur[:, :6] += dxe[:, :6]
                dfeat[:, :3] += dxe[:, encoding.XE_DP:encoding.XE_DPHI + 1]
                dfeat[:, 3:] += dxe[:, encoding.XE_PREVIEW:]

            for idx, fcache in c.feat_caches:
                dqx, dqy, dphi, dvx = ReferencePath.features_vjp(fcache, dfeat[idx])
                d_ego_cur[idx, 0] += dqx
                d_ego_cur[idx, 1] += dqy
                d_ego_cur[idx, 4] += dphi
                d_ego_cur[idx, 2] += dvx

            d_ego = d_ego_cur
            d_uprev = duprev

        result.g_policy = g_pol
        result.g_encoder = g_enc
        result.d_actions_raw = d_raw
        return result


def _zero_grads(net: nn.MlpParams):
    return [np.zeros_like(a) for a in net.arrays()]


def _accumulate(acc, gw, gb):
    if acc is None:
        return
    for l, (w, bias) in enumerate(zip(gw, gb)):
        acc[2 * l] += w
        acc[2 * l + 1] += bias


def _fp_state(pf, sid, b, x_else):
    """Sorted fixed-slot state (b, 136) plus the slot->row index map."""
    n_slots = sum(encoding.FP_COUNTS)
    s = np.zeros((b, n_slots * encoding.D1 + encoding.D2))
    slot_src = np.full((b, n_slots), -1, dtype=np.int64)
    kinds = pf[:, encoding.F_KIND].astype(np.int64) if len(pf) else np.zeros(0, np.int64)
    dist = np.hypot(pf[:, 0], pf[:, 1]) if len(pf) else np.zeros(0)
    base = [0, encoding.FP_COUNTS[0], encoding.FP_COUNTS[0] + encoding.FP_COUNTS[1]]
    for i in range(b):
        mine = np.nonzero(sid == i)[0]
        for t in range(3):
            rows = mine[kinds[mine] == t]
            if len(rows) == 0:
                continue
            order = rows[np.argsort(dist[rows], kind="stable")][:encoding.FP_COUNTS[t]]
            slot_src[i, base[t]:base[t] + len(order)] = order
    for slot in range(n_slots):
        t = 0 if slot < base[1] else (1 if slot < base[2] else 2)
        col = slot * encoding.D1
        src = slot_src[:, slot]
        valid = src >= 0
        s[valid, col:col + encoding.D1] = pf[src[valid]]
        s[~valid, col + encoding.F_KIND] = float(t)
    s[:, -encoding.D2:] = x_else
    return s, slot_src


def _fp_state_vjp(ds, slot_src, sid, d_ego_cur):
    """Scatter slot adjoints onto the relative-position entries (the only
    differentiable ones) and fold them into the ego position adjoint."""
    n_slots = slot_src.shape[1]
    for slot in range(n_slots):
        col = slot * encoding.D1
        src = slot_src[:, slot]
        valid = np.nonzero(src >= 0)[0]
        if len(valid) == 0:
            continue
        d_ego_cur[valid, 0] -= ds[valid, col + encoding.F_RELX]
        d_ego_cur[valid, 1] -= ds[valid, col + encoding.F_RELY]


def predict_step(obs: Observation, action, path: ReferencePath,
                 world_cfg: world.WorldConfig, vehicle_cfg: vehicle.VehicleConfig,
                 lights: world.LightSystem) -> Observation:
    """Advance one observation by one control period under the prediction
    model: ego dynamics, constant-velocity participants, light clock."""
    action = np.asarray(action, dtype=np.float64)
    ego = obs.x_else[:6]
    ego_next, _ = vehicle.step_bicycle(ego, action, vehicle_cfg, world_cfg.dt)
    new_sets = []
    for rows in (obs.vehicles, obs.bicycles, obs.pedestrians):
        if len(rows) == 0:
            new_sets.append(rows.copy())
            continue
        r = rows.copy()
        absolute = r[:, :2] + ego[:2]
        absolute = absolute + world_cfg.dt * np.stack(
            [r[:, encoding.F_SPEED] * np.cos(r[:, encoding.F_HEADING]),
             r[:, encoding.F_SPEED] * np.sin(r[:, encoding.F_HEADING])], axis=1)
        r[:, :2] = absolute - ego_next[:2]
        new_sets.append(r)
    cycle_next = float(np.mod(obs.cycle_time + world_cfg.dt, lights.cycle))
    x_else = world.build_x_else(vehicle.EgoState.from_array(ego_next),
                                lights.phase_at(cycle_next), path, vehicle_cfg)
    return Observation(new_sets[0], new_sets[1], new_sets[2], x_else,
                       cycle_time=cycle_next, u_prev=action.copy(), task=obs.task)
