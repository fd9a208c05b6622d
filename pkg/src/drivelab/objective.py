"""Tracking utility, two-circle safety constraints and the squared-hinge
penalty.  Scalar entry points mirror the batched forms used inside the
differentiable rollout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

KIND_VEHICLE, KIND_BICYCLE, KIND_PEDESTRIAN = 0, 1, 2

_D_EPS = 1e-12  # keeps sqrt differentiable if two centers ever coincide


@dataclass
class ObjectiveConfig:
    w_dv: float = 0.05
    w_dp: float = 0.8
    w_dphi: float = 30.0
    w_omega: float = 0.02
    w_steer: float = 2.5
    w_steer_rate: float = 2.5
    w_accel: float = 0.05
    w_accel_rate: float = 0.05
    r_ego: float = 1.75
    r_vehicle: float = 1.75
    r_bicycle: float = 2.0
    r_pedestrian: float = 2.2
    stopline_margin: float = 0.5
    circle_offset_mode: str = "sum"   # "sum" -> (L+W)/2, "diff" -> (L-W)/2

    def radius_of(self, kind):
        return np.choose(np.asarray(kind, dtype=np.int64),
                         [self.r_vehicle, self.r_bicycle, self.r_pedestrian])

    def circle_offset(self, length, width):
        if self.circle_offset_mode == "diff":
            return (np.asarray(length) - np.asarray(width)) / 2.0
        return (np.asarray(length) + np.asarray(width)) / 2.0


@dataclass
class TrackingError:
    dp: float = 0.0
    dv: float = 0.0
    dphi: float = 0.0


@dataclass
class ConstraintEntry:
    g: float
    kind: str                      # "participant" or "stop_line"
    participant_kind: int | None = None


def utility(err: TrackingError, omega, u, u_prev, dt, cfg: ObjectiveConfig) -> float:
    """Quadratic per-step tracking/effort cost."""
    u = np.asarray(u, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    d_rate = (u[0] - u_prev[0]) / dt
    a_rate = (u[1] - u_prev[1]) / dt
    return float(cfg.w_dv * err.dv ** 2 + cfg.w_dp * err.dp ** 2
                 + cfg.w_dphi * err.dphi ** 2 + cfg.w_omega * omega ** 2
                 + cfg.w_steer * u[0] ** 2 + cfg.w_steer_rate * d_rate ** 2
                 + cfg.w_accel * u[1] ** 2 + cfg.w_accel_rate * a_rate ** 2)


def utility_batch(dp, dv, dphi, omega, u, u_prev, dt, cfg: ObjectiveConfig):
    d_rate = (u[:, 0] - u_prev[:, 0]) / dt
    a_rate = (u[:, 1] - u_prev[:, 1]) / dt
    return (cfg.w_dv * dv ** 2 + cfg.w_dp * dp ** 2 + cfg.w_dphi * dphi ** 2
            + cfg.w_omega * omega ** 2 + cfg.w_steer * u[:, 0] ** 2
            + cfg.w_steer_rate * d_rate ** 2 + cfg.w_accel * u[:, 1] ** 2
            + cfg.w_accel_rate * a_rate ** 2)


def utility_vjp(dl, dp, dv, dphi, omega, u, u_prev, dt, cfg: ObjectiveConfig):
    """Adjoints of utility_batch w.r.t. every argument; dl is (b,)."""
    d_rate = (u[:, 0] - u_prev[:, 0]) / dt
    a_rate = (u[:, 1] - u_prev[:, 1]) / dt
    ddp = dl * 2.0 * cfg.w_dp * dp
    ddv = dl * 2.0 * cfg.w_dv * dv
    ddphi = dl * 2.0 * cfg.w_dphi * dphi
    domega = dl * 2.0 * cfg.w_omega * omega
    du = np.empty_like(u)
    duprev = np.empty_like(u)
    du[:, 0] = dl * (2.0 * cfg.w_steer * u[:, 0] + 2.0 * cfg.w_steer_rate * d_rate / dt)
    du[:, 1] = dl * (2.0 * cfg.w_accel * u[:, 1] + 2.0 * cfg.w_accel_rate * a_rate / dt)
    duprev[:, 0] = dl * (-2.0 * cfg.w_steer_rate * d_rate / dt)
    duprev[:, 1] = dl * (-2.0 * cfg.w_accel_rate * a_rate / dt)
    return ddp, ddv, ddphi, domega, du, duprev


def circle_centers(pose, length, width, cfg: ObjectiveConfig):
    """Front/rear circle centers of a body at pose (x, y, heading)."""
    x, y, phi = pose
    off = float(cfg.circle_offset(length, width))
    dx = off * np.cos(phi)
    dy = off * np.sin(phi)
    return np.array([x + dx, y + dy]), np.array([x - dx, y - dy])


def penalty(constraints) -> float:
    """Sum of squared hinge violations over a constraint set."""
    total = 0.0
    for entry in constraints:
        total += max(0.0, -entry.g) ** 2
    return float(total)


def constraint_values(obs, cfg: ObjectiveConfig, vehicle_length, vehicle_width,
                      stop_line=None) -> list:
    """Constraint set for one observation.

    Four circle-pair clearances per observed participant, plus two ego-center
    distances to the stop-line center when ``stop_line`` is an active
    ``(point, True)`` pair.
    """
    ego_pose = (obs.x_else[0], obs.x_else[1], obs.x_else[4])
    ego_f, ego_r = circle_centers(ego_pose, vehicle_length, vehicle_width, cfg)
    out = []
    for kind, rows in ((KIND_VEHICLE, obs.vehicles), (KIND_BICYCLE, obs.bicycles),
                       (KIND_PEDESTRIAN, obs.pedestrians)):
        r_sum = float(cfg.radius_of(kind)) + cfg.r_ego
        for row in rows:
            ax = obs.x_else[0] + row[0]
            ay = obs.x_else[1] + row[1]
            of, orr = circle_centers((ax, ay, row[3]), row[4], row[5], cfg)
            for ce in (ego_f, ego_r):
                for co in (of, orr):
                    g = float(np.hypot(*(ce - co))) - r_sum
                    out.append(ConstraintEntry(g, "participant", kind))
    if stop_line is not None:
        point, active = stop_line
        if active:
            for ce in (ego_f, ego_r):
                g = float(np.hypot(ce[0] - point[0], ce[1] - point[1])) - cfg.stopline_margin
                out.append(ConstraintEntry(g, "stop_line"))
    return out


# ---------------------------------------------------------------------------
# batched penalty terms for the rollout (participants are constants, so only
# the ego pose receives gradients)

def participant_penalty(epx, epy, ephi, pax, pay, pheading, poff, prad,
                        sample_ids, n_samples, off_ego, r_ego):
    """Squared-hinge penalty per sample from all participant circle pairs.

    Returns (pen (n_samples,), cache).
    """
    if pax.shape[0] == 0:
        return np.zeros(n_samples), None
    ex = epx[sample_ids]
    ey = epy[sample_ids]
    ephi_p = ephi[sample_ids]
    ce_c = np.cos(ephi_p)
    ce_s = np.sin(ephi_p)
    och = poff * np.cos(pheading)
    osh = poff * np.sin(pheading)
    pen_rows = np.zeros(pax.shape[0])
    cache_terms = []
    for se in (1.0, -1.0):              # ego front / rear
        cex = ex + se * off_ego * ce_c
        cey = ey + se * off_ego * ce_s
        for so in (1.0, -1.0):          # other front / rear
            dx = cex - (pax + so * och)
            dy = cey - (pay + so * osh)
            d = np.sqrt(dx * dx + dy * dy + _D_EPS)
            g = d - (r_ego + prad)
            viol = np.maximum(0.0, -g)
            pen_rows += viol * viol
            cache_terms.append((se, dx, dy, d, viol))
    pen = kernels.segment_sum(pen_rows[:, None], sample_ids, n_samples)[:, 0]
    cache = (cache_terms, ce_c, ce_s, sample_ids, off_ego, epx.shape[0])
    return pen, cache


def participant_penalty_vjp(cache, dpen):
    """Adjoint w.r.t. the ego pose arrays (epx, epy, ephi)."""
    if cache is None:
        z = np.zeros_like(dpen)
        return z, z.copy(), z.copy()
    cache_terms, ce_c, ce_s, sample_ids, off_ego, b = cache
    dp = dpen[sample_ids]
    gx = np.zeros_like(dp)
    gy = np.zeros_like(dp)
    gphi = np.zeros_like(dp)
    for se, dx, dy, d, viol in cache_terms:
        coef = dp * (-2.0 * viol) / d
        gx += coef * dx
        gy += coef * dy
        gphi += coef * (dx * (-se * off_ego * ce_s) + dy * (se * off_ego * ce_c))
    out = kernels.segment_sum(np.stack([gx, gy, gphi], axis=1), sample_ids, b)
    return out[:, 0], out[:, 1], out[:, 2]


def stopline_penalty(epx, epy, ephi, slx, sly, active, off_ego, margin):
    """Squared-hinge penalty on ego front/rear distance to the stop-line
    center; ``active`` masks samples where the light constraint applies."""
    ce_c = np.cos(ephi)
    ce_s = np.sin(ephi)
    pen = np.zeros_like(epx)
    terms = []
    for se in (1.0, -1.0):
        dx = epx + se * off_ego * ce_c - slx
        dy = epy + se * off_ego * ce_s - sly
        d = np.sqrt(dx * dx + dy * dy + _D_EPS)
        viol = np.maximum(0.0, -(d - margin)) * active
        pen += viol * viol
        terms.append((se, dx, dy, d, viol))
    return pen, (terms, ce_c, ce_s, off_ego)


def stopline_penalty_vjp(cache, dpen):
    terms, ce_c, ce_s, off_ego = cache
    gx = np.zeros_like(dpen)
    gy = np.zeros_like(dpen)
    gphi = np.zeros_like(dpen)
    for se, dx, dy, d, viol in terms:
        coef = dpen * (-2.0 * viol) / d
        gx += coef * dx
        gy += coef * dy
        gphi += coef * (dx * (-se * off_ego * ce_s) + dy * (se * off_ego * ce_c))
    return gx, gy, gphi
