"""Reference paths: construction, arc-length resampling and differentiable
tracking features (lateral/speed/heading errors plus look-ahead points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import wrap_angle

PREVIEW_OFFSETS = (5.0, 10.0, 15.0)


def bezier(p0, p1, p2, p3, n=200):
    """Dense cubic Bezier evaluation, (n, 2)."""
    t = np.linspace(0.0, 1.0, n)[:, None]
    u = 1.0 - t
    return (u ** 3 * p0 + 3 * u ** 2 * t * p1 + 3 * u * t ** 2 * p2 + t ** 3 * p3)


def resample(points, spacing):
    """Resample a polyline at fixed arc-length spacing (endpoints kept)."""
    pts = np.asarray(points, dtype=np.float64)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate(([True], d > 1e-9))
    pts = pts[keep]
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(d)))
    total = cum[-1]
    n_out = max(int(round(total / spacing)), 1) + 1
    s = np.linspace(0.0, total, n_out)
    xs = np.interp(s, cum, pts[:, 0])
    ys = np.interp(s, cum, pts[:, 1])
    return np.stack([xs, ys], axis=1)


def _headings_from_points(pts):
    """Unwrapped tangent headings via central differences."""
    fwd = np.diff(pts, axis=0)
    h_seg = np.arctan2(fwd[:, 1], fwd[:, 0])
    h = np.empty(len(pts))
    h[0] = h_seg[0]
    h[-1] = h_seg[-1]
    if len(pts) > 2:
        c = pts[2:] - pts[:-2]
        h[1:-1] = np.arctan2(c[:, 1], c[:, 0])
    return np.unwrap(h)


def curvature(pts):
    """Discrete curvature magnitude per interior point."""
    h = _headings_from_points(pts)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    ds = 0.5 * (np.concatenate((d, d[-1:])) + np.concatenate((d[:1], d)))
    dh = np.gradient(h)
    return np.abs(dh / np.maximum(ds, 1e-9))


def speed_profile(pts, v_limit, lat_accel_max=2.0, accel=1.0, decel=1.5, v_floor=2.0):
    """Curvature-limited target speed with accel/decel-feasible ramps."""
    kappa = curvature(pts)
    v = np.minimum(v_limit, np.sqrt(lat_accel_max / np.maximum(kappa, 1e-9)))
    v = np.maximum(v, v_floor)
    d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    for i in range(len(v) - 2, -1, -1):  # backward pass: respect decel
        v[i] = min(v[i], np.sqrt(v[i + 1] ** 2 + 2.0 * decel * d[i]))
    for i in range(1, len(v)):  # forward pass: respect accel
        v[i] = min(v[i], np.sqrt(v[i - 1] ** 2 + 2.0 * accel * d[i - 1]))
    return v


@dataclass
class ReferencePath:
    xs: np.ndarray
    ys: np.ndarray
    headings: np.ndarray        # unwrapped, consistent with tangents
    v_ref: np.ndarray
    cum: np.ndarray             # cumulative arc length
    task: str = ""
    target_lane: int = 0
    key: str = ""

    @classmethod
    def from_points(cls, pts, v_ref, task="", target_lane=0, key=""):
        pts = np.asarray(pts, dtype=np.float64)
        d = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate(([0.0], np.cumsum(d)))
        return cls(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                   _headings_from_points(pts), np.asarray(v_ref, dtype=np.float64),
                   cum, task, target_lane, key)

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def point_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.cum[-1])
        return np.interp(s, self.cum, self.xs), np.interp(s, self.cum, self.ys)

    def heading_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.cum[-1])
        return np.interp(s, self.cum, self.headings)

    def vref_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.cum[-1])
        return np.interp(s, self.cum, self.v_ref)

    def arc_of(self, qx, qy):
        qx = np.atleast_1d(np.asarray(qx, dtype=np.float64))
        qy = np.atleast_1d(np.asarray(qy, dtype=np.float64))
        seg, t = kernels.polyline_project(self.xs, self.ys, qx, qy)
        seg_len = self.cum[seg + 1] - self.cum[seg]
        return self.cum[seg] + t * seg_len

    # -- differentiable tracking features ---------------------------------

    def features(self, qx, qy, phi, vx):
        """Tracking errors and preview points for ego states (batched).

        Returns (feat, cache): feat is (b, 15) laid out as
        [dp, dv, dphi, (x, y, heading, v_ref) at +5 m, +10 m, +15 m].

        Points whose nearest polyline element is a vertex (the projection
        parameter clamps) live in that vertex's normal wedge: there the
        reference point is pinned, the lateral-error direction is radial
        and the arc position does not move with the query point.
        """
        qx = np.asarray(qx, dtype=np.float64)
        qy = np.asarray(qy, dtype=np.float64)
        phi = np.asarray(phi, dtype=np.float64)
        vx = np.asarray(vx, dtype=np.float64)
        b = qx.shape[0]
        seg, t = kernels.polyline_project(self.xs, self.ys, qx, qy)
        ax = self.xs[seg]
        ay = self.ys[seg]
        vxs = self.xs[seg + 1] - ax
        vys = self.ys[seg + 1] - ay
        seg_len = np.maximum(np.hypot(vxs, vys), 1e-12)
        tx = vxs / seg_len
        ty = vys / seg_len
        nx, ny = -ty, tx
        interior = (t > 0.0) & (t < 1.0)

        # vertex-wedge rows: reference pinned at the vertex
        vi = seg + (t >= 1.0)
        px = np.where(interior, ax + t * vxs, self.xs[vi])
        py = np.where(interior, ay + t * vys, self.ys[vi])
        rx = qx - px
        ry = qy - py
        dist = np.hypot(rx, ry)
        sgn = np.where(rx * nx + ry * ny >= 0.0, 1.0, -1.0)
        safe = np.maximum(dist, 1e-12)
        dp_dir_x = np.where(interior, nx, sgn * rx / safe)
        dp_dir_y = np.where(interior, ny, sgn * ry / safe)
        dp = np.where(interior, (qx - ax) * nx + (qy - ay) * ny, sgn * dist)
        s_star = np.where(interior, self.cum[seg] + t * seg_len, self.cum[vi])
        s_gate = interior.astype(np.float64)

        h0 = self.headings[seg]
        h1 = self.headings[seg + 1]
        h_slope = (h1 - h0) / seg_len * s_gate
        h_ref = np.where(interior, h0 + t * (h1 - h0), self.headings[vi])
        v0 = self.v_ref[seg]
        v1 = self.v_ref[seg + 1]
        v_slope = (v1 - v0) / seg_len * s_gate
        v_ref = np.where(interior, v0 + t * (v1 - v0), self.v_ref[vi])

        dv = vx - v_ref
        dphi = wrap_angle(phi - h_ref)

        feat = np.empty((b, 15))
        feat[:, 0] = dp
        feat[:, 1] = dv
        feat[:, 2] = dphi
        pv_tx = np.empty((b, len(PREVIEW_OFFSETS)))
        pv_ty = np.empty_like(pv_tx)
        pv_hs = np.empty_like(pv_tx)
        pv_vs = np.empty_like(pv_tx)
        pv_open = np.empty_like(pv_tx)
        for j, off in enumerate(PREVIEW_OFFSETS):
            sp = s_star + off
            open_mask = (sp > 0.0) & (sp < self.cum[-1])
            sp = np.clip(sp, 0.0, self.cum[-1])
            k = np.clip(np.searchsorted(self.cum, sp, side="right") - 1, 0, len(self.cum) - 2)
            lk = np.maximum(self.cum[k + 1] - self.cum[k], 1e-12)
            u = (sp - self.cum[k]) / lk
            txk = (self.xs[k + 1] - self.xs[k]) / lk
            tyk = (self.ys[k + 1] - self.ys[k]) / lk
            feat[:, 3 + 4 * j] = self.xs[k] + u * (self.xs[k + 1] - self.xs[k])
            feat[:, 4 + 4 * j] = self.ys[k] + u * (self.ys[k + 1] - self.ys[k])
            feat[:, 5 + 4 * j] = self.headings[k] + u * (self.headings[k + 1] - self.headings[k])
            feat[:, 6 + 4 * j] = self.v_ref[k] + u * (self.v_ref[k + 1] - self.v_ref[k])
            pv_tx[:, j] = txk
            pv_ty[:, j] = tyk
            pv_hs[:, j] = (self.headings[k + 1] - self.headings[k]) / lk
            pv_vs[:, j] = (self.v_ref[k + 1] - self.v_ref[k]) / lk
            pv_open[:, j] = open_mask.astype(np.float64)
        cache = dict(dp_dir_x=dp_dir_x, dp_dir_y=dp_dir_y,
                     sx=tx * s_gate, sy=ty * s_gate,
                     h_slope=h_slope, v_slope=v_slope,
                     pv_tx=pv_tx, pv_ty=pv_ty, pv_hs=pv_hs, pv_vs=pv_vs,
                     pv_open=pv_open, s_star=s_star, seg=seg)
        return feat, cache

    @staticmethod
    def features_vjp(cache, dfeat):
        """Adjoint of ``features`` w.r.t. (qx, qy, phi, vx).

        ``dfeat`` is (b, 15) in the same layout the forward pass produces.
        """
        d_dp = dfeat[:, 0]
        d_dv = dfeat[:, 1]
        d_dphi = dfeat[:, 2]
        # everything read off the path at s* pulls the query point along the
        # tangent; vertex-wedge rows have that channel gated off
        ds = -d_dphi * cache["h_slope"] - d_dv * cache["v_slope"]
        for j in range(len(PREVIEW_OFFSETS)):
            gate = cache["pv_open"][:, j]
            ds += gate * (dfeat[:, 3 + 4 * j] * cache["pv_tx"][:, j]
                          + dfeat[:, 4 + 4 * j] * cache["pv_ty"][:, j]
                          + dfeat[:, 5 + 4 * j] * cache["pv_hs"][:, j]
                          + dfeat[:, 6 + 4 * j] * cache["pv_vs"][:, j])
        dqx = d_dp * cache["dp_dir_x"] + ds * cache["sx"]
        dqy = d_dp * cache["dp_dir_y"] + ds * cache["sy"]
        dphi = d_dphi
        dvx = d_dv
        return dqx, dqy, dphi, dvx
