"""Hot numeric kernels.

Loop-heavy kernels (segment pooling, polyline projection, sight-line
occlusion) carry numba @njit implementations with pure-numpy fallbacks;
the numba path is used when numba imports cleanly and the environment
variable ``DRIVELAB_DISABLE_NUMBA`` is unset (or "0").  The selected path
is reported by ``USING_NUMBA`` and ``benchmarks/kernel_bench.py`` compares
the two.

The exact-erf GELU family stays on the vectorized ufunc path in both
modes: on this workload scipy's erf ufunc beats a scalar math.erf loop
under numba by ~1.7x (see the benchmark), so an @njit variant would be a
pessimization.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_disabled = os.environ.get("DRIVELAB_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError("numba disabled via DRIVELAB_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

USING_NUMBA = HAS_NUMBA


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


# ---------------------------------------------------------------------------
# exact-erf GELU (vectorized in both modes)

def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (0.5 * (1.0 + _erf(x * _INV_SQRT2)))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    return cdf + x * (_INV_SQRT2PI * np.exp(-0.5 * x * x))


def gelu_fwd(x):
    """(gelu(x), cdf) with the CDF kept for the backward pass."""
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    return x * cdf, cdf


def gelu_vjp(x, cdf, dy):
    return dy * (cdf + x * (_INV_SQRT2PI * np.exp(-0.5 * x * x)))


# ---------------------------------------------------------------------------
# pure-numpy implementations of the dual-path kernels

def _segment_sum_np(values, seg_ids, n_seg):
    out = np.zeros((n_seg, values.shape[1]), dtype=np.float64)
    np.add.at(out, seg_ids, values)
    return out


def _polyline_project_np(path_x, path_y, qx, qy):
    ax = path_x[:-1]
    ay = path_y[:-1]
    dx = path_x[1:] - ax
    dy = path_y[1:] - ay
    seg_len2 = np.maximum(dx * dx + dy * dy, 1e-12)
    rx = qx[:, None] - ax[None, :]
    ry = qy[:, None] - ay[None, :]
    t = np.clip((rx * dx[None, :] + ry * dy[None, :]) / seg_len2[None, :], 0.0, 1.0)
    ex = rx - t * dx[None, :]
    ey = ry - t * dy[None, :]
    d2 = ex * ex + ey * ey
    seg = np.argmin(d2, axis=1)
    rows = np.arange(qx.shape[0])
    return seg.astype(np.int64), t[rows, seg]


def _clip_both_np(x0, x1, hx, y0, y1, hy):
    dx = x1 - x0
    dy = y1 - y0
    t0 = np.zeros_like(x0)
    t1 = np.ones_like(x0)
    ok = np.ones_like(x0, dtype=bool)
    for s0, dd, h in ((x0, dx, hx), (y0, dy, hy)):
        para = np.abs(dd) < 1e-12
        inside = (s0 >= -h) & (s0 <= h)
        ok &= ~para | inside
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-h - s0) / dd
            tb = (h - s0) / dd
        lo = np.minimum(ta, tb)
        hi = np.maximum(ta, tb)
        lo = np.where(para, 0.0, lo)
        hi = np.where(para, 1.0, hi)
        t0 = np.maximum(t0, lo)
        t1 = np.minimum(t1, hi)
    return ok & (t0 <= t1)


def _segments_blocked_np(ex, ey, tx, ty, self_idx, rcx, rcy, rc, rs, rhl, rhw):
    m = tx.shape[0]
    n = rcx.shape[0]
    if m == 0 or n == 0:
        return np.zeros(m, dtype=np.bool_)
    # endpoints of every sight segment in every rectangle's local frame
    ones = np.ones((m, 1))
    p0x = ex - rcx[None, :]
    p0y = ey - rcy[None, :]
    l0x = (p0x * rc[None, :] + p0y * rs[None, :]) * ones
    l0y = (-p0x * rs[None, :] + p0y * rc[None, :]) * ones
    p1x = tx[:, None] - rcx[None, :]
    p1y = ty[:, None] - rcy[None, :]
    l1x = p1x * rc[None, :] + p1y * rs[None, :]
    l1y = -p1x * rs[None, :] + p1y * rc[None, :]
    hit = _clip_both_np(l0x, l1x, rhl[None, :] * ones, l0y, l1y, rhw[None, :] * ones)
    hit[np.arange(m), self_idx] = False
    return hit.any(axis=1)


# ---------------------------------------------------------------------------
# numba implementations

if USING_NUMBA:

    @njit(cache=True)
    def _segment_sum_nb(values, seg_ids, n_seg):
        out = np.zeros((n_seg, values.shape[1]), dtype=np.float64)
        for i in range(values.shape[0]):
            s = seg_ids[i]
            for j in range(values.shape[1]):
                out[s, j] += values[i, j]
        return out

    @njit(cache=True)
    def _polyline_project_nb(path_x, path_y, qx, qy):
        n_seg = path_x.shape[0] - 1
        b = qx.shape[0]
        seg = np.empty(b, dtype=np.int64)
        tout = np.empty(b, dtype=np.float64)
        for i in range(b):
            best = 1e300
            best_k = 0
            best_t = 0.0
            for k in range(n_seg):
                ax = path_x[k]
                ay = path_y[k]
                dx = path_x[k + 1] - ax
                dy = path_y[k + 1] - ay
                L2 = dx * dx + dy * dy
                if L2 < 1e-12:
                    L2 = 1e-12
                t = ((qx[i] - ax) * dx + (qy[i] - ay) * dy) / L2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                ex = qx[i] - (ax + t * dx)
                ey = qy[i] - (ay + t * dy)
                d2 = ex * ex + ey * ey
                if d2 < best:
                    best = d2
                    best_k = k
                    best_t = t
            seg[i] = best_k
            tout[i] = best_t
        return seg, tout

    @njit(cache=True)
    def _seg_rect_hit_nb(p0x, p0y, p1x, p1y, cx, cy, c, s, hl, hw):
        # segment vs oriented rectangle via slab clipping in the rect frame
        q0x = (p0x - cx) * c + (p0y - cy) * s
        q0y = -(p0x - cx) * s + (p0y - cy) * c
        q1x = (p1x - cx) * c + (p1y - cy) * s
        q1y = -(p1x - cx) * s + (p1y - cy) * c
        t0 = 0.0
        t1 = 1.0
        for axis in range(2):
            if axis == 0:
                s0 = q0x
                dd = q1x - q0x
                h = hl
            else:
                s0 = q0y
                dd = q1y - q0y
                h = hw
            if abs(dd) < 1e-12:
                if s0 < -h or s0 > h:
                    return False
            else:
                ta = (-h - s0) / dd
                tb = (h - s0) / dd
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                if tb < t1:
                    t1 = tb
                if t0 > t1:
                    return False
        return True

    @njit(cache=True)
    def _segments_blocked_nb(ex, ey, tx, ty, self_idx, rcx, rcy, rc, rs, rhl, rhw):
        m = tx.shape[0]
        n = rcx.shape[0]
        blocked = np.zeros(m, dtype=np.bool_)
        for j in range(m):
            for k in range(n):
                if k == self_idx[j]:
                    continue
                if _seg_rect_hit_nb(ex, ey, tx[j], ty[j], rcx[k], rcy[k],
                                    rc[k], rs[k], rhl[k], rhw[k]):
                    blocked[j] = True
                    break
        return blocked

    segment_sum = _segment_sum_nb
    polyline_project = _polyline_project_nb
    segments_blocked = _segments_blocked_nb
else:
    segment_sum = _segment_sum_np
    polyline_project = _polyline_project_np
    segments_blocked = _segments_blocked_np
