"""Observation container and the two state representations: the learned
set-sum encoding (order/count invariant) and the sorted nearest-K baseline.

Feature layouts are fixed here and documented in the README; the flat
serialization record is the wire format shared with fixtures and tools.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels, nn

log = logging.getLogger(__name__)

D1 = 7    # per-participant feature width
D2 = 24   # ego/road vector width
DEFAULT_D3 = 155

MAX_VEHICLES = 10
MAX_BICYCLES = 6
MAX_PEDESTRIANS = 6
DEFAULT_CAPS = (MAX_VEHICLES, MAX_BICYCLES, MAX_PEDESTRIANS)

FP_COUNTS = (8, 4, 4)
FP_DIM = sum(FP_COUNTS) * D1 + D2

# participant feature columns
F_RELX, F_RELY, F_SPEED, F_HEADING, F_LENGTH, F_WIDTH, F_KIND = range(7)

# x_else columns
XE_PX, XE_PY, XE_VX, XE_VY, XE_PHI, XE_OMEGA, XE_LEN, XE_WID, XE_PHASE, \
    XE_DP, XE_DV, XE_DPHI = range(12)
XE_PREVIEW = 12   # then 3 blocks of (x_ref, y_ref, heading_ref, v_ref)

# fixed per-feature input scaling baked into the networks (keeps raw
# meter-scale features inside the responsive range of the activations)
PARTICIPANT_SCALE = np.array([1 / 40, 1 / 40, 1 / 10, 1 / np.pi, 1 / 5, 1 / 2, 1.0])
XELSE_SCALE = np.array([1 / 40, 1 / 40, 1 / 10, 1 / 2, 1 / np.pi, 1.0,
                        1 / 5, 1 / 2, 1 / 5, 1 / 3, 1 / 5, 1 / np.pi]
                       + [1 / 40, 1 / 40, 1 / np.pi, 1 / 10] * 3)


def state_scale(d3: int) -> np.ndarray:
    """Input scaling for networks fed the encoded state."""
    return np.concatenate([np.ones(d3), XELSE_SCALE])


def fp_scale() -> np.ndarray:
    """Input scaling for networks fed the sorted fixed-slot state."""
    return np.concatenate([np.tile(PARTICIPANT_SCALE, sum(FP_COUNTS)), XELSE_SCALE])


@dataclass
class Observation:
    """Raw perceived scene: three variable-size participant sets plus the
    24-wide ego/road vector.  The extra fields carry prediction-time context
    (light clock, previous action, task) and are not part of the wire record.
    """

    vehicles: np.ndarray
    bicycles: np.ndarray
    pedestrians: np.ndarray
    x_else: np.ndarray
    cycle_time: float = 0.0
    u_prev: np.ndarray = field(default_factory=lambda: np.zeros(2))
    task: str = "straight"

    def __post_init__(self):
        self.vehicles = np.asarray(self.vehicles, dtype=np.float64).reshape(-1, D1)
        self.bicycles = np.asarray(self.bicycles, dtype=np.float64).reshape(-1, D1)
        self.pedestrians = np.asarray(self.pedestrians, dtype=np.float64).reshape(-1, D1)
        self.x_else = np.asarray(self.x_else, dtype=np.float64).reshape(D2)

    def participants(self) -> np.ndarray:
        """All participants stacked in canonical order (veh, bike, ped)."""
        return np.concatenate([self.vehicles, self.bicycles, self.pedestrians], axis=0)

    def counts(self):
        return len(self.vehicles), len(self.bicycles), len(self.pedestrians)


def _nearest(rows: np.ndarray, k: int) -> np.ndarray:
    """Keep the k nearest rows (by relative distance), sorted increasing."""
    if len(rows) == 0:
        return rows
    d = np.hypot(rows[:, F_RELX], rows[:, F_RELY])
    order = np.argsort(d, kind="stable")[:k]
    return rows[order]


def truncate_observation(obs: Observation, caps=DEFAULT_CAPS) -> Observation:
    """Enforce per-type caps, keeping the nearest participants."""
    l, m, n = obs.counts()
    if l <= caps[0] and m <= caps[1] and n <= caps[2]:
        return obs
    log.debug("participant caps exceeded (%d/%d/%d), truncating to %s", l, m, n, caps)
    return Observation(_nearest(obs.vehicles, caps[0]), _nearest(obs.bicycles, caps[1]),
                       _nearest(obs.pedestrians, caps[2]), obs.x_else,
                       obs.cycle_time, obs.u_prev, obs.task)


def encode_dp(obs: Observation, encoder: nn.MlpParams, caps=DEFAULT_CAPS) -> np.ndarray:
    """Fixed-width state from the set-sum encoding: concat(sum h(x), x_else)."""
    obs = truncate_observation(obs, caps)
    d3 = encoder.n_out
    rows = obs.participants()
    if len(rows) == 0:
        x_set = np.zeros(d3)
    else:
        h, _ = nn.forward(encoder, rows)
        x_set = h.sum(axis=0)
    return np.concatenate([x_set, obs.x_else])


def encode_dp_backward(obs: Observation, encoder: nn.MlpParams, state_adjoint,
                       caps=DEFAULT_CAPS):
    """Adjoint of ``encode_dp``.

    Returns (grad_weights, grad_biases, participant_grads, x_else_adjoint).
    """
    obs = truncate_observation(obs, caps)
    d3 = encoder.n_out
    state_adjoint = np.asarray(state_adjoint, dtype=np.float64)
    d_xset = state_adjoint[:d3]
    d_xelse = state_adjoint[d3:].copy()
    rows = obs.participants()
    if len(rows) == 0:
        gw = [np.zeros_like(w) for w in encoder.weights]
        gb = [np.zeros_like(b) for b in encoder.biases]
        return gw, gb, np.zeros((0, D1)), d_xelse
    _, tape = nn.forward(encoder, rows)
    dh = np.broadcast_to(d_xset, (len(rows), d3))
    gw, gb, dfeat = nn.backward(tape, dh)
    return gw, gb, dfeat, d_xelse


def encode_fp(obs: Observation) -> np.ndarray:
    """Sorted nearest-K baseline: 8 vehicles, 4 bicycles, 4 pedestrians by
    increasing relative distance, zero-padded (kind kept per slot type)."""
    parts = []
    for rows, k, kind in ((obs.vehicles, FP_COUNTS[0], 0.0),
                          (obs.bicycles, FP_COUNTS[1], 1.0),
                          (obs.pedestrians, FP_COUNTS[2], 2.0)):
        kept = _nearest(rows, k)
        pad = np.zeros((k - len(kept), D1))
        pad[:, F_KIND] = kind
        parts.append(np.concatenate([kept, pad], axis=0).reshape(-1))
    parts.append(obs.x_else)
    return np.concatenate(parts)


def fp_slot_indices(obs: Observation):
    """Slot assignment of the baseline layout: for each type, indices of the
    rows (into that type's array) occupying the slots, in slot order."""
    out = []
    for rows, k in ((obs.vehicles, FP_COUNTS[0]), (obs.bicycles, FP_COUNTS[1]),
                    (obs.pedestrians, FP_COUNTS[2])):
        if len(rows) == 0:
            out.append(np.empty(0, dtype=np.int64))
            continue
        d = np.hypot(rows[:, F_RELX], rows[:, F_RELY])
        out.append(np.argsort(d, kind="stable")[:k].astype(np.int64))
    return out


# ---------------------------------------------------------------------------
# wire format: int64 counts (L, M, N) then float64 participant rows in
# canonical order, then the 24 x_else values; everything little-endian

_HEADER = struct.Struct("<3q")


def obs_to_record(obs: Observation) -> bytes:
    l, m, n = obs.counts()
    body = np.concatenate([obs.participants().reshape(-1), obs.x_else])
    return _HEADER.pack(l, m, n) + body.astype("<f8").tobytes()


def obs_from_record(buf: bytes) -> Observation:
    l, m, n = _HEADER.unpack_from(buf)
    vals = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
    expect = (l + m + n) * D1 + D2
    if vals.size != expect:
        raise ValueError("record size mismatch: %d values, expected %d" % (vals.size, expect))
    rows = vals[:(l + m + n) * D1].reshape(-1, D1)
    return Observation(rows[:l], rows[l:l + m], rows[l + m:], vals[-D2:])
