"""Dense feed-forward networks with hand-rolled reverse-mode gradients.

Networks are plain lists of numpy arrays: GELU on hidden layers, linear
output.  ``forward`` records a tape of primal values; ``backward`` replays
it once in reverse.  Training uses Adam with a cosine-annealed step size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


class TapeError(RuntimeError):
    """Raised when a gradient tape is replayed twice or out of order."""


def gelu(x):
    """Exact GELU, x * Phi(x) with the standard-normal CDF."""
    out = kernels.gelu(x)
    return float(out) if np.ndim(x) == 0 else out


def gelu_grad(x):
    out = kernels.gelu_grad(x)
    return float(out) if np.ndim(x) == 0 else out


@dataclass
class MlpParams:
    """Weights/biases per layer; weights[l] has shape (n_in, n_out).

    ``input_scale`` is an optional fixed per-feature scaling applied before
    the first layer (not trained, not checkpointed; reconstructed from the
    network's role).
    """

    weights: list
    biases: list
    input_scale: np.ndarray | None = None

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def widths(self) -> list:
        return [self.n_in] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_arrays(self, arrs) -> "MlpParams":
        ws = [arrs[2 * i] for i in range(len(self.weights))]
        bs = [arrs[2 * i + 1] for i in range(len(self.weights))]
        return MlpParams(ws, bs, self.input_scale)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.input_scale)


def init_mlp(widths, rng, input_scale=None) -> MlpParams:
    """Glorot-uniform weights, zero biases.  ``widths`` includes in and out."""
    ws, bs = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        lim = math.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
        bs.append(np.zeros(n_out))
    if input_scale is not None:
        input_scale = np.asarray(input_scale, dtype=np.float64)
        if input_scale.shape != (widths[0],):
            raise ValueError("input_scale length %d != input width %d"
                             % (input_scale.size, widths[0]))
    return MlpParams(ws, bs, input_scale)


@dataclass
class GradientTape:
    """Primal values of one forward pass, consumable exactly once."""

    params: MlpParams
    acts: list = field(default_factory=list)   # input to each layer (scaled)
    zs: list = field(default_factory=list)     # hidden (pre-activation, cdf) pairs
    squeezed: bool = False
    used: bool = False


def forward(params: MlpParams, x):
    """Run the network; returns (output, tape)."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != params.n_in:
        raise ValueError("input width %d, network expects %d" % (x.shape[1], params.n_in))
    a = x * params.input_scale if params.input_scale is not None else x
    tape = GradientTape(params, squeezed=squeezed)
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.acts.append(a)
        z = a @ w
        z += b
        if l < n_layers - 1:
            a, cdf = kernels.gelu_fwd(z)
            tape.zs.append((z, cdf))
        else:
            a = z
    y = a[0] if squeezed else a
    return y, tape


def backward(tape: GradientTape, dy):
    """Vector-Jacobian product through a recorded forward pass.

    Returns (grad_weights, grad_biases, grad_input); weight gradients are
    summed over the batch.
    """
    if tape.used:
        raise TapeError("gradient tape already consumed")
    tape.used = True
    params = tape.params
    dy = np.asarray(dy, dtype=np.float64)
    if dy.ndim == 1:
        dy = dy[None, :]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    d = dy
    for l in range(len(params.weights) - 1, -1, -1):
        a = tape.acts[l]
        gw[l] = a.T @ d
        gb[l] = d.sum(axis=0)
        d = d @ params.weights[l].T
        if l > 0:
            z, cdf = tape.zs[l - 1]
            d = kernels.gelu_vjp(z, cdf, d)
    if params.input_scale is not None:
        d = d * params.input_scale
    if tape.squeezed:
        d = d[0]
    return gw, gb, d


# ---------------------------------------------------------------------------
# Adam with cosine-annealed learning rate

@dataclass
class AdamState:
    m: list
    v: list
    step_count: int
    beta1: float
    beta2: float
    eps: float


def adam_init(arrays, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState([np.zeros_like(a) for a in arrays],
                     [np.zeros_like(a) for a in arrays], 0, beta1, beta2, eps)


def adam_step(arrays, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update.

    Non-finite gradients reject the whole update (returns ok=False, params
    and moments untouched).
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            log.warning("non-finite gradient; update %d rejected", state.step_count + 1)
            return arrays, state, False
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_a = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * (g * g)
        step = lr * (m2 / c1) / (np.sqrt(v2 / c2) + state.eps)
        new_m.append(m2)
        new_v.append(v2)
        new_a.append(a - step)
    return new_a, AdamState(new_m, new_v, t, b1, b2, state.eps), True


def cosine_lr(it: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from lr_start (it=0) to lr_end (it=total)."""
    if total <= 0:
        raise ValueError("total must be positive")
    if it < 0:
        raise ValueError("iteration must be non-negative")
    if it > total:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * it / total))
