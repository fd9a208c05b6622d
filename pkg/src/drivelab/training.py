"""Replay buffer, the three network updates, and the alternating
sampling/optimization loop with geometric penalty amplification.

Default worker counts (one sampler, one learner) run a fully sequential,
bit-deterministic loop.  Larger counts run sampler and learner threads
against the shared buffer with serialized parameter application; gradients
may then be computed against a slightly stale parameter version.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from . import __version__, checkpoint, encoding, evaluate, nn, objective, rollout, vehicle, world

log = logging.getLogger(__name__)


@dataclass
class PenaltyConfig:
    rho0: float = 1.0
    amplifier: float = 1.1
    update_interval: int = 100
    rho_max: float = 1e4


@dataclass
class TrainConfig:
    representation: str = "dp"        # dp | fp
    hidden_width: int = 256
    hidden_layers: int = 2
    d3: int = encoding.DEFAULT_D3
    horizon: int = 25
    batch_size: int = 256
    iterations: int = 200000
    lr_policy_start: float = 3e-4
    lr_policy_end: float = 1e-5
    lr_value_start: float = 8e-4
    lr_value_end: float = 1e-5
    lr_encoder_start: float = 8e-4
    lr_encoder_end: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    env_steps_per_iter: int = 2
    warmup_steps: int = 512
    task: str = "left"
    log_interval: int = 1
    checkpoint_interval: int = 1000
    actors: int = 1
    learners: int = 1
    buffer_capacity: int = 500_000
    store_states: bool = False        # stale-state ablation
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)


def rho_schedule(k: int, pen: PenaltyConfig) -> float:
    n = k // pen.update_interval
    if pen.amplifier > 1.0:
        # cap the exponent before exponentiation can overflow
        import math
        n_cap = math.log(pen.rho_max / pen.rho0) / math.log(pen.amplifier)
        if n >= n_cap:
            return float(pen.rho_max)
    return float(min(pen.rho0 * pen.amplifier ** n, pen.rho_max))


class ReplayBuffer:
    """FIFO ring of raw observations with uniform sampling."""

    def __init__(self, capacity: int):
        self.capacity = int(capacity)
        self._data: list = []
        self._pos = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._data)

    def add(self, item):
        with self._lock:
            if len(self._data) < self.capacity:
                self._data.append(item)
            else:
                self._data[self._pos] = item
                self._pos = (self._pos + 1) % self.capacity

    def sample(self, rng: np.random.Generator, k: int) -> list:
        with self._lock:
            idx = rng.integers(0, len(self._data), size=k)
            return [self._data[i] for i in idx]


class Trainer:
    def __init__(self, world_cfg: world.WorldConfig, vehicle_cfg: vehicle.VehicleConfig,
                 obj_cfg: objective.ObjectiveConfig, cfg: TrainConfig, seed: int):
        self.cfg = cfg
        self.world_cfg = world_cfg
        self.vehicle_cfg = vehicle_cfg
        self.obj_cfg = obj_cfg
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        init_ss, buf_ss, tau_ss, *world_ss = ss.spawn(3 + max(cfg.actors, 1))
        init_rng = np.random.default_rng(init_ss)
        self.rng_buffer = np.random.default_rng(buf_ss)
        self.rng_tau = np.random.default_rng(tau_ss)

        hw = [cfg.hidden_width] * cfg.hidden_layers
        self.fp_mode = cfg.representation == "fp"
        if self.fp_mode:
            state_dim = encoding.FP_DIM
            scale = encoding.fp_scale()
            self.encoder = None
            self.adam_encoder = None
        else:
            state_dim = cfg.d3 + encoding.D2
            scale = encoding.state_scale(cfg.d3)
            self.encoder = nn.init_mlp([encoding.D1] + hw + [cfg.d3], init_rng,
                                       input_scale=encoding.PARTICIPANT_SCALE)
            self.adam_encoder = nn.adam_init(self.encoder.arrays(), cfg.adam_beta1,
                                             cfg.adam_beta2, cfg.adam_eps)
        self.policy = nn.init_mlp([state_dim] + hw + [2], init_rng, input_scale=scale)
        self.value = nn.init_mlp([state_dim] + hw + [1], init_rng, input_scale=scale.copy())
        self.adam_policy = nn.adam_init(self.policy.arrays(), cfg.adam_beta1,
                                        cfg.adam_beta2, cfg.adam_eps)
        self.adam_value = nn.adam_init(self.value.arrays(), cfg.adam_beta1,
                                       cfg.adam_beta2, cfg.adam_eps)

        lights = world.LightSystem(world_cfg.phase_durations)
        self.engine = rollout.RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights,
                                            horizon=cfg.horizon, fp_mode=self.fp_mode)
        self.worlds = [world.World(world_cfg, cfg.task, w_ss)
                       for w_ss in world_ss[:max(cfg.actors, 1)]]
        self._exit_arcs: dict = {}
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.k = 0
        self.metrics: list = []
        self._param_lock = threading.Lock()

    # -- sampling -----------------------------------------------------------

    def bundle(self) -> checkpoint.CheckpointBundle:
        return checkpoint.CheckpointBundle(
            self.policy, self.value, self.encoder, self.cfg.representation,
            self.k, self.seed, self.cfg.d3 if not self.fp_mode else 0)

    def _exit_arc(self, path):
        if id(path) not in self._exit_arcs:
            self._exit_arcs[id(path)] = evaluate.exit_arc(path, self.world_cfg)
        return self._exit_arcs[id(path)]

    def env_step(self, w: world.World, driver: evaluate.PolicyDriver):
        with self._param_lock:
            driver.policy = self.policy
            driver.value = self.value
            driver.encoder = self.encoder
        obs, u, idx, _ = driver.act(w)
        if self.cfg.store_states:
            s0 = (encoding.encode_fp(obs) if self.fp_mode
                  else encoding.encode_dp(obs, driver.encoder))
            self.buffer.add((obs, s0))
        else:
            self.buffer.add((obs, None))
        w.step(u)
        path = w.candidates[idx]
        done = (w.ego_collision() or w.ego_off_road()
                or w.t >= self.world_cfg.episode_max_s
                or float(path.arc_of(w.ego.px, w.ego.py)[0]) >= self._exit_arc(path))
        if done:
            w.reset()
            driver.reset()

    # -- optimization -------------------------------------------------------

    def optimize(self, k: int, batch) -> dict:
        cfg = self.cfg
        b = len(batch)
        rho = rho_schedule(k, cfg.penalty)
        obs_batch = [item[0] for item in batch]
        paths = [self.engine.candidates(o.task)[self.rng_tau.integers(0, 3)]
                 for o in obs_batch]
        s0_override = None
        if cfg.store_states:
            s0_override = np.stack([item[1] for item in batch], axis=0)
        with self._param_lock:
            policy, value, enc = self.policy, self.value, self.encoder
        res = self.engine.run(obs_batch, paths, policy, enc, rho,
                              grad_seed=np.full(b, 1.0 / b), need_state0=True,
                              s0_override=s0_override)
        j_v, g_value = value_loss_and_grads(value, res.state0, res.j_track)

        lr_v = nn.cosine_lr(k, cfg.iterations, cfg.lr_value_start, cfg.lr_value_end)
        lr_e = nn.cosine_lr(k, cfg.iterations, cfg.lr_encoder_start, cfg.lr_encoder_end)
        lr_p = nn.cosine_lr(k, cfg.iterations, cfg.lr_policy_start, cfg.lr_policy_end)

        with self._param_lock:
            arrays, self.adam_value, ok_v = nn.adam_step(
                self.value.arrays(), g_value, self.adam_value, lr_v)
            if ok_v:
                self.value = self.value.with_arrays(arrays)
            if not self.fp_mode:
                arrays, self.adam_encoder, ok_e = nn.adam_step(
                    self.encoder.arrays(), res.g_encoder, self.adam_encoder, lr_e)
                if ok_e:
                    self.encoder = self.encoder.with_arrays(arrays)
            arrays, self.adam_policy, ok_p = nn.adam_step(
                self.policy.arrays(), res.g_policy, self.adam_policy, lr_p)
            if ok_p:
                self.policy = self.policy.with_arrays(arrays)

        return dict(iteration=k, j_pi=float(np.mean(res.j_total)),
                    j_track=float(np.mean(res.j_track)),
                    j_safe=float(np.mean(res.j_safe)), j_v=j_v, rho=rho, lr=lr_p)

    # -- loops ---------------------------------------------------------------

    def train(self, iterations: int | None = None, out_dir: str | None = None,
              progress=None):
        cfg = self.cfg
        iters = cfg.iterations if iterations is None else iterations
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        try:
            if cfg.actors <= 1 and cfg.learners <= 1:
                self._train_sequential(iters, out_dir, progress)
            else:
                self._train_threaded(iters, out_dir, progress)
        except KeyboardInterrupt:
            if out_dir:
                self.save_checkpoint(out_dir)
                self.write_metrics(out_dir)
            raise
        if out_dir:
            self.save_checkpoint(out_dir)
            self.write_metrics(out_dir)

    def _train_sequential(self, iters, out_dir, progress):
        cfg = self.cfg
        driver = evaluate.PolicyDriver(self.bundle(), self.vehicle_cfg)
        w = self.worlds[0]
        need = max(cfg.warmup_steps, cfg.batch_size, 1)
        while len(self.buffer) < need and iters > 0:
            self.env_step(w, driver)
        for k in range(iters):
            self.k = k
            for _ in range(cfg.env_steps_per_iter):
                self.env_step(w, driver)
            batch = self.buffer.sample(self.rng_buffer, cfg.batch_size)
            row = self.optimize(k, batch)
            if k % cfg.log_interval == 0:
                self.metrics.append(row)
            if progress is not None:
                progress(row)
            if out_dir and cfg.checkpoint_interval and k and k % cfg.checkpoint_interval == 0:
                self.save_checkpoint(out_dir)
        self.k = iters

    def _train_threaded(self, iters, out_dir, progress):
        cfg = self.cfg
        stop = threading.Event()
        need = max(cfg.warmup_steps, cfg.batch_size, 1)

        def sampler(w):
            driver = evaluate.PolicyDriver(self.bundle(), self.vehicle_cfg)
            while not stop.is_set():
                self.env_step(w, driver)

        threads = [threading.Thread(target=sampler, args=(w,), daemon=True)
                   for w in self.worlds]
        for t in threads:
            t.start()
        while len(self.buffer) < need and iters > 0:
            stop.wait(0.01)

        counter_lock = threading.Lock()
        next_k = [0]
        rows: dict = {}

        def learner():
            while True:
                with counter_lock:
                    k = next_k[0]
                    if k >= iters:
                        return
                    next_k[0] += 1
                batch = self.buffer.sample(self.rng_buffer, cfg.batch_size)
                row = self.optimize(k, batch)
                with counter_lock:
                    rows[k] = row
                    self.k = max(self.k, k + 1)
                if progress is not None:
                    progress(row)

        learners = [threading.Thread(target=learner, daemon=True)
                    for _ in range(max(cfg.learners, 1))]
        for t in learners:
            t.start()
        for t in learners:
            t.join()
        stop.set()
        for t in threads:
            t.join(timeout=5.0)
        self.k = iters
        for k in sorted(rows):
            if k % cfg.log_interval == 0:
                self.metrics.append(rows[k])

    # -- outputs -------------------------------------------------------------

    def save_checkpoint(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "checkpoints", "iter_%08d" % self.k)
        checkpoint.save_checkpoint(path, self.bundle())
        return path

    def write_metrics(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "metrics.csv")
        write_metrics_csv(path, self.metrics, self.seed)
        return path


def nn_grad_list(gw, gb):
    out = []
    for w, b in zip(gw, gb):
        out.append(w)
        out.append(b)
    return out


def value_loss_and_grads(value: nn.MlpParams, states, targets):
    """Mean squared error of V against fixed rollout-cost targets, and its
    gradient list (2 * residual * dV/dw, batch-averaged)."""
    targets = np.asarray(targets, dtype=np.float64)
    b = targets.shape[0]
    v_out, tape = nn.forward(value, states)
    resid = v_out[:, 0] - targets
    loss = float(np.mean(resid ** 2))
    gw, gb, _ = nn.backward(tape, (2.0 * resid / b)[:, None])
    return loss, nn_grad_list(gw, gb)


def write_metrics_csv(path: str, rows: list, seed: int):
    cols = ["iteration", "j_pi", "j_track", "j_safe", "j_v", "rho", "lr"]
    lines = ["# drivelab %s seed=%d" % (__version__, seed), ",".join(cols)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols))
    data = ("\n".join(lines) + "\n").encode()
    checkpoint._atomic_write(path, data)
