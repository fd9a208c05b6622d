"""Direct open-loop optimization of the finite-horizon tracking problem at a
single observation: multi-start gradient descent with backtracking line
search over the raw action sequence, reusing the rollout machinery.  Serves
as the verification oracle for the trained policy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import encoding, nn, vehicle
from .evaluate import PolicyDriver
from .rollout import RolloutEngine


@dataclass
class OcpSolution:
    actions_raw: np.ndarray          # (T, 2) pre-squash
    actions: np.ndarray              # (T, 2) bounded
    j_track: float
    j_safe: float
    j_total: float
    iterations: int
    converged: bool
    j_history: list = field(default_factory=list)   # accepted objective values


def solve_ocp(engine: RolloutEngine, obs, path, rho_solve: float, *,
              horizon: int | None = None, budget: int = 400, restarts: int = 4,
              grad_tol: float = 1e-6, rng=None) -> OcpSolution:
    """Minimize J_track + rho * J_safe over the raw action sequence.

    Starts from the zero sequence plus ``restarts`` random sequences; each
    start runs gradient descent with Armijo backtracking until the gradient
    infinity-norm drops below ``grad_tol`` or the budget is exhausted.
    """
    T = engine.horizon if horizon is None else horizon
    rng = np.random.default_rng(0) if rng is None else rng
    starts = [np.zeros((T, 2))]
    starts += [rng.normal(0.0, 0.7, size=(T, 2)) for _ in range(restarts)]

    def value_only(raw):
        r = engine.run([obs], [path], None, None, rho_solve, horizon=T,
                       actions_raw=raw[None], need_grads=False)
        return float(r.j_total[0]), r

    def value_grad(raw):
        r = engine.run([obs], [path], None, None, rho_solve, horizon=T,
                       actions_raw=raw[None])
        return float(r.j_total[0]), r.d_actions_raw[0], r

    best = None
    total_iters = 0
    for start in starts:
        raw = start.copy()
        j, g, res = value_grad(raw)
        history = [j]
        alpha = 1.0
        converged = False
        for _ in range(budget):
            total_iters += 1
            gnorm = float(np.max(np.abs(g)))
            if gnorm < grad_tol:
                converged = True
                break
            g2 = float(np.sum(g * g))
            accepted = False
            a = alpha
            for _ in range(40):
                j_new, _ = value_only(raw - a * g)
                if j_new <= j - 1e-4 * a * g2:
                    accepted = True
                    break
                a *= 0.5
            if not accepted:
                break
            raw = raw - a * g
            alpha = min(a * 2.0, 4.0)
            j, g, res = value_grad(raw)
            history.append(j)
        if best is None or j < best.j_total:
            best = OcpSolution(raw, res.actions[0].copy(), float(res.j_track[0]),
                               float(res.j_safe[0]), j, total_iters, converged,
                               history)
    best.iterations = total_iters
    return best


def evaluate_action_grid(engine: RolloutEngine, obs, path, rho_solve: float,
                         n: int = 100):
    """Cost of every bounded action on an n-by-n grid (horizon 1)."""
    vcfg = engine.vehicle_cfg
    steer = np.linspace(vcfg.steer_lo, vcfg.steer_hi, n)
    accel = np.linspace(vcfg.accel_lo, vcfg.accel_hi, n)
    gs, ga = np.meshgrid(steer, accel, indexing="ij")
    actions = np.stack([gs.ravel(), ga.ravel()], axis=1)[:, None, :]
    r = engine.run([obs] * (n * n), [path] * (n * n), None, None, rho_solve,
                   horizon=1, actions_direct=actions, need_grads=False)
    return r.j_total.reshape(n, n), steer, accel


def sample_cases(bundle, make_world, n_cases: int, seed: int, spacing: int = 7):
    """Observations (with their selected paths) gathered while the trained
    policy drives fresh episodes."""
    w = make_world(seed)
    driver = PolicyDriver(bundle, w.vehicle_cfg)
    cases = []
    step_i = 0
    guard = 0
    while len(cases) < n_cases and guard < 100_000:
        guard += 1
        obs, u, idx, _ = driver.act(w)
        if step_i % spacing == 0:
            cases.append((obs, w.candidates[idx]))
        w.step(u)
        step_i += 1
        done = (w.ego_collision() or w.ego_off_road()
                or w.t >= w.cfg.episode_max_s)
        if not done:
            from .evaluate import exit_arc
            path = w.candidates[idx]
            done = float(path.arc_of(w.ego.px, w.ego.py)[0]) >= exit_arc(path, w.cfg)
        if done:
            w.reset()
            driver.reset()
    return cases[:n_cases]


def compare_policy_mpc(bundle, engine: RolloutEngine, make_world, n_cases: int,
                       seed: int, rho_solve: float = 1e4, budget: int = 400,
                       restarts: int = 4):
    """Per-case comparison of the policy's action/cost against the oracle.

    Returns a list of row dicts (the compare-mpc CSV schema).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    cases = sample_cases(bundle, make_world, n_cases, seed)
    rows = []
    for cid, (obs, path) in enumerate(cases):
        t0 = time.perf_counter()
        if bundle.representation == "fp":
            s = encoding.encode_fp(obs)
        else:
            s = encoding.encode_dp(obs, bundle.encoder)
        raw, _ = nn.forward(bundle.policy, s)
        u_pol, _ = vehicle.squash_action(raw, engine.vehicle_cfg)
        t_policy = (time.perf_counter() - t0) * 1e3
        r_pol = engine.run([obs], [path], bundle.policy, bundle.encoder, rho_solve,
                           need_grads=False)
        t0 = time.perf_counter()
        sol = solve_ocp(engine, obs, path, rho_solve, budget=budget,
                        restarts=restarts, rng=rng)
        t_mpc = (time.perf_counter() - t0) * 1e3
        rows.append(dict(case=cid,
                         d_steer=float(abs(u_pol[0] - sol.actions[0, 0])),
                         d_accel=float(abs(u_pol[1] - sol.actions[0, 1])),
                         j_policy=float(r_pol.j_total[0]),
                         j_mpc=sol.j_total,
                         t_policy_ms=t_policy,
                         t_mpc_ms=t_mpc))
    return rows


COMPARE_HEADER = ["case", "d_steer", "d_accel", "j_policy", "j_mpc",
                  "t_policy_ms", "t_mpc_ms"]
