import numpy as np
import pytest
from scipy import stats

from drivelab import encoding, nn, objective, rollout, training, vehicle, world
from drivelab.rollout import RolloutEngine, predict_step

from conftest import fd_check_net, make_observation, tiny_nets


@pytest.fixture()
def rng():
    return np.random.default_rng(5)


@pytest.fixture()
def nets(rng):
    return tiny_nets(rng)


def empty_obs(world_cfg, task="straight", v=0.0, cycle_time=30.0):
    xe = np.zeros(encoding.D2)
    lane = world.ENTRY_LANE[task]
    xe[:6] = [world_cfg.lane_center(lane), -40.0, v, 0.0, np.pi / 2, 0.0]
    z = np.zeros((0, 7))
    return encoding.Observation(z, z, z, xe, cycle_time=cycle_time,
                                u_prev=np.zeros(2), task=task)


# -- predict_step --------------------------------------------------------------

def test_predict_step_equilibrium(world_cfg, vehicle_cfg, lights):
    obs = empty_obs(world_cfg, v=0.0)
    path = world.generate_paths(world_cfg, "straight")[1]
    nxt = predict_step(obs, np.zeros(2), path, world_cfg, vehicle_cfg, lights)
    np.testing.assert_array_equal(nxt.x_else[:6], obs.x_else[:6])
    assert nxt.cycle_time == pytest.approx(obs.cycle_time + 0.1)


def test_predict_step_participant_advance(world_cfg, vehicle_cfg, lights, rng):
    obs = make_observation(rng, world_cfg, task="straight", n_veh=1, n_bike=0, n_ped=0)
    obs.vehicles[0] = [5.0, 10.0, 5.0, 0.0, 4.8, 2.0, 0.0]
    path = world.generate_paths(world_cfg, "straight")[1]
    action = np.array([0.0, 0.3])
    nxt = predict_step(obs, action, path, world_cfg, vehicle_cfg, lights)
    ego_next, _ = vehicle.step_bicycle(obs.x_else[:6], action, vehicle_cfg)
    expected_rel_x = (5.0 + obs.x_else[0]) + 5.0 * 0.1 - ego_next[0]
    assert nxt.vehicles[0, 0] == pytest.approx(expected_rel_x, abs=1e-12)


def test_predict_step_composition_deterministic(world_cfg, vehicle_cfg, lights, rng):
    obs0 = make_observation(rng, world_cfg, task="right", n_veh=2, n_bike=1, n_ped=1)
    path = world.generate_paths(world_cfg, "right")[0]
    actions = rng.normal(0, 0.2, size=(25, 2))

    def run():
        obs = obs0
        out = []
        for i in range(25):
            obs = predict_step(obs, actions[i], path, world_cfg, vehicle_cfg, lights)
            out.append(obs.x_else.copy())
        return np.array(out)

    a = run()
    b = run()
    np.testing.assert_array_equal(a, b)


def test_predict_step_matches_engine(world_cfg, vehicle_cfg, obj_cfg, lights, rng):
    obs0 = make_observation(rng, world_cfg, task="right", n_veh=2, n_bike=1, n_ped=1)
    path = world.generate_paths(world_cfg, "right")[0]
    T = 10
    raw = rng.normal(0, 0.4, size=(1, T, 2))
    eng = RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights, horizon=T)
    res = eng.run([obs0], [path], None, None, 1.0, actions_raw=raw, need_grads=False)
    obs = obs0
    for i in range(T):
        u, _ = vehicle.squash_action(raw[0, i], vehicle_cfg)
        np.testing.assert_allclose(res.ego_traj[0, i], obs.x_else[:6], atol=1e-9)
        obs = predict_step(obs, u, path, world_cfg, vehicle_cfg, lights)


# -- rollout costs ---------------------------------------------------------------

def test_rollout_closed_form_tracking_cost(world_cfg, vehicle_cfg, obj_cfg, lights, rng):
    # ego exactly on the straight path at v_ref, zero-weight policy (raw 0),
    # so the action is constantly (0, -0.75) and only dv and accel terms remain
    path = world.generate_paths(world_cfg, "straight")[1]
    v_ref = float(path.v_ref[0])
    assert np.all(path.v_ref == v_ref)
    xe = np.zeros(encoding.D2)
    xe[:6] = [world_cfg.lane_center(1), -60.0, v_ref, 0.0, np.pi / 2, 0.0]
    z = np.zeros((0, 7))
    obs = encoding.Observation(z, z, z, xe, cycle_time=5.0,
                               u_prev=np.array([0.0, -0.75]), task="straight")
    d3 = 8
    enc, pol, _ = tiny_nets(rng, d3=d3)
    for w in pol.weights:
        w[:] = 0.0
    T = 25
    eng = RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights, horizon=T)
    res = eng.run([obs], [path], pol, enc, 1.0, need_grads=False)
    assert res.j_safe[0] == 0.0
    expected = 0.0
    for i in range(T):
        dv = -0.75 * i * 0.1
        expected += obj_cfg.w_dv * dv ** 2 + obj_cfg.w_accel * 0.75 ** 2
    assert res.j_track[0] == pytest.approx(expected, abs=1e-9)


def test_rollout_costs_nonnegative(small_engine, nets, rng, world_cfg):
    enc, pol, _ = nets
    obs = [make_observation(rng, world_cfg, task="right", n_veh=3, n_bike=1, n_ped=2)
           for _ in range(4)]
    paths = [small_engine.candidates("right")[i % 3] for i in range(4)]
    res = small_engine.run(obs, paths, pol, enc, 2.0, need_grads=False)
    assert np.all(res.j_track >= 0) and np.all(res.j_safe >= 0)


def test_rollout_horizon_one_equals_single_utility(small_engine, nets, rng, world_cfg,
                                                   lights, vehicle_cfg):
    enc, pol, _ = nets
    obs = make_observation(rng, world_cfg, task="straight", n_veh=1, n_bike=0, n_ped=0)
    path = small_engine.candidates("straight")[1]
    res = small_engine.run([obs], [path], pol, enc, 1.0, horizon=1, need_grads=False)
    # the prediction rebuilds the ego/road vector against the rollout's path
    ego = vehicle.EgoState.from_array(obs.x_else[:6])
    xe = world.build_x_else(ego, lights.phase_at(obs.cycle_time), path, vehicle_cfg)
    rebuilt = encoding.Observation(obs.vehicles, obs.bicycles, obs.pedestrians, xe,
                                   obs.cycle_time, obs.u_prev, obs.task)
    s = encoding.encode_dp(rebuilt, enc)
    raw, _ = nn.forward(pol, s)
    u, _ = vehicle.squash_action(raw, small_engine.vehicle_cfg)
    l = objective.utility_batch(xe[encoding.XE_DP:encoding.XE_DP + 1],
                                xe[encoding.XE_DV:encoding.XE_DV + 1],
                                xe[encoding.XE_DPHI:encoding.XE_DPHI + 1],
                                obs.x_else[5:6], u[None, :], obs.u_prev[None, :],
                                0.1, small_engine.obj_cfg)
    assert res.j_track[0] == pytest.approx(float(l[0]), abs=1e-12)


def test_rollout_gradients_fd(world_cfg, vehicle_cfg, obj_cfg, lights, rng):
    enc, pol, _ = tiny_nets(rng)
    eng = RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights, horizon=3)
    obs = [make_observation(rng, world_cfg, task="right", n_veh=2, n_bike=1, n_ped=1,
                            dist_lo=4.0, dist_hi=25.0) for _ in range(2)]
    paths = [eng.candidates("right")[i] for i in range(2)]
    res = eng.run(obs, paths, pol, enc, 2.0)

    def total():
        return float(eng.run(obs, paths, pol, enc, 2.0, need_grads=False).j_total.sum())

    assert fd_check_net(pol, res.g_policy, total) < 1e-4
    assert fd_check_net(enc, res.g_encoder, total) < 1e-4


def test_rollout_zero_penalty_matches_pure_tracking_grads(small_engine, nets, rng,
                                                          world_cfg):
    enc, pol, _ = nets
    obs = [empty_obs(world_cfg, v=5.0)]
    paths = [small_engine.candidates("straight")[1]]
    g1 = small_engine.run(obs, paths, pol, enc, 1.0).g_policy
    g2 = small_engine.run(obs, paths, pol, enc, 7.5).g_policy
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a, b)


def test_rollout_deterministic(small_engine, nets, rng, world_cfg):
    enc, pol, _ = nets
    obs = [make_observation(rng, world_cfg, task="left", n_veh=2, n_bike=1, n_ped=1)]
    paths = [small_engine.candidates("left")[0]]
    r1 = small_engine.run(obs, paths, pol, enc, 2.0)
    r2 = small_engine.run(obs, paths, pol, enc, 2.0)
    np.testing.assert_array_equal(r1.j_track, r2.j_track)
    for a, b in zip(r1.g_policy, r2.g_policy):
        np.testing.assert_array_equal(a, b)


def test_encoder_grad_zero_without_participants(small_engine, nets, world_cfg):
    enc, pol, _ = nets
    obs = [empty_obs(world_cfg, v=4.0)]
    paths = [small_engine.candidates("straight")[1]]
    res = small_engine.run(obs, paths, pol, enc, 2.0)
    assert all(np.all(g == 0.0) for g in res.g_encoder)
    arrays, state, ok = nn.adam_step(enc.arrays(), res.g_encoder,
                                     nn.adam_init(enc.arrays()), 1e-3)
    assert ok
    for a, b in zip(arrays, enc.arrays()):
        np.testing.assert_array_equal(a, b)


def test_per_step_decomposition(small_engine, nets, rng, world_cfg):
    enc, pol, _ = nets
    obs = [make_observation(rng, world_cfg, task="right", n_veh=2, n_bike=1, n_ped=1)]
    paths = [small_engine.candidates("right")[0]]
    T = small_engine.horizon
    full = small_engine.run(obs, paths, pol, enc, 2.0)
    acc = [np.zeros_like(g) for g in full.g_encoder]
    acc_p = [np.zeros_like(g) for g in full.g_policy]
    for i in range(T):
        w = np.zeros(T)
        w[i] = 1.0
        part = small_engine.run(obs, paths, pol, enc, 2.0, step_weights=w)
        for a, g in zip(acc, part.g_encoder):
            a += g
        for a, g in zip(acc_p, part.g_policy):
            a += g
    for a, g in zip(acc, full.g_encoder):
        np.testing.assert_allclose(a, g, atol=1e-10)
    for a, g in zip(acc_p, full.g_policy):
        np.testing.assert_allclose(a, g, atol=1e-10)


def test_no_gradient_into_participants(world_cfg, vehicle_cfg, obj_cfg, lights, rng):
    # perturbing the policy leaves predicted participant trajectories
    # bit-identical
    obs = make_observation(rng, world_cfg, task="right", n_veh=2, n_bike=1, n_ped=1)
    path = world.generate_paths(world_cfg, "right")[0]
    eng = RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights, horizon=10)
    trajs = []
    for seed in (1, 2):
        enc, pol, _ = tiny_nets(np.random.default_rng(seed))
        res = eng.run([obs], [path], pol, enc, 1.0, need_grads=False)
        trajs.append(res.participant_traj)
    np.testing.assert_array_equal(trajs[0], trajs[1])
    # the relative-feature round trip recovers the same positions to float
    # precision regardless of the action applied
    o = obs
    for i in range(9):
        o = predict_step(o, np.array([0.3, 1.0]), path, world_cfg, vehicle_cfg, lights)
        absolute = o.participants()[:, :2] + o.x_else[:2]
        np.testing.assert_allclose(absolute, trajs[0][i + 1], atol=1e-9)


def test_fp_rollout_gradients_fd(world_cfg, vehicle_cfg, obj_cfg, lights, rng):
    # widely separated, slow participants keep the distance ranks stable so
    # the sorted-slot assignment cannot flip inside the horizon
    obs = make_observation(rng, world_cfg, task="right", n_veh=0, n_bike=0, n_ped=0)
    obs.vehicles = np.array([[4.0, 9.0, 0.2, 0.3, 4.8, 2.0, 0.0],
                             [-6.0, 30.0, 0.1, 1.0, 4.8, 2.0, 0.0]])
    obs.bicycles = np.array([[-3.0, 18.0, 0.2, 0.5, 2.0, 0.48, 1.0]])
    pol = nn.init_mlp([encoding.FP_DIM, 4, 4, 2], rng,
                      input_scale=encoding.fp_scale())
    eng = rollout.RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights,
                                horizon=4, fp_mode=True)
    path = eng.candidates("right")[0]
    res = eng.run([obs], [path], pol, None, 2.0)

    def total():
        return float(eng.run([obs], [path], pol, None, 2.0,
                             need_grads=False).j_total.sum())

    assert fd_check_net(pol, res.g_policy, total) < 1e-4


def test_rollout_numerics_error(world_cfg, vehicle_cfg, obj_cfg, lights, rng):
    enc, pol, _ = tiny_nets(rng)
    pol.weights[0][0, 0] = np.nan
    eng = RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights, horizon=3)
    obs = [empty_obs(world_cfg, v=5.0)]
    with pytest.raises((rollout.RolloutNumericsError, ValueError)):
        eng.run(obs, [eng.candidates("straight")[1]], pol, enc, 1.0)


# -- value update -----------------------------------------------------------------

def test_value_loss_and_grads_known_case(rng):
    val = nn.MlpParams([np.zeros((4, 1))], [np.array([3.0])])
    loss, grads = training.value_loss_and_grads(val, np.zeros((1, 4)), np.array([1.0]))
    assert loss == pytest.approx(4.0)
    assert grads[1][0] == pytest.approx(4.0)   # dloss/dV * dV/db = 4 * 1


def test_value_zero_grad_at_targets(rng):
    val = nn.MlpParams([np.zeros((4, 1))], [np.array([2.5])])
    states = rng.normal(size=(6, 4)) * 0.0
    loss, grads = training.value_loss_and_grads(val, states, np.full(6, 2.5))
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads)


def test_value_grads_fd(rng):
    val = nn.init_mlp([5, 4, 1], rng)
    states = rng.normal(size=(3, 5))
    targets = rng.normal(size=3)
    loss, grads = training.value_loss_and_grads(val, states, targets)

    def total():
        l, _ = training.value_loss_and_grads(val, states, targets)
        return l

    assert fd_check_net(val, grads, total) < 1e-4


# -- buffer and schedule ------------------------------------------------------------

def test_buffer_capacity_fifo():
    buf = training.ReplayBuffer(5)
    for i in range(8):
        buf.add(i)
    assert len(buf) == 5
    assert set(buf._data) == {3, 4, 5, 6, 7}


def test_buffer_uniform_sampling():
    buf = training.ReplayBuffer(100)
    for i in range(100):
        buf.add(i)
    rng = np.random.default_rng(0)
    draws = buf.sample(rng, 100_000)
    counts = np.bincount(np.array(draws), minlength=100)
    chi2, p = stats.chisquare(counts)
    assert p > 0.01


def test_rho_schedule_exact():
    pen = training.PenaltyConfig(rho0=1.0, amplifier=1.1, update_interval=100,
                                 rho_max=1e4)
    for k in range(0, 2500, 37):
        assert training.rho_schedule(k, pen) == min(1.1 ** (k // 100), 1e4)
    assert training.rho_schedule(0, pen) == 1.0
    assert training.rho_schedule(99, pen) == 1.0
    assert training.rho_schedule(100, pen) == pytest.approx(1.1)
    assert training.rho_schedule(200, pen) == pytest.approx(1.21)
    assert training.rho_schedule(10 ** 7, pen) == 1e4
