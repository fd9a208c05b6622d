import numpy as np
import pytest

from drivelab import encoding, nn, objective, rollout, vehicle, world


@pytest.fixture(scope="session")
def world_cfg():
    return world.WorldConfig()


@pytest.fixture(scope="session")
def vehicle_cfg():
    return vehicle.VehicleConfig()


@pytest.fixture(scope="session")
def obj_cfg():
    return objective.ObjectiveConfig()


@pytest.fixture(scope="session")
def lights():
    return world.LightSystem()


def make_participants(rng, n, kind, dist_lo=5.0, dist_hi=50.0):
    shapes = {0: (4.8, 2.0), 1: (2.0, 0.48), 2: (0.48, 0.48)}
    rows = np.zeros((n, encoding.D1))
    if n == 0:
        return rows
    ang = rng.uniform(-np.pi, np.pi, n)
    d = rng.uniform(dist_lo, dist_hi, n)
    rows[:, encoding.F_RELX] = d * np.cos(ang)
    rows[:, encoding.F_RELY] = d * np.sin(ang)
    rows[:, encoding.F_SPEED] = rng.uniform(0.0, 8.0, n)
    rows[:, encoding.F_HEADING] = rng.uniform(-np.pi, np.pi, n)
    rows[:, encoding.F_LENGTH] = shapes[kind][0]
    rows[:, encoding.F_WIDTH] = shapes[kind][1]
    rows[:, encoding.F_KIND] = kind
    return rows


def make_observation(rng, wcfg, task="right", n_veh=2, n_bike=1, n_ped=1,
                     dist_lo=5.0, dist_hi=50.0, cycle_time=None, back=None,
                     speed=None):
    """Synthetic observation with the ego on its approach lane."""
    lane = world.ENTRY_LANE[task]
    back = rng.uniform(4.0, 30.0) if back is None else back
    x0 = wcfg.lane_center(lane) + rng.normal(0.0, 0.3)
    y0 = -wcfg.stop_line_dist - back
    ego = np.array([x0, y0, rng.uniform(3.0, 8.0) if speed is None else speed,
                    rng.normal(0.0, 0.1), np.pi / 2 + rng.normal(0.0, 0.05),
                    rng.normal(0.0, 0.05)])
    xe = np.zeros(encoding.D2)
    xe[:6] = ego
    xe[encoding.XE_LEN] = 4.8
    xe[encoding.XE_WID] = 2.0
    return encoding.Observation(
        make_participants(rng, n_veh, 0, dist_lo, dist_hi),
        make_participants(rng, n_bike, 1, dist_lo, dist_hi),
        make_participants(rng, n_ped, 2, dist_lo, dist_hi),
        xe,
        cycle_time=float(rng.uniform(0.0, 120.0)) if cycle_time is None else cycle_time,
        u_prev=rng.normal(0.0, 0.2, 2),
        task=task)


def tiny_nets(rng, d3=8, hidden=4):
    enc = nn.init_mlp([encoding.D1, hidden, hidden, d3], rng,
                      input_scale=encoding.PARTICIPANT_SCALE)
    pol = nn.init_mlp([d3 + encoding.D2, hidden, hidden, 2], rng,
                      input_scale=encoding.state_scale(d3))
    val = nn.init_mlp([d3 + encoding.D2, hidden, hidden, 1], rng,
                      input_scale=encoding.state_scale(d3))
    return enc, pol, val


@pytest.fixture()
def small_engine(world_cfg, vehicle_cfg, obj_cfg, lights):
    return rollout.RolloutEngine(world_cfg, vehicle_cfg, obj_cfg, lights, horizon=5)


def fd_check_net(net, grads, total_fn, h=1e-6, floor=1e-6):
    """Worst relative error of analytic grads vs central finite differences."""
    worst = 0.0
    for ai, a in enumerate(net.arrays()):
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            f1 = total_fn()
            a[idx] = orig - h
            f0 = total_fn()
            a[idx] = orig
            fd = (f1 - f0) / (2.0 * h)
            an = grads[ai][idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), floor))
    return worst
