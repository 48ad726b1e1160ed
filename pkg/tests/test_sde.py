import json
import math

import numpy as np
import pytest

from agnostic_control import (
    BrownianPath, Diverged, ExperimentConfig, InvalidArgument, first_crossing, generate_brownian,
    simulate, simulate_batch,
)
from agnostic_control.sde import NoiseSource, path_rng
from agnostic_control.strategies import NULL, ConstantGain, Strategy


def _still(n, dt=1e-3):
    return BrownianPath(dt, np.zeros(n), seed=0)


def test_brownian_is_deterministic_and_indexed():
    a = generate_brownian(1.0, 1e-3, seed=5, index=2)
    b = generate_brownian(1.0, 1e-3, seed=5, index=2)
    c = generate_brownian(1.0, 1e-3, seed=5, index=3)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)
    assert len(a.increments) == 1000
    assert a.horizon == pytest.approx(1.0)


def test_brownian_increment_variance():
    w = generate_brownian(50.0, 1e-2, seed=1).increments
    assert np.var(w) == pytest.approx(1e-2, rel=0.05)


@pytest.mark.parametrize("horizon,dt", [(0.0, 1e-3), (1.0, 0.0), (-1.0, 1e-3)])
def test_brownian_rejects_bad_arguments(horizon, dt):
    with pytest.raises(InvalidArgument):
        generate_brownian(horizon, dt, seed=0)


def test_noise_blocks_do_not_depend_on_split():
    whole = NoiseSource(9, 0, 4).block(700)
    src = NoiseSource(9, 0, 4)
    parts = np.hstack([src.block(300), src.block(400)])
    assert np.array_equal(whole, parts)
    # a path's stream does not depend on which batch it is in
    assert np.array_equal(NoiseSource(9, 2, 3).block(700)[0], whole[2])


def test_noise_matches_single_path_generator():
    z = NoiseSource(3, 5, 6).block(10)[0]
    assert np.array_equal(z, path_rng(3, 5).standard_normal(10))


def test_noiseless_euler_recursion():
    dt, a = 1e-3, 2.0
    traj = simulate(NULL, a, 1.0, 1.0, _still(1000, dt))
    expected = (1 + a * dt) ** np.arange(1001)
    assert np.allclose(traj.q, expected, rtol=1e-12)
    # left-endpoint quadrature of q^2
    assert traj.cost == pytest.approx(np.sum(expected[:-1] ** 2) * dt, rel=1e-12)


def test_zero_start_zero_noise_stays_put():
    traj = simulate(ConstantGain(3.0), 5.0, 0.0, 1.0, _still(1000))
    assert np.all(traj.q == 0) and np.all(traj.u == 0) and traj.cost == 0


def test_partial_last_step():
    traj = simulate(NULL, 0.0, 1.0, 0.0105, _still(20))
    assert traj.times[-1] == 0.0105
    assert len(traj.times) == 12
    assert traj.cost == pytest.approx(0.0105)


def test_short_path_rejected():
    with pytest.raises(InvalidArgument):
        simulate(NULL, 0.0, 1.0, 1.0, _still(10))


def test_divergence_is_reported():
    with pytest.raises(Diverged) as info:
        simulate(NULL, 3000.0, 1.0, 1.0, _still(1000))
    assert 0 < info.value.t <= 1.0
    res = simulate_batch(NULL, 3000.0, 1.0, 1.0, np.zeros((2, 1000)), 1e-3)
    assert res.diverged.all() and np.isinf(res.cost).all()


class _BadShape(Strategy):
    def control(self, t, q, state, active):
        return np.zeros(len(q) + 1)


class _NaN(Strategy):
    def control(self, t, q, state, active):
        return np.full(len(q), np.nan)


@pytest.mark.parametrize("strat", [_BadShape(), _NaN()])
def test_broken_strategies_are_rejected(strat):
    from agnostic_control import ContractViolation

    with pytest.raises(ContractViolation):
        simulate_batch(strat, 0.0, 1.0, 0.01, np.zeros((2, 10)), 1e-3)


def test_trajectory_csv(tmp_path):
    traj = simulate(ConstantGain(1.0), 0.0, 1.0, 0.005, generate_brownian(0.005, 1e-3, seed=1))
    out = tmp_path / "traj.csv"
    traj.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,q,u,running_cost"
    assert len(lines) == 7
    assert lines[-1].split(",")[2] == ""


def test_first_crossing_directions():
    t = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
    q = np.array([1.0, 1.05, 1.2, 0.8, -2.0])
    assert first_crossing(t, q, 1.1, "up") == 0.2
    assert first_crossing(t, q, 0.9, "down") == 0.3
    assert first_crossing(t, q, 1.5, "absolute") == 0.4
    assert first_crossing(t, q, 5.0, "up") is None
    with pytest.raises(InvalidArgument):
        first_crossing(t, q, 1.0, "sideways")


def test_first_crossing_ignores_time_zero():
    assert first_crossing(np.array([0.0, 0.1]), np.array([2.0, 2.0]), 1.0, "absolute") == 0.1


def test_first_crossing_deterministic_exponential():
    dt = 1e-4
    traj = simulate(NULL, 1.0, 1.0, 0.2, _still(2000, dt))
    assert first_crossing(traj, None, 1.1, "up") == pytest.approx(math.log(1.1), abs=2 * dt)
    flat = simulate(NULL, 0.0, 1.0, 0.2, _still(2000, dt))
    assert first_crossing(flat, None, 2.0, "up") is None


@pytest.mark.slow
def test_grid_crossing_probability_matches_reflection():
    from agnostic_control import HittingLevels, hitting_experiment

    cfg = ExperimentConfig(q0=0.0, q0_star=4.0, n_paths=100_000, dt=2.5e-4, root_seed=11)
    res = hitting_experiment(0.0, 0.0, HittingLevels(level=1.0), cfg)
    assert abs(res.p("level") - math.erfc(1 / math.sqrt(2))) < 0.01


def test_unit_time_variance_over_many_seeds():
    w1 = np.array([generate_brownian(1.0, 1e-3, seed=s).increments.sum() for s in range(10_000)])
    assert np.var(w1) == pytest.approx(1.0, abs=0.05)


def test_single_path_increment_variance():
    inc = generate_brownian(1.0, 1e-3, seed=4).increments
    assert abs(np.var(inc, ddof=1) - 1e-3) < 5 * math.sqrt(2 / 999) * 1e-3


def test_noiseless_path_matches_ode():
    traj = simulate(NULL, 1.0, 1.0, 1.0, _still(10_000, 1e-4))
    assert traj.q[-1] == pytest.approx(math.e, abs=0.01)
    flat = simulate(NULL, 0.0, 1.5, 2.0, _still(2000))
    assert np.all(flat.q == 1.5) and flat.cost == pytest.approx(1.5 ** 2 * 2.0)


def test_cost_error_is_first_order_in_dt():
    exact = (1 + 1.0) * 1.0 * (1 - math.exp(-2.0 * 1.0)) / 2.0  # CG(1) at a=0, no noise: (1+a^2) int e^{-2t}
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        n = round(1.0 / dt)
        errs.append(abs(simulate(ConstantGain(1.0), 0.0, 1.0, 1.0, _still(n, dt)).cost - exact))
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine == pytest.approx(2.0, rel=0.5)


def test_running_cost_nondecreasing_and_shapes():
    traj = simulate(ConstantGain(2.0), 1.0, 1.0, 1.0, generate_brownian(1.0, 1e-3, seed=2))
    assert traj.q[0] == 1.0
    assert len(traj.q) == len(traj.times) == len(traj.u) + 1
    assert np.all(np.diff(traj.running_cost) >= 0)


def test_stopped_path_stays_in_band_until_exit():
    from agnostic_control.strategies import Branch, Crossing

    eps, dt = 0.1, 1e-3
    strat = Branch(NULL, Crossing(up_factor=1 + eps, down_factor=1 - eps), [ConstantGain(1.0)],
                   label="band")
    for seed in range(20):
        traj = simulate(strat, 0.5, 1.0, 1.0, generate_brownian(1.0, dt, seed=seed))
        stop = traj.stops[0][1] if traj.stops else traj.times[-1]
        inside = traj.q[traj.times < stop]
        assert np.all((inside > 1 - eps) & (inside < 1 + eps))
        k = int(np.searchsorted(traj.times, stop))
        overshoot = abs(0.5 * traj.q[k - 1]) * dt + 6 * math.sqrt(dt)
        assert (1 - eps) - overshoot <= traj.q[k] <= (1 + eps) + overshoot


def test_common_noise_is_shared_between_strategies():
    path = generate_brownian(0.5, 1e-3, seed=8)
    t1 = simulate(NULL, 0.0, 1.0, 0.5, path)
    t2 = simulate(ConstantGain(0.0), 0.0, 1.0, 0.5, path)
    assert np.array_equal(t1.q, t2.q)


# --- config -------------------------------------------------------------------


def test_config_defaults_and_derived_fields():
    cfg = ExperimentConfig()
    assert cfg.dt == pytest.approx(1e-3)
    assert cfg.q0_star == 4.0 and cfg.q_rare == 4.0
    assert cfg.n_steps == 1000
    moved = cfg.replace(q0=3.0, T=2.0)
    assert moved.q0_star == 7.5 and moved.q_rare == 12.0 and moved.dt == pytest.approx(2e-3)


@pytest.mark.parametrize("changes", [
    dict(T=-1.0), dict(n_paths=0), dict(eps=1.5), dict(eps0=0.0), dict(gamma=0.0),
    dict(q0=3.0, q0_star=5.0), dict(A=0.0), dict(workers=0),
])
def test_config_validation(changes):
    with pytest.raises(InvalidArgument):
        ExperimentConfig(**changes)


def test_config_json_round_trip(tmp_path):
    cfg = ExperimentConfig(eps=0.1, root_seed=42)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(InvalidArgument):
        ExperimentConfig.from_dict({"nonsense": 1})
