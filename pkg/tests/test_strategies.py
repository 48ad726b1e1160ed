import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agnostic_control import (
    ContractViolation, ExperimentConfig, GainFunction, InvalidArgument, assert_a_bounded, branch,
    constant_gain, estimate_abar, estimate_cost, generate_brownian, guard_with_lqs, j0, mirror,
    optimal_known_a, rescale, simple_feedback, simulate, simulate_batch,
)
from agnostic_control.composite import LqsParams, large_q_strategy
from agnostic_control.experiments import simulate_costs
from agnostic_control.sde import BrownianPath
from agnostic_control.strategies import (
    NULL, Branch, Choice, Crossing, ExtendHorizon, OptimalKnownA, SignNormalized, always,
)


def _path(seed=1, horizon=1.0, dt=1e-3):
    return generate_brownian(horizon, dt, seed=seed)


def _controls(strategy, a=0.5, q0=1.0, seed=1, horizon=1.0):
    return simulate(strategy, a, q0, horizon, _path(seed, horizon)).u


def test_zero_gain_gives_zero_control():
    assert np.all(_controls(simple_feedback(GainFunction.constant(0.0, 1.0))) == 0)


def test_feedback_definition():
    strat = simple_feedback(GainFunction.constant(2.0, 1.0))
    u = strat.control(np.array([0.3]), np.array([3.0]), strat.init(None, 1), np.array([True]))
    assert u[0] == -6.0


@pytest.mark.slow
def test_feedback_with_riccati_gain_hits_j0():
    cfg = ExperimentConfig(n_paths=10_000, root_seed=3)
    est = estimate_cost(simple_feedback(GainFunction.riccati(1.0, 1.0)), 1.0, cfg)
    assert abs(est.mean - j0(1.0, 1.0, 1.0)) < 3 * est.std_error


def test_optimal_gain_vanishes_at_horizon():
    traj = simulate(optimal_known_a(2.0, T=1.0), 2.0, 1.0, 1.0, _path())
    strat = OptimalKnownA(2.0)
    state = strat.init(None, 1)
    strat.start(state, np.array([True]), np.array([1.0]), np.array([1.0]), {})
    assert strat.control(np.array([1.0]), np.array([5.0]), state, np.array([True]))[0] == 0.0
    assert np.isfinite(traj.cost)
    with pytest.raises(InvalidArgument):
        optimal_known_a(1.0, T=0.0)


@pytest.mark.slow
def test_optimal_known_a_matches_j0_at_half():
    cfg = ExperimentConfig(n_paths=10_000, root_seed=5)
    est = estimate_cost(optimal_known_a(0.5), 0.5, cfg)
    assert abs(est.mean - j0(0.5, 1.0, 1.0)) < 3 * est.std_error


def test_optimum_beats_constant_gain_on_paired_noise():
    cfg = ExperimentConfig(n_paths=10_000, root_seed=6)
    opt = simulate_costs(optimal_known_a(3.0), 3.0, cfg)
    cg = simulate_costs(constant_gain(3.0), 3.0, cfg)
    assert opt.mean() <= cg.mean()


def test_constant_gain_rejects_negative():
    with pytest.raises(InvalidArgument):
        constant_gain(-0.5)


def test_cg_zero_is_null():
    assert np.all(_controls(constant_gain(0.0)) == 0)


@pytest.mark.parametrize("alpha", [0.0, 1.5, 4.0])
def test_mirror_of_constant_gain_is_itself(alpha):
    assert np.array_equal(_controls(mirror(constant_gain(alpha))), _controls(constant_gain(alpha)))


def test_mirror_is_an_involution():
    strat = large_q_strategy(LqsParams(eps=0.1))
    twice = mirror(mirror(strat))
    assert np.array_equal(_controls(twice, a=2.0, q0=25.0), _controls(strat, a=2.0, q0=25.0))


@pytest.mark.parametrize("q0", [1.0, 25.0])
def test_mirror_cost_symmetry_with_negated_noise(q0):
    strat = Branch(NULL, Crossing(up_factor=1.1, down_factor=0.9), [OptimalKnownA(None)],
                   lambda e: Choice(np.zeros(len(e.tau), dtype=int), {"alpha": np.full(len(e.tau), 2.0)}))
    for seed in range(5):
        path = _path(seed)
        plus = simulate(strat, 1.0, q0, 1.0, path)
        minus = simulate(mirror(strat), 1.0, -q0, 1.0, path.negated())
        assert np.array_equal(minus.q, -plus.q)
        assert minus.cost == plus.cost


def test_rescale_by_one_is_identity():
    strat = large_q_strategy(LqsParams(eps=0.1))
    assert np.array_equal(_controls(rescale(strat, 1.0), q0=25.0), _controls(strat, q0=25.0))


def test_rescale_rejects_nonpositive():
    with pytest.raises(InvalidArgument):
        rescale(NULL, 0.0)


@pytest.mark.parametrize("lam", [0.5, 1.1, 3.0])
def test_rescaled_constant_gain_is_constant_gain(lam):
    path = BrownianPath(1e-3, np.zeros(1000), 0)
    a = rescale(constant_gain(2.0), lam)
    b = constant_gain(2.0 / lam ** 2)
    ta, tb = simulate(a, 1.0, 1.0, 1.0, path), simulate(b, 1.0, 1.0, 1.0, path)
    assert np.allclose(ta.u, tb.u, rtol=1e-12, atol=1e-12)


def test_rescaled_optimum_uses_stretched_clock():
    lam = 1.1
    strat = rescale(OptimalKnownA(1.0), lam)
    state = strat.init(None, 1)
    strat.start(state, np.array([True]), np.array([lam ** 2]), np.array([lam]), {})
    u = strat.control(np.array([0.3]), np.array([2.0]), state, np.array([True]))[0]
    from agnostic_control import kappa
    assert u == pytest.approx(-(1 / lam) * kappa(1.0 - 0.3 / lam ** 2, 1.0) * (2.0 / lam))


@pytest.mark.slow
def test_rescaling_cost_inequality():
    lam, a = 1.1, 1.0
    cfg = ExperimentConfig(n_paths=10_000, root_seed=9)
    scaled = estimate_cost(rescale(constant_gain(1.0), lam), a, cfg, q0=lam, horizon=lam ** 2)
    base = estimate_cost(constant_gain(1.0), lam ** 2 * a, cfg)
    assert scaled.mean <= max(lam ** 4, 1) * base.mean + 3 * math.hypot(scaled.std_error,
                                                                         lam ** 4 * base.std_error)


def test_extend_horizon_only_extends():
    with pytest.raises(InvalidArgument):
        ExtendHorizon(NULL, extra=-1.0)


# --- branch -----------------------------------------------------------------------


def test_branch_that_never_fires_is_base():
    strat = branch(constant_gain(1.0), Crossing(abs_level=math.inf), constant_gain(5.0))
    assert np.array_equal(_controls(strat), _controls(constant_gain(1.0)))


def test_branch_switches_at_crossing_grid_time():
    strat = branch(NULL, Crossing(abs_level=1.3), constant_gain(2.0))
    traj = simulate(strat, 1.0, 1.0, 1.0, _path(4))
    k = int(np.argmax(np.abs(traj.q[1:]) >= 1.3)) + 1
    assert np.all(traj.u[:k] == 0)
    assert np.allclose(traj.u[k:], -2.0 * traj.q[k:-1])
    assert traj.stops[0][1] == traj.times[k]


def test_branch_continuation_sees_local_time():
    strat = branch(NULL, Crossing(abs_level=1.3), OptimalKnownA(0.0))
    traj = simulate(strat, 1.0, 1.0, 1.0, _path(4))
    label, tau, _ = traj.stops[0]
    k = int(round(tau / 1e-3))
    from agnostic_control import kappa
    assert traj.u[k] == pytest.approx(-kappa(1.0 - tau, 0.0) * traj.q[k])


def test_branch_rejects_short_continuation_horizon():
    def short(e):
        return Choice(np.zeros(len(e.tau), dtype=int), {}, e.remaining - 0.1)

    strat = Branch(NULL, Crossing(abs_level=1.01), [NULL], short)
    with pytest.raises(ContractViolation):
        simulate(strat, 0.0, 1.0, 1.0, _path(2))


def test_branch_with_callable_needs_children():
    with pytest.raises(InvalidArgument):
        branch(NULL, Crossing(), always(0))


def test_crossing_rejects_conflicting_levels():
    with pytest.raises(InvalidArgument):
        Crossing(up_factor=1.1, up_level=2.0)


def test_cap_takes_priority_over_crossing():
    strat = Branch(NULL, Crossing(up_level=0.5, t_cap=1e-3), [NULL, NULL],
                   lambda e: Choice(np.where(e.kind == 4, 0, 1)), child_labels=["capped", "crossed"])
    traj = simulate(strat, 0.0, 1.0, 0.01, _path(1, 0.01))
    assert traj.stops[0][0].endswith("cap->capped")


def test_nonanticipation_truncated_noise():
    """Controls up to step k depend only on noise before step k."""
    strat = large_q_strategy(LqsParams(eps=0.05))
    z = generate_brownian(1.0, 1e-3, seed=12).increments / math.sqrt(1e-3)
    k = 400
    altered = z.copy()
    altered[k:] = np.random.default_rng(0).standard_normal(len(z) - k)
    r1 = simulate_batch(strat, 3.0, 25.0, 1.0, z[None, :], 1e-3, record_paths=True)
    r2 = simulate_batch(strat, 3.0, 25.0, 1.0, altered[None, :], 1e-3, record_paths=True)
    assert np.array_equal(r1.u[0, :k + 1], r2.u[0, :k + 1])
    assert not np.array_equal(r1.u[0], r2.u[0])


def test_branch_decision_depends_on_observed_prefix_only():
    strat = large_q_strategy(LqsParams(eps=0.05))
    base = generate_brownian(1.0, 1e-3, seed=21).increments / math.sqrt(1e-3)
    r = simulate_batch(strat, 1.0, 25.0, 1.0, base[None, :], 1e-3)
    tau_step = r.events[0].step
    other = base.copy()
    other[tau_step + 1:] = -other[tau_step + 1:]
    r2 = simulate_batch(strat, 1.0, 25.0, 1.0, other[None, :], 1e-3)
    assert [(e.label, e.step) for e in r.events] == [(e.label, e.step) for e in r2.events]


# --- guard ------------------------------------------------------------------------


def test_guard_matches_branch_built_by_hand():
    lqs = large_q_strategy(LqsParams(eps=0.05))
    guarded = guard_with_lqs(constant_gain(0.5), 2.0, lqs, extra_horizon=0.05)
    manual = Branch(constant_gain(0.5), Crossing(abs_level=2.0), [SignNormalized(lqs)],
                    lambda e: Choice(np.zeros(len(e.tau), dtype=int), {}, e.remaining + 0.05))
    for seed in range(5):
        path = _path(seed)
        assert np.array_equal(simulate(guarded, 2.0, 1.0, 1.0, path).u,
                              simulate(manual, 2.0, 1.0, 1.0, path).u)


def test_guard_is_inert_on_paths_that_stay_below_level():
    guarded = guard_with_lqs(constant_gain(1.0), 3.0, large_q_strategy(LqsParams()))
    cfg = ExperimentConfig(n_paths=500, root_seed=4)
    batch = simulate_batch(guarded, 0.0, 1.0, 1.0, np.vstack([
        generate_brownian(1.0, 1e-3, 4, i).increments / math.sqrt(1e-3) for i in range(200)]), 1e-3)
    plain = simulate_batch(constant_gain(1.0), 0.0, 1.0, 1.0, np.vstack([
        generate_brownian(1.0, 1e-3, 4, i).increments / math.sqrt(1e-3) for i in range(200)]), 1e-3)
    touched = set()
    for e in batch.events:
        touched.update(e.paths.tolist())
    untouched = np.array([i not in touched for i in range(200)])
    assert untouched.sum() > 150
    assert np.array_equal(batch.cost[untouched], plain.cost[untouched])
    del cfg


def test_guard_rarely_fires_for_far_level():
    cfg = ExperimentConfig(n_paths=10_000, root_seed=7, q0_star=10.0)
    from agnostic_control import HittingLevels, hitting_experiment
    res = hitting_experiment(0.0, 1.0, HittingLevels(q0_star=10.0), cfg)
    assert res.p("ever_star") < 0.01


def test_guard_helps_bounded_strategy_at_huge_drift():
    A, C0, m0 = 10.0, 3.0, 1
    sigma = assert_a_bounded(constant_gain(1.0), A, C0, m0)
    guarded = guard_with_lqs(sigma, 4.0, large_q_strategy(LqsParams()), q0=1.0)
    cfg = ExperimentConfig(n_paths=1000, root_seed=8)
    a = 4 * A ** m0
    g = simulate_costs(guarded, a, cfg)
    u = simulate_costs(sigma, a, cfg)
    assert np.mean(np.minimum(g, 1e300)) <= np.mean(np.minimum(u, 1e300))


def test_guard_validates_level():
    with pytest.raises(InvalidArgument):
        guard_with_lqs(NULL, 1.0, NULL, q0=2.0)


# --- A-bound ----------------------------------------------------------------------


def test_a_bound_silent_for_admissible_gain():
    strat = assert_a_bounded(constant_gain(120.0), 40.0, 3.0, 1)
    assert np.isfinite(simulate(strat, 0.0, 1.0, 0.1, _path(1, 0.1)).cost)


def test_a_bound_fires_with_time_and_control():
    strat = assert_a_bounded(constant_gain(2 * 3.0 * 40.0), 40.0, 3.0, 1)
    with pytest.raises(ContractViolation) as info:
        simulate(strat, 0.0, 3.0, 0.1, _path(1, 0.1))
    assert info.value.t == 0.0
    assert info.value.u == pytest.approx(-720.0)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 10.0, 40.0])
def test_a_bound_holds_for_known_drift_optimum(alpha):
    strat = assert_a_bounded(optimal_known_a(alpha), 40.0, 3.0, 1)
    cfg = ExperimentConfig(n_paths=1000, root_seed=1)
    simulate_costs(strat, alpha, cfg)


def test_a_bound_rejects_bad_A():
    with pytest.raises(InvalidArgument):
        assert_a_bounded(NULL, 0.0, 3.0, 1)


# --- abar ------------------------------------------------------------------------


def test_abar_inversion_examples():
    assert estimate_abar(math.log(1.1) / 2, 0.1, "+").value == pytest.approx(2.0, rel=1e-15)
    minus = estimate_abar(0.05, 0.1, "-")
    assert minus.value == pytest.approx(math.log(0.9) / 0.05)
    assert minus.value == pytest.approx(-2.107, abs=1e-3)


@settings(max_examples=300, deadline=None)
@given(tau=st.floats(1e-6, 10.0), eps=st.floats(1e-4, 0.99), sign=st.sampled_from("+-"))
def test_abar_exactness_and_sign(tau, eps, sign):
    est = estimate_abar(tau, eps, sign)
    target = math.log1p(eps) if sign == "+" else math.log1p(-eps)
    assert est.value * tau == pytest.approx(target, rel=4e-16, abs=0)
    assert (est.value > 0) == (sign == "+")


@pytest.mark.parametrize("tau,eps,sign", [(0.0, 0.1, "+"), (-1.0, 0.1, "+"), (1.0, 1.0, "+"),
                                          (1.0, 0.1, "x")])
def test_abar_rejects_bad_input(tau, eps, sign):
    with pytest.raises(InvalidArgument):
        estimate_abar(tau, eps, sign)


def test_abar_concentrates_for_large_start_and_drift():
    from agnostic_control import HittingLevels, hitting_experiment
    cfg = ExperimentConfig(q0=25.0, n_paths=10_000, root_seed=2, dt=1e-4, T=0.05)
    a, eps = 30.0, 0.1
    lo = hitting_experiment(a, 25.0, HittingLevels(eps=eps, abar_above=1.2 * a), cfg).p("abar_above")
    hi_tail = 1 - hitting_experiment(a, 25.0, HittingLevels(eps=eps, abar_above=0.8 * a), cfg).p("abar_above")
    assert lo + hi_tail < 0.01
