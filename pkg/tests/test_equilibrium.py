import math

import numpy as np
import pytest

from eriver.equilibrium import (ValueTable, backward_dp, policy_gap, policy_gap_raw, solve_mfe,
                                value_gap)
from eriver.flows import propagate_forward
from eriver.mdp import CRUISE, OFFLINE, TERMINAL, ZONE, Action, State, StateSpace
from eriver.policy import MeanPolicy
from oracles import enumerate_policies, single_zone_scenario


def test_terminal_values_are_zero(toy):
    flows = propagate_forward(MeanPolicy.uniform(StateSpace(toy)), toy)
    _, table = backward_dp(flows, toy)
    for s in (State(4, ZONE, 0, 2), State(9, ZONE, 1, 1), State(4, TERMINAL), State(2, OFFLINE)):
        assert table.value(s) == 0.0


def test_two_step_hand_example():
    # m = 0.5 needs phi = ln 2 / 2; idle supply is 10 at t=0 and 5 at t=1
    phi = math.log(2) / 2
    cfg = single_zone_scenario(demand=0.0)
    cfg = cfg.replace(demand=np.array([[10 * phi], [5 * phi]]))
    policy = MeanPolicy.uniform(StateSpace(cfg))
    flows = propagate_forward(policy, cfg)
    assert flows.m[:, 0] == pytest.approx([0.5, 0.5], abs=1e-12)
    _, table = backward_dp(flows, cfg)
    assert table.V[State(1, ZONE, 0, 9)] == pytest.approx(0.5, abs=1e-12)
    assert table.V[State(0, ZONE, 0, 10)] == pytest.approx(0.75, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 3, 7])
def test_dp_matches_enumeration(toy, seed):
    space = StateSpace(toy)
    flows = propagate_forward(MeanPolicy.random(space, seed, noise=4.0), toy)
    policy, table = backward_dp(flows, toy, space)
    values, best = enumerate_policies(toy, flows)
    for s in space:
        key = (s.t, s.kind, s.index, s.soc)
        assert table.V[s] == pytest.approx(values[key], abs=1e-12)
        chosen = {(a.kind, a.target) for a, p in zip(policy.actions[s], policy.probs[s]) if p > 0}
        assert chosen == best[key]


def test_best_response_is_optimal_and_bounded(uniform_cfg):
    space = StateSpace(uniform_cfg)
    flows = propagate_forward(MeanPolicy.random(space, 2), uniform_cfg)
    policy, table = backward_dp(flows, uniform_cfg, space)
    T, kappa = uniform_cfg.horizon, uniform_cfg.offline_penalty
    for s in space:
        q = table.Q[s]
        assert table.V[s] == q.max()
        assert np.all(table.V[s] >= q - 1e-12)
        assert kappa * (T + 1) <= table.V[s] <= uniform_cfg.fare.max() * T
        p = policy.probs[s]
        assert np.allclose(p[p > 0], 1 / (p > 0).sum())


def test_policy_gap_examples(uniform_cfg):
    space = StateSpace(uniform_cfg)
    a = MeanPolicy.random(space, 0)
    assert policy_gap(a, a) == 0.0
    b = a.copy()
    s = State(3, ZONE, 2, 4)
    b.probs[s] = np.zeros(len(b.actions[s]))
    b.probs[s][0] = 1.0
    c = b.copy()
    c.probs[s] = np.roll(b.probs[s], 1)
    assert policy_gap(b, c) == pytest.approx(2 / len(space))
    hat = MeanPolicy.random(space, 1)
    eta = 0.3
    mixed = a.mix(hat, eta)
    assert policy_gap(mixed, a) == pytest.approx(eta * policy_gap_raw(a, hat) / len(space), rel=1e-12)


def test_policy_gap_rejects_other_spaces(uniform_cfg, toy):
    with pytest.raises(ValueError):
        policy_gap(MeanPolicy.uniform(StateSpace(uniform_cfg)), MeanPolicy.uniform(StateSpace(toy)))


class _Mass:
    def __init__(self, masses):
        self.masses = masses

    def mass(self, s):
        return self.masses.get(s, 0.0)


def test_value_gap_examples():
    s = State(0, ZONE, 0, 2)
    acts = (Action(CRUISE, 0), Action(CRUISE, 1))
    table = ValueTable(1, {s: 1.0}, {s: np.array([1.0, 0.0])}, -10.0)
    uniform = MeanPolicy({s: acts}, {s: np.array([0.5, 0.5])})
    greedy = MeanPolicy({s: acts}, {s: np.array([1.0, 0.0])})
    flows = _Mass({s: 40.0})
    assert value_gap(flows, table, uniform) == pytest.approx(0.5)
    assert value_gap(flows, table, greedy) == 0.0
    assert value_gap(_Mass({}), table, uniform) == 0.0


def test_greedy_policy_has_zero_value_gap(toy):
    flows = propagate_forward(MeanPolicy.random(StateSpace(toy), 5), toy)
    policy, table = backward_dp(flows, toy)
    assert value_gap(flows, table, policy) == pytest.approx(0.0, abs=1e-12)


def test_single_action_game_converges_at_once():
    cfg = single_zone_scenario(demand=3.0, horizon=3, battery=8)
    result = solve_mfe(cfg, tol=1e-6, max_iter=50, seed=4)
    d = result.diagnostics
    assert d.converged and d.iterations <= 2
    assert all(p.tolist() == [1.0] for _, _, p in result.policy.items())
    assert d.final_value_gap == 0.0 and d.is_equilibrium


def test_solver_bookkeeping(toy):
    result = solve_mfe(toy, tol=1e-9, max_iter=25, seed=1)
    d = result.diagnostics
    assert d.iterations == 25 and not d.converged
    assert d.step_sizes == [1.0 / (n + 1) for n in range(25)]
    for trace in (d.policy_gaps, d.policy_gaps_raw, d.value_gaps, d.conservation_errors, d.wall_times):
        assert len(trace) == 25
    assert all(g >= 0 for g in d.value_gaps)
    assert max(d.conservation_errors) < 1e-9
    assert result.policy.validate(1e-9) == []
    assert len(d.rows()) == 25
    assert math.isfinite(d.final_value_gap)


def test_solver_is_deterministic(toy):
    a = solve_mfe(toy, tol=1e-9, max_iter=30, seed=5).diagnostics
    b = solve_mfe(toy, tol=1e-9, max_iter=30, seed=5).diagnostics
    assert a.rows() == b.rows() and a.final_value_gap == b.final_value_gap
    c = solve_mfe(toy, tol=1e-9, max_iter=30, seed=6).diagnostics
    assert c.rows() != a.rows()


def test_solver_argument_checks(toy):
    with pytest.raises(ValueError):
        solve_mfe(toy, tol=0)
    with pytest.raises(ValueError):
        solve_mfe(toy, max_iter=0)


def test_initial_policy_and_callback(toy):
    seen = []
    start = MeanPolicy.uniform(StateSpace(toy))
    solve_mfe(toy, max_iter=3, tol=1e-12, initial=start, callback=lambda n, d: seen.append(n))
    assert seen == [0, 1, 2]
    # the caller's policy is copied, not mutated
    fresh = MeanPolicy.uniform(StateSpace(toy))
    assert all(np.array_equal(start.probs[s], fresh.probs[s]) for s in fresh.actions)


def test_certificate_threshold_is_reported(toy):
    d = solve_mfe(toy, tol=1e-9, max_iter=5, seed=0, certificate=1e-12).diagnostics
    assert d.certificate_threshold == 1e-12
    assert d.is_equilibrium == (d.final_value_gap <= 1e-12)
