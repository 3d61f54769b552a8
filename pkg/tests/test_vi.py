import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnvi import graphgen as gg
from gnnvi import vi

from conftest import random_mdp, self_loop_mdp, two_state_mdp


def brute_q(mdp, v):
    """Q table from the nested successor lists, no sparse algebra."""
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for s, a in itertools.product(range(mdp.num_states), range(mdp.num_actions)):
        q[s, a] = mdp.rewards[s, a] + mdp.gamma * sum(p * v[j] for j, p in mdp.successors(s, a))
    return q


def test_single_term_backup():
    m = self_loop_mdp(r=1.0)
    assert vi.vi_step(m, [0.0]).tolist() == [1.0]
    assert vi.vi_step(m, [10.0]).tolist() == pytest.approx([10.0], abs=1e-12)


def test_two_state_backup():
    assert vi.vi_step(two_state_mdp(), [0.0, 0.0]).tolist() == [1.0, 1.0]


def test_dimension_error():
    with pytest.raises(ValueError):
        vi.vi_step(two_state_mdp(), [0.0])
    with pytest.raises(ValueError):
        vi.value_mse([0.0], [0.0, 1.0])


@pytest.mark.parametrize("seed", range(5))
def test_q_matches_brute_force(seed):
    m = random_mdp(seed, n=12, a=4)
    v = np.random.default_rng(seed).normal(size=12)
    np.testing.assert_allclose(vi.q_values(m, v), brute_q(m, v), atol=1e-12)


def test_geometric_fixed_point():
    traj = vi.solve(self_loop_mdp(r=1.0), 1e-8)
    assert traj.converged
    assert traj.final[0] == pytest.approx(10.0, abs=1e-6)


def test_max_iters_zero():
    traj = vi.solve(self_loop_mdp(r=1.0), 1e-8, max_iters=0)
    assert traj.iterations == 0 and not traj.converged
    assert traj.steps[0].tolist() == [0.0]


@pytest.mark.parametrize("seed", range(5))
def test_iteration_bound(seed):
    m = random_mdp(seed)
    traj = vi.solve(m, 1e-8)
    r_max = float(np.abs(m.rewards).max())
    assert traj.converged
    assert traj.iterations <= vi.iteration_bound(m.gamma, 1e-8, r_max)


def test_iteration_bound_value():
    # log(1e-9) / log(0.9)
    assert vi.iteration_bound(0.9, 1e-8, 1.0) == 197


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_contraction(seed):
    m = random_mdp(seed, n=10, a=3)
    rng = np.random.default_rng(seed)
    v1, v2 = rng.normal(scale=5, size=(2, 10))
    lhs = np.max(np.abs(vi.vi_step(m, v1) - vi.vi_step(m, v2)))
    assert lhs <= m.gamma * np.max(np.abs(v1 - v2)) + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_fixed_point_and_monotone(seed):
    m = random_mdp(seed)
    traj = vi.solve(m, 1e-8)
    assert np.max(np.abs(vi.vi_step(m, traj.final) - traj.final)) < 1e-7
    diffs = np.diff(np.stack(traj.steps), axis=0)
    assert np.all(diffs >= -1e-12)


def test_greedy_rules():
    acts, sets = vi.greedy_from_q(np.array([[1.0, 2.0]]))
    assert acts.tolist() == [1] and sets == [frozenset({1})]
    acts, sets = vi.greedy_from_q(np.array([[2.0, 2.0]]))
    assert acts.tolist() == [0] and sets == [frozenset({0, 1})]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_greedy_shift_invariant(seed, c):
    m = random_mdp(seed, n=10, a=4)
    v = np.random.default_rng(seed).normal(size=10)
    a1, s1 = vi.greedy_policy(m, v)
    a2, s2 = vi.greedy_policy(m, v + c)
    assert a1.tolist() == a2.tolist() and s1 == s2


@pytest.mark.parametrize("seed", range(3))
def test_accuracy_identity_and_shift(seed):
    m = random_mdp(seed)
    vs = vi.solve(m).final
    assert vi.policy_accuracy(m, vs, vs) == 1.0
    assert vi.policy_accuracy(m, vs + 3.7, vs) == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_accuracy_negated_against_brute_force(seed):
    m = random_mdp(seed)
    vs = vi.solve(m).final
    q_star = brute_q(m, vs)
    q_neg = brute_q(m, -vs)
    gap = np.sort(q_star, axis=1)
    assert np.all(gap[:, -1] - gap[:, -2] > 1e-9)  # strict optimum everywhere
    expected = np.mean(np.argmax(q_neg, axis=1) == np.argmax(q_star, axis=1))
    assert vi.policy_accuracy(m, -vs, vs) == pytest.approx(expected)


def test_value_mse():
    assert vi.value_mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert vi.value_mse([0.0], [2.0]) == 4.0


@pytest.mark.parametrize("seed", range(5))
def test_maze_policy_steps_onto_goal(seed):
    m, cells = gg.gen_maze_mdp(8, gg.MAZE_DENSITY, np.random.default_rng(seed))
    vs = vi.solve(m).final
    actions, sets = vi.greedy_policy(m, vs)
    goal = next(s for s in range(m.num_states) if all(m.successors(s, a) == [(s, 1.0)] for a in range(8)))
    for s in range(m.num_states):
        into_goal = {a for a in range(8) if s != goal and m.successors(s, a)[0][0] == goal}
        if into_goal:
            assert sets[s] == into_goal
            assert actions[s] in into_goal
