import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalhrl.env import ChangeKind, Subgoal, goal_reward
from causalhrl.graphs import CausalGraph
from causalhrl.hrl import (HrlHyper, LevelStep, ReplayBuffer, SubgoalHierarchy, action_space_for,
                           build_or_extend_hierarchy, execute_subgoal, her_relabel, train_level_goals,
                           variable_depths, verify_controllable)
from causalhrl.worlds import ChainCraft

INC, DEC = ChangeKind.INCREASE, ChangeKind.DECREASE


def chain_hierarchy(M_chain, hyper=None, seed=0):
    env = ChainCraft(M_chain=M_chain, seed=seed)
    C = env.ground_truth_graph()
    h = SubgoalHierarchy(env, hyper or HrlHyper(), rng=seed)
    for v in range(1, M_chain + 1):
        build_or_extend_hierarchy(h, C, {v})
    return env, C, h


def test_variable_depths():
    d = variable_depths(ChainCraft(M_chain=3).ground_truth_graph())
    assert [d[v] for v in range(6)] == [0, 1, 2, 3, None, None]
    single = CausalGraph.from_edges(2, [(0, 1)])
    assert variable_depths(single) == {0: 0, 1: 1}
    cyc = CausalGraph.from_edges(3, [(0, 1), (1, 2), (2, 1)])
    sigma = np.zeros((3, 3))
    sigma[1, 0], sigma[2, 1], sigma[1, 2] = 1.0, 0.9, 0.85
    assert variable_depths(cyc, sigma) == {0: 0, 1: 1, 2: 2}


def test_action_space_for():
    C = ChainCraft(M_chain=2).ground_truth_graph()
    assert action_space_for(Subgoal(1, INC), C, 3) == [0, 1, 2]
    assert action_space_for(Subgoal(2, INC), C, 3) == [Subgoal(1, INC), Subgoal(1, DEC), 0, 1, 2]


def test_build_is_idempotent_and_checks_parents():
    env = ChainCraft(M_chain=2)
    C = env.ground_truth_graph()
    h = SubgoalHierarchy(env, rng=0)
    with pytest.raises(ValueError):
        build_or_extend_hierarchy(h, C, {2})
    assert len(build_or_extend_hierarchy(h, C, {1})) == 2
    assert build_or_extend_hierarchy(h, C, {1}) == []
    build_or_extend_hierarchy(h, C, {2})
    assert h.n_levels == 2 and h.depth_of[2] == 2
    assert Subgoal(2, DEC) in h and Subgoal(3, INC) not in h


def test_growth_keeps_existing_goal_outputs():
    env = ChainCraft(M_chain=1, distractor_count=1)
    C = CausalGraph.from_edges(3, [(0, 1), (0, 2)])
    h = SubgoalHierarchy(env, rng=0)
    build_or_extend_hierarchy(h, C, {1})
    s = h.encoder(env.reset())
    before = h.level(1).masked_q(s, Subgoal(1, INC))
    build_or_extend_hierarchy(h, C, {2})
    assert h.level(1).n_slots == 4
    assert np.array_equal(before, h.level(1).masked_q(s, Subgoal(1, INC)))


def test_fuel_zero_is_empty():
    env, _, h = chain_hierarchy(1)
    env.reset()
    ex = execute_subgoal(env, h, Subgoal(1, INC), 0, rng=0)
    assert ex.steps == 0 and not ex.success


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_execution_bounded_by_horizon_power(seed, top):
    env, _, h = chain_hierarchy(3, HrlHyper(H=3), seed=seed % 7)
    env.reset()
    ex = execute_subgoal(env, h, Subgoal(top, DEC), 10**6, rng=seed, epsilon=0.5)
    assert ex.steps <= 3 ** h.depth_of[top]


def _force(level, index):
    net = level.q_net
    net.weights[-1][:] = 0.0
    net.biases[-1][:] = 0.0
    net.biases[-1][index] = 1.0


def test_lower_goal_aborts_when_enclosing_goal_fires():
    env, _, h = chain_hierarchy(2)
    _force(h.level(2), h.level(2).actions.index(Subgoal(1, DEC)))
    _force(h.level(1), h.level(1).actions.index(1))  # craft V1
    env.reset()
    env.state.inventory[0] = 1
    ex = execute_subgoal(env, h, Subgoal(2, INC), 100, rng=0, epsilon=0.0)
    assert ex.success and ex.steps == 1


def test_her_relabel_example():
    goal, other = Subgoal(0, INC), Subgoal(1, INC)
    x0, x1 = np.array([0, 0]), np.array([0, 1])
    step = LevelStep(x0.astype(float), x0, 2, x1.astype(float), x1, False)
    out = her_relabel([step], goal, [goal, other])
    assert [(t.goal, t.reward, t.done) for t in out] == [(goal, 0, False), (other, 1, True)]
    assert her_relabel([step], goal, [goal, other], {goal: [2], other: [0]}) == out[:1]


def test_her_relabel_property_random_trajectories():
    rng = np.random.default_rng(0)
    goals = [Subgoal(v, c) for v in range(3) for c in ChangeKind]
    for _ in range(10_000):
        n = int(rng.integers(1, 5))
        xs = rng.integers(0, 3, size=(n + 1, 3))
        steps = [LevelStep(xs[k].astype(float), xs[k], int(rng.integers(4)), xs[k + 1].astype(float), xs[k + 1],
                           k == n - 1) for k in range(n)]
        goal = goals[rng.integers(len(goals))]
        out = her_relabel(steps, goal, goals)
        originals = [t for t in out if t.goal == goal and t.reward == goal_reward(goal, t.x_t, t.x_t1)]
        assert len(out) == n + sum(goal_reward(g, s.x_t, s.x_t1) for s in steps for g in goals)
        assert len(originals) >= n
        for t in out:
            assert t.reward == goal_reward(t.goal, t.x_t, t.x_t1)
            if t.reward:
                assert t.done


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.01, 100), st.floats(-100, 100))
def test_greedy_choice_invariant_to_positive_affine_q(seed, a, b):
    env, _, h = chain_hierarchy(2, seed=seed % 5)
    level = h.level(2)
    s = h.encoder(env.reset())
    g = Subgoal(2, INC)
    pick = level.select(s, g, 0.0, None)
    level.q_net.weights[-1] *= a
    level.q_net.biases[-1] = level.q_net.biases[-1] * a + b
    assert level.select(s, g, 0.0, None) == pick


def test_replay_is_bounded_fifo():
    buf = ReplayBuffer(4, 2)
    for k in range(10):
        buf.push([k, k], 0, k, 0.0, [k, k], False)
    assert len(buf) == 4 and sorted(buf.action.tolist()) == [6, 7, 8, 9]


def test_verify_controllable_is_strict():
    th = 0.6
    assert verify_controllable({Subgoal(1, INC): 0.61, Subgoal(1, DEC): 0.0}, th) == {1}
    assert verify_controllable({Subgoal(1, INC): 0.6}, th) == set()
    assert verify_controllable({Subgoal(1, INC): 0.3, Subgoal(1, DEC): 0.9}, th) == {1}
    assert verify_controllable({}, th) == set()


def test_level_one_training_and_freeze():
    env, _, h = chain_hierarchy(2, HrlHyper(T_goal=10_000, eval_episodes=100))
    rng = np.random.default_rng(0)
    ratios = train_level_goals(env, h, 1, rng)
    assert ratios[Subgoal(1, INC)] >= 0.95
    frozen = [p.copy() for p in h.level(1).q_net.params]
    events = []
    train_level_goals(env, h, 2, rng, events, iteration=3)
    assert all(np.array_equal(a, b) for a, b in zip(frozen, h.level(1).q_net.params))
    assert [e["event"] for e in events] == ["train_start", "train_end"] and events[0]["level"] == 2
