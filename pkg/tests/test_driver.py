import numpy as np
import pytest

from causalhrl.driver import (build_flat_hierarchy, candidate_controllables, eval_milestones, graph_scores,
                              run_adaptation, run_flat_baseline, run_pretraining)
from causalhrl.graphs import CausalGraph
from causalhrl.worlds import ChainCraft, Monitor
from conftest import desk_hypers


def test_candidate_controllables():
    C = CausalGraph.from_edges(4, [(0, 1), (1, 2), (0, 3), (2, 3)])
    assert candidate_controllables(C, {0}) == {1}
    assert candidate_controllables(C, {0, 1}) == {2}
    assert candidate_controllables(C, {0, 1, 2}) == {3}
    assert candidate_controllables(CausalGraph.empty(3), {0}) == set()


@pytest.fixture(scope="module")
def chain3():
    scm, hrl, drv = desk_hypers()
    return run_pretraining(ChainCraft(M_chain=3, seed=1), scm, hrl, drv, seed=1)


def test_chain3_trace(chain3):
    st = chain3.state
    assert [s.S_C for s in st.snapshots] == [[1], [2], [3], []]
    assert st.stop_reason == "no_candidates" and len(st.snapshots) <= 6
    assert graph_scores(chain3.env.ground_truth_graph(), chain3.graph) == (0, 0)
    assert chain3.hierarchy.n_levels == 3


def test_s_iv_grows_monotonically(chain3):
    sizes = [len(s.S_IV) for s in chain3.state.snapshots]
    assert sizes == sorted(sizes) and sizes[0] == 1


def test_events_train_before_verify(chain3):
    seen = set()
    for e in chain3.state.events:
        if e["event"] == "train_end":
            seen.add((e["iteration"], e["level"]))
        if e["event"] == "verify":
            assert (e["iteration"], e["level"]) in seen


def test_chain1_single_level():
    scm, hrl, drv = desk_hypers()
    res = run_pretraining(ChainCraft(M_chain=1, seed=0), scm, hrl, drv, seed=0)
    assert [s.S_C for s in res.state.snapshots][0] == [1]
    assert res.hierarchy.n_levels == 1 and len(res.state.snapshots) == 2


def test_zero_iterations_is_bootstrap_only():
    scm, hrl, drv = desk_hypers(max_iterations=0)
    res = run_pretraining(ChainCraft(M_chain=2, seed=0), scm, hrl, drv, seed=0)
    assert res.hierarchy.goals() == [] and res.state.stop_reason == "max_iterations"


def test_adaptation_freezes_subgoals(chain3):
    h = chain3.hierarchy
    before = h.snapshot()
    env = Monitor(ChainCraft(M_chain=3, seed=4))
    tp, curve = run_adaptation(env, h, h.hyper, 2000, np.random.default_rng(0))
    assert all(np.array_equal(a, b) for la, lb in zip(before, h.snapshot()) for a, b in zip(la, lb))
    assert curve and curve[-1]["env_steps"] <= 2000 + h.hyper.H ** 3
    assert eval_milestones(env, tp, 0, np.random.default_rng(0)) == [0] * 5
    # items never decrease in ChainCraft, so only the Inc goals pass the threshold
    assert tp.actions == [g for g in h.goals() if g.change == 0] + [0, 1, 2, 3]


def test_flat_baseline_shapes():
    env = Monitor(ChainCraft(M_chain=2, seed=0))
    _, hrl, _ = desk_hypers()
    h = build_flat_hierarchy(env, hrl, rng=0)
    assert h.n_levels == 1 and len(h.goals()) == 8
    assert all(isinstance(a, int) for a in h.level(1).actions)
    tp, _, used = run_flat_baseline(env, hrl, 4000, 6000, np.random.default_rng(0))
    assert used <= 6000 + hrl.H
