import numpy as np
import pytest

from causalhrl.graphs import shd
from causalhrl.intervention import bootstrap_action_data
from causalhrl.scm import (InterventionDataset, ScmHyper, ScmParams, discover, function_learning_step,
                           predict_var, reinforce_gradient, sample_configuration, structure_learning_step,
                           threshold_graph)
from causalhrl.worlds import ChainCraft


def test_configuration_sampling_statistics(rng):
    c = sample_configuration(np.zeros((2, 2)), rng, size=10000)
    assert np.all(c[:, 0, 0] == 1) and np.all(c[:, 1, 1] == 1)
    assert 0.48 <= c[:, 0, 1].mean() <= 0.52
    patterns = c[:, 0, 1] * 2 + c[:, 1, 0]
    freq = np.bincount(patterns, minlength=4) / 10000
    assert np.all(np.abs(freq - 0.25) < 0.02)
    hi = sample_configuration(np.full((3, 3), 20.0), rng, size=1000)
    assert hi.all()


def test_reinforce_gradient_examples():
    assert reinforce_gradient(0.5, [1, 0], np.log([0.9, 0.1])) == pytest.approx(-0.4)
    assert reinforce_gradient(0.5, [1, 0], [0.0, 0.0]) == pytest.approx(0.0)
    assert reinforce_gradient(0.5, [1, 1], [-3.0, -3.0]) == pytest.approx(-0.5)
    # per-sample rows are summed over the batch
    assert reinforce_gradient(0.5, [1, 0], [[-1.0, -1.0], [-2.0, -2.0]]) == pytest.approx(
        reinforce_gradient(0.5, [1, 0], [-2.0, -4.0]))
    # huge log-likelihoods stay finite thanks to the max shift
    assert np.isfinite(reinforce_gradient(0.5, [1, 0], [-1e6, -1e6 - 5]))


def chain_data(M_chain=2, n=1024, seed=0):
    env = ChainCraft(M_chain=M_chain, seed=seed)
    data = InterventionDataset(env.schema().M)
    data.extend(0, bootstrap_action_data(env, n, np.random.default_rng(seed), 16))
    return env, data


def test_zero_theta_is_uniform_and_masking(rng):
    env, data = chain_data()
    p = ScmParams(env.schema(), ScmHyper(hidden=8), rng=0, zero_init=True)
    assert np.allclose(predict_var(p, 1, np.eye(5, dtype=int), [3, 1, 0, 0, 1]), 0.5)
    p2 = ScmParams(env.schema(), ScmHyper(hidden=8), rng=0)
    cfg = np.zeros((5, 5), dtype=int)
    a = predict_var(p2, 2, cfg, [0, 0, 1, 1, 0])
    b = predict_var(p2, 2, cfg, [2, 1, 1, 0, 1])
    assert np.allclose(a, b)
    c = predict_var(p2, 2, cfg, [0, 0, 0, 1, 0])
    assert not np.allclose(a, c)
    with pytest.raises(ValueError):
        predict_var(p2, 0, cfg, [0, 0, 0, 0, 0])


def test_first_step_nll_is_log2_on_zero_init(rng):
    env = ChainCraft(M_chain=2, seed=0)
    data = InterventionDataset(env.schema().M)
    for _ in range(8):
        data.add(0, [0, 0, 0, 0, 0], [0, 1, 0, 0, 0])
    p = ScmParams(env.schema(), ScmHyper(batch=16, hidden=8), rng=0, zero_init=True)
    assert function_learning_step(p, p.hyper, data, {0}, rng) == pytest.approx(np.log(2))


def test_phase_separation_and_training(rng):
    env, data = chain_data()
    hyper = ScmHyper(batch=64, hidden=32, K=5)
    p = ScmParams(env.schema(), hyper, rng=0)
    p.eta[:] = rng.normal(size=p.eta.shape)
    eta = p.eta.copy()
    losses = [function_learning_step(p, hyper, data, {0}, rng) for _ in range(400)]
    assert np.array_equal(eta, p.eta)
    assert np.mean(losses[-20:]) < 0.8 * np.mean(losses[:20])
    thetas = [t.copy() if t is not None else None for t in p.thetas]
    structure_learning_step(p, hyper, data, rng, {0})
    assert not np.array_equal(eta, p.eta)
    for a, b in zip(thetas, p.thetas):
        if a is not None:
            assert all(np.array_equal(x, y) for x, y in zip(a.params, b.params))


def test_empty_dataset_is_a_flagged_noop(rng):
    env = ChainCraft(M_chain=2)
    p = ScmParams(env.schema(), ScmHyper(hidden=8), rng=0)
    assert np.isnan(function_learning_step(p, p.hyper, InterventionDataset(5), {0}, rng))
    assert p.diagnostics


def test_zero_step_discovery_is_empty():
    env, data = chain_data()
    hyper = ScmHyper(T=0)
    res = discover(ScmParams(env.schema(), hyper, rng=0), hyper, data, {0})
    assert res.graph.n_edges == 0 and np.allclose(res.sigma[~np.eye(5, dtype=bool)], 0.5)


def test_threshold_rules():
    env = ChainCraft(M_chain=2)
    p = ScmParams(env.schema(), ScmHyper(hidden=8), rng=0)
    p.eta = np.random.default_rng(3).normal(scale=3, size=p.eta.shape)
    lo = threshold_graph(p, {0, 1}, 0.6)
    hi = threshold_graph(p, {0, 1}, 0.9)
    assert np.all(hi.adjacency <= lo.adjacency)
    assert lo.adjacency[:, 2:].sum() == 0  # causes outside S_IV
    assert lo.adjacency[0].sum() == 0  # Action never an effect


def perfect_intervention_data(M_chain, n, seed):
    """do() on each chain variable by writing the world state directly (test-only oracle data)."""
    env = ChainCraft(M_chain=M_chain, seed=seed)
    rng = np.random.default_rng(seed)
    data = InterventionDataset(env.schema().M)
    data.extend(0, bootstrap_action_data(env, n, rng, 16))
    for k in range(M_chain):
        for _ in range(n):
            env.reset()
            env.state.inventory[:] = rng.integers(0, 2, size=M_chain)
            a = int(rng.integers(M_chain + 1))
            x_t = env.extract_vars(env.observation)
            x_t[0] = a
            obs, _ = env.step(a)
            data.add(k + 1, x_t, env.extract_vars(obs))
    return env, data


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_discovery_from_perfect_interventions(seed):
    env, data = perfect_intervention_data(3, 512, seed)
    hyper = ScmHyper(T=10, Fs=100, Qs=20, K=10, batch=64, hidden=32)
    params = ScmParams(env.schema(), hyper, rng=seed)
    res = discover(params, hyper, data, set(range(4)), np.random.default_rng(seed))
    assert shd(res.graph, env.ground_truth_graph()) == 0


def test_dataset_jsonl_roundtrip_and_split(tmp_path):
    _, data = chain_data(n=40)
    path = tmp_path / "d.jsonl"
    data.to_jsonl(path)
    back = InterventionDataset.from_jsonl(path)
    assert back.keys() == data.keys() and len(back) == 40
    for a, b in zip(back.pooled(), data.pooled()):
        assert np.array_equal(a, b)
    tr, ho = data.split(0, "train")[0], data.split(0, "holdout")[0]
    assert len(tr) == 30 and len(ho) == 10
