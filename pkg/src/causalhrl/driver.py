"""The outer discovery loop and the task-level adaptation stage.

Pretraining alternates intervention sampling, causal discovery, hierarchy
extension, level training and controllability verification until no new
controllable candidates appear. Adaptation then trains a task controller over
the frozen subgoal policies.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .env import ChangeKind, EnvContract, Subgoal
from .graphs import CausalGraph, prune_cycles, shd, sid
from .hrl import (HrlHyper, ReplayBuffer, StateEncoder, SubgoalHierarchy, build_or_extend_hierarchy,
                  execute_subgoal, train_level_goals, verify_controllable)
from .intervention import InterventionPlan, bootstrap_action_data, intervene_on_variable
from .numeric import DenseNet, Trainer, forward
from .scm import DiscoveryResult, InterventionDataset, ScmHyper, ScmParams, discover
from .worlds import N_MILESTONES, Monitor

log = logging.getLogger(__name__)


@dataclass
class DriverSettings:
    max_iterations: int = 2_000_000
    samples_per_var: int = 512
    bootstrap_samples: int | None = None  # defaults to samples_per_var
    bootstrap_rollout: int | None = 16
    recollect_bootstrap: bool = True
    max_attempts: int = 5
    record_steps: int = 8
    random_intervention: bool = False
    adaptation_steps: int = 50000
    screen: bool = True

    def __post_init__(self):
        if self.max_iterations < 0 or self.samples_per_var < 1:
            raise ValueError("max_iterations >= 0 and samples_per_var >= 1 required")


def candidate_controllables(C: CausalGraph, S_IV) -> set[int]:
    """Variables outside S_IV whose nonempty parent set lies inside S_IV."""
    S_IV = set(S_IV)
    out = set()
    for i in range(C.M):
        if i in S_IV:
            continue
        parents = set(C.parents(i))
        if parents and parents <= S_IV:
            out.add(i)
    return out


@dataclass
class IterationSnapshot:
    iteration: int
    graph: CausalGraph
    sigma: np.ndarray
    S_IV: list[int]
    S_CC: list[int]
    S_C: list[int]
    ratios: dict
    metrics: dict
    dataset: InterventionDataset | None = None
    hierarchy: dict | None = None


@dataclass
class LoopState:
    S_IV: set[int]
    iteration: int = 0
    snapshots: list[IterationSnapshot] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    stop_reason: str | None = None
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class PretrainResult:
    hierarchy: SubgoalHierarchy
    graph: CausalGraph | None
    state: LoopState
    scm: ScmParams
    env: Monitor


def graph_scores(truth: CausalGraph, learned: CausalGraph, sigma=None) -> tuple[int, int]:
    """(SHD, SID) of ``learned`` against ``truth``; cycles are pruned for SID."""
    est = learned if learned.is_acyclic() else prune_cycles(learned, sigma)
    return shd(truth, learned), sid(truth, est)


def _collect(env, h, S_IV, settings: DriverSettings, rng, iteration) -> InterventionDataset:
    schema = env.schema()
    data = InterventionDataset(schema.M)
    a = schema.action_id
    if iteration == 0 or settings.recollect_bootstrap:
        n = settings.bootstrap_samples or settings.samples_per_var
        data.extend(a, bootstrap_action_data(env, n, rng, settings.bootstrap_rollout))
    for v in sorted(S_IV - {a}):
        if settings.random_intervention:
            pairs = bootstrap_action_data(env, settings.samples_per_var, rng, settings.bootstrap_rollout)
        else:
            plan = InterventionPlan(v, settings.samples_per_var, settings.max_attempts, settings.record_steps)
            pairs, _ = intervene_on_variable(env, h, plan, rng)
        data.extend(v, pairs)
    return data


def run_pretraining(env: EnvContract, scm_hyper: ScmHyper, hrl_hyper: HrlHyper, settings: DriverSettings,
                    seed: int = 0, on_iteration=None) -> PretrainResult:
    """Runs the discovery / hierarchy loop; ``on_iteration`` sees each snapshot."""
    rng = np.random.default_rng(seed)
    env = env if isinstance(env, Monitor) else Monitor(env)
    env.reset(int(rng.integers(2**31)))
    schema = env.schema()
    truth = env.ground_truth_graph()
    h = SubgoalHierarchy(env, hrl_hyper, rng=int(rng.integers(2**31)))
    params = ScmParams(schema, scm_hyper, rng=int(rng.integers(2**31)))
    state = LoopState(S_IV={schema.action_id})
    graph = None
    empty_streak = 0
    env_steps = 0
    t0 = time.perf_counter()
    if settings.max_iterations == 0:
        data = _collect(env, h, state.S_IV, settings, rng, 0)
        state.stop_reason = "max_iterations"
        state.snapshots.append(IterationSnapshot(-1, CausalGraph.empty(schema.M, schema.names),
                                                 params.sigma(), sorted(state.S_IV), [], [], {}, {}, data))
        return PretrainResult(h, None, state, params, env)
    for it in range(settings.max_iterations):
        state.iteration = it
        data = _collect(env, h, state.S_IV, settings, rng, it)
        res: DiscoveryResult = discover(params, scm_hyper, data, state.S_IV, rng, screen=settings.screen)
        graph = res.graph
        S_CC = candidate_controllables(res.gating_graph, state.S_IV)
        ratios, S_C = {}, set()
        if S_CC:
            new_goals = build_or_extend_hierarchy(h, res.gating_graph, S_CC)
            depths = sorted({h.depth_of[v] for v in S_CC})
            for d in range(depths[0], depths[-1] + 1):
                ratios.update(train_level_goals(env, h, d, rng, state.events, it))
                level_cands = {v for v in S_CC if h.depth_of.get(v) == d}
                passed = verify_controllable({g: r for g, r in ratios.items() if g.var_id in level_cands},
                                             hrl_hyper.phi_controllable)
                state.events.append({"event": "verify", "iteration": it, "level": d,
                                     "candidates": sorted(level_cands), "verified": sorted(passed)})
                S_C |= passed
            for v in S_CC - S_C:
                h.remove_variable(v)
            log.debug("iteration %d: %d new goals, S_C=%s", it, len(new_goals), sorted(S_C))
        log_ = env.take_log()
        env_steps += log_.env_steps
        shd_v, sid_v = graph_scores(truth, graph, res.sigma)
        active = [h.success_ratio.get(g, 0.0) for g in h.goals()]
        metrics = {
            "iteration": it, "env_steps": env_steps, "shd": shd_v, "sid": sid_v,
            "n_controllable": len(state.S_IV | S_C) - 1,
            "mean_subgoal_success": float(np.mean(active)) if active else 0.0,
            **{f"m{k}": log_.milestone_counts[k] for k in range(N_MILESTONES)},
            "wall_clock_s": time.perf_counter() - t0,
        }
        snap = IterationSnapshot(it, graph, res.sigma, sorted(state.S_IV), sorted(S_CC), sorted(S_C),
                                 {(int(g.var_id), ChangeKind(g.change).short): r for g, r in ratios.items()},
                                 metrics, data, h.to_json())
        state.snapshots.append(snap)
        state.diagnostics += res.diagnostics
        if on_iteration is not None:
            on_iteration(snap)
        if not S_CC:
            state.stop_reason = "no_candidates"
            break
        state.S_IV |= S_C
        empty_streak = empty_streak + 1 if not S_C else 0
        if empty_streak >= 2:
            state.stop_reason = "no_verified_twice"
            break
    else:
        state.stop_reason = "max_iterations"
    if len(state.S_IV) == 1:
        state.diagnostics.append("no controllable variable found")
    return PretrainResult(h, graph, state, params, env)


class TaskPolicy:
    """Q-learning controller over verified subgoals plus primitive actions."""

    def __init__(self, env: EnvContract, h: SubgoalHierarchy, hyper: HrlHyper, rng):
        self.h = h
        self.hyper = hyper
        self.encoder = StateEncoder(env)
        goals = [g for g in h.goals() if h.success_ratio.get(g, 0.0) > hyper.phi_controllable]
        self.actions: list = goals + list(range(env.primitive_action_count()))
        dims = [self.encoder.dim] + [hyper.hidden] * (hyper.n_layers - 1) + [len(self.actions)]
        self.q_net = DenseNet.create(dims, "q", rng)
        self.target_net = self.q_net.copy()
        self.trainer = Trainer(self.q_net, hyper.lr)
        self.replay = ReplayBuffer(hyper.replay_capacity, self.encoder.dim)
        self.updates = 0

    def select(self, s, epsilon, rng) -> int:
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(len(self.actions)))
        return int(np.argmax(forward(self.q_net, s[None])[0]))

    def update(self, rng) -> None:
        if len(self.replay) < self.hyper.batch:
            return
        s, _, a, r, s1, done = self.replay.sample(self.hyper.batch, rng)
        target = r + self.hyper.gamma_task * (1.0 - done) * forward(self.target_net, s1).max(axis=1)
        self.trainer.step(s, target, a)
        self.updates += 1
        if self.updates % self.hyper.target_sync_interval == 0:
            self.target_net = self.q_net.copy()

    def act(self, env, idx, fuel, rng) -> tuple[int, bool]:
        """Executes action ``idx``; lower levels run greedily. Returns (steps, env_done)."""
        a = self.actions[idx]
        if isinstance(a, Subgoal):
            ex = execute_subgoal(env, self.h, a, min(fuel, self.hyper.H ** self.h.depth_of[a.var_id]), rng, 0.0)
            return max(ex.steps, 0), ex.env_done
        _, done = env.step(int(a))
        return 1, bool(done)


def run_episode(env, tp: TaskPolicy, rng, epsilon: float, fuel: int, learn: bool) -> tuple[int, float, int]:
    """One task episode; returns (steps, reward, milestone mask)."""
    obs = env.reset()
    s = tp.encoder(obs)
    used, reward = 0, 0.0
    while used < fuel:
        idx = tp.select(s, epsilon, rng)
        n, done = tp.act(env, idx, fuel - used, rng)
        used += max(n, 1)
        obs = env.observation
        s1 = tp.encoder(obs)
        r = float(env.task_achieved(obs))
        done = done or r > 0
        if learn:
            tp.replay.push(s, 0, idx, r, s1, done)
            for _ in range(max(n, 1)):
                tp.update(rng)
        s = s1
        if done:
            reward = r
            break
    return used, reward, env.milestones(obs)


def run_adaptation(env: EnvContract, h: SubgoalHierarchy, hyper: HrlHyper, steps: int, rng,
                   curve_every: int = 1) -> tuple[TaskPolicy, list[dict]]:
    """Trains a task controller for ``steps`` environment steps over frozen subgoals."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    tp = TaskPolicy(env, h, hyper, rng)
    curve = []
    used, episode = 0, 0
    while used < steps:
        n, r, mask = run_episode(env, tp, rng, hyper.epsilon, steps - used, learn=True)
        used += n
        if episode % curve_every == 0:
            curve.append({"episode": episode, "env_steps": used, "reward": r, "milestones": mask})
        episode += 1
    return tp, curve


def eval_milestones(env: EnvContract, tp: TaskPolicy, episodes: int, rng, max_steps: int = 100_000) -> list[int]:
    """Counts greedy episodes reaching each milestone."""
    counts = [0] * N_MILESTONES
    for _ in range(max(episodes, 0)):
        _, _, mask = run_episode(env, tp, rng, 0.0, max_steps, learn=False)
        for k in range(N_MILESTONES):
            counts[k] += (mask >> k) & 1
    return counts


def build_flat_hierarchy(env: EnvContract, hyper: HrlHyper, rng=None) -> SubgoalHierarchy:
    """One level holding every (variable, change) goal over primitive actions."""
    h = SubgoalHierarchy(env, hyper, rng=rng)
    h.ensure_levels(1)
    prims = list(range(h.n_primitive))
    for v in range(h.schema.M):
        if v == h.schema.action_id:
            continue
        h.depth_of[v] = 1
        for c in ChangeKind:
            h.level(1).add_goal(Subgoal(v, c), prims)
    return h


def run_flat_baseline(env: Monitor, hyper: HrlHyper, pretrain_steps: int, total_steps: int, rng,
                      events=None) -> tuple[TaskPolicy, SubgoalHierarchy, int]:
    """Structure-free comparison under a fixed total step budget.

    Goals are drawn uniformly from the whole goal space and trained in one
    flat level for about ``pretrain_steps`` steps (evaluation included); a task
    controller then gets the rest of ``total_steps``. Returns the controller,
    the flat hierarchy and the steps actually used.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    h = build_flat_hierarchy(env, hyper, rng=int(rng.integers(2**31)))
    env.take_log()
    n_goals = len(h.goals())
    budget = max(pretrain_steps - n_goals * hyper.eval_episodes * hyper.H, 0)
    train_hyper = HrlHyper(**{**hyper.__dict__, "T_goal": budget})
    h.hyper = train_hyper
    train_level_goals(env, h, 1, rng, events)
    h.hyper = hyper
    used = env.take_log().env_steps
    tp, _ = run_adaptation(env, h, hyper, max(total_steps - used, 0), rng)
    used += env.take_log().env_steps
    return tp, h, used
