"""Multi-level goal-conditioned Q-learning over a causal subgoal hierarchy.

Level k holds the subgoals of variables at depth k of the causal graph. All
goals of a level share one Q-network whose input is the state encoding plus
a one-hot goal slot, and whose outputs cover the union of the goals' action
spaces (parent-variable subgoals and primitive actions). Per-goal masks keep
each goal to its own actions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import networkx as nx
import numpy as np

from .env import ChangeKind, EnvContract, EnvVarSchema, Subgoal, Transition, goal_reward
from .graphs import CausalGraph, prune_cycles
from .numeric import DenseNet, Trainer, forward

log = logging.getLogger(__name__)

LevelAction = Union[int, Subgoal]


@dataclass
class HrlHyper:
    epsilon: float = 0.05
    batch: int = 128
    H: int = 8
    gamma_goal: float = 0.9
    gamma_task: float = 0.95
    lr: float = 1e-4
    phi_controllable: float = 0.6
    T_goal: int = 10000
    target_sync_interval: int = 200
    replay_capacity: int = 50000
    eval_episodes: int = 100
    hidden: int = 64
    n_layers: int = 3
    updates_per_step: float = 1.0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not 0 < self.phi_controllable < 1:
            raise ValueError("phi_controllable must lie in (0, 1)")


class StateEncoder:
    """One-hot of the non-Action variables plus the world's policy features."""

    def __init__(self, env: EnvContract):
        self.schema = env.schema()
        self.env = env
        self.keep = [e.id for e in self.schema.entries if e.id != self.schema.action_id]
        cards = self.schema.cardinalities[self.keep]
        self.offsets = np.concatenate([[0], np.cumsum(cards)[:-1]])
        self.var_dim = int(cards.sum())
        self.dim = self.var_dim + env.policy_feature_dim

    def __call__(self, obs, x=None) -> np.ndarray:
        if x is None:
            x = self.env.extract_vars(obs)
        out = np.zeros(self.dim)
        out[self.offsets + np.asarray(x)[self.keep]] = 1.0
        if self.dim > self.var_dim:
            out[self.var_dim:] = self.env.policy_features(obs)
        return out


class ReplayBuffer:
    """Bounded FIFO of (state, goal slot, action, reward, next state, done)."""

    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.s1 = np.zeros((capacity, state_dim))
        self.goal = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def push(self, s, goal, action, reward, s1, done) -> None:
        p = self.pos
        self.s[p], self.goal[p], self.action[p] = s, goal, action
        self.reward[p], self.s1[p], self.done[p] = reward, s1, float(done)
        self.pos = (p + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng):
        idx = rng.integers(0, self.size, size=n)
        return self.s[idx], self.goal[idx], self.action[idx], self.reward[idx], self.s1[idx], self.done[idx]

    def __len__(self):
        return self.size


class ReplayTuple(NamedTuple):
    s: np.ndarray
    x_t: np.ndarray
    goal: Subgoal
    action: int
    reward: int
    s1: np.ndarray
    x_t1: np.ndarray
    done: bool


class LevelPolicy:
    def __init__(self, depth: int, state_dim: int, hyper: HrlHyper, rng):
        self.depth = depth
        self.state_dim = state_dim
        self.hyper = hyper
        self.goals: list[Subgoal] = []
        self.slots: dict[Subgoal, int] = {}
        self.actions: list[LevelAction] = []
        self.action_index: dict = {}
        self.goal_actions: dict[Subgoal, np.ndarray] = {}
        self.q_net: DenseNet | None = None
        self.target_net: DenseNet | None = None
        self.trainer: Trainer | None = None
        self.replay = ReplayBuffer(hyper.replay_capacity, state_dim)
        self.updates = 0
        self._rng = rng

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    def add_goal(self, goal: Subgoal, actions: list[LevelAction]) -> bool:
        """Registers ``goal``; returns False when it is already active."""
        if goal in self.goal_actions and goal in self.goals:
            return False
        new_slot = goal not in self.slots
        if new_slot:
            self.slots[goal] = len(self.slots)
        new_actions = [a for a in actions if a not in self.action_index]
        for a in new_actions:
            self.action_index[a] = len(self.actions)
            self.actions.append(a)
        self.goal_actions[goal] = np.array([self.action_index[a] for a in actions], dtype=np.int64)
        self.goals.append(goal)
        if self.q_net is None:
            dims = [self.state_dim + self.n_slots] + [self.hyper.hidden] * (self.hyper.n_layers - 1) + [len(self.actions)]
            self.q_net = DenseNet.create(dims, "q", self._rng)
            self.trainer = Trainer(self.q_net, self.hyper.lr)
        else:
            self.q_net.grow_input(int(new_slot))
            self.q_net.grow_output(len(new_actions))
            self.trainer.state.grow_like(self.q_net.params)
        self.target_net = self.q_net.copy()
        return True

    def deactivate(self, goal: Subgoal) -> None:
        if goal in self.goals:
            self.goals.remove(goal)

    def inputs(self, states: np.ndarray, slots) -> np.ndarray:
        states = np.atleast_2d(states)
        g = np.zeros((states.shape[0], self.n_slots))
        g[np.arange(states.shape[0]), np.asarray(slots)] = 1.0
        return np.hstack([states, g])

    def masked_q(self, state: np.ndarray, goal: Subgoal, net: DenseNet | None = None) -> np.ndarray:
        q = forward(net or self.q_net, self.inputs(state, [self.slots[goal]]))[0]
        out = np.full(len(self.actions), -np.inf)
        allowed = self.goal_actions[goal]
        out[allowed] = q[allowed]
        return out

    def select(self, state: np.ndarray, goal: Subgoal, epsilon: float, rng) -> int:
        allowed = self.goal_actions[goal]
        if epsilon > 0 and rng.random() < epsilon:
            return int(allowed[rng.integers(len(allowed))])
        return int(np.argmax(self.masked_q(state, goal)))

    def push(self, tup: ReplayTuple) -> None:
        self.replay.push(tup.s, self.slots[tup.goal], tup.action, tup.reward, tup.s1, tup.done)

    def update(self, rng, gamma: float) -> float | None:
        if len(self.replay) < self.hyper.batch:
            return None
        s, slot, a, r, s1, done = self.replay.sample(self.hyper.batch, rng)
        q_next = forward(self.target_net, self.inputs(s1, slot))
        mask = np.zeros((len(self.slots), len(self.actions)), dtype=bool)
        for goal, idx in self.goal_actions.items():
            mask[self.slots[goal], idx] = True
        q_next = np.where(mask[slot], q_next, -np.inf).max(axis=1)
        target = r + gamma * (1.0 - done) * q_next
        loss = self.trainer.step(self.inputs(s, slot), target, a)
        self.updates += 1
        if self.updates % self.hyper.target_sync_interval == 0:
            self.target_net = self.q_net.copy()
        return loss


class SubgoalHierarchy:
    def __init__(self, env: EnvContract, hyper: HrlHyper | None = None, rng=None):
        self.schema: EnvVarSchema = env.schema()
        self.hyper = hyper or HrlHyper()
        self.encoder = StateEncoder(env)
        self.n_primitive = env.primitive_action_count()
        self.levels: list[LevelPolicy] = []
        self.depth_of: dict[int, int] = {self.schema.action_id: 0}
        self.success_ratio: dict[Subgoal, float] = {}
        self.rng = np.random.default_rng(rng)

    @property
    def n_levels(self) -> int:
        return max((lvl.depth for lvl in self.levels if lvl.goals), default=0)

    def level(self, depth: int) -> LevelPolicy:
        return self.levels[depth - 1]

    def level_of(self, goal: Subgoal) -> LevelPolicy:
        return self.level(self.depth_of[goal.var_id])

    def goals(self) -> list[Subgoal]:
        return [g for lvl in self.levels for g in lvl.goals]

    def __contains__(self, goal) -> bool:
        return goal.var_id in self.depth_of and goal in self.level_of(goal).goals

    def controllable_vars(self) -> list[int]:
        return sorted(v for v in self.depth_of if v != self.schema.action_id)

    def ensure_levels(self, depth: int) -> None:
        while len(self.levels) < depth:
            self.levels.append(LevelPolicy(len(self.levels) + 1, self.encoder.dim, self.hyper, self.rng))

    def remove_variable(self, var: int) -> None:
        if var not in self.depth_of or var == self.schema.action_id:
            return
        lvl = self.level(self.depth_of.pop(var))
        for c in ChangeKind:
            lvl.deactivate(Subgoal(var, c))

    def snapshot(self) -> list:
        """Copies of every Q-network's parameters (for freeze checks)."""
        return [[p.copy() for p in lvl.q_net.params] for lvl in self.levels if lvl.q_net is not None]

    def to_json(self) -> dict:
        levels = []
        for lvl in self.levels:
            if not lvl.goals:
                continue
            levels.append({
                "depth": lvl.depth,
                "goals": [{"var": self.schema.entries[g.var_id].name, "var_id": g.var_id,
                           "change": ChangeKind(g.change).short,
                           "success_ratio": self.success_ratio.get(g)} for g in lvl.goals],
                "actions": [a if isinstance(a, int) and not isinstance(a, Subgoal) else Subgoal(*a).label(self.schema)
                            for a in lvl.actions],
            })
        return {"levels": levels}


def variable_depths(C: CausalGraph, sigma=None, action: int = 0) -> dict[int, int | None]:
    """Longest-path depth from the Action node on the cycle-pruned graph."""
    g = prune_cycles(C, sigma).to_networkx()
    reach = nx.descendants(g, action) | {action}
    sub = g.subgraph(reach)
    depth: dict[int, int | None] = {v: None for v in range(C.M)}
    for v in nx.topological_sort(sub):
        preds = list(sub.predecessors(v))
        depth[v] = 0 if v == action else 1 + max(depth[p] for p in preds)
    return depth


def action_space_for(g: Subgoal, C: CausalGraph, n_primitive: int, action: int = 0) -> list[LevelAction]:
    """Both change-subgoals of each non-Action parent, then every primitive."""
    out: list[LevelAction] = []
    for p in sorted(C.parents(g.var_id)):
        if p == action:
            continue
        out += [Subgoal(p, ChangeKind.INCREASE), Subgoal(p, ChangeKind.DECREASE)]
    return out + list(range(n_primitive))


def build_or_extend_hierarchy(h: SubgoalHierarchy, C: CausalGraph, candidates) -> list[Subgoal]:
    """Inserts both change-subgoals of each candidate at its depth.

    A candidate's depth is one more than the deepest of its parents, whose
    depths must already be known. Returns the newly inserted goals.
    """
    action = h.schema.action_id
    new = []
    for v in sorted(candidates):
        parents = C.parents(v)
        if not parents:
            raise ValueError(f"candidate {v} has no parents")
        missing = [p for p in parents if p not in h.depth_of]
        if missing:
            raise ValueError(f"candidate {v}: parents {missing} have no depth yet")
        d = 1 + max(h.depth_of[p] for p in parents)
        if v in h.depth_of and h.depth_of[v] != d:
            h.remove_variable(v)
        h.depth_of[v] = d
        h.ensure_levels(d)
        actions = action_space_for(Subgoal(v, ChangeKind.INCREASE), C, h.n_primitive, action)
        for c in ChangeKind:
            g = Subgoal(v, c)
            if h.level(d).add_goal(g, actions):
                new.append(g)
    return new


class LevelStep(NamedTuple):
    s: np.ndarray
    x_t: np.ndarray
    action: int
    s1: np.ndarray
    x_t1: np.ndarray
    terminal: bool


@dataclass
class Execution:
    transitions: list[Transition]
    success: bool
    steps: int
    level_steps: list[LevelStep] = field(default_factory=list)
    env_done: bool = False


class _Rollout:
    def __init__(self, env, h, fuel, epsilon, rng, on_step=None):
        self.env, self.h, self.fuel, self.epsilon, self.rng = env, h, fuel, epsilon, rng
        self.transitions: list[Transition] = []
        self.stack: list[tuple[Subgoal, np.ndarray]] = []
        self.abort_at: int | None = None
        self.env_done = False
        self.on_step = on_step
        self.obs = env.observation
        self.x = env.extract_vars(self.obs)

    def primitive(self, a: int) -> None:
        if self.fuel <= 0 or self.env_done:
            self.abort_at = -1
            return
        x_t = self.x.copy()
        x_t[self.h.schema.action_id] = a
        self.obs, done = self.env.step(a)
        self.x = self.env.extract_vars(self.obs)
        self.fuel -= 1
        self.env_done = bool(done)
        self.transitions.append(Transition(x_t, a, self.x.copy(), self.env_done))
        if self.on_step is not None:
            self.on_step(self)
        for idx, (g, x_ref) in enumerate(self.stack):
            if goal_reward(g, x_ref, self.x):
                self.abort_at = idx if self.abort_at is None else min(self.abort_at, idx)
                break
        if self.abort_at is None and (self.fuel <= 0 or self.env_done):
            self.abort_at = -1

    def run_goal(self, g: Subgoal, record: bool = False) -> tuple[bool, list[LevelStep]]:
        h = self.h
        level = h.level_of(g)
        d = len(self.stack)
        steps: list[LevelStep] = []
        enc = h.encoder
        for _ in range(h.hyper.H):
            if self.abort_at is not None:
                break
            x0 = self.x.copy()
            s0 = enc(self.obs, x0)
            out = level.select(s0, g, self.epsilon, self.rng)
            act = level.actions[out]
            if isinstance(act, Subgoal):
                self.stack.append((g, x0))
                self.run_goal(act)
                self.stack.pop()
            else:
                self.primitive(int(act))
            r = goal_reward(g, x0, self.x)
            if record:
                steps.append(LevelStep(s0, x0, out, enc(self.obs, self.x), self.x.copy(), False))
            if r:
                if self.abort_at == d:
                    self.abort_at = None
                if record:
                    steps[-1] = steps[-1]._replace(terminal=True)
                return True, steps
            if self.abort_at is not None and self.abort_at < d:
                break
        if record and steps:
            steps[-1] = steps[-1]._replace(terminal=True)
        return False, steps


def execute_subgoal(env: EnvContract, h: SubgoalHierarchy, g: Subgoal, fuel: int, rng=None,
                    epsilon: float | None = None, on_step=None) -> Execution:
    """Runs ``g`` from the env's current state with epsilon-greedy levels.

    Choosing a lower subgoal recursively executes it with its own horizon; a
    lower execution stops early as soon as any enclosing goal's change fires.
    """
    if g not in h:
        raise ValueError(f"goal {g} is not in the hierarchy")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    eps = h.hyper.epsilon if epsilon is None else epsilon
    if fuel <= 0:
        return Execution([], False, 0)
    ro = _Rollout(env, h, fuel, eps, rng, on_step)
    success, steps = ro.run_goal(g, record=True)
    return Execution(ro.transitions, success, len(ro.transitions), steps, ro.env_done)


def her_relabel(steps, goal: Subgoal, level_goals, allowed: dict | None = None) -> list[ReplayTuple]:
    """Original-goal tuples plus one reward-1 tuple per level goal that fired.

    ``allowed`` (goal -> action indices) drops relabels whose action lies
    outside the relabelled goal's own action space.
    """
    out = []
    for st in steps:
        r = goal_reward(goal, st.x_t, st.x_t1)
        out.append(ReplayTuple(st.s, st.x_t, goal, st.action, r, st.s1, st.x_t1, bool(r) or st.terminal))
        for g2 in level_goals:
            if not goal_reward(g2, st.x_t, st.x_t1):
                continue
            if allowed is not None and st.action not in allowed[g2]:
                continue
            out.append(ReplayTuple(st.s, st.x_t, g2, st.action, 1, st.s1, st.x_t1, True))
    return out


def evaluate_goal(env: EnvContract, h: SubgoalHierarchy, g: Subgoal, episodes: int, rng, fuel=None) -> float:
    """Greedy success ratio from fresh resets."""
    if episodes <= 0:
        return 0.0
    wins = 0
    for _ in range(episodes):
        env.reset()
        ex = execute_subgoal(env, h, g, fuel or h.hyper.H ** h.depth_of[g.var_id], rng, epsilon=0.0)
        wins += ex.success
    return wins / episodes


def train_level_goals(env: EnvContract, h: SubgoalHierarchy, depth: int, rng, events=None,
                      iteration: int | None = None) -> dict[Subgoal, float]:
    """Trains all goals of one level together for T_goal environment steps.

    Each round resets the env, executes a random goal of the level, stores
    relabelled transitions and performs Q-learning updates. Lower levels are
    only executed, never updated. Ends with a greedy evaluation per goal.
    """
    hy = h.hyper
    level = h.level(depth)
    goals = list(level.goals)
    if events is not None:
        events.append({"event": "train_start", "iteration": iteration, "level": depth,
                       "goals": [tuple(map(int, g)) for g in goals]})
    used = 0
    while used < hy.T_goal and goals:
        g = goals[rng.integers(len(goals))]
        env.reset()
        ex = execute_subgoal(env, h, g, min(hy.T_goal - used, hy.H ** depth), rng)
        for tup in her_relabel(ex.level_steps, g, goals, level.goal_actions):
            level.push(tup)
        for _ in range(int(round(ex.steps * hy.updates_per_step))):
            level.update(rng, hy.gamma_goal)
        used += max(ex.steps, 1)
    ratios = {g: evaluate_goal(env, h, g, hy.eval_episodes, rng) for g in goals}
    h.success_ratio.update(ratios)
    if events is not None:
        events.append({"event": "train_end", "iteration": iteration, "level": depth, "steps": used,
                       "ratios": {f"{g.var_id}:{ChangeKind(g.change).short}": r for g, r in ratios.items()}})
    return ratios


def verify_controllable(success_ratios: dict, threshold: float) -> set[int]:
    """Variables with at least one change-subgoal strictly above ``threshold``."""
    return {g.var_id for g, r in success_ratios.items() if r > threshold}
