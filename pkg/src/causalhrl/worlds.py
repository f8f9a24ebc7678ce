"""Desk-scale crafting worlds with known causal graphs, plus env wrappers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .env import EnvContract, EnvVarSchema, VarKind
from .graphs import CausalGraph

log = logging.getLogger(__name__)

N_MILESTONES = 5


@dataclass
class WorldState:
    inventory: np.ndarray
    distractors: np.ndarray
    step: int = 0
    pos: tuple[int, int] | None = None
    milestones: int = 0


@dataclass
class ChainCraftConfig:
    M_chain: int = 4
    cardinality: int = 2
    success_prob: float = 1.0
    episode_length: int = 64
    distractor_count: int = 2
    distractor_cardinality: int = 2
    distractor_move_prob: float = 0.3
    seed: int | None = None

    def __post_init__(self):
        if self.M_chain < 1:
            raise ValueError("M_chain must be >= 1")
        if not 0 < self.success_prob <= 1:
            raise ValueError("success_prob must be in (0, 1]")
        if self.cardinality < 2 or self.episode_length < 1:
            raise ValueError("cardinality >= 2 and episode_length >= 1 required")


def _step_distractors(values, card, p, rng):
    """Independent +-1 random walk (mod cardinality) with move probability p."""
    moves = rng.random(len(values)) < p
    signs = rng.choice((-1, 1), size=len(values))
    return np.where(moves, (values + signs) % card, values)


class ChainCraft(EnvContract):
    """Chain of items V0..V{M-1}; crafting V_k needs V_{k-1}.

    Actions ``0..M-1`` craft the matching item, action ``M`` is a no-op.
    """

    def __init__(self, config: ChainCraftConfig | None = None, **kw):
        self.config = replace(config, **kw) if config else ChainCraftConfig(**kw)
        c = self.config
        rows = [("Action", c.M_chain + 1, VarKind.ACTION)]
        rows += [(f"V{k}", c.cardinality, VarKind.ITEM) for k in range(c.M_chain)]
        rows += [(f"D{k}", c.distractor_cardinality, VarKind.DISTRACTOR) for k in range(c.distractor_count)]
        self._schema = EnvVarSchema.build(rows)
        self.rng = np.random.default_rng(c.seed)
        self.state: WorldState | None = None

    @property
    def noop(self) -> int:
        return self.config.M_chain

    def schema(self) -> EnvVarSchema:
        return self._schema

    def primitive_action_count(self) -> int:
        return self.config.M_chain + 1

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        c = self.config
        d = self.rng.integers(0, c.distractor_cardinality, size=c.distractor_count)
        self.state = WorldState(np.zeros(c.M_chain, dtype=np.int64), d.astype(np.int64))
        return self.observation

    @property
    def observation(self) -> WorldState:
        s = self.state
        return WorldState(s.inventory.copy(), s.distractors.copy(), s.step, s.pos, s.milestones)

    def step(self, action: int):
        c = self.config
        if not 0 <= action <= c.M_chain:
            raise ValueError(f"action {action} out of range")
        s = self.state
        inv = s.inventory.copy()
        if action < c.M_chain:
            k = action
            if (k == 0 or s.inventory[k - 1] >= 1) and self.rng.random() < c.success_prob:
                inv[k] = min(inv[k] + 1, c.cardinality - 1)
        d = _step_distractors(s.distractors, c.distractor_cardinality, c.distractor_move_prob, self.rng)
        self.state = WorldState(inv, d, s.step + 1)
        self.state.milestones = s.milestones | self.milestones(self.state)
        return self.observation, self.state.step >= c.episode_length

    def extract_vars(self, obs) -> np.ndarray:
        return np.concatenate([[0], obs.inventory, obs.distractors]).astype(np.int64)

    def milestones(self, obs=None) -> int:
        obs = self.state if obs is None else obs
        mask = obs.milestones
        for k in range(min(N_MILESTONES, self.config.M_chain)):
            if obs.inventory[k] >= 1:
                mask |= 1 << k
        return mask

    def task_achieved(self, obs=None) -> bool:
        obs = self.state if obs is None else obs
        return bool(obs.inventory[-1] >= 1)

    def ground_truth_graph(self) -> CausalGraph:
        M = self._schema.M
        edges = [(0, 1)]
        for k in range(1, self.config.M_chain):
            edges += [(0, k + 1), (k, k + 1)]
        return CausalGraph.from_edges(M, edges, self._schema.names)

    def milestone_names(self):
        return [f"V{k}" for k in range(min(N_MILESTONES, self.config.M_chain))]


MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
UP, DOWN, LEFT, RIGHT, PICK, CRAFT = range(6)
ITEMS = ("Wood", "Stick", "StonePickaxe", "IronOre", "Diamond")


@dataclass
class MiniCraftConfig:
    grid_size: int = 7
    episode_length: int = 200
    weather_cardinality: int = 3
    weather_move_prob: float = 0.2
    n_trees: int = 3
    n_iron: int = 2
    seed: int | None = None

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be >= 3")
        if self.n_trees < 1 or self.n_iron < 1:
            raise ValueError("need at least one tree and one iron tile")
        if self.n_trees + self.n_iron + 2 > self.grid_size ** 2:
            raise ValueError("grid too small for the requested tiles")


class MiniCraft(EnvContract):
    """Grid crafting world: Wood -> Stick -> StonePickaxe -> IronOre -> Diamond.

    Tiles: tree (pick Wood), workspace (craft Stick from Wood, StonePickaxe
    from Stick), iron ore (pick with StonePickaxe), furnace (craft Diamond
    from IronOre). Weather is a random walk, Gold can never be obtained.
    Tile positions are fixed by the seed; the agent start is random per episode.
    """

    def __init__(self, config: MiniCraftConfig | None = None, **kw):
        self.config = replace(config, **kw) if config else MiniCraftConfig(**kw)
        c = self.config
        rows = [("Action", 6, VarKind.ACTION)] + [(name, 2, VarKind.ITEM) for name in ITEMS]
        rows += [("Weather", c.weather_cardinality, VarKind.DISTRACTOR), ("Gold", 2, VarKind.DISTRACTOR)]
        self._schema = EnvVarSchema.build(rows)
        self.rng = np.random.default_rng(c.seed)
        kinds = ["tree"] * c.n_trees + ["iron"] * c.n_iron + ["workspace", "furnace"]
        cells = self.rng.choice(c.grid_size * c.grid_size, size=len(kinds), replace=False)
        self.tiles = {divmod(int(cell), c.grid_size): kind for kind, cell in zip(kinds, cells)}
        self.state: WorldState | None = None

    def schema(self) -> EnvVarSchema:
        return self._schema

    def primitive_action_count(self) -> int:
        return 6

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        c = self.config
        pos = tuple(int(v) for v in self.rng.integers(0, c.grid_size, size=2))
        weather = int(self.rng.integers(0, c.weather_cardinality))
        self.state = WorldState(np.zeros(len(ITEMS), dtype=np.int64), np.array([weather, 0]), 0, pos)
        return self.observation

    @property
    def observation(self) -> WorldState:
        s = self.state
        return WorldState(s.inventory.copy(), s.distractors.copy(), s.step, s.pos, s.milestones)

    def _tile(self, pos):
        return self.tiles.get(pos)

    def step(self, action: int):
        if not 0 <= action < 6:
            raise ValueError(f"action {action} out of range")
        c = self.config
        s = self.state
        inv = s.inventory.copy()
        pos = s.pos
        wood, stick, pickaxe, iron, diamond = range(5)
        if action < 4:
            dr, dc = MOVES[action]
            pos = (min(max(pos[0] + dr, 0), c.grid_size - 1), min(max(pos[1] + dc, 0), c.grid_size - 1))
        else:
            tile = self._tile(pos)
            if action == PICK and tile == "tree":
                inv[wood] = 1
            elif action == PICK and tile == "iron" and s.inventory[pickaxe]:
                inv[iron] = 1
            elif action == CRAFT and tile == "workspace":
                if s.inventory[wood] and not s.inventory[stick]:
                    inv[stick] = 1
                elif s.inventory[stick] and not s.inventory[pickaxe]:
                    inv[pickaxe] = 1
            elif action == CRAFT and tile == "furnace" and s.inventory[iron]:
                inv[diamond] = 1
        weather = _step_distractors(s.distractors[:1], c.weather_cardinality, c.weather_move_prob, self.rng)
        self.state = WorldState(inv, np.array([weather[0], 0]), s.step + 1, pos)
        self.state.milestones = s.milestones | self.milestones(self.state)
        return self.observation, self.state.step >= c.episode_length

    def extract_vars(self, obs) -> np.ndarray:
        return np.concatenate([[0], obs.inventory, obs.distractors]).astype(np.int64)

    @property
    def policy_feature_dim(self) -> int:
        return 2 * self.config.grid_size

    def policy_features(self, obs) -> np.ndarray:
        n = self.config.grid_size
        f = np.zeros(2 * n)
        f[obs.pos[0]] = 1.0
        f[n + obs.pos[1]] = 1.0
        return f

    def milestones(self, obs=None) -> int:
        obs = self.state if obs is None else obs
        mask = obs.milestones
        for k in range(len(ITEMS)):
            if obs.inventory[k]:
                mask |= 1 << k
        return mask

    def task_achieved(self, obs=None) -> bool:
        obs = self.state if obs is None else obs
        return bool(obs.inventory[-1])

    def ground_truth_graph(self) -> CausalGraph:
        edges = [(0, 1)]
        for k in range(2, len(ITEMS) + 1):
            edges += [(0, k), (k - 1, k)]
        return CausalGraph.from_edges(self._schema.M, edges, self._schema.names)

    def milestone_names(self):
        return list(ITEMS)


class EnvWrapper(EnvContract):
    def __init__(self, env: EnvContract):
        self.env = env

    def reset(self, seed=None):
        return self.env.reset(seed)

    def step(self, action):
        return self.env.step(action)

    def extract_vars(self, obs):
        return self.env.extract_vars(obs)

    def schema(self):
        return self.env.schema()

    def ground_truth_graph(self):
        return self.env.ground_truth_graph()

    def milestones(self, obs=None):
        return self.env.milestones(obs)

    def primitive_action_count(self):
        return self.env.primitive_action_count()

    def task_achieved(self, obs=None):
        return self.env.task_achieved(obs)

    def policy_features(self, obs):
        return self.env.policy_features(obs)

    @property
    def policy_feature_dim(self):
        return self.env.policy_feature_dim

    @property
    def observation(self):
        return self.env.observation

    def milestone_names(self):
        return self.env.milestone_names()

    def __getattr__(self, name):
        if name == "env":
            raise AttributeError(name)
        return getattr(self.env, name)


def latent_projection(graph: CausalGraph, keep: list[int]) -> CausalGraph:
    """Graph over ``keep`` with j -> i whenever a directed path j -> ... -> i
    exists whose intermediate nodes are all outside ``keep``."""
    keep_set = set(keep)
    a = np.zeros((len(keep), len(keep)), dtype=np.int64)
    index = {v: k for k, v in enumerate(keep)}
    for j in keep:
        stack = list(graph.children(j))
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            if v in keep_set:
                if v != j:
                    a[index[v], index[j]] = 1
            else:
                stack.extend(graph.children(v))
    return CausalGraph(a, [graph.names[v] for v in keep])


class HiddenVars(EnvWrapper):
    """Removes variables from the schema the agent sees; dynamics unchanged.

    Only the variable layer loses them: the observation still shows them, so
    their one-hot values are appended to the policy features.
    """

    def __init__(self, env: EnvContract, hidden):
        super().__init__(env)
        full = env.schema()
        hidden_ids = sorted(full.index(h) if isinstance(h, str) else int(h) for h in hidden)
        if full.action_id in hidden_ids:
            raise ValueError("the Action variable cannot be hidden")
        self.hidden = hidden_ids
        self.keep = [v for v in range(full.M) if v not in hidden_ids]
        self._schema = EnvVarSchema.build([(full.entries[v].name, full.entries[v].cardinality,
                                            full.entries[v].kind) for v in self.keep])

    def schema(self):
        return self._schema

    def extract_vars(self, obs):
        return self.env.extract_vars(obs)[self.keep]

    def ground_truth_graph(self):
        return latent_projection(self.env.ground_truth_graph(), self.keep)

    @property
    def policy_feature_dim(self):
        full = self.env.schema()
        return self.env.policy_feature_dim + int(sum(full.entries[v].cardinality for v in self.hidden))

    def policy_features(self, obs):
        full = self.env.schema()
        x = self.env.extract_vars(obs)
        parts = [self.env.policy_features(obs)]
        for v in self.hidden:
            oh = np.zeros(full.entries[v].cardinality)
            oh[x[v]] = 1.0
            parts.append(oh)
        return np.concatenate(parts)


@dataclass
class StepLog:
    env_steps: int = 0
    episodes: int = 0
    milestone_counts: list[int] = field(default_factory=lambda: [0] * N_MILESTONES)


class Monitor(EnvWrapper):
    """Counts primitive steps and per-episode milestone achievements.

    An episode's milestone mask is folded into the counts when the next
    ``reset`` happens or when ``flush`` is called.
    """

    def __init__(self, env: EnvContract):
        super().__init__(env)
        self.log = StepLog()
        self._pending = None

    def reset(self, seed=None):
        self.flush()
        obs = self.env.reset(seed)
        self._pending = 0
        return obs

    def step(self, action):
        obs, done = self.env.step(action)
        self.log.env_steps += 1
        self._pending = self.env.milestones(obs)
        return obs, done

    def flush(self):
        if self._pending is not None:
            self.log.episodes += 1
            for k in range(N_MILESTONES):
                self.log.milestone_counts[k] += (self._pending >> k) & 1
            self._pending = None

    def take_log(self) -> StepLog:
        """Returns the log accumulated since the last call and starts a new one."""
        self.flush()
        out, self.log = self.log, StepLog()
        return out


WORLDS = {"chaincraft": (ChainCraft, ChainCraftConfig), "minicraft": (MiniCraft, MiniCraftConfig)}


def make_world(name: str, params: dict | None = None, seed=None) -> EnvContract:
    try:
        cls, cfg_cls = WORLDS[name]
    except KeyError:
        raise ValueError(f"unknown world {name!r}; choose from {sorted(WORLDS)}") from None
    params = dict(params or {})
    if seed is not None:
        params["seed"] = seed
    return cls(cfg_cls(**params))
