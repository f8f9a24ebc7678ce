"""Environment-variable layer: schemas, change functions, goal space, goal reward."""
from __future__ import annotations

import enum
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class SchemaError(ValueError):
    pass


class VarKind(str, enum.Enum):
    ACTION = "Action"
    ITEM = "Item"
    STATE_VALUE = "StateValue"
    DISTRACTOR = "Distractor"


class ChangeKind(enum.IntEnum):
    INCREASE = 0
    DECREASE = 1

    @property
    def short(self) -> str:
        return "Inc" if self is ChangeKind.INCREASE else "Dec"


@dataclass(frozen=True)
class VarSpec:
    id: int
    name: str
    cardinality: int
    kind: VarKind


@dataclass(frozen=True)
class EnvVarSchema:
    entries: tuple[VarSpec, ...]

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if ids != list(range(len(ids))):
            raise SchemaError(f"var ids must be 0..M-1 in order, got {ids}")
        if sum(e.kind is VarKind.ACTION for e in self.entries) != 1:
            raise SchemaError("schema needs exactly one Action variable")
        for e in self.entries:
            if e.cardinality < 2:
                raise SchemaError(f"{e.name}: cardinality must be >= 2")
        if len({e.name for e in self.entries}) != len(self.entries):
            raise SchemaError("variable names must be unique")

    @classmethod
    def build(cls, rows) -> "EnvVarSchema":
        """From (name, cardinality, kind) rows, ids assigned by position."""
        return cls(tuple(VarSpec(i, name, int(card), VarKind(kind)) for i, (name, card, kind) in enumerate(rows)))

    @property
    def M(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([e.cardinality for e in self.entries], dtype=int)

    @property
    def action_id(self) -> int:
        return next(e.id for e in self.entries if e.kind is VarKind.ACTION)

    def index(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.id
        raise SchemaError(f"no variable named {name!r}")

    def ids_of_kind(self, *kinds: VarKind) -> list[int]:
        return [e.id for e in self.entries if e.kind in kinds]

    def validate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.M,):
            raise SchemaError(f"expected {self.M} values, got shape {x.shape}")
        if np.any(x < 0) or np.any(x >= self.cardinalities):
            raise SchemaError(f"values {x.tolist()} out of range {self.cardinalities.tolist()}")
        return x

    def one_hot(self, x) -> np.ndarray:
        """Concatenated one-hot blocks; accepts a vector or a (N, M) batch."""
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        offsets = np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]])
        out = np.zeros((x.shape[0], int(self.cardinalities.sum())))
        out[np.arange(x.shape[0])[:, None], offsets[None, :] + x] = 1.0
        return out

    def to_json(self) -> dict:
        return {"vars": [{"id": e.id, "name": e.name, "cardinality": e.cardinality, "kind": e.kind.value}
                         for e in self.entries]}

    @classmethod
    def from_json(cls, obj) -> "EnvVarSchema":
        if isinstance(obj, str):
            obj = json.loads(obj)
        rows = sorted(obj["vars"], key=lambda v: v["id"])
        return cls(tuple(VarSpec(int(v["id"]), v["name"], int(v["cardinality"]), VarKind(v["kind"])) for v in rows))


VarVector = np.ndarray


class Subgoal(NamedTuple):
    var_id: int
    change: ChangeKind

    def label(self, schema: EnvVarSchema | None = None) -> str:
        name = schema.entries[self.var_id].name if schema else f"X{self.var_id}"
        return f"({name},{ChangeKind(self.change).short})"


@dataclass
class Transition:
    x_t: np.ndarray
    action: int
    x_t1: np.ndarray
    env_done: bool = False


def change_indicator(change: ChangeKind, before: int, after: int) -> int:
    if change == ChangeKind.INCREASE:
        return int(after > before)
    return int(after < before)


def goal_reward(g: Subgoal, x_t, x_t1) -> int:
    if not 0 <= g.var_id < len(x_t) or len(x_t) != len(x_t1):
        raise SchemaError(f"goal variable {g.var_id} outside vectors of length {len(x_t)}")
    return change_indicator(g.change, int(x_t[g.var_id]), int(x_t1[g.var_id]))


def enumerate_goal_space(schema: EnvVarSchema) -> list[Subgoal]:
    """All (non-Action variable, change) pairs, var-major."""
    return [Subgoal(e.id, c) for e in schema.entries if e.kind is not VarKind.ACTION for c in ChangeKind]


class EnvContract(ABC):
    """What every world offers the learner.

    Observations are opaque to the learner except through ``extract_vars``
    (the projection onto environment variables, Action slot left at 0) and
    ``policy_features`` (extra Q-network inputs, empty by default).
    """

    @abstractmethod
    def reset(self, seed=None): ...

    @abstractmethod
    def step(self, action: int):
        """Returns (observation, done)."""

    @abstractmethod
    def extract_vars(self, obs) -> np.ndarray: ...

    @abstractmethod
    def schema(self) -> EnvVarSchema: ...

    @abstractmethod
    def ground_truth_graph(self): ...

    @abstractmethod
    def milestones(self, obs=None) -> int:
        """Bitmask, bit k set for milestone k (bit 0 is the shallowest)."""

    @abstractmethod
    def primitive_action_count(self) -> int: ...

    @abstractmethod
    def task_achieved(self, obs=None) -> bool: ...

    def policy_features(self, obs) -> np.ndarray:
        return np.zeros(0)

    @property
    def policy_feature_dim(self) -> int:
        return 0

    def milestone_names(self) -> list[str]:
        return [f"m{k}" for k in range(5)]


def milestone_flags(mask: int, n: int = 5) -> list[int]:
    return [(mask >> k) & 1 for k in range(n)]
