import numpy as np
import pytest
from hypothesis import given, strategies as st

from causalhrl.env import (ChangeKind, EnvVarSchema, SchemaError, Subgoal, VarKind, change_indicator,
                           enumerate_goal_space, goal_reward, milestone_flags)


def schema3():
    return EnvVarSchema.build([("Action", 4, "Action"), ("V0", 2, "Item"), ("V1", 3, "Item"), ("D0", 2, "Distractor")])


def test_goal_space_size_and_order():
    goals = enumerate_goal_space(schema3())
    assert len(goals) == 2 * (schema3().M - 1)
    assert goals[:2] == [Subgoal(1, ChangeKind.INCREASE), Subgoal(1, ChangeKind.DECREASE)]


@given(st.integers(0, 5), st.integers(0, 5))
def test_change_indicators_are_exclusive(a, b):
    inc = change_indicator(ChangeKind.INCREASE, a, b)
    dec = change_indicator(ChangeKind.DECREASE, a, b)
    assert inc + dec == int(a != b)


def test_goal_reward_examples():
    assert goal_reward(Subgoal(1, ChangeKind.INCREASE), [0, 0, 0, 0], [0, 1, 0, 0]) == 1
    assert goal_reward(Subgoal(1, ChangeKind.DECREASE), [0, 0, 0, 0], [0, 1, 0, 0]) == 0
    with pytest.raises(SchemaError):
        goal_reward(Subgoal(7, ChangeKind.INCREASE), [0, 0], [0, 1])


def test_schema_validation_and_json_roundtrip():
    s = schema3()
    assert s.action_id == 0 and s.index("V1") == 2
    assert s.ids_of_kind(VarKind.DISTRACTOR) == [3]
    assert EnvVarSchema.from_json(s.to_json()) == s
    with pytest.raises(SchemaError):
        s.validate([0, 2, 0, 0])
    with pytest.raises(SchemaError):
        EnvVarSchema.build([("V0", 2, "Item")])
    with pytest.raises(SchemaError):
        EnvVarSchema.build([("Action", 2, "Action"), ("V0", 1, "Item")])


def test_one_hot_blocks():
    oh = schema3().one_hot([3, 1, 2, 0])
    assert oh.shape == (1, 11)
    assert np.flatnonzero(oh[0]).tolist() == [3, 5, 8, 9]


def test_milestone_flags():
    assert milestone_flags(0b101) == [1, 0, 1, 0, 0]
