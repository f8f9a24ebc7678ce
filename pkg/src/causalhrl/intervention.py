"""Interventional data through behaviour: action bootstrap and subgoal set-points."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .env import ChangeKind, EnvContract, Subgoal
from .hrl import SubgoalHierarchy, execute_subgoal

log = logging.getLogger(__name__)


class NotControllableError(ValueError):
    pass


@dataclass
class InterventionPlan:
    target: int
    samples_requested: int
    max_attempts: int = 5
    record_steps: int = 8
    desired_value: int | None = None  # None draws uniformly per sample

    def __post_init__(self):
        if self.samples_requested < 0:
            raise ValueError("samples_requested must be >= 0")
        if self.max_attempts < 1 or self.record_steps < 1:
            raise ValueError("max_attempts and record_steps must be >= 1")


@dataclass
class SamplingReport:
    target: int
    pairs: int = 0
    setpoint_failures: int = 0
    env_steps: int = 0
    desired_counts: dict = field(default_factory=dict)
    diagnostic: str | None = None


def _with_action(x, action_id, a):
    x = np.array(x, dtype=np.int64)
    x[action_id] = a
    return x


def bootstrap_action_data(env: EnvContract, n: int, rng, rollout_length: int | None = None):
    """``n`` (x_t, x_t1) pairs under uniformly random primitive actions.

    The Action slot of x_t holds the executed action. Rollouts restart on
    episode end or after ``rollout_length`` steps when given.
    """
    pairs = []
    if n <= 0:
        return pairs
    action_id = env.schema().action_id
    n_act = env.primitive_action_count()
    obs = env.reset()
    t = 0
    while len(pairs) < n:
        a = int(rng.integers(n_act))
        x_t = _with_action(env.extract_vars(obs), action_id, a)
        obs, done = env.step(a)
        pairs.append((x_t, env.extract_vars(obs)))
        t += 1
        if done or (rollout_length and t >= rollout_length):
            obs = env.reset()
            t = 0
    return pairs


def intervene_on_variable(env: EnvContract, h: SubgoalHierarchy, plan: InterventionPlan, rng,
                          epsilon: float | None = None):
    """Clamps ``plan.target`` near a drawn value with its subgoals, then records.

    Per sample: reset, draw the desired value, execute Inc/Dec subgoals
    toward it (at most ``max_attempts``), then take random primitive actions
    and record adjacent pairs until the target drifts, the episode ends or
    ``record_steps`` pairs are taken. Returns (pairs, report).
    """
    schema = h.schema
    target = plan.target
    inc, dec = Subgoal(target, ChangeKind.INCREASE), Subgoal(target, ChangeKind.DECREASE)
    if inc not in h and dec not in h:
        raise NotControllableError(f"variable {schema.entries[target].name} has no trained subgoals")
    report = SamplingReport(target)
    pairs = []
    if plan.samples_requested == 0:
        return pairs, report
    card = schema.cardinalities[target]
    action_id = schema.action_id
    n_act = env.primitive_action_count()
    max_failures = 20 * plan.samples_requested
    while len(pairs) < plan.samples_requested and report.setpoint_failures < max_failures:
        desired = int(rng.integers(card)) if plan.desired_value is None else plan.desired_value
        obs = env.reset()
        x = env.extract_vars(obs)
        done = False
        for _ in range(plan.max_attempts):
            if x[target] == desired or done:
                break
            g = inc if desired > x[target] else dec
            if g not in h:
                break
            ex = execute_subgoal(env, h, g, h.hyper.H ** h.depth_of[target], rng, epsilon)
            report.env_steps += ex.steps
            done = ex.env_done
            obs = env.observation
            x = env.extract_vars(obs)
        if x[target] != desired or done:
            report.setpoint_failures += 1
            continue
        report.desired_counts[desired] = report.desired_counts.get(desired, 0) + 1
        for _ in range(plan.record_steps):
            a = int(rng.integers(n_act))
            x_t = _with_action(x, action_id, a)
            obs, done = env.step(a)
            report.env_steps += 1
            x = env.extract_vars(obs)
            pairs.append((x_t, x))
            if x[target] != desired or done or len(pairs) >= plan.samples_requested:
                break
    report.pairs = len(pairs)
    if not pairs:
        report.diagnostic = f"no set-point reached for {schema.entries[target].name}"
        log.warning(report.diagnostic)
    return pairs, report
