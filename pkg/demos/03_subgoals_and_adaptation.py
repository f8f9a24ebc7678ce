# Subgoal policies by hand, then a task controller on top.
#
# Skips discovery: the hierarchy is built straight from the true graph so the
# goal-conditioned pieces can be looked at in isolation.
import numpy as np

from causalhrl.driver import eval_milestones, run_adaptation
from causalhrl.env import ChangeKind, Subgoal
from causalhrl.hrl import (HrlHyper, SubgoalHierarchy, build_or_extend_hierarchy, execute_subgoal,
                           her_relabel, train_level_goals)
from causalhrl.worlds import ChainCraft, Monitor

env = Monitor(ChainCraft(M_chain=3, seed=0))
truth = env.ground_truth_graph()
hy = HrlHyper(T_goal=3000, eval_episodes=50)
h = SubgoalHierarchy(env, hy, rng=0)
rng = np.random.default_rng(0)

# insert V0, V1, V2 level by level; each level is trained with the ones below frozen
for depth, var in enumerate([1, 2, 3], start=1):
    build_or_extend_hierarchy(h, truth, {var})
    ratios = train_level_goals(env, h, depth, rng)
    print(f"level {depth}:", {g.label(h.schema): r for g, r in ratios.items()})
print("steps spent on subgoals:", env.take_log().env_steps)

# one greedy rollout of the deepest goal; lower levels run inside it
env.reset()
ex = execute_subgoal(env, h, Subgoal(3, ChangeKind.INCREASE), hy.H ** 3, rng, epsilon=0.0)
print("V2 Inc:", ex.success, "in", ex.steps, "primitive steps",
      [int(t.action) for t in ex.transitions])

# hindsight relabelling of that rollout for the level's other goal
goals = h.level(3).goals
relabelled = her_relabel(ex.level_steps, goals[1], goals)
print("relabelled tuples:", [(t.goal.label(h.schema), t.reward) for t in relabelled])

# task controller over the verified subgoals and primitives
tp, curve = run_adaptation(env, h, hy, 3000, rng)
print("adaptation episodes:", len(curve), "last reward:", curve[-1]["reward"])
print("milestones over 200 greedy episodes:", eval_milestones(env, tp, 200, rng))
