# What happens when a link of the chain is not observed.
#
# Hiding V1 turns V0 -> V1 -> V2 into a direct V0 -> V2 dependency in the
# projected graph. The agent should learn that shortcut and still manage to
# control V2 through V0.

from causalhrl.driver import DriverSettings, run_pretraining
from causalhrl.hrl import HrlHyper
from causalhrl.scm import ScmHyper
from causalhrl.worlds import ChainCraft, HiddenVars

env = HiddenVars(ChainCraft(M_chain=4, seed=2), ["V1"])
s = env.schema()
print("observed:", s.names)
print("projected truth:", [(s.names[a], s.names[b]) for a, b in env.ground_truth_graph().edges()])

res = run_pretraining(env, ScmHyper(T=10, Fs=100, Qs=20, K=10, batch=64, hidden=32),
                      HrlHyper(T_goal=3000, eval_episodes=50), DriverSettings(max_iterations=10), seed=2)
print("learned:", [(s.names[a], s.names[b]) for a, b in res.graph.edges()])
print("V0 -> V2 found:", (s.index("V0"), s.index("V2")) in res.graph.edges())
print("controllable:", [s.names[v] for v in sorted(res.state.S_IV)])
