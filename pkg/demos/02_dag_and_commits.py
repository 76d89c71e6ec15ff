"""A short fault-free run seen from one replica: rounds, waves, commits.

Writes the replica's DAG as Graphviz (dag.dot) next to this script.
"""
from pathlib import Path

from nxbft.consensus import wave_of
from nxbft.harness import load_experiment, run_experiment

exp = load_experiment("preset:smoke", ["duration=1.5"])
res = run_experiment(exp)
r0 = res.sim.replicas[0]

print("rounds:", r0.dag.max_round, "waves:", wave_of(r0.dag.max_round))
print("delivered vertices:", len(r0.consensus.delivery_log))
print("committed waves:", sorted(r0.consensus.committed_root))

# per-wave outcome at replica 0: (time, wave, root present, committed directly)
for t, w, present, direct in res.sim.metrics.decisions[0][:8]:
    print("%.3f  wave %2d  root=%d direct=%d" % (t, w, present, direct))

print(res.summary.vertex_messages_per_round, "vertex messages per round, n^2 =", exp.n ** 2)
print(res.audit)

out = Path(__file__).with_name("dag.dot")
out.write_text(r0.dag.to_dot())
print("wrote", out)
