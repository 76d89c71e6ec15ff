"""Why waves have four rounds: the common-core counterexample.

With three rounds, n=5 and quorum-sized links, the final-round vertices
only share two first-round ancestors, below the quorum of three. Four-round
waves produced by the simulator always clear the bar.
"""
from nxbft.harness import bundled_counterexample, check_get_core, wave_from_store
from nxbft.harness import load_experiment, run_experiment

dag = bundled_counterexample()
rep = check_get_core(dag)
print("3-round wave: core", rep.max_common_core_size, "witness", rep.witness, "need", rep.threshold)

overrides = ["n=7", "duration=1.5", "network.adversarial=true", "broadcast.batch_min=1"]
res = run_experiment(load_experiment("preset:smoke", overrides))
store = res.sim.replicas[0].dag
sizes = []
for w in range(1, store.max_round // 4):
    sizes.append(check_get_core(wave_from_store(store, 7, 4 * w - 3, 4 * w)).max_common_core_size)
print("4-round waves at n=7 (quorum 4), core sizes:", sizes)
