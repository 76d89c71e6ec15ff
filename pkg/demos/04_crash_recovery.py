"""Crash one replica, bring it back from its sealed backup.

All replicas agree on the crashed replica's last vertices (its history),
swap in its fresh enclave key, and the returning replica resumes the coin
stream exactly where the others are.
"""
from nxbft.harness import load_experiment, run_experiment

exp = load_experiment("preset:recover-n5")
res = run_experiment(exp)
sim = res.sim

for t, rid, c, top, digest in sim.metrics.recoveries:
    print("%.3f  replica %d adopted history of %d up to round %d  %s" % (t, rid, c, top, digest.hex()[:12]))

back = sim.replicas[2]
peer = sim.replicas[0]
print("status:", back.status.value)
print("same enclave key everywhere:", all(r.enclave.peer_key(2) == back.enclave.public_key for r in sim.replicas))

waves = sorted(set(back.consensus.decided_coin) & set(peer.consensus.decided_coin))
print("coin stream matches on", len(waves), "waves:",
      all(back.consensus.decided_coin[w] == peer.consensus.decided_coin[w] for w in waves))
print("log lengths:", [len(r.consensus.delivery_log) for r in sim.replicas])
print(res.audit)
