"""What a host can and cannot do with its enclave's counter.

The host asks for a second signature and relabels it with the counter of a
vertex it already sent. Receivers see a signature that does not verify.
Only with the enclave's private key in hand (a broken TEE) does the split
go through, and then correct replicas disagree about the slot.
"""
from nxbft.broadcast import BroadcastConfig, Broadcaster
from nxbft.dag import DagStore
from nxbft.simnet import FaultAction, SimConfig, Simulator, Trace
from nxbft.replica import ReplicaConfig

cfg = SimConfig(n=3, scheduler_seed=5, faults=[FaultAction(0.4, 0, "equivocate", mode="forged-counter")])
sim = Simulator(cfg, ReplicaConfig(setup_timeout=0.25)).run(1.2)
src, v1, v2 = sim.equivocations[0]
print("equivocator", src, "round", v1.round, "counter", v1.counter, v2.counter)
print("drops:", dict(sim.metrics.verdicts))

# which vertex did each correct replica take for that slot
taken = {}
for ev in Trace.iter_bytes(sim.trace.to_bytes()):
    if ev[0] == "admit" and ev[4] == v1.round and ev[5] == src and ev[2] != src:
        taken[ev[2]] = ev[7].hex()[:8]
print(taken, "genuine:", v1.digest.hex()[:8])

# same attack with a leaked key, replayed by hand against two receivers
from nxbft.simnet import forge_equivocation

leak = forge_equivocation(sim.replicas[0], v1, "key-leak")
for rid, first, second in ((1, v1, leak), (2, leak, v1)):
    r = sim.replicas[rid]
    b = Broadcaster(rid, 3, r.enclave, dict(r.broadcaster.keys), BroadcastConfig(), lambda d, m: None, lambda: 0.0)
    # pick up the sender's FIFO position just before the contested vertex
    b.fifo_next[src], b.last_round[src] = v1.counter, v1.round - 1
    dag = DagStore()
    print(rid, "first", first.digest.hex()[:8], b.on_receive_vertex(first, dag).value,
          "then", second.digest.hex()[:8], b.on_receive_vertex(second, dag).value)
