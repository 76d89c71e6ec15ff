"""Bring a federation up and watch the shared coin.

Every replica attests its enclave, the certificates are echoed, and each
enclave ends up with the same XOR-combined seed. After that the coin only
opens when it is shown a quorum of signed vertices from the right round.
"""
from nxbft import SimConfig, Simulator
from nxbft.replica import ReplicaConfig

cfg = SimConfig(n=5, scheduler_seed=1, adversarial=True)
sim = Simulator(cfg, ReplicaConfig(setup_timeout=5 * cfg.sync_bound))
sim.run(1.5)

for r in sim.replicas:
    print(r.id, r.status.value, r.enclave.seed_digest().hex()[:16])

# slowest setup message versus the synchrony bound the setup relies on
print("max sync delay %.4fs (bound %.4fs)" % (sim.metrics.max_sync_delay, cfg.sync_bound))

# coins the replicas decided so far, wave by wave; they match everywhere
coins = [[r.consensus.decided_coin[w] for w in sorted(r.consensus.decided_coin)] for r in sim.replicas]
print(coins[0])
print(all(c[: len(coins[0])] == coins[0][: len(c)] for c in coins))

# the gate: sub-quorum evidence is refused and the stream does not move
from nxbft.errors import InsufficientEvidence

e = sim.replicas[0].enclave
before = e.expected_round
try:
    e.toss_coin([])
except InsufficientEvidence as exc:
    print("refused:", exc)
print(e.expected_round == before)
