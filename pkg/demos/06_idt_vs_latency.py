"""Intermediate decision time against network round-trip time.

A wave is four broadcast rounds of one message delay each, so decisions
arrive about every two round trips.
"""
from nxbft.harness import load_experiment, run_experiment

for rtt in (5, 35, 150):
    exp = load_experiment("preset:wan35-n5", ["network.rtt_ms=%d" % rtt, "duration=%g" % max(3, 0.12 * rtt)])
    s = run_experiment(exp).summary
    print("rtt %3d ms  idt %6.1f ms  (2 rtt = %d)  throughput %6.0f  latency %5.0f ms"
          % (rtt, s.idt_mean * 1e3, 2 * rtt, s.throughput, s.latency_mean * 1e3))
