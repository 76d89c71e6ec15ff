"""Ten replicas, three staggered crashes, fixed request rate.

Clients of a crashed replica wait for their fallback timer, resend
elsewhere, and the blacklist steers later requests away.
"""
from nxbft.harness import load_experiment, run_experiment

exp = load_experiment("preset:crash-n10")
res = run_experiment(exp)
for t, count, lat in res.summary.buckets:
    print("%5.2f  %4d completed  %6.1f ms" % (t, count, lat * 1e3))
print(res.audit)
