"""Simple everyday rules also give fast local broadcast.

Three variations on the same template: meet a new neighbor on a fixed
schedule (periodic), meet one only rarely and otherwise chat with old
acquaintances (shy), and drop half of all conversations at random (faulty).

    python3 demos/04_natural_gossip.py
"""

from statistics import median

from gossipsim import make
from gossipsim.graph import log2ceil
from gossipsim.natural import faulty_flood_run, measure_symmetry_lag, periodic_run, shy_config, template_run
from gossipsim.policies import SeededRandom

g = make("random-tree", 128, seed=3)
L = log2ceil(g.n)

print("periodic: a new link every alpha steps, each link used every beta steps, TTL lambda = 2L")
for alpha, beta in [(1, 1), (2, 2), (3, 1), (1, 3)]:
    r = periodic_run(g, alpha, beta, 2 * L, SeededRandom(alpha))
    print(f"  alpha={alpha} beta={beta}: {r.report.rounds:>3} steps (allowed {alpha * beta * 2 * L})")

print("\nshy: new neighbor with probability 1/L^2, otherwise a random old link")
steps = []
for s in range(10):
    r = template_run(g, shy_config(g.n, seed=s, record_times=True))
    steps.append(r.report.rounds)
lag = measure_symmetry_lag(r)
print(f"  10 seeds: median {median(steps)} steps, worst {max(steps)}; L^4 = {L ** 4}")
print(f"  last run: T_min={lag.t_min}, T_diff={lag.t_diff}, so at most {lag.iteration_bound} steps")

print("\nfaulty: every exchange fails independently with probability 1/2")
slow = [faulty_flood_run(g, 0.5, SeededRandom(s), seed=s).report.extras["slowdown"] for s in range(10)]
print(f"  slowdown vs fault-free: median {median(slow):.2f}, max {max(slow):.2f} (reference 2.00)")
