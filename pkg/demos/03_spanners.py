"""The links created by the protocol form a sparse spanner.

Every link is a graph edge, each node creates at most one per iteration,
and every original edge is bridged by a short path of links. Limiting the
flood depth to k hops gives a k-hop spanner; deeper floods learn more per
iteration and need fewer links.

    python3 demos/03_spanners.py
"""

from gossipsim import make, tree_gossip
from gossipsim.policies import MinUID
from gossipsim.verification import extract_spanner, k_hop_spanner_experiment, spanner_stats_csv

g = make("random-gnp", 256, seed=0, p=0.1)
print(f"G(256, 0.1): {g.m} edges, average degree {2 * g.m / g.n:.1f}\n")

rows = []
for k in (2, 4, 8, 16):
    rows.append((f"k={k}", k_hop_spanner_experiment(g, k, MinUID())))
_, full = extract_spanner(tree_gossip(g, MinUID(), record="aggregate").trace, g)
rows.append(("tree protocol", full))
print(spanner_stats_csv(rows))
print("The size bound n ceil(log2 n) assumes at most ceil(log2 n) iterations. A 2-hop flood learns too")
print("little per iteration to finish that quickly, which is why k=2 can go over it.")
