"""Why the deterministic protocols stop after ceil(log2 n) iterations.

Every node that is still active at iteration i owns a witness tree with
exactly 2^i distinct nodes, and trees of nodes that do not yet know each
other are disjoint. With n nodes there is no room past i = log2 n. This
script rebuilds those trees from a recorded trace.

    python3 demos/02_witness_trees.py
"""

from gossipsim import make, tree_gossip
from gossipsim.policies import XorNearest
from gossipsim.verification import extract_witness_tree, links_by_creator

g = make("complete", 16)
run = tree_gossip(g, XorNearest())
links = links_by_creator(run.trace)
print(f"K16 with the xor-nearest rule: {run.report.iterations} iterations")
for i in range(1, run.report.iterations + 1):
    tree = extract_witness_tree(run.trace, 0, i, links)
    print(f"  order {i}: {len(tree.nodes):>2} nodes, depth {tree.depth()}, {tree.term()}")

# trees of the same order rooted at different nodes
roots = [v for v in range(g.n) if 3 in links.get(v, {})]
t = {v: set(extract_witness_tree(run.trace, v, 3, links).nodes) for v in roots}
disjoint = sum(1 for a in roots for b in roots if a < b and not t[a] & t[b])
print(f"\norder-3 trees: {len(roots)} roots, {disjoint} disjoint pairs among them")
