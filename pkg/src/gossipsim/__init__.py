"""Round-synchronous gossip simulation with deterministic local-broadcast protocols.

The usual entry points::

    from gossipsim import make, tree_gossip, MinUID, check_local_broadcast

    g = make("cycle", 16)
    run = tree_gossip(g, MinUID())
    assert check_local_broadcast(g, 1, run.net.knowledge())
"""

from .engine import FaultModel, Network, RunTrace, export_jsonl, import_jsonl, replay, validate_trace
from .graph import Graph, GraphKind, corpus_specs, diameter, generate, log2ceil, make, read_edge_list
from .natural import (
    TemplateConfig,
    faulty_flood_run,
    measure_symmetry_lag,
    periodic_run,
    permanent_failure_run,
    shy_config,
    template_run,
)
from .policies import MaxUID, MinUID, SeededRandom, XorNearest, adversarial_fuzzer, make_policy
from .protocols import (
    ProtocolConfig,
    RunReport,
    deterministic_gossip,
    flood,
    global_broadcast,
    k_local_broadcast,
    randomized_gossip,
    tree_gossip,
)
from .verification import (
    check_local_broadcast,
    check_symmetry,
    extract_spanner,
    extract_witness_tree,
    k_hop_spanner_experiment,
)

__all__ = [
    "FaultModel", "Network", "RunTrace", "export_jsonl", "import_jsonl", "replay", "validate_trace",
    "Graph", "GraphKind", "corpus_specs", "diameter", "generate", "log2ceil", "make", "read_edge_list",
    "TemplateConfig", "faulty_flood_run", "measure_symmetry_lag", "periodic_run", "permanent_failure_run",
    "shy_config", "template_run",
    "MaxUID", "MinUID", "SeededRandom", "XorNearest", "adversarial_fuzzer", "make_policy",
    "ProtocolConfig", "RunReport", "deterministic_gossip", "flood", "global_broadcast", "k_local_broadcast",
    "randomized_gossip", "tree_gossip",
    "check_local_broadcast", "check_symmetry", "extract_spanner", "extract_witness_tree",
    "k_hop_spanner_experiment",
]
