"""Config-driven experiment runner.

A config is one JSON document (schema in :data:`CONFIG_SCHEMA`, prose in
the README). :func:`run_experiment` runs graphs x policies x seeds, checks
the enabled assertions on every run, and writes a CSV row per run plus a
JSON summary. The exit status is 0 iff every enabled assertion passed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import jsonschema
import numpy as np

from . import bits
from .checks import (
    APPLICABLE,
    ASSERTIONS,
    DEFAULT_BOUNDS,
    BoundaryChecks,
    eval_bound,
    oracle_failures,
    spanner_failures,
)
from .engine import (
    Network,
    import_jsonl,
    export_jsonl,
    knowledge_of,
    replay as replay_trace,
    state_digest,
    validate_trace,
)
from .graph import Graph, GraphKind, closure_bits, corpus_specs, diameter, generate, log2ceil, read_edge_list
from .natural import TemplateConfig, faulty_flood_run, measure_symmetry_lag, template_run
from .natural import permanent_failure_run
from .policies import POLICY_NAMES, make_policy
from .protocols import (
    ProtocolConfig,
    deterministic_gossip,
    flood,
    k_local_broadcast,
    randomized_gossip,
    tree_gossip,
)

log = logging.getLogger("gossipsim")

PROTOCOLS = tuple(APPLICABLE)
WORKERS_ENV = "GOSSIPSIM_WORKERS"

CSV_COLUMNS = [
    "graph", "n", "m", "protocol", "policy", "seed", "k", "iterations", "rounds", "calls",
    "completed", *[a.replace("-", "_") for a in ASSERTIONS], "wall_seconds",
]

_graph_schema = {
    "type": "object",
    "properties": {
        "kind": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "params": {"type": "object"},
        "edge_list": {"type": "string"},
    },
    "additionalProperties": True,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["protocol"],
    "additionalProperties": False,
    "properties": {
        "protocol": {"enum": list(PROTOCOLS)},
        "graphs": {"type": "array", "items": _graph_schema},
        "corpus": {
            "type": "object",
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "seed": {"type": "integer"},
                "kinds": {"type": "array", "items": {"type": "string"}},
            },
            "additionalProperties": False,
        },
        "policies": {"type": "array", "items": {"enum": list(POLICY_NAMES) + ["random"]}},
        "seeds": {
            "oneOf": [
                {"type": "array", "items": {"type": "integer"}},
                {"type": "object", "required": ["count"],
                 "properties": {"start": {"type": "integer"}, "count": {"type": "integer", "minimum": 0}},
                 "additionalProperties": False},
            ]
        },
        "params": {"type": "object"},
        "assertions": {"type": "array", "items": {"enum": list(ASSERTIONS) + ["all"]}},
        "bounds": {
            "type": "object",
            "properties": {"iterations": {"type": ["string", "number"]}, "rounds": {"type": ["string", "number"]}},
            "additionalProperties": False,
        },
        "record_traces": {"type": "boolean"},
        "output": {
            "type": "object",
            "properties": {"csv": {"type": "string"}, "json": {"type": "string"},
                           "traces": {"type": "string"}},
            "additionalProperties": False,
        },
        "bench": {
            "type": "object",
            "properties": {"protocols": {"type": "array", "items": {"enum": list(PROTOCOLS)}}},
        },
    },
}


_CONFIG_KEYS = ("d", "delta_cap", "rand_links_per_iter", "rand_flood_hops", "rand_constant",
                "use_new_links_only", "adaptive_depth", "repeat_style", "max_iterations")
_PARAM_KEYS = {*_CONFIG_KEYS, "k", "base", "links", "delta", "template", "faults"}
_TEMPLATE_KEYS = {"propagation", "lam", "p", "alpha", "beta", "gamma", "flood_depth", "step_cap"}


class ConfigError(ValueError):
    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


@dataclass
class ExperimentConfig:
    protocol: str
    graphs: list = field(default_factory=list)  # GraphKind or ("edges", label, text)
    policies: list = field(default_factory=lambda: ["min-uid"])
    seeds: list = field(default_factory=lambda: [0])
    params: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)
    record_traces: bool = False
    output: dict = field(default_factory=dict)
    bench_protocols: list = field(default_factory=list)
    source: str = "<config>"


def _line_of(text: str, path) -> int:
    """Best-effort line of the last key in a JSON path."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return 1
    m = None
    for m in re.finditer(r'"%s"\s*:' % re.escape(keys[-1]), text):
        pass
    return text.count("\n", 0, m.start()) + 1 if m else 1


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(source, exc.lineno, exc.msg) from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(map(str, e.absolute_path)) or "<root>"
        raise ConfigError(source, _line_of(text, list(e.absolute_path)), f"{where}: {e.message}")
    protocol = doc["protocol"]
    graphs: list = []
    for gdoc in doc.get("graphs", []):
        if "edge_list" in gdoc:
            p = Path(gdoc["edge_list"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            graphs.append(("edges", p.name, p.read_text()))
            continue
        if "kind" not in gdoc:
            raise ConfigError(source, _line_of(text, ["graphs"]), "graph entry needs 'kind' or 'edge_list'")
        params = dict(gdoc.get("params", {}))
        params.update({k: v for k, v in gdoc.items() if k not in ("kind", "seed", "params")})
        graphs.append(GraphKind(gdoc["kind"], params, int(gdoc.get("seed", 0))))
    if "corpus" in doc:
        c = doc["corpus"]
        specs = corpus_specs(tuple(c.get("sizes", (16, 64, 256, 1024, 4096))), c.get("seed", 0))
        kinds = c.get("kinds")
        graphs += [s for s in specs if kinds is None or s.kind in kinds]
    seeds = doc.get("seeds", [0])
    if isinstance(seeds, dict):
        seeds = list(range(seeds.get("start", 0), seeds.get("start", 0) + seeds["count"]))
    wanted = doc.get("assertions", [])
    if "all" in wanted:
        wanted = [a for a in ASSERTIONS if a in APPLICABLE[protocol]]
    bad = [a for a in wanted if a not in APPLICABLE[protocol]]
    if bad:
        raise ConfigError(source, _line_of(text, ["assertions"]),
                          f"assertion(s) {bad} do not apply to protocol {protocol!r}")
    params = doc.get("params", {})
    unknown = sorted(set(params) - _PARAM_KEYS)
    if unknown:
        raise ConfigError(source, _line_of(text, [unknown[0]]), f"unknown parameter(s) {unknown}")
    unknown = sorted(set(params.get("template", {})) - _TEMPLATE_KEYS)
    if unknown:
        raise ConfigError(source, _line_of(text, [unknown[0]]), f"unknown template parameter(s) {unknown}")
    faults = params.get("faults", {})
    if protocol != "faulty" and faults and "symmetry" in wanted:
        raise ConfigError(source, _line_of(text, ["faults"]), "symmetry cannot be asserted under faults")
    return ExperimentConfig(
        protocol=protocol,
        graphs=graphs,
        policies=list(doc.get("policies", ["min-uid"])),
        seeds=[int(s) for s in seeds],
        params=dict(doc.get("params", {})),
        assertions=list(wanted),
        bounds=dict(doc.get("bounds", {})),
        record_traces=bool(doc.get("record_traces", "traces" in doc.get("output", {}))),
        output=dict(doc.get("output", {})),
        bench_protocols=list(doc.get("bench", {}).get("protocols", [protocol])),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path), base_dir=path.parent)


# ------------------------------------------------------------ one run


@lru_cache(maxsize=8)
def _graph(key) -> Graph:
    if isinstance(key, tuple) and key and key[0] == "edges":
        g = read_edge_list(key[2])
        return Graph(g.indptr, g.indices, g.uids, key[1])
    kind, params, seed = key
    return generate(GraphKind(kind, dict(params), seed))


def _graph_key(spec):
    if isinstance(spec, GraphKind):
        return (spec.kind, tuple(sorted(spec.params.items())), spec.seed)
    return tuple(spec)


def _graph_label(spec) -> str:
    return spec.label() if isinstance(spec, GraphKind) else spec[1]


@dataclass
class RunOutcome:
    row: dict
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    trace_text: str = ""


def _protocol_config(params: dict) -> ProtocolConfig:
    return ProtocolConfig(**{k: params[k] for k in _CONFIG_KEYS if k in params})


def _flood_experiment(g: Graph, params: dict, seed: int, record: str):
    """Random link selection (``links`` per node), then flood ``d`` hops."""
    rng = np.random.default_rng(seed)
    per = int(params.get("links", 2))
    d = int(params.get("d", 2))
    net = Network(g, record=record, protocol="alg1")
    net.trace.meta.update(single_link=False)
    net.begin_iteration(1)
    creators, peers = [], []
    for v in range(g.n):
        nb = g.neighbors(v)
        if len(nb):
            pick = rng.choice(nb, size=min(per, len(nb)), replace=False)
            creators += [v] * len(pick)
            peers += pick.tolist()
    net.add_links(creators, peers)
    delta = int(params.get("delta", max(1, int(net.link_count().max(initial=0)))))
    used = flood(net, d, delta)
    net.finish()
    c = np.asarray(creators, dtype=np.int64)
    p = np.asarray(peers, dtype=np.int64)
    a, b = np.r_[c, p], np.r_[p, c]
    o = np.argsort(a, kind="stable")
    indptr = np.r_[0, np.cumsum(np.bincount(a, minlength=g.n))]
    expect = closure_bits(indptr, b[o], bits.identity(g.n), d, rows=a[o])
    return net, used, d, delta, expect


def run_one(spec, protocol: str, params: dict, policy_name: str, seed: int, assertions,
            bounds: dict, record_trace: bool = False) -> RunOutcome:
    g = _graph(_graph_key(spec))
    t0 = time.perf_counter()
    L = log2ceil(g.n)
    k = int(params.get("k", 1))
    wanted = set(assertions)
    record = "full" if record_trace else "aggregate"
    policy = make_policy(policy_name, seed)
    checks = None
    if wanted & {"symmetry", "witness-trees"} and protocol in ("alg3", "alg4", "klocal", "global", "alg2"):
        checks = BoundaryChecks(g, symmetry="symmetry" in wanted,
                                witness="witness-trees" in wanted and protocol != "alg2", seed=seed)
    failures: list[str] = []
    warnings: list[str] = []
    env = {"L": L, "n": g.n, "k": k}
    measure = None
    oracle_graph, oracle_k = g, 1
    cfg = _protocol_config(params)
    if protocol == "alg2":
        run = randomized_gossip(g, cfg, seed=seed, record=record, observer=checks)
        net, rep = run.net, run.report
    elif protocol == "alg3":
        run = deterministic_gossip(g, policy, cfg, record=record, observer=checks)
        net, rep = run.net, run.report
    elif protocol == "alg4":
        run = tree_gossip(g, policy, record=record, observer=checks, config=cfg)
        net, rep = run.net, run.report
    elif protocol == "klocal":
        run = k_local_broadcast(g, k, policy, params.get("base", "alg4"), cfg, record=record, observer=checks)
        net, rep = run.net, run.report
        oracle_k = k
    elif protocol == "global":
        D = diameter(g)
        k = max(D, 1)
        env.update(k=k, D=D)
        run = k_local_broadcast(g, k, policy, params.get("base", "alg4"), cfg, record=record, observer=checks)
        net, rep = run.net, run.report
        rep.protocol = f"global-{params.get('base', 'alg4')}"
        oracle_k = k
    elif protocol == "flood":
        net, used, d, delta, expect = _flood_experiment(g, params, seed, record)
        run = None
        env.update(d=d, delta=delta)
        from .protocols import _report

        rep = _report(net, "alg1", "random-links", 1, True)
        if "oracle" in wanted and not np.array_equal(net.knowledge(), expect):
            failures.append("oracle: flood result differs from the d-hop link-graph closure")
    elif protocol in ("template", "periodic"):
        tdoc = dict(params.get("template", {}))
        if protocol == "periodic":
            tdoc["propagation"] = "periodic"
        if tdoc.get("lam") in ("inf", None):
            tdoc["lam"] = None
        elif isinstance(tdoc.get("lam"), str):
            tdoc["lam"] = int(eval_bound(tdoc["lam"], env))
        if isinstance(tdoc.get("p"), str):
            tdoc["p"] = float(eval_bound(tdoc["p"], env))
        tcfg = TemplateConfig(link_policy=policy, seed=seed, record_times=protocol == "template", **tdoc)
        run = template_run(g, tcfg, record=record)
        net, rep = run.net, run.report
        env.update(alpha=tcfg.alpha, beta=tcfg.beta, lam=tcfg.lam if tcfg.lam is not None else 10**9)
        if protocol == "periodic":
            measure = rep.extras["steps"]
        else:
            lag = measure_symmetry_lag(run)
            env["T"] = lag.T
            rep.extras.update(t_min=lag.t_min, t_diff=lag.t_diff)
        if not rep.completed:
            warnings.append(f"step cap reached after {rep.extras['steps']} steps")
    elif protocol == "faulty":
        fdoc = params.get("faults", {"gamma": 0.5})
        if "kill" in fdoc:
            rng = np.random.default_rng(seed)
            e = g.edges()
            kill = e[rng.choice(len(e), size=min(int(fdoc["kill"]), len(e)), replace=False)]
            run, oracle_graph = permanent_failure_run(g, kill.tolist(), policy, record=record)
        else:
            run = faulty_flood_run(g, float(fdoc.get("gamma", 0.5)), policy, seed, record=record)
        net, rep = run.net, run.report
        if not rep.completed:
            failures.append(f"oracle: faulty run did not complete within {rep.iterations} iterations")
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    rep.k = max(rep.k, k) if protocol in ("klocal", "global") else rep.k

    limits = dict(DEFAULT_BOUNDS.get(protocol, {}))
    limits.update(bounds)
    if "iteration-bound" in wanted and "iterations" in limits:
        val = measure if measure is not None else rep.iterations
        lim = eval_bound(limits["iterations"], env)
        if val > lim:
            msg = f"iteration-bound: {val} > {limits['iterations']} = {lim:g}"
            (warnings if protocol == "alg2" else failures).append(msg)
    if "round-bound" in wanted and "rounds" in limits:
        lim = eval_bound(limits["rounds"], env)
        if rep.rounds > lim:
            failures.append(f"round-bound: {rep.rounds} > {limits['rounds']} = {lim:g}")
        if protocol == "flood" and rep.rounds != env["d"] * env["delta"]:
            failures.append(f"round-bound: flood used {rep.rounds} rounds, not d*delta")
        if protocol == "alg4":
            want = [4 * i for i in range(1, rep.iterations + 1)]
            if rep.iteration_rounds != want:
                failures.append(f"round-bound: per-iteration rounds {rep.iteration_rounds} != 4i")
    if "oracle" in wanted and protocol != "flood":
        if rep.completed or protocol != "template":
            failures += oracle_failures(oracle_graph, oracle_k, net.knowledge())
    if checks is not None:
        failures += checks.violations
    if "spanner" in wanted and run is not None:
        failures += spanner_failures(run, g)
    net.trace.meta.update(k=oracle_k, completed=rep.completed)
    trace_text = export_jsonl(net.trace, net.g) if record_trace else ""
    row = {
        "graph": _graph_label(spec),
        "n": g.n,
        "m": g.m,
        "protocol": rep.protocol,
        "policy": policy.name if protocol not in ("alg2", "flood") else rep.policy,
        "seed": seed,
        "k": rep.k,
        "iterations": rep.iterations,
        "rounds": rep.rounds,
        "calls": rep.calls_initiated,
        "completed": int(rep.completed),
    }
    tags = {_tag(f) for f in failures}
    for a in ASSERTIONS:
        row[a.replace("-", "_")] = "na" if a not in wanted else ("fail" if a in tags else "pass")
    row["wall_seconds"] = round(time.perf_counter() - t0, 4)
    return RunOutcome(row, failures, warnings, trace_text)


def _tag(message: str) -> str:
    head = re.split(r"[:@]", message, maxsplit=1)[0]
    return "witness-trees" if head == "witness" else head


def _job(args):
    return run_one(*args)


# ------------------------------------------------------------- sweeps


@dataclass
class ExperimentResult:
    rows: list
    failures: list  # (row, messages)
    warnings: list
    exit_code: int
    csv_path: str = ""
    json_path: str = ""


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _rows_csv(rows: list[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _sort_key(row):
    return (row["graph"], row["n"], row["protocol"], row["policy"], row["seed"])


def run_experiment(config: ExperimentConfig, *, workers: int | None = None, out_dir=None,
                   seed_offset: int = 0, strict: bool = False, stream=None) -> ExperimentResult:
    """Run the full cross product and write the CSV/JSON reports."""
    stream = stream if stream is not None else sys.stderr
    workers = workers or default_workers()
    out = Path(out_dir) if out_dir is not None else Path(".")
    seeds = [s + seed_offset for s in config.seeds]
    jobs = []
    for spec in config.graphs:
        for pol in config.policies:
            pseeds = seeds if pol in ("seeded-random", "random", "adversarial") or config.protocol in (
                "alg2", "flood", "faulty", "template") else seeds[:1]
            for s in pseeds:
                jobs.append((spec, config.protocol, config.params, pol, s, config.assertions,
                             config.bounds, config.record_traces))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        outcomes = [_job(j) for j in jobs]
    outcomes.sort(key=lambda o: _sort_key(o.row))
    rows = [o.row for o in outcomes]
    failures, warns = [], []
    for o in outcomes:
        msgs = list(o.failures) + (list(o.warnings) if strict else [])
        if msgs:
            failures.append((o.row, msgs))
        if o.warnings:
            warns.append((o.row, list(o.warnings)))
    for row, msgs in failures:
        print(f"FAIL {row['protocol']} on {row['graph']} policy={row['policy']} "
              f"replay-seed={row['seed']}: {'; '.join(msgs)}", file=stream)
    for row, msgs in warns:
        if not strict:
            print(f"WARN {row['protocol']} on {row['graph']} seed={row['seed']}: {'; '.join(msgs)}",
                  file=stream)
    exit_code = 1 if failures else 0
    result = ExperimentResult(rows, failures, warns, exit_code)
    if config.output.get("csv") or out_dir is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / config.output.get("csv", "runs.csv")
        csv_path.write_text(_rows_csv(rows))
        json_path = out / config.output.get("json", "summary.json")
        summary = {
            "protocol": config.protocol,
            "runs": len(rows),
            "failed_runs": len(failures),
            "warnings": len(warns),
            "assertions": config.assertions,
            "strict": strict,
            "exit_code": exit_code,
            "failures": [{"graph": r["graph"], "policy": r["policy"], "seed": r["seed"], "messages": m}
                         for r, m in failures],
        }
        json_path.write_text(json.dumps(summary, indent=2) + "\n")
        result.csv_path, result.json_path = str(csv_path), str(json_path)
        if config.record_traces:
            tdir = out / config.output.get("traces", "traces")
            tdir.mkdir(parents=True, exist_ok=True)
            for o in outcomes:
                r = o.row
                name = re.sub(r"[^A-Za-z0-9_.=-]+", "_", f"{r['protocol']}-{r['graph']}-{r['policy']}-{r['seed']}")
                (tdir / f"{name}.jsonl").write_text(o.trace_text)
    return result


# --------------------------------------------------------------- replay


@dataclass
class ReplayReport:
    n: int
    rounds: int
    calls: int
    iterations: int
    digest_ok: bool
    violations: list
    oracle_ok: bool | None
    final_states: list

    def ok(self) -> bool:
        return self.digest_ok and not self.violations and self.oracle_ok is not False


def replay_file(text: str, g: Graph | None = None) -> ReplayReport:
    """Replay an exported trace and re-run the validators."""
    trace, embedded = import_jsonl(text, g)
    g = g or embedded
    regs = replay_trace(trace)
    digest_ok = state_digest(regs["R"], trace.n, trace.hops) == trace.digest
    violations = validate_trace(trace, g) if g is not None else []
    know = knowledge_of(regs["R"], trace.n, trace.hops)
    oracle_ok = None
    if g is not None and trace.meta.get("completed", True):
        k = int(trace.meta.get("k", 1))
        oracle_ok = not oracle_failures(g, k, know) if trace.protocol != "alg1" else None
    marks = [it for it, _ in trace.iteration_marks]
    states = [sorted(trace.uids[u] for u in bits.members(know[v], trace.n).tolist()) if trace.uids
              else bits.members(know[v], trace.n).tolist() for v in range(trace.n)]
    return ReplayReport(trace.n, trace.rounds, trace.calls, max(marks, default=0), digest_ok,
                        violations, oracle_ok, states)


# ---------------------------------------------------------------- bench

BENCH_COLUMNS = ["protocol", "graph", "n", "m", "iterations", "rounds", "wall_seconds", "rounds_per_second"]


def bench(config: ExperimentConfig, stream=None) -> list[dict]:
    """Wall clock and rounds per second for each protocol and graph in the config."""
    rows = []
    for spec in config.graphs:
        g = _graph(_graph_key(spec))
        for proto in config.bench_protocols:
            pol = config.policies[0] if config.policies else "min-uid"
            out = run_one(spec, proto, config.params, pol, config.seeds[0] if config.seeds else 0,
                          [], {}, False)
            r = out.row
            wall = r["wall_seconds"]
            rows.append({
                "protocol": r["protocol"], "graph": r["graph"], "n": g.n, "m": g.m,
                "iterations": r["iterations"], "rounds": r["rounds"], "wall_seconds": wall,
                "rounds_per_second": round(r["rounds"] / wall, 1) if wall > 0 else 0.0,
            })
    return rows


def bench_csv(rows: list[dict]) -> str:
    return _rows_csv(rows, BENCH_COLUMNS)
