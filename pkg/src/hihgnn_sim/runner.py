"""Experiment orchestration: config resolution, runs, comparisons, sweeps.

A run is declared by a single JSON config (plus CLI flag overrides): the
graph source (file path or synthetic spec/preset), model kind, seed, lane
count, the fusion/balance/rab flags, the schedule selector (similarity |
random:<seed> | given:<file>), optional hardware overrides, and the output
directory. Every artifact a run writes (metrics.json, metrics.csv,
embeddings.csv, schedule.json) is byte-deterministic given the config; only
the manifest carries a timestamp.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import __version__
from .fusion import run_fused
from .graph import (
    HetGraph, SyntheticSpec, build_metapath_graph, build_relation_graph,
    gen_synthetic, load_hetgraph,
)
from .models import (
    MODEL_KINDS, build_params, model_dispatch, run_oracle,
)
from .perf import HardwareConfig, replay, save_metrics_csv, save_metrics_json
from .presets import synthetic_preset
from .scheduling import (
    ExecutionOrder, balance_workloads, build_hypergraph, load_schedule,
    native_only_plan, random_order, save_schedule, shortest_hamilton_path,
)

ORACLE_TOLERANCE = 1e-9


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str
    seed: int
    dataset: str | None = None
    synthetic: dict | None = None
    num_lanes: int = 4
    fusion: bool = True
    balance: bool = True
    rab: bool = True
    schedule: str = "similarity"
    semantic_graphs: list | None = None
    num_layers: int | None = None
    hidden_dim: int = 64
    params: str = "seeded"
    hardware: dict = field(default_factory=dict)
    output_dir: str = "out"

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("exactly one of dataset/synthetic must be given")
        if self.params not in ("seeded", "identity"):
            raise ConfigError(f"unknown params preset {self.params!r}")
        kind, _, arg = self.schedule.partition(":")
        if kind not in ("similarity", "random", "given"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if kind == "random" and not arg.isdigit():
            raise ConfigError("random schedule needs a seed: random:<seed>")
        if kind == "given" and not os.path.exists(arg):
            raise ConfigError(f"schedule file not found: {arg}")

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as f:
            doc = json.load(f)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def resolved(self) -> dict:
        return asdict(self)


def load_graph(config: ExperimentConfig) -> HetGraph:
    if config.dataset is not None:
        return load_hetgraph(config.dataset)
    spec = dict(config.synthetic)
    preset = spec.pop("preset", None)
    if preset is not None:
        return gen_synthetic(synthetic_preset(preset, seed=spec.get("seed",
                                                                    config.seed)))
    spec.setdefault("seed", config.seed)
    return gen_synthetic(SyntheticSpec.from_dict(spec))


def _projectable(g, behavior, src_type, dst_type):
    needs = {src_type}
    if behavior.na in ("attn", "shgn") or behavior.sf == "rgcn":
        needs.add(dst_type)
    return all(g.vertex_type(t).feature_dim > 0 for t in needs)


def select_semantic_graphs(g: HetGraph, config: ExperimentConfig):
    """Resolve the configured names, or default to the model's natural
    partitioning (declared metapaths for HAN, relations otherwise),
    keeping only graphs whose endpoint types can be projected."""
    behavior = model_dispatch(config.model)
    if config.semantic_graphs:
        names = list(config.semantic_graphs)
        rel_names = {r.name for r in g.relations}
        return [build_relation_graph(g, n) if n in rel_names
                else build_metapath_graph(g, n) for n in names]
    if behavior.sf == "han" and g.metapaths:
        sgs = [build_metapath_graph(g, m.name) for m in g.metapaths]
    else:
        sgs = [build_relation_graph(g, r.name) for r in g.relations]
    sgs = [sg for sg in sgs
           if _projectable(g, behavior, sg.src_type, sg.dst_type)]
    if not sgs:
        raise ConfigError("no projectable semantic graphs for this config")
    return sgs


def schedule_graphs(sgs, config: ExperimentConfig):
    """Order the semantic graphs per the configured schedule."""
    kind, _, arg = config.schedule.partition(":")
    if kind == "similarity":
        order = shortest_hamilton_path(build_hypergraph(sgs))
    elif kind == "random":
        order = random_order([sg.id for sg in sgs], int(arg))
    else:
        order, _ = load_schedule(arg)
        if set(order.ids) != {sg.id for sg in sgs}:
            raise ConfigError("given schedule does not cover the semantic graphs")
    by_id = {sg.id: sg for sg in sgs}
    return [by_id[i] for i in order.ids], order


@dataclass
class RunArtifacts:
    config: ExperimentConfig
    order: ExecutionOrder
    plan: object
    result: object
    trace: object
    report: object


def run_experiment(config: ExperimentConfig) -> RunArtifacts:
    g = load_graph(config)
    sgs = select_semantic_graphs(g, config)
    ordered, order = schedule_graphs(sgs, config)
    params = build_params(g, ordered, config.model, seed=config.seed,
                          hidden_dim=config.hidden_dim,
                          num_layers=config.num_layers, preset=config.params)
    hw = dict(config.hardware)
    hw["num_lanes"] = config.num_lanes
    cfg = HardwareConfig.from_overrides(hw)
    counts = [(sg.id, sg.num_edges) for sg in ordered]
    if config.balance and config.num_lanes > 1:
        plan = balance_workloads(counts, config.num_lanes, cfg.na_queue_capacity)
    else:
        plan = native_only_plan(counts, config.num_lanes)
    result, trace = run_fused(g, ordered, params, plan=plan,
                              rab_enabled=config.rab)
    mode = "fused" if config.fusion else "staged"
    report = replay(trace, order, plan, cfg, mode=mode)
    return RunArtifacts(config=config, order=order, plan=plan, result=result,
                        trace=trace, report=report)


def compare_oracle(config: ExperimentConfig) -> float:
    """Max relative elementwise error between the fused engine and the
    sequential oracle (relative to the oracle matrix's max magnitude).

    The fusion-free model kind compares per-graph aggregates only (it has no
    semantic fusion stage); the rest compare both those and the fused
    embeddings.
    """
    g = load_graph(config)
    sgs = select_semantic_graphs(g, config)
    ordered, _ = schedule_graphs(sgs, config)
    params = build_params(g, ordered, config.model, seed=config.seed,
                          hidden_dim=config.hidden_dim,
                          num_layers=config.num_layers, preset=config.params)
    oracle = run_oracle(g, ordered, params)
    fused, _ = run_fused(g, ordered, params)
    errs = [0.0]
    for sid, z in oracle.z.items():
        errs.append(matrix_rel_error(fused.z[sid], z))
    if model_dispatch(config.model).sf != "none":
        for vtype, h in oracle.h.items():
            errs.append(matrix_rel_error(fused.h[vtype], h))
    return max(errs)


def matrix_rel_error(got, expected) -> float:
    scale = max(float(np.max(np.abs(expected))), 1e-12)
    return float(np.max(np.abs(got - expected))) / scale


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def write_outputs(arts: RunArtifacts, outdir) -> dict:
    os.makedirs(outdir, exist_ok=True)
    paths = {name: os.path.join(outdir, name) for name in
             ("metrics.json", "metrics.csv", "embeddings.csv",
              "schedule.json", "manifest.json")}
    save_metrics_json(arts.report, paths["metrics.json"])
    save_metrics_csv(arts.report, paths["metrics.csv"])
    write_embeddings_csv(arts.result, paths["embeddings.csv"])
    save_schedule(paths["schedule.json"], arts.order, arts.plan)
    manifest = {
        "version": __version__,
        "config": arts.config.resolved(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    with open(paths["manifest.json"], "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return paths


def write_embeddings_csv(result, path):
    """One row per output vertex: type, index, then the embedding values."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        types = sorted(result.h)
        width = result.h[types[0]].shape[1] if types else 0
        writer.writerow(["vertex_type", "index"] + [f"h{i}" for i in range(width)])
        for vtype in types:
            mat = result.h[vtype]
            for idx in range(mat.shape[0]):
                writer.writerow([vtype, idx] + [repr(float(x)) for x in mat[idx]])


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = ("lanes", "schedules", "graph-count")


def _sweep_jobs(config: ExperimentConfig, axis: str, points):
    if axis == "lanes":
        points = points or [1, 2, 4, 8]
        for lanes in points:
            yield {"point": str(lanes), "config": _with(config, num_lanes=int(lanes))}
    elif axis == "schedules":
        points = points or ["similarity"] + [f"random:{s}" for s in range(10)]
        for sched in points:
            yield {"point": sched, "config": _with(config, schedule=sched)}
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")


def _with(config: ExperimentConfig, **kw) -> ExperimentConfig:
    doc = config.resolved()
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


def _max_jobs(requested: int | None) -> int:
    cap = os.environ.get("HIHGNN_SIM_THREADS")
    n = requested or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_sweep(config: ExperimentConfig, axis: str, points=None, jobs=None):
    """One CSV row per sweep point, in point order.

    lanes axis reports speedup vs the first point; schedules axis reports
    DRAM bytes normalized to the first (similarity) row; graph-count axis
    runs similarity against the mean of ten seeded random orders per count.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
    if axis == "graph-count":
        return _run_graph_count_sweep(config, points)
    jobs_list = list(_sweep_jobs(config, axis, points))
    workers = _max_jobs(jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        arts = list(pool.map(lambda j: run_experiment(j["config"]), jobs_list))
    rows = []
    base_cycles = arts[0].report.total_cycles
    base_dram = arts[0].report.dram_read_bytes + arts[0].report.dram_write_bytes
    for job, art in zip(jobs_list, arts):
        row = {"axis": axis, "point": job["point"], "model": config.model}
        row.update(art.report.to_csv_row())
        dram = art.report.dram_read_bytes + art.report.dram_write_bytes
        row["speedup_vs_first"] = repr(base_cycles / art.report.total_cycles
                                       if art.report.total_cycles else 1.0)
        row["dram_normalized"] = repr(dram / base_dram if base_dram else 1.0)
        rows.append(row)
    return rows


def _run_graph_count_sweep(config: ExperimentConfig, points):
    counts = [int(p) for p in (points or (4, 8, 12))]
    g = load_graph(config)
    all_sgs = select_semantic_graphs(g, config)
    rows = []
    for count in counts:
        if count > len(all_sgs):
            raise ConfigError(
                f"graph-count {count} exceeds available semantic graphs "
                f"({len(all_sgs)})")
        names = [sg.id for sg in all_sgs[:count]]
        sub = _with(config, semantic_graphs=names, schedule="similarity")
        sim = run_experiment(sub)
        sim_dram = sim.report.dram_read_bytes + sim.report.dram_write_bytes
        rand_drams = []
        for s in range(10):
            r = run_experiment(_with(sub, schedule=f"random:{s}"))
            rand_drams.append(r.report.dram_read_bytes
                              + r.report.dram_write_bytes)
        mean_rand = sum(rand_drams) / len(rand_drams)
        rows.append({
            "axis": "graph-count", "point": str(count), "model": config.model,
            "num_graphs": count,
            "dram_similarity_bytes": sim_dram,
            "dram_random_mean_bytes": repr(mean_rand),
            "dram_advantage_bytes": repr(mean_rand - sim_dram),
            "dram_normalized": repr(sim_dram / mean_rand if mean_rand else 1.0),
            "total_cycles_similarity": sim.report.total_cycles,
        })
    return rows


def write_sweep_csv(rows, path):
    keys = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys, restval="")
        writer.writeheader()
        writer.writerows(rows)
