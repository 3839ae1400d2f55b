#!/usr/bin/env python3
"""Scratch probe for the trend experiments (not part of the test suite)."""

import time

import numpy as np

from hihgnn_sim.fusion import run_fused
from hihgnn_sim.graph import build_semantic_graphs, gen_synthetic
from hihgnn_sim.models import build_params
from hihgnn_sim.perf import HardwareConfig, replay
from hihgnn_sim.presets import synthetic_preset
from hihgnn_sim.runner import ExperimentConfig, run_experiment, _run_graph_count_sweep
from hihgnn_sim.scheduling import balance_workloads

TREND_SGS = ["APA", "APAPA", "PAP"]


def main():
    t0 = time.time()
    g = gen_synthetic(synthetic_preset("dblp-desk", seed=11))
    sgs = build_semantic_graphs(g, TREND_SGS)
    print(f"[{time.time()-t0:.1f}s] graph built; sg sizes:",
          {sg.id: sg.num_edges for sg in sgs})

    reductions = []
    for kind in ("HAN", "R-GAT", "R-GCN", "S-HGN"):
        params = build_params(g, sgs, kind, seed=1)
        t1 = time.time()
        plan = balance_workloads([(sg.id, sg.num_edges) for sg in sgs], 4, 4096)
        _, trace = run_fused(g, sgs, params, plan=plan)
        t2 = time.time()
        cfg = HardwareConfig(num_lanes=4)
        fused = replay(trace, None, plan, cfg, mode="fused")
        staged = replay(trace, None, plan, cfg, mode="staged")
        t3 = time.time()
        red = 1 - fused.total_cycles / staged.total_cycles
        reductions.append(red)
        print(f"{kind:6s} events={len(trace):9d} engine={t2-t1:6.1f}s "
              f"replay={t3-t2:6.1f}s fused={fused.total_cycles:10d} "
              f"staged={staged.total_cycles:10d} reduction={red:6.1%} "
              f"stage_cycles={fused.stage_cycles}")
    gm = float(np.exp(np.mean(np.log(reductions))))
    print(f"geomean reduction: {gm:.1%}")

    # lanes scaling on HAN
    params = build_params(g, sgs, "HAN", seed=1)
    cycles = {}
    for lanes in (1, 2, 4, 8):
        plan = balance_workloads([(sg.id, sg.num_edges) for sg in sgs],
                                 lanes, 4096)
        _, trace = run_fused(g, sgs, params, plan=plan)
        rep = replay(trace, None, plan, HardwareConfig(num_lanes=lanes))
        cycles[lanes] = rep.total_cycles
    eff4 = cycles[1] / (4 * cycles[4])
    print("lanes:", cycles, f"efficiency@4={eff4:.2f}")

    # similarity sweep
    cfg = ExperimentConfig(
        model="S-HGN", seed=0, synthetic={"preset": "similarity", "seed": 0},
        num_lanes=4, num_layers=1, hidden_dim=64)
    rows = _run_graph_count_sweep(cfg, (4, 8, 12))
    for r in rows:
        print(r)
    print(f"total probe time {time.time()-t0:.1f}s")


if __name__ == "__main__":
    main()
