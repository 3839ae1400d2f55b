"""Bound-aware stage-fused execution engine.

Edge-driven state machine: every semantic-graph edge starts in the NA task
list; an edge whose endpoints are not ready (per the redundancy-aware bitmap)
queues projection/coefficient tasks and re-enters at the queue tail. The
per-target softmax is decomposed into a running numerator (sum exp(theta) h')
and denominator (sum exp(theta)), divided when the target's last neighbor
lands (LSF); per-graph importances aggregate the same way through GSF and a
final elementwise division. Numeric results must match the sequential oracle
to 1e-9 relative; every step also emits a replayable event record.

The bitmap holds three bits per (type, vertex): projected, source-coefficient
computed, target-coefficient computed. Coefficient bits clear at semantic
graph boundaries; the projected bit clears there only under per-graph scope
(relation-keyed models). Legal codes: 000, 100, 110, 101, 111.
"""

from __future__ import annotations

import math
from array import array
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graph import HetGraph
from .models import (
    EmbeddingResult,
    ModelParams,
    THETA_CLAMP,
    apply_activation,
    fp_weight_key,
    model_dispatch,
)
from .scheduling import LanePlan, single_lane_plan

# stage codes (event records)
FP, THETA, NA, NA_DEFER, LSF, GSF, FINAL, SYNC = range(8)
STAGE_NAMES = ("FP", "THETA", "NA", "NA_DEFER", "LSF", "GSF", "FINAL", "SYNC")
# reuse outcomes
MISS, FP_HIT, FULL_HIT = 0, 1, 2
REUSE_NAMES = ("miss", "fp-hit", "full-hit")


class EventTrace:
    """Columnar event log (int32 columns, interned id tables).

    Columns: stage, layer, sg, lane, vt, u, v, pos, rows, cols, reuse, bytes.
    Meaning varies per stage; -1 marks not-applicable. THETA uses v as the
    half marker (0 = source coefficient, 1 = target coefficient).
    """

    COLUMNS = ("stage", "layer", "sg", "lane", "vt", "u", "v", "pos",
               "rows", "cols", "reuse", "bytes")

    def __init__(self, sg_ids, vtype_names, model_kind, hidden_dim):
        self.sg_ids = list(sg_ids)
        self.vtype_names = list(vtype_names)
        self.model_kind = model_kind
        self.hidden_dim = hidden_dim
        self._cols = {name: array("i") for name in self.COLUMNS}

    def add(self, stage, layer, sg, lane, vt, u, v, pos, rows, cols, reuse, nbytes):
        c = self._cols
        c["stage"].append(stage)
        c["layer"].append(layer)
        c["sg"].append(sg)
        c["lane"].append(lane)
        c["vt"].append(vt)
        c["u"].append(u)
        c["v"].append(v)
        c["pos"].append(pos)
        c["rows"].append(rows)
        c["cols"].append(cols)
        c["reuse"].append(reuse)
        c["bytes"].append(nbytes)

    def __len__(self):
        return len(self._cols["stage"])

    def column(self, name) -> np.ndarray:
        return np.frombuffer(self._cols[name], dtype=np.int32)

    def count(self, stage) -> int:
        return int(np.count_nonzero(self.column("stage") == stage))

    def serialize(self, path):
        """Newline-delimited records: stage sg-id layer lane vt u v pos rows cols reuse bytes."""
        cols = {n: self.column(n) for n in self.COLUMNS}
        with open(path, "w") as f:
            f.write("# " + " ".join(self.COLUMNS) + "\n")
            for i in range(len(self)):
                sg = cols["sg"][i]
                vt = cols["vt"][i]
                f.write(" ".join([
                    STAGE_NAMES[cols["stage"][i]],
                    self.sg_ids[sg] if sg >= 0 else "-",
                    str(cols["layer"][i]), str(cols["lane"][i]),
                    self.vtype_names[vt] if vt >= 0 else "-",
                    str(cols["u"][i]), str(cols["v"][i]), str(cols["pos"][i]),
                    str(cols["rows"][i]), str(cols["cols"][i]),
                    REUSE_NAMES[cols["reuse"][i]] if cols["reuse"][i] >= 0 else "-",
                    str(cols["bytes"][i]),
                ]) + "\n")


class RAB:
    """Three status bits per (vertex type, vertex index).

    scope "type": the projected bit survives semantic graph boundaries;
    scope "graph": it clears there (relation-keyed projection). Coefficient
    bits always clear at boundaries. Setting a coefficient bit on an
    unprojected vertex is illegal.
    """

    def __init__(self, g: HetGraph, scope: str):
        assert scope in ("type", "graph")
        self.scope = scope
        self.projected = {t.name: np.zeros(t.count, dtype=bool)
                          for t in g.vertex_types}
        self.theta_src = {t.name: np.zeros(t.count, dtype=bool)
                          for t in g.vertex_types}
        self.theta_dst = {t.name: np.zeros(t.count, dtype=bool)
                          for t in g.vertex_types}

    def graph_boundary(self):
        for arr in self.theta_src.values():
            arr[:] = False
        for arr in self.theta_dst.values():
            arr[:] = False
        if self.scope == "graph":
            for arr in self.projected.values():
                arr[:] = False

    def set_projected(self, vtype, idx):
        self.projected[vtype][idx] = True

    def set_theta(self, vtype, idx, half):
        if not self.projected[vtype][idx]:
            raise AssertionError(
                f"coefficient bit for unprojected vertex ({vtype}, {idx})")
        (self.theta_src if half == 0 else self.theta_dst)[vtype][idx] = True

    def code(self, vtype, idx):
        return (int(self.projected[vtype][idx]),
                int(self.theta_src[vtype][idx]),
                int(self.theta_dst[vtype][idx]))


@dataclass
class TaskState:
    """Queues and partial aggregates for one semantic graph run."""

    na_task_list: deque
    fp_task_list: deque = field(default_factory=deque)
    lsf_task_list: list = field(default_factory=list)
    gsf_task_list: list = field(default_factory=list)
    num: np.ndarray = None          # (lanes, n_dst, hidden) numerators
    den: np.ndarray = None          # (lanes, n_dst) denominators
    remaining_neighbors: np.ndarray = None
    w_partial: float = 0.0


def _leaky(x, slope):
    return x if x >= 0.0 else slope * x


def run_fused(g: HetGraph, sgs, params: ModelParams, *, plan: LanePlan | None = None,
              rab_enabled: bool = True, edge_order: dict | None = None):
    """Execute the stage-fused pipeline over semantic graphs in order.

    Returns (EmbeddingResult, EventTrace). `plan` assigns edge tasks to
    lanes (default: one lane); `edge_order` optionally permutes each graph's
    NA task list; `rab_enabled=False` recomputes projections and coefficients
    per edge (reuse ablation).
    """
    behavior = params.behavior
    if plan is None:
        plan = single_lane_plan([(sg.id, sg.num_edges) for sg in sgs])
    sg_index = {sg.id: i for i, sg in enumerate(sgs)}
    trace = EventTrace([sg.id for sg in sgs], [t.name for t in g.vertex_types],
                       params.model_kind, params.hidden_dim)
    vt_index = {t.name: i for i, t in enumerate(g.vertex_types)}
    hidden = params.hidden_dim

    inputs = {t.name: g.raw_features[t.name] for t in g.vertex_types
              if t.feature_dim > 0}
    z_by_sg, w_by_sg, beta_by_sg = {}, {}, {}

    for layer in range(params.num_layers):
        rab = RAB(g, behavior.fp_scope)
        hp_store: dict = {}   # scope key -> (count, hidden), lazily filled rows
        z_by_sg, w_by_sg = {}, {}
        z_global: dict = {}   # dst type -> (count, hidden)
        beta_g: dict = {}     # dst type -> accumulated fusion denominator
        touched: dict = {}    # dst type -> bool mask of targets seen
        group_kind: dict = {}

        fp_rr = iter(range(10 ** 12))  # global round-robin projection dispatch
        for sgi, sg in enumerate(sgs):
            rab.graph_boundary()
            state = _run_semantic_graph(
                g, sg, sgi, params, layer, inputs, hp_store, rab, plan,
                trace, sg_index, vt_index, edge_order, rab_enabled, fp_rr)
            z_sg = state["z"]
            z_by_sg[sg.id] = z_sg
            dst = sg.dst_type
            if dst not in z_global:
                n_dst = g.vertex_type(dst).count
                z_global[dst] = np.zeros((n_dst, hidden))
                beta_g[dst] = 0.0
                touched[dst] = np.zeros(n_dst, dtype=bool)
            # GSF: fold this graph's aggregate into the global accumulator
            targets = sg.target_vertices
            if behavior.sf == "han":
                w_p = state["w_partial"] / max(1, len(targets))
                w_by_sg[sg.id] = w_p
                weight = math.exp(min(max(w_p, -THETA_CLAMP), THETA_CLAMP))
            else:
                weight = 1.0
            beta_g[dst] += weight
            group_kind[dst] = behavior.sf
            if len(targets):
                z_global[dst][targets] += weight * z_sg[targets]
                touched[dst][targets] = True
            sgc = sg_index[sg.id]
            for v in targets.tolist():
                trace.add(GSF, layer, sgc, -1, vt_index[dst], -1, v, -1,
                          1, hidden, -1, 0)

        # FINAL: elementwise division by the accumulated fusion denominator
        h_out = {}
        for dst, z_acc in z_global.items():
            sf = group_kind[dst]
            vt = vt_index[dst]
            if sf in ("han", "mean"):
                rows = np.flatnonzero(touched[dst])
                h = np.zeros_like(z_acc)
                h[rows] = z_acc[rows] / beta_g[dst]
            elif sf == "rgcn":
                W_self = params.get(f"W/{layer}/self/{dst}")
                h = inputs[dst] @ W_self.T + z_acc
                in_dim = W_self.shape[1]
                for idx in range(h.shape[0]):
                    trace.add(FP, layer, -1, -1, vt, idx, -1, -1,
                              hidden, in_dim, MISS, 0)
                rows = np.arange(h.shape[0])
            else:  # S-HGN: plain sum of the per-graph aggregates
                h = z_acc
                rows = np.flatnonzero(touched[dst])
            for idx in rows.tolist():
                trace.add(FINAL, layer, -1, -1, vt, idx, -1, -1, 1, hidden, -1, 0)
            h_out[dst] = h
        if behavior.sf == "han":
            groups: dict = {}
            for sg in sgs:
                groups.setdefault(sg.dst_type, []).append(sg.id)
            beta_by_sg = {sid: math.exp(min(max(w_by_sg[sid], -THETA_CLAMP),
                                            THETA_CLAMP)) / beta_g[dst_type]
                          for dst_type, members in groups.items()
                          for sid in members}
        inputs = h_out

    result = EmbeddingResult(h=inputs, z=z_by_sg, w=w_by_sg, beta=beta_by_sg)
    return result, trace


def _run_semantic_graph(g, sg, sgi, params, layer, inputs, hp_store, rab, plan,
                        trace, sg_index, vt_index, edge_order, rab_enabled,
                        fp_rr):
    behavior = params.behavior
    hidden = params.hidden_dim
    slope = params.leaky_slope
    attention = behavior.na in ("attn", "shgn")
    sgc = sg_index[sg.id]
    src_t, dst_t = sg.src_type, sg.dst_type
    src_vt, dst_vt = vt_index[src_t], vt_index[dst_t]
    n_src = g.vertex_type(src_t).count
    n_dst = g.vertex_type(dst_t).count

    def scope_key(vtype):
        return vtype if behavior.fp_scope == "type" else (sg.id, vtype)

    def hp_array(vtype, count):
        # graph-scope keys embed the sg id, so those arrays start cold anyway
        key = scope_key(vtype)
        if key not in hp_store:
            hp_store[key] = np.empty((count, hidden))
        return hp_store[key]

    hp_src = hp_array(src_t, n_src)
    hp_dst = hp_array(dst_t, n_dst) if (attention and dst_t != src_t) else hp_src
    W_src = params.get(fp_weight_key(behavior, layer, sg.id, src_t))
    W_dst = params.get(fp_weight_key(behavior, layer, sg.id, dst_t)) \
        if attention else None
    x_src = inputs.get(src_t)
    x_dst = inputs.get(dst_t) if attention else None
    if x_src is None or (attention and x_dst is None):
        missing = src_t if x_src is None else dst_t
        raise KeyError(f"no layer-{layer} input features for type {missing!r}")

    if attention:
        a_src = params.get(f"a_src/{layer}/{sg.id}")
        a_dst = params.get(f"a_dst/{layer}/{sg.id}")
        theta_src = np.empty(n_src)
        theta_dst = np.empty(n_dst)
    rel_term = 0.0
    if behavior.na == "shgn":
        rel_term = float(params.get(f"a_rel/{layer}/{sg.id}") @ (
            params.get(f"W_rel/{layer}/{sg.id}") @ params.get(f"h_rel/{layer}/{sg.id}")))

    indptr, indices = sg.edges.indptr, sg.edges.indices
    src_of = indices
    dst_of = np.repeat(np.arange(n_dst, dtype=np.int64), np.diff(indptr))
    nnz = sg.num_edges
    seq = np.arange(nnz, dtype=np.int64)
    if edge_order and sg.id in edge_order:
        seq = np.asarray(edge_order[sg.id], dtype=np.int64)
        assert len(seq) == nnz
    lane_of = plan.lane_of_positions(sg.id, nnz)
    num_lanes = plan.num_lanes

    state = TaskState(na_task_list=deque(range(nnz)))
    state.num = np.zeros((num_lanes, n_dst, hidden))
    state.den = np.zeros((num_lanes, n_dst))
    state.remaining_neighbors = np.asarray(np.diff(indptr), dtype=np.int64).copy()
    z_sg = np.zeros((n_dst, hidden))
    done = np.zeros(n_dst, dtype=bool)

    proj_src = rab.projected[src_t]
    proj_dst = rab.projected[dst_t]
    tsrc_bits = rab.theta_src[src_t]
    tdst_bits = rab.theta_dst[dst_t]

    # HAN local-fusion parameters
    if behavior.sf == "han":
        q = params.get(f"q/{layer}")
        b = params.get(f"b/{layer}")
        W_sem = params.get(f"W_sem/{layer}/{sg.id}")

    first_outcome = np.full(nnz, -1, dtype=np.int8)
    add_event = trace.add
    rem = state.remaining_neighbors
    num, den = state.num, state.den

    def fp_lane():
        # projection/coefficient dispatches spread round-robin over lanes
        # (global scheduler), independent of the triggering edge's lane
        return next(fp_rr) % num_lanes

    def project(vtype_i, hp, x, W, idx, pos):
        hp[idx] = x[idx] @ W.T
        rab.set_projected(src_t if vtype_i == src_vt else dst_t, idx)
        add_event(FP, layer, sgc, fp_lane(), vtype_i, idx, -1, pos,
                  hidden, W.shape[1], MISS, 0)

    def compute_theta(vtype_i, hp, theta_arr, a_vec, idx, half, pos, reuse):
        theta_arr[idx] = hp[idx] @ a_vec
        rab.set_theta(src_t if vtype_i == src_vt else dst_t, idx, half)
        add_event(THETA, layer, sgc, fp_lane(), vtype_i, idx, half, pos,
                  1, hidden, reuse, 0)

    def process_fp_task(task):
        vtype_i, idx, pos = task
        if vtype_i == src_vt:
            if not proj_src[idx]:
                project(src_vt, hp_src, x_src, W_src, idx, pos)
                if attention and not tsrc_bits[idx]:
                    compute_theta(src_vt, hp_src, theta_src, a_src, idx, 0,
                                  pos, MISS)
            elif attention and not tsrc_bits[idx]:
                compute_theta(src_vt, hp_src, theta_src, a_src, idx, 0,
                              pos, FP_HIT)
        if vtype_i == dst_vt and attention:
            if not proj_dst[idx]:
                project(dst_vt, hp_dst, x_dst, W_dst, idx, pos)
                if not tdst_bits[idx]:
                    compute_theta(dst_vt, hp_dst, theta_dst, a_dst, idx, 1,
                                  pos, MISS)
            elif not tdst_bits[idx]:
                compute_theta(dst_vt, hp_dst, theta_dst, a_dst, idx, 1,
                              pos, FP_HIT)

    def finalize_target(v, lane):
        assert not done[v], "target finalized twice"
        done[v] = True
        if num_lanes > 1:
            contrib = den[:, v] != 0.0
            foreign = int(np.count_nonzero(contrib)) - int(contrib[lane])
            if foreign > 0:
                nbytes = foreign * (hidden + 1) * 4
                add_event(SYNC, layer, sgc, lane, dst_vt, -1, v, -1,
                          0, 0, -1, nbytes)
            num_v = num[:, v, :].sum(axis=0)
            den_v = den[:, v].sum()
        else:
            num_v = num[0, v]
            den_v = den[0, v]
        assert den_v != 0.0, "finalizing a target with zero denominator"
        z_v = apply_activation(num_v / den_v, behavior.agg_activation, params)
        z_sg[v] = z_v
        state.lsf_task_list.append(v)
        if behavior.sf == "han":
            state.w_partial += float(q @ np.tanh(W_sem @ z_v + b))
        # finalization runs on the lane that completed the last neighbor;
        # foreign partials were just pulled to it over the crossbar
        add_event(LSF, layer, sgc, lane, dst_vt, -1, v, -1, 1, hidden, -1, 0)

    exp = math.exp
    clamp_lo, clamp_hi = -THETA_CLAMP, THETA_CLAMP
    queue = state.na_task_list
    queue.clear()
    queue.extend(seq.tolist())
    fp_queue = state.fp_task_list

    while queue:
        while fp_queue:
            process_fp_task(fp_queue.popleft())
        p = queue.popleft()
        u = src_of[p]
        v = dst_of[p]
        lane = lane_of[p]
        if rab_enabled:
            need_u = (not proj_src[u]) or (attention and not tsrc_bits[u])
            need_v = attention and ((not proj_dst[v]) or (not tdst_bits[v]))
            if need_u or need_v:
                if first_outcome[p] < 0:
                    if (not proj_src[u]) or (attention and not proj_dst[v]):
                        first_outcome[p] = MISS
                    else:
                        first_outcome[p] = FP_HIT
                if need_u:
                    fp_queue.append((src_vt, u, p))
                if need_v:
                    fp_queue.append((dst_vt, v, p))
                add_event(NA_DEFER, layer, sgc, lane, -1, u, v, p, 0, hidden, -1, 0)
                queue.append(p)
                continue
        else:
            # reuse disabled: recompute both endpoints for every edge
            project(src_vt, hp_src, x_src, W_src, u, p)
            if attention:
                compute_theta(src_vt, hp_src, theta_src, a_src, u, 0, p, MISS)
                project(dst_vt, hp_dst, x_dst, W_dst, v, p)
                compute_theta(dst_vt, hp_dst, theta_dst, a_dst, v, 1, p, MISS)
            first_outcome[p] = MISS
        if first_outcome[p] < 0:
            first_outcome[p] = FULL_HIT
        if attention:
            logit = _leaky(theta_src[u] + theta_dst[v] + rel_term, slope)
            if logit < clamp_lo:
                logit = clamp_lo
            elif logit > clamp_hi:
                logit = clamp_hi
            w = exp(logit)
        else:
            w = 1.0
        num[lane, v] += w * hp_src[u]
        den[lane, v] += w
        add_event(NA, layer, sgc, lane, src_vt, u, v, p, 1, hidden,
                  int(first_outcome[p]), 0)
        r = rem[v] - 1
        rem[v] = r
        if r == 0:
            finalize_target(v, lane)

    assert not np.any(rem), "NA queue drained with unfinished targets"
    state.gsf_task_list.append((sg.id, state.w_partial))
    return {"z": z_sg, "w_partial": state.w_partial}
