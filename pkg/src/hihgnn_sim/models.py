"""Exact functional HGNN models and the sequential golden oracle.

Implements the four model families (HAN, R-GAT, R-GCN, S-HGN) as pure
float64 functions over semantic graphs: per-stage operations (feature
projection, attention coefficients, neighbor aggregation, semantic fusion)
plus `run_oracle`, the three-loop sequential reference the fused engine is
validated against.

Conventions: row-vector features, h' = x @ W.T; attention logits are split
into per-vertex source/target halves (theta_src[u] + theta_dst[v] equals the
concatenated dot product a.T [h'_u || h'_v] exactly); logits are clamped to
[-60, 60] before exp; the softmax is computed explicitly here (weights alpha,
then weighted sum) while the fused engine accumulates numerator/denominator,
so the two routes stay arithmetically independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import HetGraph, SemanticGraph, _stable_key

MODEL_KINDS = ("HAN", "R-GAT", "R-GCN", "S-HGN")
DEFAULT_LAYERS = {"HAN": 1, "R-GAT": 3, "R-GCN": 3, "S-HGN": 2}
THETA_CLAMP = 60.0


class ParamError(KeyError):
    pass


@dataclass(frozen=True)
class ModelBehavior:
    """Stage behavior selected by model kind.

    fp_scope: projection reuse scope, "type" (once per vertex type) or
    "graph" (once per semantic graph).
    na: "attn" | "mean" | "shgn". sf: "han" | "mean" | "rgcn" | "none".
    """

    kind: str
    fp_scope: str
    na: str
    sf: str
    agg_activation: str


_BEHAVIOR = {
    "HAN": ModelBehavior("HAN", "type", "attn", "han", "elu"),
    "R-GAT": ModelBehavior("R-GAT", "graph", "attn", "mean", "elu"),
    "R-GCN": ModelBehavior("R-GCN", "graph", "mean", "rgcn", "none"),
    "S-HGN": ModelBehavior("S-HGN", "type", "shgn", "none", "none"),
}


def model_dispatch(model_kind: str) -> ModelBehavior:
    if model_kind not in _BEHAVIOR:
        raise ValueError(f"unsupported model kind {model_kind!r}; "
                         f"expected one of {MODEL_KINDS}")
    return _BEHAVIOR[model_kind]


def leaky_relu(x, slope=0.01):
    return np.where(x >= 0, x, slope * x)


def elu(x, alpha=1.0):
    return np.where(x >= 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def apply_activation(x, kind, params):
    if kind == "elu":
        return elu(x, params.elu_alpha)
    if kind == "leaky_relu":
        return leaky_relu(x, params.leaky_slope)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def fp_weight_key(behavior, layer, sg_id, vtype):
    if behavior.fp_scope == "type":
        return f"W/{layer}/type/{vtype}"
    return f"W/{layer}/sg/{sg_id}/{vtype}"


@dataclass
class ModelParams:
    """All learned tensors of one model, keyed by canonical string names.

    Tensors are generated deterministically from (seed, name): each entry is
    drawn uniform in [-0.1, 0.1] from a PRNG seeded by the seed and a stable
    hash of the name, so generation order never matters. The `identity`
    preset zeroes every attention vector and uses rectangular identity
    projection matrices (exact-arithmetic comparisons).
    """

    model_kind: str
    hidden_dim: int
    num_layers: int
    seed: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    leaky_slope: float = 0.01
    elu_alpha: float = 1.0
    preset: str = "seeded"

    @property
    def behavior(self) -> ModelBehavior:
        return model_dispatch(self.model_kind)

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ParamError(f"missing parameter {name!r} for model "
                             f"{self.model_kind}") from None


def _draw(seed, name, shape, preset):
    if preset == "identity":
        if len(shape) == 1:
            return np.zeros(shape)
        return np.eye(*shape)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_key(name)]))
    return rng.uniform(-0.1, 0.1, size=shape)


def build_params(g: HetGraph, sgs, model_kind: str, seed: int,
                 hidden_dim: int = 64, num_layers: int | None = None,
                 preset: str = "seeded") -> ModelParams:
    """Generate every tensor the model needs on the given semantic graphs."""
    behavior = model_dispatch(model_kind)
    layers = DEFAULT_LAYERS[model_kind] if num_layers is None else int(num_layers)
    params = ModelParams(model_kind, hidden_dim, layers, seed, preset=preset)

    def add(name, shape):
        params.tensors[name] = _draw(seed, name, shape, preset)

    def in_dim(layer, vtype):
        if layer > 0:
            return hidden_dim
        dim = g.vertex_type(vtype).feature_dim
        if dim == 0:
            raise ParamError(
                f"vertex type {vtype!r} has no raw features and cannot be "
                "projected at layer 0")
        return dim

    needs_dst_proj = behavior.na in ("attn", "shgn")
    for layer in range(layers):
        for sg in sgs:
            proj_types = {sg.src_type}
            if needs_dst_proj:
                proj_types.add(sg.dst_type)
            for vtype in proj_types:
                key = fp_weight_key(behavior, layer, sg.id, vtype)
                if key not in params.tensors:
                    add(key, (hidden_dim, in_dim(layer, vtype)))
            if behavior.na in ("attn", "shgn"):
                add(f"a_src/{layer}/{sg.id}", (hidden_dim,))
                add(f"a_dst/{layer}/{sg.id}", (hidden_dim,))
            if behavior.na == "shgn":
                add(f"a_rel/{layer}/{sg.id}", (hidden_dim,))
                add(f"h_rel/{layer}/{sg.id}", (hidden_dim,))
                add(f"W_rel/{layer}/{sg.id}", (hidden_dim, hidden_dim))
            if behavior.sf == "han":
                add(f"W_sem/{layer}/{sg.id}", (hidden_dim, hidden_dim))
            if behavior.sf == "rgcn":
                key = f"W/{layer}/self/{sg.dst_type}"
                if key not in params.tensors:
                    add(key, (hidden_dim, in_dim(layer, sg.dst_type)))
        if behavior.sf == "han":
            add(f"q/{layer}", (hidden_dim,))
            add(f"b/{layer}", (hidden_dim,))
    return params


def save_params(params: ModelParams, path):
    """Canonical text dump, one `param <name> <rows> <cols>` block per tensor."""
    with open(path, "w") as f:
        f.write(f"model {params.model_kind} {params.hidden_dim} "
                f"{params.num_layers} {params.seed}\n")
        for name in sorted(params.tensors):
            t = np.atleast_2d(params.tensors[name])
            f.write(f"param {name} {t.shape[0]} {t.shape[1]}\n")
            for row in t:
                f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_params(path) -> ModelParams:
    with open(path) as f:
        lines = f.read().splitlines()
    head = lines[0].split()
    params = ModelParams(head[1], int(head[2]), int(head[3]), int(head[4]))
    i = 1
    while i < len(lines):
        tag, name, rows, cols = lines[i].split()
        assert tag == "param"
        rows, cols = int(rows), int(cols)
        block = [[float(x) for x in lines[i + 1 + r].split()] for r in range(rows)]
        arr = np.asarray(block)
        params.tensors[name] = arr[0] if rows == 1 and "/" in name and \
            name.split("/")[0] in ("a_src", "a_dst", "a_rel", "h_rel", "q", "b") \
            else arr
        i += 1 + rows
    return params


# ---------------------------------------------------------------------------
# Stage operations
# ---------------------------------------------------------------------------

def feature_projection(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """h' = x @ W.T (row-vector convention)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"shape mismatch: x {x.shape} vs W {W.shape}")
    out = x @ W.T
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite projection output")
    return out


def attention_theta(hp: np.ndarray, a_src: np.ndarray, a_dst: np.ndarray):
    """Per-vertex halves of the concatenated attention dot product."""
    if hp.shape[1] != a_src.shape[0] or hp.shape[1] != a_dst.shape[0]:
        raise ValueError(f"width mismatch: h' {hp.shape} vs a "
                         f"{a_src.shape}/{a_dst.shape}")
    return hp @ a_src, hp @ a_dst


def _segment_aggregate(sg: SemanticGraph, hp_src, edge_weight, activation,
                       params):
    """Shared normalize-and-aggregate: alpha = w / sum(w) per target,
    z_v = act(sum alpha * h'_u). Zero-in-degree targets yield zero rows.

    Accumulation runs in CSC order (targets ascending, sources ascending
    within a target), so results are reproducible bit-for-bit.
    """
    indptr, src_idx = sg.edges.indptr, sg.edges.indices
    n_dst = sg.edges.shape[1]
    hidden = hp_src.shape[1]
    z = np.zeros((n_dst, hidden))
    targets = sg.target_vertices
    if len(targets) == 0:
        return z
    starts = indptr[targets]
    ends = indptr[targets + 1]
    denom = np.add.reduceat(edge_weight, starts)
    # reduceat misbehaves on non-contiguous segment lists only when a start
    # equals the array length; target starts are always < nnz here
    alpha = edge_weight / np.repeat(denom, ends - starts)
    weighted = alpha[:, None] * hp_src[src_idx]
    z[targets] = np.add.reduceat(weighted, starts, axis=0)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite aggregation output")
    z[targets] = apply_activation(z[targets], activation, params)
    return z


def _edge_logits(sg, theta_src, theta_dst, params, extra=0.0):
    indptr, src_idx = sg.edges.indptr, sg.edges.indices
    dst_idx = np.repeat(np.arange(sg.edges.shape[1]), np.diff(indptr))
    logits = theta_src[src_idx] + theta_dst[dst_idx] + extra
    logits = leaky_relu(logits, params.leaky_slope)
    return np.clip(logits, -THETA_CLAMP, THETA_CLAMP)


def neighbor_aggregation_attn(sg: SemanticGraph, hp_src, theta_src, theta_dst,
                              params, activation="elu"):
    """Softmax attention over each target's in-neighbors (HAN / R-GAT)."""
    w = np.exp(_edge_logits(sg, theta_src, theta_dst, params))
    return _segment_aggregate(sg, hp_src, w, activation, params)


def neighbor_aggregation_mean(sg: SemanticGraph, hp_src, params):
    """Uniform 1/|N_v| weights (R-GCN); no output activation."""
    w = np.ones(sg.edges.nnz)
    return _segment_aggregate(sg, hp_src, w, "none", params)


def neighbor_aggregation_shgn(sg: SemanticGraph, hp_src, theta_src, theta_dst,
                              a_rel, h_rel, W_rel, params):
    """Attention with a per-graph edge-embedding term in the logit.

    logit = LeakyReLU(a_src.h'_u + a_dst.h'_v + a_rel.(W_rel h_rel));
    normalized over each target's neighbors within this graph.
    """
    rel_term = float(a_rel @ (W_rel @ h_rel))
    w = np.exp(_edge_logits(sg, theta_src, theta_dst, params, extra=rel_term))
    return _segment_aggregate(sg, hp_src, w, "none", params)


def fusion_beta(ws: np.ndarray) -> np.ndarray:
    """Softmax over per-graph importances (clamped, shift-invariant)."""
    e = np.exp(np.clip(np.asarray(ws, dtype=np.float64), -THETA_CLAMP, THETA_CLAMP))
    return e / e.sum()


def semantic_fusion_han(zs, target_sets, q, W_sems, b):
    """Metapath attention: w_P = mean_v q.tanh(W^P z_v + b), beta = softmax(w),
    h = sum beta_i z_i. Returns (h, w list, beta list)."""
    if not zs:
        raise ValueError("semantic fusion over an empty metapath list")
    ws = []
    for z, targets, W_sem in zip(zs, target_sets, W_sems):
        if len(targets) == 0:
            ws.append(0.0)  # empty graph contributes a neutral importance
            continue
        t = np.tanh(z[targets] @ W_sem.T + b)
        ws.append(float(np.mean(t @ q)))
    beta = fusion_beta(np.asarray(ws))
    h = np.zeros_like(zs[0])
    for bi, z in zip(beta, zs):
        h += bi * z
    return h, ws, beta.tolist()


def semantic_fusion_mean(zs):
    if not zs:
        raise ValueError("semantic fusion over an empty graph list")
    return sum(zs[1:], start=zs[0].copy()) / len(zs)


def semantic_fusion_rgcn(zs, x, W_self):
    h = feature_projection(x, W_self)
    for z in zs:
        h = h + z
    return h


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingResult:
    """Final per-type embeddings plus last-layer per-graph intermediates."""

    h: dict  # vertex type -> (count, hidden)
    z: dict  # semantic graph id -> (dst_count, hidden)
    w: dict = field(default_factory=dict)      # HAN importances per graph id
    beta: dict = field(default_factory=dict)   # fused weights per graph id


def _project_for_layer(g, sgs, params, layer, inputs):
    """h' per (sg or type) scope key; dst projections only for attention."""
    behavior = params.behavior
    needs_dst = behavior.na in ("attn", "shgn")
    hp = {}
    for sg in sgs:
        vtypes = {sg.src_type}
        if needs_dst:
            vtypes.add(sg.dst_type)
        for vtype in vtypes:
            scope = vtype if behavior.fp_scope == "type" else (sg.id, vtype)
            if scope in hp:
                continue
            if vtype not in inputs:
                raise ParamError(
                    f"no layer-{layer} input features for vertex type {vtype!r}"
                    " (it was never an aggregation target)")
            W = params.get(fp_weight_key(behavior, layer, sg.id, vtype))
            hp[scope] = feature_projection(inputs[vtype], W)
    return hp


def _aggregate_layer(g, sgs, params, layer, inputs, hp):
    behavior = params.behavior
    zs = {}
    for sg in sgs:
        src_scope = sg.src_type if behavior.fp_scope == "type" else (sg.id, sg.src_type)
        hp_src = hp[src_scope]
        if behavior.na == "mean":
            zs[sg.id] = neighbor_aggregation_mean(sg, hp_src, params)
            continue
        dst_scope = sg.dst_type if behavior.fp_scope == "type" else (sg.id, sg.dst_type)
        hp_dst = hp[dst_scope]
        ts, _ = attention_theta(hp_src, params.get(f"a_src/{layer}/{sg.id}"),
                                params.get(f"a_dst/{layer}/{sg.id}"))
        _, td = attention_theta(hp_dst, params.get(f"a_src/{layer}/{sg.id}"),
                                params.get(f"a_dst/{layer}/{sg.id}"))
        if behavior.na == "attn":
            zs[sg.id] = neighbor_aggregation_attn(
                sg, hp_src, ts, td, params, activation=behavior.agg_activation)
        else:
            zs[sg.id] = neighbor_aggregation_shgn(
                sg, hp_src, ts, td,
                params.get(f"a_rel/{layer}/{sg.id}"),
                params.get(f"h_rel/{layer}/{sg.id}"),
                params.get(f"W_rel/{layer}/{sg.id}"), params)
    return zs


def _fuse_layer(g, sgs, params, layer, inputs, zs):
    behavior = params.behavior
    groups = {}
    for sg in sgs:
        groups.setdefault(sg.dst_type, []).append(sg)
    h, w_out, beta_out = {}, {}, {}
    for dst_type, group in groups.items():
        z_list = [zs[sg.id] for sg in group]
        if behavior.sf == "han":
            fused, ws, betas = semantic_fusion_han(
                z_list, [sg.target_vertices for sg in group],
                params.get(f"q/{layer}"),
                [params.get(f"W_sem/{layer}/{sg.id}") for sg in group],
                params.get(f"b/{layer}"))
            for sg, wv, bv in zip(group, ws, betas):
                w_out[sg.id], beta_out[sg.id] = wv, bv
        elif behavior.sf == "mean":
            fused = semantic_fusion_mean(z_list)
        elif behavior.sf == "rgcn":
            fused = semantic_fusion_rgcn(
                z_list, inputs[dst_type], params.get(f"W/{layer}/self/{dst_type}"))
        else:  # S-HGN: no semantic fusion stage, plain sum of NA outputs
            fused = z_list[0].copy()
            for z in z_list[1:]:
                fused += z
        h[dst_type] = fused
    return h, w_out, beta_out


def run_oracle(g: HetGraph, sgs, params: ModelParams) -> EmbeddingResult:
    """Algorithm-1-style reference: FP over all vertices, NA per semantic
    graph, SF per vertex, repeated per layer with SF output feeding the next
    layer's projection."""
    inputs = {t.name: g.raw_features[t.name] for t in g.vertex_types
              if t.feature_dim > 0}
    zs, w_out, beta_out = {}, {}, {}
    for layer in range(params.num_layers):
        hp = _project_for_layer(g, sgs, params, layer, inputs)
        zs = _aggregate_layer(g, sgs, params, layer, inputs, hp)
        h, w_out, beta_out = _fuse_layer(g, sgs, params, layer, inputs, zs)
        inputs = h
    return EmbeddingResult(h=inputs, z=zs, w=w_out, beta=beta_out)
