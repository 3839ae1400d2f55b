"""Heterogeneous graph data model, file ingestion, and semantic graph build.

A heterogeneous graph holds typed vertex sets with per-type raw feature
matrices and per-relation sparse adjacency. Semantic graphs are induced
either by a single relation or by composing a metapath's relation chain
(boolean composition: an edge (u, v) exists iff at least one path instance
connects u to v; self-edges produced by composition are kept).

Adjacency is stored in compressed-sparse-column layout: column v holds the
source vertices aggregated into target v. All vertex indices are 0-based,
per type, in file order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when a graph file fails to parse or violates an invariant."""


@dataclass(frozen=True)
class VertexType:
    name: str
    count: int
    feature_dim: int  # 0 when the dataset provides no raw features


@dataclass(frozen=True)
class RelationType:
    name: str
    src_type: str
    dst_type: str


@dataclass(frozen=True)
class MetapathSpec:
    name: str
    relation_chain: tuple[str, ...]


class HetGraph:
    """Immutable typed graph: vertex types, relations, CSC adjacency, features.

    `adjacency[rel]` is a scipy csc_array of shape (src_count, dst_count)
    with 1 entries (edges deduplicated), sorted indices.
    """

    def __init__(self, vertex_types, relations, adjacency, raw_features,
                 metapaths=()):
        self.vertex_types: list[VertexType] = list(vertex_types)
        self.relations: list[RelationType] = list(relations)
        self.adjacency: dict[str, sp.csc_array] = dict(adjacency)
        self.raw_features: dict[str, np.ndarray] = dict(raw_features)
        self.metapaths: list[MetapathSpec] = list(metapaths)
        self._vt = {t.name: t for t in self.vertex_types}
        self._rel = {r.name: r for r in self.relations}
        self._validate()

    def _validate(self):
        names = [t.name for t in self.vertex_types]
        if len(set(names)) != len(names):
            raise GraphFormatError("duplicate vertex type names")
        rnames = [r.name for r in self.relations]
        if len(set(rnames)) != len(rnames):
            raise GraphFormatError("duplicate relation names")
        if len(self.vertex_types) + len(self.relations) <= 2:
            raise GraphFormatError(
                "not heterogeneous: |vertex types| + |relation types| must exceed 2")
        for t in self.vertex_types:
            if t.count < 1:
                raise GraphFormatError(f"vertex type {t.name}: count must be >= 1")
            if t.feature_dim < 0:
                raise GraphFormatError(f"vertex type {t.name}: negative feature dim")
        for r in self.relations:
            for side in (r.src_type, r.dst_type):
                if side not in self._vt:
                    raise GraphFormatError(
                        f"relation {r.name}: unknown vertex type {side!r}")
            a = self.adjacency.get(r.name)
            if a is None:
                raise GraphFormatError(f"relation {r.name}: missing adjacency")
            shape = (self._vt[r.src_type].count, self._vt[r.dst_type].count)
            if a.shape != shape:
                raise GraphFormatError(
                    f"relation {r.name}: adjacency shape {a.shape} != {shape}")
            if np.any(np.diff(a.indptr) < 0):
                raise GraphFormatError(
                    f"relation {r.name}: CSC column pointers not monotone")
        for t in self.vertex_types:
            x = self.raw_features.get(t.name)
            if t.feature_dim == 0:
                if x is not None and x.size:
                    raise GraphFormatError(
                        f"vertex type {t.name}: features given but feature_dim is 0")
            else:
                if x is None:
                    raise GraphFormatError(f"vertex type {t.name}: features missing")
                if x.shape != (t.count, t.feature_dim):
                    raise GraphFormatError(
                        f"vertex type {t.name}: feature shape {x.shape} != "
                        f"{(t.count, t.feature_dim)}")
                if not np.all(np.isfinite(x)):
                    raise GraphFormatError(f"vertex type {t.name}: non-finite features")
        for m in self.metapaths:
            _check_chain(self, m)

    def vertex_type(self, name: str) -> VertexType:
        return self._vt[name]

    def relation(self, name: str) -> RelationType:
        if name not in self._rel:
            raise KeyError(f"unknown relation {name!r}")
        return self._rel[name]

    def metapath(self, name: str) -> MetapathSpec:
        for m in self.metapaths:
            if m.name == name:
                return m
        raise KeyError(f"unknown metapath {name!r}")

    def num_edges(self, rel: str) -> int:
        return int(self.adjacency[rel].nnz)


@dataclass
class SemanticGraph:
    """One relation- or metapath-induced graph.

    `edges` is csc_array (src_count, dst_count); `target_vertices` are the
    dst indices with in-degree >= 1; `vertex_types_touched` are the endpoint
    types of the composed graph (the only types whose features this graph
    projects or fetches).
    """

    id: str
    src_type: str
    dst_type: str
    edges: sp.csc_array
    target_vertices: np.ndarray = field(default=None)
    vertex_types_touched: frozenset = field(default=None)

    def __post_init__(self):
        if self.target_vertices is None:
            deg = np.diff(self.edges.indptr)
            self.target_vertices = np.flatnonzero(deg > 0)
        if self.vertex_types_touched is None:
            self.vertex_types_touched = frozenset({self.src_type, self.dst_type})

    @property
    def num_edges(self) -> int:
        return int(self.edges.nnz)

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays in CSC traversal order (dst-major, src ascending)."""
        coo = self.edges.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return coo.row[order], coo.col[order]


def _check_chain(g: HetGraph, m: MetapathSpec):
    if not m.relation_chain:
        raise GraphFormatError(f"metapath {m.name}: empty relation chain")
    prev_dst = None
    for rname in m.relation_chain:
        r = g.relation(rname)
        if prev_dst is not None and r.src_type != prev_dst:
            raise GraphFormatError(
                f"metapath {m.name}: relation {rname} source type {r.src_type!r} "
                f"does not match previous destination {prev_dst!r}")
        prev_dst = r.dst_type


def _canonical_csc(mat) -> sp.csc_array:
    out = sp.csc_array(mat)
    out.data = np.ones_like(out.data, dtype=np.int8)
    out.sum_duplicates()
    out.sort_indices()
    out.data = np.ones(out.nnz, dtype=np.int8)
    return out


def edges_to_csc(src, dst, shape) -> sp.csc_array:
    """Deduplicated boolean CSC adjacency from parallel edge index arrays."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.size and (src.min() < 0 or src.max() >= shape[0]):
        raise GraphFormatError("source index out of range")
    if dst.size and (dst.min() < 0 or dst.max() >= shape[1]):
        raise GraphFormatError("destination index out of range")
    mat = sp.coo_array((np.ones(len(src), dtype=np.int8), (src, dst)), shape=shape)
    return _canonical_csc(mat)


def build_relation_graph(g: HetGraph, relation: str) -> SemanticGraph:
    """Semantic graph that copies one relation's adjacency verbatim."""
    r = g.relation(relation)
    return SemanticGraph(id=r.name, src_type=r.src_type, dst_type=r.dst_type,
                         edges=g.adjacency[r.name])


def build_metapath_graph(g: HetGraph, metapath) -> SemanticGraph:
    """Boolean composition of a metapath's relation chain.

    Edge (u, v) exists iff at least one path instance of the chain connects
    u to v; parallel instances collapse, self-edges are kept.
    """
    m = g.metapath(metapath) if isinstance(metapath, str) else metapath
    _check_chain(g, m)
    rels = [g.relation(rn) for rn in m.relation_chain]
    acc = g.adjacency[rels[0].name].astype(np.int8)
    for r in rels[1:]:
        acc = acc @ g.adjacency[r.name].astype(np.int8)
        acc = _canonical_csc(acc)  # re-booleanize to keep products from overflowing
    return SemanticGraph(id=m.name, src_type=rels[0].src_type,
                         dst_type=rels[-1].dst_type, edges=_canonical_csc(acc))


def build_semantic_graphs(g: HetGraph, names) -> list[SemanticGraph]:
    """Resolve a mixed list of relation and metapath names to semantic graphs."""
    out = []
    rel_names = {r.name for r in g.relations}
    for name in names:
        if name in rel_names:
            out.append(build_relation_graph(g, name))
        else:
            out.append(build_metapath_graph(g, name))
    return out


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Shape description for a generated graph.

    `vertex_types`: list of (name, count, feature_dim).
    `relations`: list of (name, src, dst, spec) where spec is either a float
    density in (0, 1] or an int edge count.
    `metapaths`: list of (name, [rel, ...]).
    """

    vertex_types: list
    relations: list
    metapaths: list = field(default_factory=list)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(
            vertex_types=[tuple(t) for t in d["vertex_types"]],
            relations=[tuple(r) for r in d["relations"]],
            metapaths=[(m[0], list(m[1])) for m in d.get("metapaths", [])],
            seed=int(d.get("seed", 0)),
        )


def _sample_distinct(rng: np.random.Generator, population: int, m: int) -> np.ndarray:
    """m distinct draws from range(population), deterministic per rng state."""
    if m > population:
        raise GraphFormatError(f"impossible density: {m} edges > {population} pairs")
    if m == population:
        return np.arange(population, dtype=np.int64)
    if m > population // 2:
        # sample the complement instead
        keep = np.ones(population, dtype=bool)
        drop = _sample_distinct(rng, population, population - m)
        keep[drop] = False
        return np.flatnonzero(keep).astype(np.int64)
    chosen = np.empty(0, dtype=np.int64)
    while len(chosen) < m:
        need = m - len(chosen)
        draw = rng.integers(0, population, size=int(need * 1.2) + 16)
        chosen = np.unique(np.concatenate([chosen, draw]))
    # np.unique sorts; trimming keeps the result deterministic
    return chosen[:m]


def gen_synthetic(spec: SyntheticSpec) -> HetGraph:
    """Deterministic random graph matching the spec's shape.

    Per relation, either `edges` pairs are sampled without replacement or
    round(density * n_src * n_dst) pairs are; density 1.0 yields the complete
    bipartite relation. Features are uniform in [-1, 1).
    """
    vtypes = [VertexType(n, int(c), int(d)) for (n, c, d) in spec.vertex_types]
    counts = {t.name: t.count for t in vtypes}
    relations, adjacency = [], {}
    for (name, src, dst, dens) in spec.relations:
        if src not in counts or dst not in counts:
            raise GraphFormatError(f"relation {name}: unknown vertex type")
        population = counts[src] * counts[dst]
        if isinstance(dens, float):
            if not (0.0 < dens <= 1.0):
                raise GraphFormatError(
                    f"impossible density: {dens} for relation {name}")
            m = max(1, int(round(dens * population)))
        else:
            m = int(dens)
            if not (0 <= m <= population):
                raise GraphFormatError(
                    f"impossible density: {m} edges for relation {name}")
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, _stable_key(f"edges/{name}")]))
        flat = _sample_distinct(rng, population, m)
        src_idx, dst_idx = np.divmod(flat, counts[dst])
        relations.append(RelationType(name, src, dst))
        adjacency[name] = edges_to_csc(src_idx, dst_idx,
                                       (counts[src], counts[dst]))
    raw = {}
    for t in vtypes:
        if t.feature_dim > 0:
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.seed, _stable_key(f"feat/{t.name}")]))
            raw[t.name] = rng.uniform(-1.0, 1.0, size=(t.count, t.feature_dim))
    metapaths = [MetapathSpec(n, tuple(chain)) for (n, chain) in spec.metapaths]
    return HetGraph(vtypes, relations, adjacency, raw, metapaths)


def _stable_key(text: str) -> int:
    """Stable 64-bit hash for seeding; Python's hash() is salted per process."""
    import hashlib
    return int.from_bytes(hashlib.blake2s(text.encode(), digest_size=8).digest(), "big")


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------
#
# Line-oriented text, blocks in declaration order:
#   vtypes
#   <name> <count> <feature_dim>
#   relations
#   <name> <src_type> <dst_type>
#   edges <relation>
#   <src_idx> <dst_idx>
#   features <vertex_type>
#   <row of feature_dim floats>
#   metapaths
#   <name> <rel1> <rel2> ...
#
# Indices 0-based decimal. The canonical serializer emits edges in CSC
# traversal order and floats via repr (shortest round-trip form).

def save_hetgraph(g: HetGraph, path):
    with open(path, "w") as f:
        f.write(serialize_hetgraph(g))


def serialize_hetgraph(g: HetGraph) -> str:
    lines = ["vtypes"]
    for t in g.vertex_types:
        lines.append(f"{t.name} {t.count} {t.feature_dim}")
    lines.append("relations")
    for r in g.relations:
        lines.append(f"{r.name} {r.src_type} {r.dst_type}")
    for r in g.relations:
        lines.append(f"edges {r.name}")
        sg = build_relation_graph(g, r.name)
        src, dst = sg.edge_list()
        for u, v in zip(src.tolist(), dst.tolist()):
            lines.append(f"{u} {v}")
    for t in g.vertex_types:
        if t.feature_dim > 0:
            lines.append(f"features {t.name}")
            for row in g.raw_features[t.name]:
                lines.append(" ".join(repr(float(x)) for x in row))
    if g.metapaths:
        lines.append("metapaths")
        for m in g.metapaths:
            lines.append(m.name + " " + " ".join(m.relation_chain))
    return "\n".join(lines) + "\n"


def load_hetgraph(path) -> HetGraph:
    with open(path) as f:
        text = f.read()
    return parse_hetgraph(text)


def parse_hetgraph(text: str) -> HetGraph:
    vtypes: list[VertexType] = []
    relations: list[RelationType] = []
    edge_lists: dict[str, tuple[list, list]] = {}
    feature_rows: dict[str, list] = {}
    metapaths: list[MetapathSpec] = []
    mode, current = None, None

    def fail(lineno, msg):
        raise GraphFormatError(f"line {lineno}: {msg}")

    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        head = parts[0]
        if head == "vtypes" and len(parts) == 1:
            mode = "vtypes"
            continue
        if head == "relations" and len(parts) == 1:
            mode = "relations"
            continue
        if head == "edges":
            if len(parts) != 2:
                fail(lineno, "edges block needs exactly one relation name")
            current = parts[1]
            if current not in {r.name for r in relations}:
                fail(lineno, f"edges block references unknown relation {current!r}")
            edge_lists.setdefault(current, ([], []))
            mode = "edges"
            continue
        if head == "features":
            if len(parts) != 2:
                fail(lineno, "features block needs exactly one vertex type name")
            current = parts[1]
            if current not in {t.name for t in vtypes}:
                fail(lineno, f"features block references unknown type {current!r}")
            feature_rows.setdefault(current, [])
            mode = "features"
            continue
        if head == "metapaths" and len(parts) == 1:
            mode = "metapaths"
            continue

        if mode == "vtypes":
            if len(parts) != 3:
                fail(lineno, "vertex type line needs: name count feature_dim")
            try:
                vtypes.append(VertexType(parts[0], int(parts[1]), int(parts[2])))
            except ValueError:
                fail(lineno, f"bad integer in vertex type line: {line!r}")
        elif mode == "relations":
            if len(parts) != 3:
                fail(lineno, "relation line needs: name src_type dst_type")
            relations.append(RelationType(parts[0], parts[1], parts[2]))
        elif mode == "edges":
            if len(parts) != 2:
                fail(lineno, "edge line needs: src_idx dst_idx")
            try:
                edge_lists[current][0].append(int(parts[0]))
                edge_lists[current][1].append(int(parts[1]))
            except ValueError:
                fail(lineno, f"bad edge index: {line!r}")
        elif mode == "features":
            try:
                feature_rows[current].append([float(x) for x in parts])
            except ValueError:
                fail(lineno, f"bad feature value: {line!r}")
        elif mode == "metapaths":
            if len(parts) < 2:
                fail(lineno, "metapath line needs: name rel1 [rel2 ...]")
            metapaths.append(MetapathSpec(parts[0], tuple(parts[1:])))
        else:
            fail(lineno, f"content before any block header: {line!r}")

    counts = {t.name: t.count for t in vtypes}
    adjacency = {}
    for r in relations:
        if r.src_type not in counts or r.dst_type not in counts:
            raise GraphFormatError(
                f"relation {r.name}: dangling vertex type reference")
        src, dst = edge_lists.get(r.name, ([], []))
        adjacency[r.name] = edges_to_csc(src, dst,
                                         (counts[r.src_type], counts[r.dst_type]))
    raw = {}
    for t in vtypes:
        rows = feature_rows.get(t.name)
        if rows is not None:
            arr = np.asarray(rows, dtype=np.float64)
            raw[t.name] = arr
    return HetGraph(vtypes, relations, adjacency, raw, metapaths)
