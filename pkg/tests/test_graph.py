import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hihgnn_sim.graph import (
    GraphFormatError,
    HetGraph,
    MetapathSpec,
    RelationType,
    SyntheticSpec,
    VertexType,
    build_metapath_graph,
    build_relation_graph,
    edges_to_csc,
    gen_synthetic,
    parse_hetgraph,
    serialize_hetgraph,
)
from hihgnn_sim.presets import synthetic_preset


# --- independent oracle: brute-force path enumeration over a relation chain ---

def enumerate_metapath_edges(g, chain):
    """All (u, v) pairs connected by >= 1 path instance, by explicit walk."""
    rels = [g.relation(rn) for rn in chain]
    frontier = {}
    first = g.adjacency[rels[0].name].tocoo()
    for u, v in zip(first.row.tolist(), first.col.tolist()):
        frontier.setdefault(u, set()).add(v)
    for r in rels[1:]:
        adj = g.adjacency[r.name].tocoo()
        step = {}
        for u, v in zip(adj.row.tolist(), adj.col.tolist()):
            step.setdefault(u, set()).add(v)
        nxt = {}
        for start, mids in frontier.items():
            for mid in mids:
                for end in step.get(mid, ()):
                    nxt.setdefault(start, set()).add(end)
        frontier = nxt
    return {(u, v) for u, ends in frontier.items() for v in ends}


def sg_edge_set(sg):
    src, dst = sg.edge_list()
    return set(zip(src.tolist(), dst.tolist()))


TOY_TEXT = """\
vtypes
author 2 3
paper 1 3
relations
AP author paper
PA paper author
edges AP
0 0
1 0
edges PA
0 0
0 1
features author
1.0 0.0 0.0
0.0 1.0 0.0
features paper
0.5 0.5 0.5
metapaths
APA AP PA
"""


def toy_graph():
    return parse_hetgraph(TOY_TEXT)


def test_toy_load_echoes_input():
    g = toy_graph()
    assert [t.count for t in g.vertex_types] == [2, 1]
    assert g.num_edges("AP") == 2
    assert sg_edge_set(build_relation_graph(g, "AP")) == {(0, 0), (1, 0)}


def test_relation_graph_copies_adjacency():
    g = toy_graph()
    sg = build_relation_graph(g, "AP")
    assert sg.src_type == "author" and sg.dst_type == "paper"
    assert list(sg.target_vertices) == [0]


def test_unknown_relation_rejected():
    with pytest.raises(KeyError):
        build_relation_graph(toy_graph(), "XX")


def test_heterogeneity_violation_rejected():
    text = "vtypes\nauthor 2 0\nrelations\n"
    with pytest.raises(GraphFormatError, match="heterogeneous"):
        parse_hetgraph(text)


def test_dangling_type_reference_rejected():
    text = "vtypes\na 2 0\nb 2 0\nrelations\nAB a c\n"
    with pytest.raises(GraphFormatError):
        parse_hetgraph(text)


def test_out_of_range_edge_rejected():
    text = "vtypes\na 2 0\nb 2 0\nrelations\nAB a b\nedges AB\n0 5\n"
    with pytest.raises(GraphFormatError, match="out of range"):
        parse_hetgraph(text)


def test_parse_error_reports_line():
    text = "vtypes\na 2 zero\n"
    with pytest.raises(GraphFormatError, match="line 2"):
        parse_hetgraph(text)


def test_metapath_apa_matches_hand_enumeration():
    # paths: A0->P0->A0, A0->P0->A1, A1->P0->A0, A1->P0->A1
    g = toy_graph()
    sg = build_metapath_graph(g, "APA")
    assert sg_edge_set(sg) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert sg_edge_set(sg) == enumerate_metapath_edges(g, ["AP", "PA"])
    # self-edges produced by composition are kept
    assert (0, 0) in sg_edge_set(sg)


def test_metapath_length_one_equals_relation_graph():
    g = toy_graph()
    m = MetapathSpec("just_ap", ("AP",))
    assert sg_edge_set(build_metapath_graph(g, m)) == \
        sg_edge_set(build_relation_graph(g, "AP"))


def test_incompatible_chain_rejected():
    g = toy_graph()
    with pytest.raises(GraphFormatError, match="does not match"):
        build_metapath_graph(g, MetapathSpec("bad", ("AP", "AP")))


def random_three_type_graph(seed):
    spec = SyntheticSpec(
        vertex_types=[("a", 18, 4), ("b", 16, 4), ("c", 16, 0)],
        relations=[("AB", "a", "b", 0.15), ("BC", "b", "c", 0.15),
                   ("CA", "c", "a", 0.15)],
        metapaths=[("ABCA", ["AB", "BC", "CA"])],
        seed=seed,
    )
    return gen_synthetic(spec)


@pytest.mark.parametrize("seed", [3, 7, 11])
def test_metapath_matches_enumeration_oracle_on_random_graphs(seed):
    g = random_three_type_graph(seed)
    sg = build_metapath_graph(g, "ABCA")
    assert sg_edge_set(sg) == enumerate_metapath_edges(g, ["AB", "BC", "CA"])


def test_reversed_chain_gives_transpose():
    spec = SyntheticSpec(
        vertex_types=[("a", 12, 2), ("b", 10, 2), ("c", 9, 2)],
        relations=[("AB", "a", "b", 0.2), ("BA", "b", "a", 0.0),
                   ("BC", "b", "c", 0.2), ("CB", "c", "b", 0.0)],
        seed=5,
    )
    # build with explicit reverse adjacency so every relation has its reverse
    g0 = gen_synthetic(SyntheticSpec(
        vertex_types=spec.vertex_types,
        relations=[("AB", "a", "b", 0.2), ("BC", "b", "c", 0.2)],
        seed=5))
    adjacency = dict(g0.adjacency)
    adjacency["BA"] = edges_to_csc(*_transposed(adjacency["AB"]), (10, 12))
    adjacency["CB"] = edges_to_csc(*_transposed(adjacency["BC"]), (9, 10))
    g = HetGraph(
        g0.vertex_types,
        list(g0.relations) + [RelationType("BA", "b", "a"),
                              RelationType("CB", "c", "b")],
        adjacency, g0.raw_features,
        [MetapathSpec("fwd", ("AB", "BC")), MetapathSpec("rev", ("CB", "BA"))])
    fwd = build_metapath_graph(g, "fwd")
    rev = build_metapath_graph(g, "rev")
    assert sg_edge_set(rev) == {(v, u) for (u, v) in sg_edge_set(fwd)}


def _transposed(csc):
    coo = csc.tocoo()
    return coo.col, coo.row


@given(st.lists(st.tuples(st.integers(0, 14), st.integers(0, 11)),
                max_size=60))
@settings(max_examples=60, deadline=None)
def test_csc_roundtrip_is_identity_up_to_ordering(pairs):
    src = [p[0] for p in pairs]
    dst = [p[1] for p in pairs]
    csc = edges_to_csc(src, dst, (15, 12))
    coo = csc.tocoo()
    assert set(zip(coo.row.tolist(), coo.col.tolist())) == set(pairs)


def test_canonical_serialization_roundtrips_byte_identical():
    g = gen_synthetic(SyntheticSpec(
        vertex_types=[("a", 6, 3), ("b", 5, 0)],
        relations=[("AB", "a", "b", 0.4), ("BA", "b", "a", 0.3)],
        metapaths=[("ABA", ["AB", "BA"])],
        seed=1))
    text1 = serialize_hetgraph(g)
    text2 = serialize_hetgraph(parse_hetgraph(text1))
    assert text1 == text2


def test_gen_synthetic_deterministic():
    spec = SyntheticSpec(
        vertex_types=[("a", 10, 2), ("b", 10, 2)],
        relations=[("AB", "a", "b", 0.1), ("BA", "b", "a", 0.1)],
        seed=7)
    g1, g2 = gen_synthetic(spec), gen_synthetic(spec)
    assert serialize_hetgraph(g1) == serialize_hetgraph(g2)


def test_gen_density_one_is_complete_bipartite():
    spec = SyntheticSpec(
        vertex_types=[("a", 4, 1), ("b", 3, 1)],
        relations=[("AB", "a", "b", 1.0), ("BA", "b", "a", 0.5)],
        seed=0)
    g = gen_synthetic(spec)
    assert g.num_edges("AB") == 12


def test_gen_impossible_density_rejected():
    spec = SyntheticSpec(
        vertex_types=[("a", 4, 1), ("b", 3, 1)],
        relations=[("AB", "a", "b", 1.5), ("BA", "b", "a", 0.5)],
        seed=0)
    with pytest.raises(GraphFormatError, match="impossible density"):
        gen_synthetic(spec)
    spec2 = SyntheticSpec(
        vertex_types=[("a", 4, 1), ("b", 3, 1)],
        relations=[("AB", "a", "b", 13), ("BA", "b", "a", 0.5)],
        seed=0)
    with pytest.raises(GraphFormatError, match="impossible density"):
        gen_synthetic(spec2)


def test_exact_edge_count_spec():
    spec = SyntheticSpec(
        vertex_types=[("a", 40, 2), ("b", 30, 2)],
        relations=[("AB", "a", "b", 123), ("BA", "b", "a", 45)],
        seed=3)
    g = gen_synthetic(spec)
    assert g.num_edges("AB") == 123 and g.num_edges("BA") == 45


def test_dblp_shaped_counts_match_dataset_table():
    g = gen_synthetic(synthetic_preset("dblp", seed=11))
    counts = {t.name: t.count for t in g.vertex_types}
    assert counts == {"author": 4057, "paper": 14328, "term": 7723, "venue": 20}
    assert g.num_edges("AP") == 19645
    assert g.num_edges("PA") == 19645
    assert g.num_edges("TP") == 85810
    assert g.num_edges("PT") == 85810
    assert g.vertex_type("venue").feature_dim == 0
    sg = build_relation_graph(g, "TP")
    assert sg.num_edges == 85810


def test_imdb_shaped_counts_match_dataset_table():
    g = gen_synthetic(synthetic_preset("imdb", seed=2))
    counts = {t.name: t.count for t in g.vertex_types}
    assert counts == {"movie": 4932, "director": 2393, "actor": 6124,
                      "keyword": 7971}


def test_featureless_type_round_trip():
    g = gen_synthetic(SyntheticSpec(
        vertex_types=[("author", 6, 4), ("paper", 5, 4), ("venue", 3, 0)],
        relations=[("AP", "author", "paper", 0.4),
                   ("PV", "paper", "venue", 0.5)],
        seed=1))
    assert "venue" not in g.raw_features
    text = serialize_hetgraph(g)
    g2 = parse_hetgraph(text)
    assert g2.vertex_type("venue").feature_dim == 0
    assert serialize_hetgraph(g2) == text
