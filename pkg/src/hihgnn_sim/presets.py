"""Synthetic graph presets shaped like the benchmark HetG datasets.

Vertex counts, feature widths, and per-relation edge counts follow the
dataset summary table; wiring is random per seed. Types listed with no
features in that table (keyword, term, venue) get feature_dim 0.

`dblp-desk` keeps the DBLP vertex and edge counts but desk-scales every
feature width to 64 so that trend experiments are not swamped by the
raw-dimension projection cost; `similarity` is a clustered-type shape
built to overflow the projected-feature buffer for scheduling studies.
"""

from .graph import SyntheticSpec

_PRESETS = {
    "toy": dict(
        vertex_types=[("author", 8, 6), ("paper", 6, 6), ("venue", 3, 0)],
        relations=[("AP", "author", "paper", 0.4),
                   ("PA", "paper", "author", 0.4),
                   ("PV", "paper", "venue", 0.5)],
        metapaths=[("APA", ["AP", "PA"]), ("PAP", ["PA", "AP"])],
    ),
    "dblp": dict(
        vertex_types=[("author", 4057, 334), ("paper", 14328, 4231),
                      ("term", 7723, 50), ("venue", 20, 0)],
        relations=[("AP", "author", "paper", 19645),
                   ("PA", "paper", "author", 19645),
                   ("VP", "venue", "paper", 14328),
                   ("PV", "paper", "venue", 14328),
                   ("TP", "term", "paper", 85810),
                   ("PT", "paper", "term", 85810)],
        metapaths=[("APA", ["AP", "PA"]),
                   ("APAPA", ["AP", "PA", "AP", "PA"]),
                   ("PAP", ["PA", "AP"])],
    ),
    "imdb": dict(
        vertex_types=[("movie", 4932, 3489), ("director", 2393, 3341),
                      ("actor", 6124, 3341), ("keyword", 7971, 0)],
        relations=[("AM", "actor", "movie", 14779),
                   ("MA", "movie", "actor", 14779),
                   ("KM", "keyword", "movie", 23610),
                   ("MK", "movie", "keyword", 23610),
                   ("DM", "director", "movie", 4932),
                   ("MD", "movie", "director", 4932)],
        metapaths=[("MDM", ["MD", "DM"]), ("MAM", ["MA", "AM"]),
                   ("MKM", ["MK", "KM"])],
    ),
    "acm": dict(
        vertex_types=[("paper", 3025, 1902), ("author", 5959, 1902),
                      ("subject", 56, 1902), ("term", 1902, 0)],
        relations=[("TP", "term", "paper", 255619),
                   ("PT", "paper", "term", 255619),
                   ("SP", "subject", "paper", 3025),
                   ("PS", "paper", "subject", 3025),
                   ("PP", "paper", "paper", 5343),
                   ("-PP", "paper", "paper", 5343),
                   ("AP", "author", "paper", 9949),
                   ("PA", "paper", "author", 9949)],
        metapaths=[("PSP", ["PS", "SP"]), ("PAP", ["PA", "AP"]),
                   ("PPSP", ["PP", "PS", "SP"]),
                   ("PPAP", ["PP", "PA", "AP"])],
    ),
    "dblp-desk": dict(
        vertex_types=[("author", 4057, 64), ("paper", 14328, 64),
                      ("term", 7723, 64), ("venue", 20, 0)],
        relations=[("AP", "author", "paper", 19645),
                   ("PA", "paper", "author", 19645),
                   ("VP", "venue", "paper", 14328),
                   ("PV", "paper", "venue", 14328),
                   ("TP", "term", "paper", 85810),
                   ("PT", "paper", "term", 85810)],
        metapaths=[("APA", ["AP", "PA"]),
                   ("APAPA", ["AP", "PA", "AP", "PA"]),
                   ("PAP", ["PA", "AP"])],
    ),
}

# Two 3-type clusters; orderings that keep a cluster's graphs adjacent reuse
# the projected features resident in FP-Buf, orderings that interleave do not.
_SIM_TYPES = [(f"t{i}", 8000, 64) for i in range(6)]
_SIM_RELS = []
for base, (a, b, c) in (("x", (0, 1, 2)), ("y", (3, 4, 5))):
    for j, (s, d) in enumerate([(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]):
        _SIM_RELS.append((f"{base}{j}", f"t{s}", f"t{d}", 6000))
_PRESETS["similarity"] = dict(vertex_types=_SIM_TYPES, relations=_SIM_RELS,
                              metapaths=[])

PRESET_NAMES = sorted(_PRESETS)


def synthetic_preset(name: str, seed: int = 0) -> SyntheticSpec:
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    d = dict(_PRESETS[name])
    d["seed"] = seed
    return SyntheticSpec.from_dict(d)
