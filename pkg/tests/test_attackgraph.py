import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import GOLDEN
from vehsec.attackgraph import (
    AttackGraph,
    AttackNode,
    build_superposed_graph,
    cheapest_path,
    enumerate_below_msv,
    exclude_variants,
    export_dot,
    gate_verdict,
    make_test_series,
    prioritize,
)
from vehsec.errors import EmptyVariantSet, NoPath, TargetUnknown
from vehsec.fingerprint import Evidence, EvidenceKind, Identity
from vehsec.model import VariantSet, parse_model
from vehsec.vulndb import MatchedVuln


def graph(costs, edges, entries, target, variant="V"):
    """Single-variant graph straight from node costs and directed edges."""
    nodes = {n: AttackNode(n, {variant: 0 if n in entries else c}, frozenset({variant}), (), n in entries)
             for n, c in costs.items()}
    return AttackGraph(nodes, {e: frozenset({variant}) for e in sorted(edges)}, frozenset(entries), target,
                       (variant,))


CHAIN = graph({"e": 0, "a": 5, "b": 7, "t": 3}, [("e", "a"), ("a", "b"), ("b", "t")], {"e"}, "t")
DIAMOND = graph({"e": 0, "l": 7, "r": 9, "t": 3},
                [("e", "l"), ("e", "r"), ("l", "t"), ("r", "t")], {"e"}, "t")


def bus_model(mid, comps, target="t"):
    lines = [f"model id={mid}", "segment id=bus bus=Can"]
    lines += [f"component id={c} kind=Ecu segments=bus" for c in comps]
    lines.append(f"entry id=obd host={comps[0]} kind=ObdII")
    return parse_model("\n".join(lines) + "\n")


# -- construction ---------------------------------------------------------------

def test_single_variant_labels():
    g = build_superposed_graph(VariantSet((bus_model("only", ["a", "b", "t"]),)), None, "t")
    assert all(n.variant_labels == {"only"} for n in g.nodes.values())
    assert all(lbl == {"only"} for lbl in g.edges.values())


def test_two_variant_labels():
    vs = VariantSet((bus_model("1", ["a", "b", "c"]), bus_model("2", ["a", "b", "d"])))
    g = build_superposed_graph(vs, None, "a")
    labels = {n: set(node.variant_labels) for n, node in g.nodes.items()}
    assert labels == {"a": {"1", "2"}, "b": {"1", "2"}, "c": {"1"}, "d": {"2"}, "obd": {"1", "2"}}
    assert g.edges[("a", "c")] == {"1"}
    assert g.edges[("a", "b")] == {"1", "2"}
    assert ("a", "obd") not in g.edges  # entry edges are outgoing only


def test_build_errors():
    with pytest.raises(EmptyVariantSet):
        build_superposed_graph([], None, "t")
    with pytest.raises(TargetUnknown):
        build_superposed_graph([bus_model("1", ["a"])], None, "zz")


def test_coa_from_annotations():
    m = bus_model("1", ["a", "t"])
    ann = {"1": {"a": [MatchedVuln("a", "CVE-9", 8.0, 20), MatchedVuln("a", "CVE-8", 9.0, 10)]}}
    g = build_superposed_graph([m], ann, "t", default_coa=77)
    assert g.nodes["a"].coa == 10
    assert g.nodes["a"].matched_vuln_ids == ("CVE-8", "CVE-9")
    assert g.nodes["t"].coa == 77
    assert g.nodes["obd"].coa == 0


# -- cheapest path ------------------------------------------------------------------

def test_chain_cost():
    vec = cheapest_path(CHAIN, "V")
    assert vec.element_ids == ("e", "a", "b", "t")
    assert vec.total_coa == 15
    assert vec.coa_breakdown == (0, 5, 7, 3)


def test_diamond_picks_cheaper_branch():
    vec = cheapest_path(DIAMOND, "V")
    assert vec.total_coa == 10
    assert vec.element_ids == ("e", "l", "t")


def test_tie_breaks_shorter_then_lexicographic():
    g = graph({"e": 0, "a": 2, "b": 2, "c": 4, "t": 1},
              [("e", "a"), ("a", "b"), ("b", "t"), ("e", "c"), ("c", "t")], {"e"}, "t")
    assert cheapest_path(g, "V").element_ids == ("e", "c", "t")
    g2 = graph({"e": 0, "p": 4, "q": 4, "t": 1}, [("e", "q"), ("e", "p"), ("q", "t"), ("p", "t")], {"e"}, "t")
    assert cheapest_path(g2, "V").element_ids == ("e", "p", "t")


def test_no_path():
    g = graph({"e": 0, "a": 1, "t": 1}, [("e", "a")], {"e"}, "t")
    with pytest.raises(NoPath):
        cheapest_path(g, "V")


def test_trio_cheapest(trio_graph):
    got = {v: cheapest_path(trio_graph, v).total_coa for v in ("I", "II", "III")}
    assert got == {"I": 23, "II": 30, "III": 28}
    for v, cost in got.items():
        assert oracles.cheapest_cost(trio_graph, v) == cost


# -- enumeration ----------------------------------------------------------------------

def test_diamond_enumeration():
    assert [v.total_coa for v in enumerate_below_msv(DIAMOND, "V", 13)] == [10, 12]
    assert list(enumerate_below_msv(DIAMOND, "V", 10)) == []


def test_truncation_flag():
    res = enumerate_below_msv(DIAMOND, "V", 100, k_max=1)
    assert len(res) == 1 and res.truncated
    res = enumerate_below_msv(DIAMOND, "V", 100, k_max=2)
    assert len(res) == 2 and not res.truncated


def test_trio_enumeration(trio_graph):
    assert [v.element_ids for v in enumerate_below_msv(trio_graph, "I", 30)] == [("obd", "x", "b", "y", "t")]
    assert list(enumerate_below_msv(trio_graph, "II", 30)) == []
    assert [v.total_coa for v in enumerate_below_msv(trio_graph, "I", 100)] == [23, 47]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9))
def test_enumeration_matches_dfs(seed):
    rng = random.Random(seed)
    g = oracles.random_graph(rng, variants=("A", "B"))
    msv = rng.randint(1, 200)
    for v in g.variant_ids:
        got = [(x.total_coa, x.element_ids) for x in enumerate_below_msv(g, v, msv)]
        assert got == oracles.below_msv(g, v, msv)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_cheapest_equals_min_enumeration(seed):
    g = oracles.random_graph(random.Random(seed))
    everything = enumerate_below_msv(g, "V", float("inf"))
    try:
        best = cheapest_path(g, "V")
    except NoPath:
        assert len(everything) == 0
        return
    assert best == everything[0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 40))
def test_raising_coa_never_lowers_cheapest(seed, bump):
    rng = random.Random(seed)
    g = oracles.random_graph(rng)
    comps = [n for n, node in g.nodes.items() if not node.is_entry]
    victim = rng.choice(comps)
    from vehsec.mitigate import Mitigation, apply_mitigations
    h = apply_mitigations(g, [Mitigation("m", victim, bump)])
    before, after = oracles.cheapest_cost(g, "V"), oracles.cheapest_cost(h, "V")
    try:
        assert cheapest_path(h, "V").total_coa >= cheapest_path(g, "V").total_coa
    except NoPath:
        assert before is None and after is None


# -- superposition property ----------------------------------------------------------

@st.composite
def variant_sets(draw):
    pool = ["a", "b", "c", "d", "e", "t"]
    n = draw(st.integers(1, 3))
    variants = []
    for i in range(n):
        comps = ["a"] + sorted(draw(st.sets(st.sampled_from(pool[1:5]), max_size=4))) + ["t"]
        segs = draw(st.lists(st.sets(st.sampled_from(comps), min_size=2, max_size=3), min_size=1, max_size=4))
        lines = [f"model id=v{i}"]
        member = {c: [] for c in comps}
        for j, s in enumerate(segs):
            lines.append(f"segment id=s{j} bus=Can")
            for c in s:
                member[c].append(f"s{j}")
        for c in comps:
            seg = f" segments={','.join(member[c])}" if member[c] else ""
            lines.append(f"component id={c} kind=Ecu{seg}")
        lines.append("entry id=obd host=a kind=ObdII")
        variants.append(parse_model("\n".join(lines) + "\n"))
    coas = {c: draw(st.integers(1, 50)) for c in pool}
    ann = {v.variant_id: {c: [MatchedVuln(c, "X", 0.0, coas[c])] for c in v.component_map} for v in variants}
    return VariantSet(tuple(variants)), ann


@settings(max_examples=60, deadline=None)
@given(variant_sets())
def test_superposition_restricts_to_each_variant(data):
    vs, ann = data
    g = build_superposed_graph(vs, ann, "t")
    for model in vs.variants:
        vid = model.variant_id
        own = build_superposed_graph([model], ann, "t")
        nodes = {n for n, node in g.nodes.items() if vid in node.variant_labels}
        edges = {e for e, lbl in g.edges.items() if vid in lbl}
        assert nodes == set(own.nodes)
        assert edges == set(own.edges)
        assert all(g.nodes[n].coa_for(vid) == own.nodes[n].coa for n in nodes)
        assert [x.element_ids for x in enumerate_below_msv(g, vid, 200)] == \
            [x.element_ids for x in enumerate_below_msv(own, vid, 200)]


# -- prioritization ---------------------------------------------------------------------

def _vectors(g, v="V", msv=1000):
    return list(enumerate_below_msv(g, v, msv))


def test_prioritize_empty_diff_keeps_order():
    vecs = _vectors(DIAMOND)
    assert prioritize(vecs, set()) == vecs


def test_prioritize_discriminating_first():
    vecs = _vectors(DIAMOND)
    assert [v.total_coa for v in prioritize(vecs, {"r"})] == [12, 10]


def test_prioritize_four_vectors():
    g = graph({"e": 0, "a": 1, "b": 2, "c": 3, "d": 4, "t": 1},
              [("e", x) for x in "abcd"] + [(x, "t") for x in "abcd"], {"e"}, "t")
    order = [v.element_ids[1] for v in prioritize(_vectors(g), {"b", "d"})]
    assert order == ["b", "d", "a", "c"]


def test_make_test_series(trio_graph):
    series = make_test_series(trio_graph, "I", 100, diff_set={"b", "c", "d"})
    assert all(v.total_coa < 100 for v in series.vectors)
    assert series.to_dict()["vectors"][0]["coa_breakdown"] == {"obd": 0, "x": 5, "b": 11, "y": 4, "t": 3}


# -- gate ---------------------------------------------------------------------------------

def test_trio_gate(trio_graph):
    rep = gate_verdict(trio_graph, 30, ["I", "II", "III"])
    assert {v.variant_id: v.passed for v in rep.variants} == {"I": False, "II": True, "III": False}
    assert not rep.passed


def test_gate_unreachable_passes():
    g = graph({"e": 0, "a": 1, "t": 1}, [("e", "a")], {"e"}, "t")
    rep = gate_verdict(g, 30, ["V"])
    assert rep.passed and rep.variants[0].cheapest_coa is None and "no path" in rep.variants[0].note


def test_gate_msv_one_always_passes(trio_graph):
    assert gate_verdict(trio_graph, 1).passed


# -- exclusion --------------------------------------------------------------------------------

def obs(kind, subject, **kw):
    return Evidence(kind, subject, **kw)


def test_observed_element_excludes_variants_lacking_it(trio_graph):
    res = exclude_variants(trio_graph, [obs(EvidenceKind.ElementObserved, "d")])
    assert set(res.excluded) == {"I", "III"}
    assert res.graph.variant_ids == ("II",)
    assert "b" not in res.graph.nodes and "c" not in res.graph.nodes


def test_no_evidence_no_change(trio_graph):
    res = exclude_variants(trio_graph, [])
    assert res.graph == trio_graph and res.excluded == {}


def test_identity_contradiction_prunes_variant_iii(trio_graph):
    ev = obs(EvidenceKind.IdentityMatch, "x", identity=Identity("acme", "gateway", "1.0"), confidence=0.9)
    res = exclude_variants(trio_graph, [ev])
    assert list(res.excluded) == ["III"]
    # brute-force label check on every node and edge
    for nid, node in trio_graph.nodes.items():
        survivors = node.variant_labels - {"III"}
        if survivors:
            assert res.graph.nodes[nid].variant_labels == survivors
        else:
            assert nid not in res.graph.nodes
    for e, lbl in res.graph.edges.items():
        assert lbl == trio_graph.edges[e] - {"III"}


def test_low_confidence_identity_ignored(trio_graph):
    ev = obs(EvidenceKind.IdentityMatch, "x", identity=Identity("acme", "gateway", "1.0"), confidence=0.5)
    assert exclude_variants(trio_graph, [ev]).excluded == {}


def test_absence_needs_adjacency(trio_graph):
    assert list(exclude_variants(trio_graph, [obs(EvidenceKind.ElementAbsent, "b", via="x")]).excluded) == ["I"]
    assert exclude_variants(trio_graph, [obs(EvidenceKind.ElementAbsent, "b", via="ivi")]).excluded == {}
    # shared by every variant: absence is a model error, not a discriminator
    assert exclude_variants(trio_graph, [obs(EvidenceKind.ElementAbsent, "y")]).excluded == {}


def test_unknown_subjects_ignored(trio_graph):
    res = exclude_variants(trio_graph, [obs(EvidenceKind.ElementObserved, "nowhere")])
    assert res.excluded == {} and len(res.ignored) == 1


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**9))
def test_exclusion_never_drops_surviving_elements(seed):
    rng = random.Random(seed)
    g = oracles.random_graph(rng, variants=("A", "B", "C"))
    ids = sorted(g.nodes)
    evidence = [obs(rng.choice(list(EvidenceKind)), rng.choice(ids),
                    identity=Identity("v", "p", "1"), via=rng.choice([None] + ids))
                for _ in range(rng.randint(0, 3))]
    res = exclude_variants(g, evidence)
    alive = set(g.variant_ids) - set(res.excluded)
    for nid, node in g.nodes.items():
        if node.variant_labels & alive:
            assert res.graph.nodes[nid].variant_labels == node.variant_labels & alive


# -- DOT ------------------------------------------------------------------------------------------

def test_dot_single_node():
    g = graph({"t": 4}, [], set(), "t")
    assert export_dot(g) == (GOLDEN / "single_node.dot").read_text()


def test_dot_trio(trio_graph):
    assert export_dot(trio_graph) == (GOLDEN / "trio.dot").read_text()
    assert export_dot(trio_graph) == export_dot(trio_graph)


def test_dot_per_variant_costs():
    vs = [bus_model("1", ["a", "t"]), bus_model("2", ["a", "t"])]
    ann = {"1": {"a": [MatchedVuln("a", "X", 9.0, 10)]}, "2": {"a": [MatchedVuln("a", "Y", 8.0, 20)]}}
    text = export_dot(build_superposed_graph(vs, ann, "t"))
    assert '"a" [label="a\\n1:10 2:20\\n{1,2}"];' in text
