import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vehsec.attackgraph import AttackVector, build_superposed_graph, enumerate_below_msv, export_dot
from vehsec.campaign import (
    Outcome,
    Result,
    SimulatedSut,
    Verdict,
    load_truth,
    parse_truth,
    run_campaign,
    simulated_execute,
)
from vehsec.errors import AdapterError
from vehsec.fingerprint import EvidenceKind, Identity
from vehsec.synth import random_store, random_sut, random_variant_set
from vehsec.vulndb import annotate_variants

PATH_I = ("obd", "x", "b", "y", "t")
PATH_III = ("obd", "x", "c", "y", "t")


def vec(*ids):
    return AttackVector(tuple(ids), 1, frozenset(), "I")


def kinds(outcome):
    return [(e.kind, e.subject_id) for e in outcome.evidence if e.kind is not EvidenceKind.IdentityMatch]


def test_fully_exploitable_path(trio_variants):
    sut = SimulatedSut(trio_variants.get("I"), frozenset({"x", "b", "y", "t"}))
    out = simulated_execute(sut, vec(*PATH_I))
    assert out.result is Result.Compromised
    assert kinds(out) == [(EvidenceKind.ElementObserved, e) for e in PATH_I]


def test_second_element_absent(trio_variants):
    sut = SimulatedSut(trio_variants.get("II"), frozenset({"x", "d", "y", "t"}))
    out = simulated_execute(sut, vec("obd", "b", "y", "t"))
    assert out.result is Result.Resisted
    assert kinds(out) == [(EvidenceKind.ElementObserved, "obd"), (EvidenceKind.ElementAbsent, "b")]
    assert out.evidence[-1].via == "obd"


def test_not_exploitable_keeps_prefix(trio_variants):
    sut = SimulatedSut.from_variant(trio_variants.get("I"), {"x"})
    out = simulated_execute(sut, vec(*PATH_I))
    assert out.result is Result.Resisted
    assert kinds(out) == [(EvidenceKind.ElementObserved, e) for e in ("obd", "x", "b")]
    idents = {e.subject_id: e.identity for e in out.evidence if e.kind is EvidenceKind.IdentityMatch}
    assert idents["x"] == Identity("acme", "gateway", "1.0") and set(idents) == {"x", "b"}


def test_resistant_sut_passes_after_every_vector(trio_variants, trio_store):
    sut = SimulatedSut(trio_variants.get("I"))  # no identities, nothing exploitable
    rep = run_campaign(trio_variants, trio_store, 30, "t", sut)
    assert rep.verdict is Verdict.Pass
    executed = [s.vector.element_ids for s in rep.steps]
    assert sorted(executed) == sorted({PATH_I, PATH_III})
    assert len(executed) == len(set(executed))
    assert rep.mitigation is None


def test_exploitable_cheapest_path_fails(trio_variants, trio_store):
    sut = SimulatedSut.from_variant(trio_variants.get("I"), {"x", "b", "y", "t"})
    rep = run_campaign(trio_variants, trio_store, 30, "t", sut)
    assert rep.verdict is Verdict.Fail
    assert rep.budget_consumed == 1
    assert rep.failing_vector.element_ids == PATH_I
    assert rep.to_dict()["failing_vector"] == list(PATH_I)
    assert rep.mitigation and "selected" in rep.mitigation


def test_discriminating_vector_narrows_to_true_variant(trio_variants, trio_store, fixtures_dir):
    sut = load_truth(fixtures_dir / "truth_II.txt", trio_variants)
    rep = run_campaign(trio_variants, trio_store, 30, "t", sut)
    first = rep.steps[0]
    assert first.touches_difference_set
    assert first.plausible_after == ["II"]
    assert rep.timeline[0]["plausible"] == ["I", "II", "III"]
    assert rep.timeline[1]["plausible"] == ["II"]
    assert {x["variant"] for x in rep.exclusions} == {"I", "III"}
    assert rep.verdict is Verdict.Pass


def test_budget_exhaustion_inconclusive(trio_variants, trio_store):
    sut = SimulatedSut(trio_variants.get("I"))
    rep = run_campaign(trio_variants, trio_store, 30, "t", sut, budget=1)
    assert rep.verdict is Verdict.Inconclusive
    assert rep.budget_consumed == 1
    assert rep.timeline[-1]["pending"] >= 1
    assert rep.mitigation is not None


def test_adapter_failure_wrapped(trio_variants, trio_store):
    class Broken:
        def execute(self, vector):
            raise RuntimeError("bus off")

    with pytest.raises(AdapterError) as info:
        run_campaign(trio_variants, trio_store, 30, "t", Broken())
    assert info.value.vector.element_ids == PATH_I


def test_truth_parsing(trio_variants):
    sut = parse_truth("truth variant=III\nexploitable ids=x,c\nidentity id=c vendor=o product=p version=9\n",
                      trio_variants)
    assert sut.true_variant_id == "III"
    assert sut.exploitable_element_ids == {"x", "c"}
    assert sut.identity_table["c"] == Identity("o", "p", "9")
    assert sut.identity_table["x"].version == "2.0"


def test_report_deterministic(trio_variants, trio_store):
    sut = SimulatedSut.from_variant(trio_variants.get("III"), {"x"})
    a = run_campaign(trio_variants, trio_store, 40, "t", sut)
    b = run_campaign(trio_variants, trio_store, 40, "t", sut)
    assert a.to_json() == b.to_json()
    assert export_dot(a.final_graph) == export_dot(b.final_graph)


def _justified(vs, vid, ev):
    """Re-derive a contradiction from the raw models (independent of the graph code)."""
    model = vs.get(vid)
    present = set(model.component_map) | set(model.entry_map)
    if ev["kind"] == "ElementObserved":
        return ev["subject"] not in present
    if ev["kind"] == "ElementAbsent":
        return ev["subject"] in present
    if ev["kind"] == "IdentityMatch":
        hint = model.component_map[ev["subject"]].product_hint
        ident = ev["identity"].split(":")
        return hint is not None and [hint.vendor, hint.product, hint.version] != ident
    return False


def check_campaign(seed):
    rng = random.Random(seed)
    vs = random_variant_set(rng)
    store = random_store(rng, vs)
    sut = random_sut(rng, vs)
    rep = run_campaign(vs, store, rng.randint(20, 150), "t", sut, budget=rng.randint(1, 30))
    assert sut.true_variant_id in rep.plausible
    for snap in rep.timeline:
        assert sut.true_variant_id in snap["plausible"]
    evidence_seen = [e for s in rep.to_dict()["steps"] for e in s["evidence"]]
    for ex in rep.exclusions:
        assert ex["evidence"] in evidence_seen
        assert _justified(vs, ex["variant"], ex["evidence"])
    executed = [s.vector.element_ids for s in rep.steps]
    assert len(executed) == len(set(executed))
    if rep.verdict is Verdict.Fail:
        assert any(s.outcome.result is Result.Compromised for s in rep.steps)
    if rep.verdict is Verdict.Pass:
        assert all(s.outcome.result is Result.Resisted for s in rep.steps)
        g = build_superposed_graph(vs.restrict(rep.plausible), annotate_variants(vs, store), "t")
        for vid in rep.plausible:
            for v in enumerate_below_msv(g, vid, rep.msv):
                assert v.element_ids in executed
    return rep


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_random_campaigns_sound(seed):
    check_campaign(seed)
