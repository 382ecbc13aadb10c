"""Walk through the three-variant example: gate, test series, mitigation, campaign.

    python3 scripts/trio_demo.py [--msv 30] [--truth II] [--exploitable x]
"""
import argparse
from pathlib import Path

from vehsec import attackgraph as ag
from vehsec.campaign import SimulatedSut, run_campaign
from vehsec.errors import Infeasible
from vehsec.mitigate import load_catalog, optimize_mitigations, resolve_costs
from vehsec.model import difference_set, load_variants
from vehsec.vulndb import VulnStore, annotate_variants

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--msv", type=int, default=30)
    ap.add_argument("--truth", default="II", help="true variant for the simulated campaign")
    ap.add_argument("--exploitable", default="x", help="comma-separated exploitable components")
    args = ap.parse_args()

    vs = load_variants([FIXTURES / f"trio_{v}.sutm" for v in ("I", "II", "III")])
    store = VulnStore.load([FIXTURES / "trio_feed.txt"])
    g = ag.build_superposed_graph(vs, annotate_variants(vs, store), "t")
    diff = difference_set(vs)
    print(f"difference set: {sorted(diff)}")

    for row in ag.gate_verdict(g, args.msv).variants:
        verdict = "pass" if row.passed else "FAIL"
        print(f"variant {row.variant_id:>3}: cheapest COA {row.cheapest_coa}  {verdict}")
    for vid in g.variant_ids:
        series = ag.make_test_series(g, vid, args.msv, ag.DEFAULT_K_MAX, diff)
        for v in series.vectors:
            print(f"  test {vid}: {' -> '.join(v.element_ids)}  (COA {v.total_coa})")

    catalog = resolve_costs(load_catalog(FIXTURES / "trio_catalog.txt"), g)
    for invariant in (False, True):
        try:
            plan = optimize_mitigations(g, catalog, args.msv, invariant_only=invariant)
        except Infeasible as exc:
            print(f"mitigation (invariant_only={invariant}): {exc}")
            continue
        print(f"mitigation (invariant_only={invariant}): {list(plan.selected)} cost {plan.total_cost}")

    sut = SimulatedSut.from_variant(vs.get(args.truth), set(filter(None, args.exploitable.split(","))))
    report = run_campaign(vs, store, args.msv, "t", sut)
    print(report.summary(), end="")


if __name__ == "__main__":
    main()
