"""Command-line entry point (``vehsec``).

Exit codes: 0 pass/ok, 1 fail, 2 inconclusive, 3 tool error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import attackgraph as ag
from . import fingerprint as fp
from .campaign import load_truth, run_campaign
from .config import Config
from .errors import VehsecError
from .mitigate import load_catalog, optimize_mitigations, resolve_costs
from .model import derive_adjacency, difference_set, load_model, load_variants, serialize_model
from .vulndb import VulnStore, annotate_variants, match_model, parse_feed, serialize_feed

EXIT_TOOL_ERROR = 3


def _dump(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _config(args) -> Config:
    return Config(
        msv=args.msv,
        coa_scale=args.coa_scale,
        default_coa=args.default_coa,
        k_max=args.k_max,
        seed=args.seed,
        budget=args.budget,
        missing_mitigation_policy=args.missing_mitigation_policy,
        speculative_k=args.speculative_k,
    )


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--msv", type=int, default=30, help="minimum security value (default 30)")
    g.add_argument("--coa-scale", type=float, default=10.0, help="COA per CVSS point below 10")
    g.add_argument("--default-coa", type=int, default=100, help="COA of components without matched vulns")
    g.add_argument("--k-max", type=int, default=ag.DEFAULT_K_MAX, help="cap on enumerated vectors per variant")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--budget", type=int, default=100, help="max executions per campaign")
    g.add_argument("--missing-mitigation-policy", choices=("exclude", "speculative"), default="speculative")
    g.add_argument("--speculative-k", type=int, default=1000, help="K in ceil(K / coa)")
    g.add_argument("--lax", action="store_true", help="warn instead of failing on unknown keys")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _graph_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("variants", nargs="+", type=Path, help=".sutm files, one per variant")
    p.add_argument("--feed", action="append", type=Path, default=[], help="vulnerability feed (repeatable)")
    p.add_argument("--target", help="target component id (default: the variants' single target)")


def _load_graph(args, cfg: Config):
    warnings: list[str] = []
    vs = load_variants(args.variants, strict=not args.lax, warnings=warnings)
    for w in warnings:
        logging.warning(w)
    store = VulnStore.load(args.feed) if args.feed else None
    target = args.target
    if target is None:
        cands = set().union(*(v.target_candidates for v in vs.variants))
        if len(cands) != 1:
            raise VehsecError(f"--target required (variants declare {sorted(cands) or 'no'} targets)")
        target = cands.pop()
    annotations = annotate_variants(vs, store, cfg.coa_scale) if store else {}
    graph = ag.build_superposed_graph(vs, annotations, target, cfg.default_coa)
    return vs, store, target, graph


# -- model --------------------------------------------------------------------

def cmd_model_validate(args, cfg):
    status = 0
    for path in args.files:
        warnings: list[str] = []
        try:
            m = load_model(path, strict=not args.lax, warnings=warnings)
        except VehsecError as exc:
            print(f"INVALID {exc}")
            status = EXIT_TOOL_ERROR
            continue
        adj = derive_adjacency(m)
        print(f"OK {path}: model {m.model_id}, {len(m.components)} components, "
              f"{len(m.segments)} segments, {len(m.entry_interfaces)} entries, {len(adj.edges)} edges")
        for w in warnings + adj.warnings:
            print(f"  warning: {w}")
        if args.canonical:
            sys.stdout.write(serialize_model(m))
    return status


def cmd_model_diff(args, cfg):
    vs = load_variants(args.files, strict=not args.lax)
    _dump({"variants": list(vs.variant_ids), "difference_set": sorted(difference_set(vs))})
    return 0


# -- fingerprint ----------------------------------------------------------------

def cmd_fp_skew(args, cfg):
    trace = fp.load_trace(args.trace)
    est = fp.estimate_clock_skew(trace, int(args.id, 0), args.period)
    _dump({"arbitration_id": args.id, "skew_ppm": est.skew_ppm, "residual_rms": est.residual_rms,
           "sample_count": est.sample_count})
    return 0


def cmd_fp_features(args, cfg):
    _dump(fp.extract_features(fp.load_samples(args.samples)).as_dict())
    return 0


def cmd_fp_match(args, cfg):
    db = fp.load_signature_db(args.db)
    features = fp.extract_features(fp.load_samples(args.samples)) if args.samples else None
    if args.features:
        features = json.loads(Path(args.features).read_text(encoding="utf-8"))
    ranked = fp.match_signature(db, features, args.skew)
    _dump([{"identity": str(m.identity), "score": m.score} for m in ranked])
    return 0


def cmd_fp_probe_plan(args, cfg):
    params = fp.parse_probe_parameters(Path(args.params).read_text(encoding="utf-8"), str(args.params))
    plan = fp.generate_probe_plan(params, args.strength)
    _dump({"strength": plan.strength, "parameters": [p.name for p in plan.parameters],
           "rows": plan.as_dicts()})
    return 0


def cmd_fp_diff(args, cfg):
    delta = fp.diff_fingerprints(fp.load_fingerprint_report(args.before),
                                 fp.load_fingerprint_report(args.after), args.tolerance)
    _dump(delta.to_dict())
    return 0


# -- vulnerabilities --------------------------------------------------------------

def cmd_vuln_import(args, cfg):
    diagnostics: list[str] = []
    records = []
    for f in args.feeds:
        records.extend(parse_feed(f, diagnostics))
    for d in diagnostics:
        print(f"warning: {d}", file=sys.stderr)
    text = serialize_feed(records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(records)} records to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_vuln_match(args, cfg):
    store = VulnStore.load(args.feed)
    out = {}
    for path in args.models:
        m = load_model(path, strict=not args.lax)
        res = match_model(m, store, cfg.coa_scale)
        out[m.model_id] = {
            "unidentified": res.unidentified,
            "matches": {cid: [{"vuln": x.vuln_id, "cvss": x.cvss_base, "coa": x.coa} for x in ms]
                        for cid, ms in res.matches.items() if ms},
        }
    _dump(out)
    return 0


# -- attack graph ----------------------------------------------------------------

def _graph_dict(g: ag.AttackGraph) -> dict:
    return {
        "target": g.target_id,
        "variants": list(g.variant_ids),
        "nodes": [{"id": n.element_id, "entry": n.is_entry, "coa": dict(n.coa_by_variant),
                   "variants": sorted(n.variant_labels), "vulns": list(n.matched_vuln_ids)}
                  for n in g.nodes.values()],
        "edges": [{"from": a, "to": b, "variants": sorted(lbl)} for (a, b), lbl in g.edges.items()],
    }


def cmd_attack_build(args, cfg):
    _, _, _, g = _load_graph(args, cfg)
    _dump(_graph_dict(g))
    return 0


def cmd_attack_paths(args, cfg):
    vs, _, _, g = _load_graph(args, cfg)
    diff = difference_set(vs)
    out = {}
    for vid in (args.variant or g.variant_ids):
        out[vid] = ag.make_test_series(g, vid, cfg.msv, cfg.k_max, diff).to_dict(g.variant_ids)
    _dump(out)
    return 0


def cmd_attack_gate(args, cfg):
    _, _, _, g = _load_graph(args, cfg)
    report = ag.gate_verdict(g, cfg.msv, args.variant or None)
    _dump(report.to_dict())
    return 0 if report.passed else 1


def cmd_attack_dot(args, cfg):
    _, _, _, g = _load_graph(args, cfg)
    text = ag.export_dot(g)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# -- mitigation / campaign ---------------------------------------------------------

def cmd_mitigate_optimize(args, cfg):
    _, _, _, g = _load_graph(args, cfg)
    catalog = resolve_costs(load_catalog(args.catalog), g, cfg.missing_mitigation_policy, cfg.speculative_k)
    plan = optimize_mitigations(g, catalog, cfg.msv, args.variant or None,
                                invariant_only=args.invariant_only, max_catalog=cfg.max_catalog)
    _dump(plan.to_dict())
    return 0


def cmd_campaign_run(args, cfg):
    vs, store, target, _ = _load_graph(args, cfg)
    sut = load_truth(args.truth, vs)
    catalog = load_catalog(args.catalog) if args.catalog else None
    report = run_campaign(vs, store, cfg.msv, target, sut, cfg.budget, catalog=catalog, config=cfg)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    if args.dot:
        Path(args.dot).write_text(ag.export_dot(report.final_graph), encoding="utf-8")
    sys.stdout.write(report.summary())
    return report.verdict.exit_code


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="vehsec", description="Automotive security test-case generation")
    groups = parser.add_subparsers(dest="group", required=True)

    def group(name, help_):
        return groups.add_parser(name, help=help_).add_subparsers(dest="cmd", required=True)

    def leaf(sub, name, func, help_=None):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    model = group("model", "SUT model files")
    p = leaf(model, "validate", cmd_model_validate)
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--canonical", action="store_true", help="print the canonical serialization")
    p = leaf(model, "diff", cmd_model_diff)
    p.add_argument("files", nargs="+", type=Path)

    fpr = group("fingerprint", "component fingerprinting")
    p = leaf(fpr, "skew", cmd_fp_skew)
    p.add_argument("trace", type=Path)
    p.add_argument("--id", required=True, help="arbitration id (hex with 0x, or decimal)")
    p.add_argument("--period", type=float, help="nominal period in seconds (default: median)")
    p = leaf(fpr, "features", cmd_fp_features)
    p.add_argument("samples", type=Path)
    p = leaf(fpr, "match", cmd_fp_match)
    p.add_argument("--db", required=True, type=Path)
    p.add_argument("--samples", type=Path)
    p.add_argument("--features", type=Path, help="JSON object of feature values")
    p.add_argument("--skew", type=float, help="observed skew in ppm")
    p = leaf(fpr, "probe-plan", cmd_fp_probe_plan)
    p.add_argument("params", type=Path)
    p.add_argument("--strength", "-t", type=int, default=2)
    p = leaf(fpr, "diff", cmd_fp_diff)
    p.add_argument("before", type=Path)
    p.add_argument("after", type=Path)
    p.add_argument("--tolerance", type=float, default=1e-9)

    vuln = group("vuln", "vulnerability feeds")
    p = leaf(vuln, "import", cmd_vuln_import)
    p.add_argument("feeds", nargs="+", type=Path)
    p.add_argument("--out", type=Path)
    p = leaf(vuln, "match", cmd_vuln_match)
    p.add_argument("models", nargs="+", type=Path)
    p.add_argument("--feed", action="append", type=Path, required=True)

    attack = group("attack", "attack graphs and test series")
    for name, func in (("build", cmd_attack_build), ("paths", cmd_attack_paths),
                       ("gate", cmd_attack_gate), ("dot", cmd_attack_dot)):
        p = leaf(attack, name, func)
        _graph_inputs(p)
        if name in ("paths", "gate"):
            p.add_argument("--variant", action="append", help="restrict to variant (repeatable)")
        if name == "dot":
            p.add_argument("--out", type=Path)

    mit = group("mitigate", "mitigation planning")
    p = leaf(mit, "optimize", cmd_mitigate_optimize)
    _graph_inputs(p)
    p.add_argument("--catalog", required=True, type=Path)
    p.add_argument("--variant", action="append", help="plausible variant (repeatable; default all)")
    p.add_argument("--invariant-only", action="store_true")

    camp = group("campaign", "iterative test campaigns")
    p = leaf(camp, "run", cmd_campaign_run)
    _graph_inputs(p)
    p.add_argument("--truth", required=True, type=Path, help="simulated SUT ground truth")
    p.add_argument("--catalog", type=Path)
    p.add_argument("--report", type=Path, help="write the JSON report here")
    p.add_argument("--dot", type=Path, help="write the final graph as DOT here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args, _config(args))
    except (VehsecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOOL_ERROR


if __name__ == "__main__":
    sys.exit(main())
