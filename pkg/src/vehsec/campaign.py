"""Iterative test campaigns: generate vectors, execute, fold evidence, repeat."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .attackgraph import (
    AttackGraph,
    AttackVector,
    build_superposed_graph,
    enumerate_below_msv,
    exclude_variants,
    prioritize,
)
from .config import Config
from .errors import AdapterError, CatalogTooLarge, Infeasible, ValidationError
from .fingerprint import Evidence, EvidenceKind, EvidenceSource, Identity
from .mitigate import Mitigation, optimize_mitigations, resolve_costs
from .model import SutModel, VariantSet, difference_set
from .textfmt import parse_decls
from .vulndb import VulnStore, annotate_variants


class Result(str, enum.Enum):
    Compromised = "Compromised"
    Resisted = "Resisted"


class Verdict(str, enum.Enum):
    Pass = "Pass"
    Fail = "Fail"
    Inconclusive = "Inconclusive"

    @property
    def exit_code(self) -> int:
        return {"Pass": 0, "Fail": 1, "Inconclusive": 2}[self.value]


@dataclass(frozen=True)
class Outcome:
    result: Result
    evidence: tuple[Evidence, ...] = ()


class ExecutionAdapter(Protocol):
    def execute(self, vector: AttackVector) -> Outcome: ...


@dataclass(frozen=True)
class SimulatedSut:
    """Desk-scale stand-in for a vehicle whose true variant is known."""

    true_variant: SutModel
    exploitable_element_ids: frozenset = frozenset()
    identity_table: Mapping[str, Identity] = field(default_factory=dict)

    @property
    def true_variant_id(self) -> str:
        return self.true_variant.variant_id

    def execute(self, vector: AttackVector) -> Outcome:
        return simulated_execute(self, vector)

    @classmethod
    def from_variant(cls, variant: SutModel, exploitable=(), identities: Mapping[str, Identity] | None = None):
        table = {c.id: Identity(c.product_hint.vendor, c.product_hint.product, c.product_hint.version)
                 for c in variant.components if c.product_hint}
        table.update(identities or {})
        return cls(variant, frozenset(exploitable), table)


def simulated_execute(sut: SimulatedSut, vector: AttackVector) -> Outcome:
    """Walk the vector through the true variant.

    The attack stops at the first element that is missing or not exploitable.
    Every element met on the way is reported as observed (with its identity
    when known); a missing element is reported absent, as seen from the last
    element the attacker held.
    """
    present = sut.true_variant.component_map.keys() | sut.true_variant.entry_map.keys()
    evidence: list[Evidence] = []
    via = None
    src = EvidenceSource.AttackOutcome
    for idx, elem in enumerate(vector.element_ids):
        if elem not in present:
            evidence.append(Evidence(EvidenceKind.ElementAbsent, elem, source=src, via=via))
            return Outcome(Result.Resisted, tuple(evidence))
        evidence.append(Evidence(EvidenceKind.ElementObserved, elem, source=src, via=via))
        ident = sut.identity_table.get(elem)
        if ident is not None:
            evidence.append(Evidence(EvidenceKind.IdentityMatch, elem, ident, 1.0, src, via))
        if idx > 0 and elem not in sut.exploitable_element_ids:
            return Outcome(Result.Resisted, tuple(evidence))
        via = elem
    return Outcome(Result.Compromised, tuple(evidence))


def parse_truth(text: str, vs: VariantSet, source: str = "<string>") -> SimulatedSut:
    """Ground truth for the simulated SUT::

        truth variant=II
        exploitable ids=x,b,t
        identity id=x vendor=acme product=gw version=1.0

    Identities default to the true variant's product hints.
    """
    variant = None
    exploitable: set[str] = set()
    identities = {}
    for decl in parse_decls(text, source):
        a = decl.attrs
        if decl.directive == "truth":
            try:
                variant = vs.get(a["variant"])
            except KeyError:
                raise decl.error(f"unknown or missing variant {a.get('variant')!r}") from None
        elif decl.directive == "exploitable":
            exploitable.update(x for x in a.get("ids", "").split(",") if x)
        elif decl.directive == "identity":
            try:
                identities[a["id"]] = Identity(a["vendor"], a["product"], a["version"])
            except KeyError as exc:
                raise decl.error(f"identity missing {exc.args[0]}=") from None
        else:
            raise decl.error(f"unknown directive {decl.directive!r}")
    if variant is None:
        raise ValidationError(f"{source}: no 'truth variant=...' line")
    return SimulatedSut.from_variant(variant, exploitable, identities)


def load_truth(path, vs: VariantSet) -> SimulatedSut:
    path = Path(path)
    return parse_truth(path.read_text(encoding="utf-8"), vs, str(path))


# -- campaign loop -------------------------------------------------------------

@dataclass
class Step:
    index: int
    vector: AttackVector
    touches_difference_set: bool
    outcome: Outcome
    excluded: dict[str, Evidence]
    plausible_after: list[str]


@dataclass
class CampaignReport:
    verdict: Verdict
    target: str
    msv: int
    budget: int
    seed: int
    steps: list[Step] = field(default_factory=list)
    timeline: list[dict] = field(default_factory=list)
    exclusions: list[dict] = field(default_factory=list)
    plausible: list[str] = field(default_factory=list)
    mitigation: dict | None = None
    truncated: bool = False
    variant_order: tuple[str, ...] = ()
    final_graph: AttackGraph | None = None

    @property
    def budget_consumed(self) -> int:
        return len(self.steps)

    @property
    def failing_vector(self) -> AttackVector | None:
        for s in self.steps:
            if s.outcome.result is Result.Compromised:
                return s.vector
        return None

    def to_dict(self) -> dict:
        order = self.variant_order
        return {
            "verdict": self.verdict.value,
            "target": self.target,
            "msv": self.msv,
            "budget": self.budget,
            "budget_consumed": self.budget_consumed,
            "seed": self.seed,
            "truncated": self.truncated,
            "plausible_variants": self.plausible,
            "failing_vector": list(self.failing_vector.element_ids) if self.failing_vector else None,
            "steps": [
                {
                    "step": s.index,
                    "vector": s.vector.to_dict(order),
                    "touches_difference_set": s.touches_difference_set,
                    "result": s.outcome.result.value,
                    "evidence": [e.to_dict() for e in s.outcome.evidence],
                    "excluded": {v: e.to_dict() for v, e in s.excluded.items()},
                    "plausible_after": s.plausible_after,
                }
                for s in self.steps
            ],
            "timeline": self.timeline,
            "exclusions": self.exclusions,
            "mitigation": self.mitigation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"verdict: {self.verdict.value}",
                 f"target: {self.target}  msv: {self.msv}",
                 f"executed: {self.budget_consumed}/{self.budget}",
                 f"plausible variants: {', '.join(self.plausible) or '(none)'}"]
        for ex in self.exclusions:
            ev = ex["evidence"]
            lines.append(f"  excluded {ex['variant']} at step {ex['step']}: {ev['kind']} {ev['subject']}")
        for s in self.steps:
            lines.append(f"  #{s.index} {' -> '.join(s.vector.element_ids)} "
                         f"(coa {s.vector.total_coa}) {s.outcome.result.value}")
        if self.truncated:
            lines.append("  warning: vector enumeration hit K_max")
        if self.mitigation:
            if "error" in self.mitigation:
                lines.append(f"mitigation: {self.mitigation['error']}")
            else:
                lines.append(f"mitigation: {', '.join(self.mitigation['selected'])} "
                             f"(cost {self.mitigation['total_cost']})")
        return "\n".join(lines) + "\n"


def _pending(g: AttackGraph, plausible: Sequence[str], msv: int, k_max: int, executed: set):
    """Merged untested below-MSV vectors over all plausible variants."""
    by_path: dict[tuple, AttackVector] = {}
    truncated = False
    for vid in plausible:
        below = enumerate_below_msv(g, vid, msv, k_max + len(executed))
        truncated |= below.truncated
        for vec in below:
            if vec.element_ids in executed:
                continue
            prev = by_path.get(vec.element_ids)
            if prev is None or vec.key() < prev.key():
                by_path[vec.element_ids] = vec
    return list(by_path.values()), truncated


def _recommend(g: AttackGraph, plausible, msv, catalog, cfg: Config, pending_vectors) -> dict:
    if catalog is None:
        on_paths = sorted({e for v in pending_vectors for e in v.element_ids if not g.nodes[e].is_entry})
        catalog = [Mitigation(f"harden-{c}", c, max(1, msv)) for c in on_paths]
    catalog = [m for m in catalog if m.component_id in g.nodes and not g.nodes[m.component_id].is_entry]
    try:
        resolved = resolve_costs(catalog, g, cfg.missing_mitigation_policy, cfg.speculative_k)
        plan = optimize_mitigations(g, resolved, msv, plausible, max_catalog=cfg.max_catalog)
    except (Infeasible, CatalogTooLarge) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}
    return plan.to_dict()


def run_campaign(vs: VariantSet, store: VulnStore | None, msv: int, target: str,
                 adapter: ExecutionAdapter, budget: int = 100, *,
                 catalog: Sequence[Mitigation] | None = None, config: Config | None = None) -> CampaignReport:
    """Run the generate/execute/refine loop until Fail, exhaustion (Pass) or budget (Inconclusive).

    Every iteration rebuilds the superposed graph from the plausible variants
    and re-applies all evidence gathered so far.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    cfg = replace(config or Config(), msv=msv, budget=budget)
    annotations = annotate_variants(vs, store, cfg.coa_scale) if store is not None else {}
    plausible = list(vs.variant_ids)
    evidence: list[Evidence] = []
    executed: set[tuple] = set()
    report = CampaignReport(Verdict.Inconclusive, target, msv, budget, cfg.seed, variant_order=vs.variant_ids)

    iteration = 0
    while True:
        iteration += 1
        graph = build_superposed_graph(vs.restrict(plausible), annotations, target, cfg.default_coa)
        pruned = exclude_variants(graph, evidence, cfg.identity_threshold)
        for vid, ev in pruned.excluded.items():
            report.exclusions.append({"variant": vid, "step": len(report.steps), "evidence": ev.to_dict()})
        plausible = [v for v in plausible if v not in pruned.excluded]
        graph = pruned.graph
        diff = difference_set(vs.restrict(plausible)) if plausible else frozenset()
        pending, truncated = _pending(graph, plausible, msv, cfg.k_max, executed) if plausible else ([], False)
        report.truncated |= truncated
        ordered = prioritize(pending, diff)
        report.timeline.append({"iteration": iteration, "plausible": list(plausible), "pending": len(ordered)})

        last = report.steps[-1] if report.steps else None
        if last is not None:
            last.excluded = dict(pruned.excluded)
            last.plausible_after = list(plausible)
            if last.outcome.result is Result.Compromised:
                report.verdict = Verdict.Fail
                break
        if not ordered:
            report.verdict = Verdict.Inconclusive if (truncated or not plausible) else Verdict.Pass
            break
        if len(report.steps) >= budget:
            report.verdict = Verdict.Inconclusive
            break

        vec = ordered[0]
        try:
            outcome = adapter.execute(vec)
        except Exception as exc:  # adapters are third-party code
            raise AdapterError(vec, exc) from exc
        executed.add(vec.element_ids)
        evidence.extend(outcome.evidence)
        report.steps.append(Step(len(report.steps) + 1, vec, vec.touches(diff), outcome, {}, list(plausible)))

    report.plausible = list(plausible)
    report.final_graph = graph
    if report.verdict is not Verdict.Pass and plausible:
        below = []
        for vid in plausible:
            below.extend(enumerate_below_msv(graph, vid, msv, cfg.k_max))
        report.mitigation = _recommend(graph, plausible, msv, catalog, cfg, below)
    return report
