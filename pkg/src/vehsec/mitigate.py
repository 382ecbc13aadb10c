"""Mitigation simulation and minimum-cost mitigation planning.

A mitigation raises one component's COA by a fixed delta; several mitigations
on the same component add up. Plans are searched exactly by branch and bound.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .attackgraph import AttackGraph, AttackNode, cheapest_path
from .errors import CatalogTooLarge, Infeasible, NoPath, UnknownComponent, ValidationError
from .textfmt import format_decl, parse_decls

log = logging.getLogger(__name__)

DEFAULT_SPECULATIVE_K = 1000
DEFAULT_MAX_CATALOG = 24
POLICIES = ("exclude", "speculative")


@dataclass(frozen=True)
class Mitigation:
    mit_id: str
    component_id: str
    coa_delta: int
    cost: int | None = None

    def __post_init__(self):
        if self.coa_delta < 1:
            raise ValidationError(f"{self.mit_id}: coa delta must be >= 1")
        if self.cost is not None and self.cost < 0:
            raise ValidationError(f"{self.mit_id}: cost must be >= 0")


@dataclass(frozen=True)
class MitigationPlan:
    selected: tuple[str, ...]
    total_cost: int
    before: dict
    after: dict
    mitigations: tuple[Mitigation, ...] = ()

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "total_cost": self.total_cost,
            "mitigations": [
                {"id": m.mit_id, "component": m.component_id, "coa_delta": m.coa_delta, "cost": m.cost}
                for m in self.mitigations
            ],
            "cheapest_coa_before": self.before,
            "cheapest_coa_after": self.after,
        }


def speculative_cost(coa: int, k: int = DEFAULT_SPECULATIVE_K) -> int:
    """Price for a mitigation without known cost: ``ceil(k / coa)``."""
    if coa < 1 or k < 1:
        raise ValueError("coa and k must be >= 1")
    return -(-k // coa)


def parse_catalog(text: str, source: str = "<string>") -> list[Mitigation]:
    """``mitigation id=m1 component=gw delta=10 [cost=120]`` lines."""
    out = []
    seen = set()
    for decl in parse_decls(text, source):
        if decl.directive != "mitigation":
            raise decl.error(f"unknown directive {decl.directive!r}")
        a = decl.attrs
        unknown = set(a) - {"id", "component", "delta", "cost"}
        if unknown:
            raise decl.error(f"unknown key(s) {', '.join(sorted(unknown))}")
        try:
            m = Mitigation(a["id"], a["component"], int(a["delta"]),
                           int(a["cost"]) if "cost" in a else None)
        except KeyError as exc:
            raise decl.error(f"mitigation missing {exc.args[0]}=") from None
        except (ValueError, ValidationError) as exc:
            raise decl.error(str(exc)) from None
        if m.mit_id in seen:
            raise decl.error(f"duplicate mitigation id {m.mit_id!r}")
        seen.add(m.mit_id)
        out.append(m)
    return out


def load_catalog(path) -> list[Mitigation]:
    path = Path(path)
    return parse_catalog(path.read_text(encoding="utf-8"), str(path))


def serialize_catalog(catalog: Iterable[Mitigation]) -> str:
    lines = []
    for m in sorted(catalog, key=lambda m: m.mit_id):
        attrs = [("id", m.mit_id), ("component", m.component_id), ("delta", str(m.coa_delta))]
        if m.cost is not None:
            attrs.append(("cost", str(m.cost)))
        lines.append(format_decl("mitigation", attrs))
    return "\n".join(lines) + ("\n" if lines else "")


def _component_node(g: AttackGraph, component_id: str) -> AttackNode:
    node = g.nodes.get(component_id)
    if node is None or node.is_entry:
        raise UnknownComponent(f"no component {component_id!r} in the attack graph")
    return node


def resolve_costs(catalog: Sequence[Mitigation], g: AttackGraph, policy: str = "speculative",
                  k: int = DEFAULT_SPECULATIVE_K) -> list[Mitigation]:
    """Fill in missing costs (``speculative``) or drop unpriced mitigations (``exclude``)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown missing-mitigation policy {policy!r}")
    out = []
    for m in catalog:
        node = _component_node(g, m.component_id)
        if m.cost is not None:
            out.append(m)
        elif policy == "speculative":
            out.append(Mitigation(m.mit_id, m.component_id, m.coa_delta, speculative_cost(node.coa, k)))
        else:
            log.info("dropping unpriced mitigation %s", m.mit_id)
    return out


def apply_mitigations(g: AttackGraph, selected: Iterable[Mitigation]) -> AttackGraph:
    """New graph with every selected delta added to its component's COA (all variants)."""
    bump: dict[str, int] = {}
    for m in selected:
        _component_node(g, m.component_id)
        bump[m.component_id] = bump.get(m.component_id, 0) + m.coa_delta
    if not bump:
        return g
    nodes = dict(g.nodes)
    for cid, delta in bump.items():
        n = nodes[cid]
        nodes[cid] = AttackNode(n.element_id, {v: c + delta for v, c in n.coa_by_variant.items()},
                                n.variant_labels, n.matched_vuln_ids, n.is_entry, n.hints)
    return AttackGraph(nodes, g.edges, g.entry_node_ids, g.target_id, g.variant_ids)


def cheapest_by_variant(g: AttackGraph, variants: Iterable[str]) -> dict[str, int | None]:
    out = {}
    for vid in variants:
        try:
            out[vid] = cheapest_path(g, vid).total_coa
        except NoPath:
            out[vid] = None
    return out


def is_secure(g: AttackGraph, msv: int, variants: Iterable[str]) -> bool:
    return all(c is None or c >= msv for c in cheapest_by_variant(g, variants).values())


def _plan_key(mits: Sequence[Mitigation]) -> tuple:
    return (sum(m.cost for m in mits), len(mits), tuple(sorted(m.mit_id for m in mits)))


def optimize_mitigations(g: AttackGraph, catalog: Sequence[Mitigation], msv: int,
                         plausible_variants: Iterable[str] | None = None, invariant_only: bool = False,
                         max_catalog: int = DEFAULT_MAX_CATALOG) -> MitigationPlan:
    """Cheapest mitigation set lifting every plausible variant's cheapest path to ``msv``.

    Ties prefer fewer mitigations, then the lexicographically smaller id set.
    With ``invariant_only`` only components shared by all plausible variants
    are considered. Catalog costs must already be resolved.
    """
    plausible = list(plausible_variants) if plausible_variants is not None else list(g.variant_ids)
    if any(m.cost is None for m in catalog):
        raise ValueError("unresolved mitigation cost; run resolve_costs first")
    ids = [m.mit_id for m in catalog]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate mitigation ids in catalog")
    for m in catalog:
        _component_node(g, m.component_id)

    cands = list(catalog)
    if invariant_only:
        need = set(plausible)
        cands = [m for m in cands if need <= g.nodes[m.component_id].variant_labels]
    if len(cands) > max_catalog:
        raise CatalogTooLarge(f"{len(cands)} candidate mitigations exceed the exact-search bound {max_catalog}")
    cands.sort(key=lambda m: (m.cost, m.mit_id))
    n = len(cands)

    def feasible(chosen) -> bool:
        return is_secure(apply_mitigations(g, chosen), msv, plausible)

    if not feasible(cands):
        raise Infeasible(f"no subset of {n} candidate mitigations reaches MSV {msv} for all plausible variants")

    best: list = [None]  # (key, chosen)

    def search(i: int, chosen: list, cost: int):
        if best[0] is not None and cost > best[0][0][0]:
            return
        if feasible(chosen):
            key = _plan_key(chosen)
            if best[0] is None or key < best[0][0]:
                best[0] = (key, list(chosen))
            return
        if i == n:
            return
        # admissible bound: at least one more mitigation, the cheapest remaining
        if best[0] is not None and cost + cands[i].cost > best[0][0][0]:
            return
        if not feasible(chosen + cands[i:]):
            return
        chosen.append(cands[i])
        search(i + 1, chosen, cost + cands[i].cost)
        chosen.pop()
        search(i + 1, chosen, cost)

    search(0, [], 0)
    chosen = sorted(best[0][1], key=lambda m: m.mit_id)
    return MitigationPlan(
        selected=tuple(m.mit_id for m in chosen),
        total_cost=sum(m.cost for m in chosen),
        before=cheapest_by_variant(g, plausible),
        after=cheapest_by_variant(apply_mitigations(g, chosen), plausible),
        mitigations=tuple(chosen),
    )


def default_catalog(g: AttackGraph, delta: int = 10) -> list[Mitigation]:
    """One unpriced hardening mitigation per non-entry component."""
    return [Mitigation(f"harden-{nid}", nid, delta) for nid, node in sorted(g.nodes.items()) if not node.is_entry]
