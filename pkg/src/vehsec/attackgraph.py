"""Superposed, cost-annotated attack graphs over model variants.

Nodes are components and entry interfaces; each carries the set of variants
containing it. Costs sit on nodes and are charged on entering a node, entry
interfaces cost nothing. Paths are ordered by (total cost, length, ids).
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyVariantSet, NoPath, TargetUnknown
from .fingerprint import Evidence, EvidenceKind
from .model import ProductHint, SutModel, VariantSet, derive_adjacency
from .vulndb import DEFAULT_COA, Annotations, node_coa

log = logging.getLogger(__name__)

DEFAULT_K_MAX = 1000
DEFAULT_IDENTITY_THRESHOLD = 0.8
_SOURCE = "\x00source"


@dataclass(frozen=True)
class AttackNode:
    element_id: str
    coa_by_variant: Mapping[str, int]
    variant_labels: frozenset
    matched_vuln_ids: tuple[str, ...] = ()
    is_entry: bool = False
    hints: Mapping[str, ProductHint | None] = field(default_factory=dict, compare=False)

    def coa_for(self, variant_id: str) -> int:
        return self.coa_by_variant[variant_id]

    @property
    def coa(self) -> int:
        return min(self.coa_by_variant.values())

    @property
    def uniform_coa(self) -> bool:
        return len(set(self.coa_by_variant.values())) == 1


@dataclass(frozen=True)
class AttackGraph:
    nodes: Mapping[str, AttackNode]
    edges: Mapping[tuple[str, str], frozenset]
    entry_node_ids: frozenset
    target_id: str
    variant_ids: tuple[str, ...]

    def successors(self, node_id: str, variant_id: str) -> list[str]:
        out = []
        for (a, b), labels in self.edges.items():
            if a == node_id and variant_id in labels:
                out.append(b)
        return sorted(out)

    def adjacency(self, variant_id: str) -> dict[str, list[str]]:
        succ: dict[str, list[str]] = {n: [] for n, node in self.nodes.items() if variant_id in node.variant_labels}
        for (a, b), labels in sorted(self.edges.items()):
            if variant_id in labels:
                succ[a].append(b)
        return succ

    def entries_for(self, variant_id: str) -> list[str]:
        return sorted(e for e in self.entry_node_ids
                      if e in self.nodes and variant_id in self.nodes[e].variant_labels)

    def restrict(self, variant_ids: Iterable[str]) -> "AttackGraph":
        return _prune(self, set(self.variant_ids) - set(variant_ids))


@dataclass(frozen=True)
class AttackVector:
    element_ids: tuple[str, ...]
    total_coa: int
    feasible_variants: frozenset
    variant_id: str
    coa_breakdown: tuple[int, ...] = ()

    def key(self) -> tuple:
        return (self.total_coa, len(self.element_ids), self.element_ids)

    def touches(self, element_ids) -> bool:
        return any(e in element_ids for e in self.element_ids)

    def to_dict(self, variant_order: Sequence[str] | None = None) -> dict:
        feasible = sorted(self.feasible_variants, key=_order_key(variant_order))
        return {
            "elements": list(self.element_ids),
            "total_coa": self.total_coa,
            "coa_breakdown": dict(zip(self.element_ids, self.coa_breakdown)),
            "feasible_variants": feasible,
            "costed_for": self.variant_id,
        }


@dataclass
class BelowMsv:
    """Ascending vectors below the MSV; ``truncated`` is set when K_max cut the list."""

    vectors: list[AttackVector]
    truncated: bool = False

    def __iter__(self):
        return iter(self.vectors)

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]


@dataclass
class TestSeries:
    target_id: str
    msv: int
    vectors: list[AttackVector]
    truncated: bool = False

    __test__ = False  # not a pytest class

    def to_dict(self, variant_order=None) -> dict:
        return {
            "target": self.target_id,
            "msv": self.msv,
            "truncated": self.truncated,
            "vectors": [v.to_dict(variant_order) for v in self.vectors],
        }


def _order_key(order):
    if not order:
        return lambda v: v
    pos = {v: i for i, v in enumerate(order)}
    return lambda v: (pos.get(v, len(pos)), v)


# -- construction ---------------------------------------------------------------

def build_superposed_graph(vs: VariantSet | Sequence[SutModel], annotations: Annotations | None,
                           target: str, default_coa: int = DEFAULT_COA) -> AttackGraph:
    """Union of every variant's attack graph, each element labeled with its variants.

    Component COA is the cheapest matched vulnerability for that variant's view
    of the component, else ``default_coa``.
    """
    variants = list(vs.variants if isinstance(vs, VariantSet) else vs)
    if not variants:
        raise EmptyVariantSet("no variants to superpose")
    if not any(target in v.component_map for v in variants):
        raise TargetUnknown(f"target {target!r} is not a component of any variant")
    annotations = annotations or {}

    labels: dict[str, set] = {}
    coas: dict[str, dict[str, int]] = {}
    vulns: dict[str, set] = {}
    hints: dict[str, dict] = {}
    entries: set[str] = set()
    edges: dict[tuple[str, str], set] = {}

    for model in variants:
        vid = model.variant_id
        matched = annotations.get(vid, {})
        for comp in model.components:
            labels.setdefault(comp.id, set()).add(vid)
            ms = matched.get(comp.id, ())
            coas.setdefault(comp.id, {})[vid] = node_coa(ms, default_coa)
            vulns.setdefault(comp.id, set()).update(m.vuln_id for m in ms)
            hints.setdefault(comp.id, {})[vid] = comp.product_hint
        for entry in model.entry_interfaces:
            labels.setdefault(entry.id, set()).add(vid)
            coas.setdefault(entry.id, {})[vid] = 0
            hints.setdefault(entry.id, {})[vid] = None
            entries.add(entry.id)
        adj = derive_adjacency(model)
        for a, b in adj.edges:
            edges.setdefault((a, b), set()).add(vid)
            edges.setdefault((b, a), set()).add(vid)
        for entry_id, host in adj.entries:
            edges.setdefault((entry_id, host), set()).add(vid)

    nodes = {
        nid: AttackNode(nid, dict(coas[nid]), frozenset(labels[nid]), tuple(sorted(vulns.get(nid, ()))),
                        nid in entries, dict(hints[nid]))
        for nid in sorted(labels)
    }
    return AttackGraph(
        nodes=nodes,
        edges={k: frozenset(v) for k, v in sorted(edges.items())},
        entry_node_ids=frozenset(entries),
        target_id=target,
        variant_ids=tuple(m.variant_id for m in variants),
    )


# -- path search ----------------------------------------------------------------

def _check_variant(g: AttackGraph, variant_id: str):
    if variant_id not in g.variant_ids:
        raise ValueError(f"variant {variant_id!r} not in graph (have {', '.join(g.variant_ids)})")


def _search(succ, cost, start: tuple[str, ...], start_cost: int, target: str,
            banned_nodes=frozenset(), banned_edges=frozenset()):
    """Label-setting search from the last node of ``start``; keys are (cost, length, path)."""
    heap = [(start_cost, len(start), start)]
    settled = set(banned_nodes)
    while heap:
        c, n, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == target:
            return c, path
        for nxt in succ.get(node, ()):
            if nxt in settled or (node, nxt) in banned_edges or nxt in path:
                continue
            heapq.heappush(heap, (c + cost[nxt], n + 1, path + (nxt,)))
    return None


def _variant_view(g: AttackGraph, variant_id: str):
    succ = g.adjacency(variant_id)
    cost = {n: node.coa_for(variant_id) for n, node in g.nodes.items() if variant_id in node.variant_labels}
    succ[_SOURCE] = g.entries_for(variant_id)
    cost[_SOURCE] = 0
    return succ, cost


def _make_vector(g: AttackGraph, variant_id: str, path: tuple[str, ...], cost) -> AttackVector:
    elems = tuple(p for p in path if p != _SOURCE)
    feasible = set(g.variant_ids)
    for e in elems:
        feasible &= g.nodes[e].variant_labels
    for a, b in zip(elems, elems[1:]):
        feasible &= g.edges[(a, b)]
    breakdown = tuple(cost[e] for e in elems)
    return AttackVector(elems, sum(breakdown), frozenset(feasible), variant_id, breakdown)


def cheapest_path(g: AttackGraph, variant_id: str) -> AttackVector:
    """Cheapest entry-to-target vector inside one variant (ties: shorter, then by ids)."""
    _check_variant(g, variant_id)
    if g.target_id not in g.nodes or variant_id not in g.nodes[g.target_id].variant_labels:
        raise NoPath(f"target {g.target_id!r} absent in variant {variant_id!r}")
    succ, cost = _variant_view(g, variant_id)
    found = _search(succ, cost, (_SOURCE,), 0, g.target_id)
    if found is None:
        raise NoPath(f"target {g.target_id!r} unreachable in variant {variant_id!r}")
    return _make_vector(g, variant_id, found[1], cost)


def enumerate_below_msv(g: AttackGraph, variant_id: str, msv: float,
                        k_max: int = DEFAULT_K_MAX) -> BelowMsv:
    """All simple entry-to-target vectors with total COA strictly below ``msv``.

    Yen's loopless k-shortest-paths with a cost cutoff; at most ``k_max``
    vectors are returned and ``truncated`` reports whether more exist.
    """
    _check_variant(g, variant_id)
    if msv < 1 or k_max < 1:
        raise ValueError("msv and k_max must be >= 1")
    if g.target_id not in g.nodes or variant_id not in g.nodes[g.target_id].variant_labels:
        return BelowMsv([])
    succ, cost = _variant_view(g, variant_id)
    target = g.target_id

    first = _search(succ, cost, (_SOURCE,), 0, target)
    if first is None or first[0] >= msv:
        return BelowMsv([])
    accepted = [first[1]]
    candidates: list = []
    queued = {first[1]}
    truncated = False
    while True:
        last = accepted[-1]
        for i in range(len(last) - 1):
            root = last[: i + 1]
            banned_edges = {(p[i], p[i + 1]) for p in accepted if len(p) > i + 1 and p[: i + 1] == root}
            root_cost = sum(cost[n] for n in root)
            found = _search(succ, cost, root, root_cost, target, frozenset(root[:-1]), banned_edges)
            if found is None:
                continue
            total, path = found
            if total < msv and path not in queued:
                queued.add(path)
                heapq.heappush(candidates, (total, len(path), path))
        if not candidates:
            break
        _, _, nxt = heapq.heappop(candidates)
        if len(accepted) == k_max:
            truncated = True
            break
        accepted.append(nxt)

    vectors = [_make_vector(g, variant_id, p, cost) for p in accepted]
    vectors.sort(key=AttackVector.key)
    if truncated:
        log.warning("variant %s: path enumeration truncated at K_max=%d", variant_id, k_max)
    return BelowMsv(vectors, truncated)


def make_test_series(g: AttackGraph, variant_id: str, msv: int, k_max: int = DEFAULT_K_MAX,
                diff_set=frozenset()) -> TestSeries:
    below = enumerate_below_msv(g, variant_id, msv, k_max)
    return TestSeries(g.target_id, msv, prioritize(below.vectors, diff_set), below.truncated)


def prioritize(vectors: Iterable[AttackVector], diff_set) -> list[AttackVector]:
    """Vectors touching the difference set first, cost order kept within each class."""
    diff_set = frozenset(diff_set)
    return sorted(vectors, key=lambda v: (not v.touches(diff_set),) + v.key())


# -- verdicts -------------------------------------------------------------------

@dataclass(frozen=True)
class VariantGate:
    variant_id: str
    cheapest_coa: int | None
    passed: bool
    note: str = ""


@dataclass
class GateReport:
    msv: int
    variants: list[VariantGate]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.variants)

    def by_variant(self) -> dict[str, VariantGate]:
        return {v.variant_id: v for v in self.variants}

    def to_dict(self) -> dict:
        return {
            "msv": self.msv,
            "passed": self.passed,
            "variants": [{"variant": v.variant_id, "cheapest_coa": v.cheapest_coa,
                          "passed": v.passed, "note": v.note} for v in self.variants],
        }


def gate_verdict(g: AttackGraph, msv: int, plausible_variants: Iterable[str] | None = None) -> GateReport:
    """Static verdict: a variant passes iff its cheapest vector costs at least ``msv``."""
    plausible = list(plausible_variants) if plausible_variants is not None else list(g.variant_ids)
    if not plausible:
        raise ValueError("plausible variant set is empty")
    order = _order_key(g.variant_ids)
    results = []
    for vid in sorted(plausible, key=order):
        try:
            vec = cheapest_path(g, vid)
        except NoPath as exc:
            results.append(VariantGate(vid, None, True, f"no path: {exc}"))
            continue
        results.append(VariantGate(vid, vec.total_coa, vec.total_coa >= msv))
    return GateReport(msv, results)


# -- evidence-driven exclusion ----------------------------------------------------

@dataclass
class ExclusionResult:
    graph: AttackGraph
    excluded: dict[str, Evidence]
    ignored: list[Evidence] = field(default_factory=list)


def _contradicts(g: AttackGraph, ev: Evidence, vid: str, threshold: float) -> bool:
    node = g.nodes.get(ev.subject_id)
    if ev.kind is EvidenceKind.ElementObserved:
        return vid not in node.variant_labels
    if ev.kind is EvidenceKind.ElementAbsent:
        if vid not in node.variant_labels or node.variant_labels >= set(g.variant_ids):
            return False
        if ev.via is None:
            return True
        return vid in g.edges.get((ev.via, ev.subject_id), frozenset())
    if ev.kind is EvidenceKind.IdentityMatch:
        if ev.identity is None or ev.confidence < threshold or vid not in node.variant_labels:
            return False
        hint = node.hints.get(vid)
        if hint is None:
            return False
        ident = ev.identity
        return not hint.same_identity(ProductHint(ident.vendor, ident.product, ident.version))
    return False


def exclude_variants(g: AttackGraph, evidence: Sequence[Evidence],
                     threshold: float = DEFAULT_IDENTITY_THRESHOLD) -> ExclusionResult:
    """Drop variants contradicted by evidence; the first contradicting item is kept as justification.

    * ElementObserved(e) rules out variants without e.
    * ElementAbsent(e) rules out variants holding e, provided e is not common to
      all variants and, when ``via`` is given, e sits next to ``via`` in that variant.
    * IdentityMatch(e) with confidence >= threshold rules out variants whose
      product hint for e disagrees.
    """
    excluded: dict[str, Evidence] = {}
    ignored = []
    for ev in evidence:
        if ev.subject_id not in g.nodes:
            ignored.append(ev)
            continue
        for vid in g.variant_ids:
            if vid not in excluded and _contradicts(g, ev, vid, threshold):
                excluded[vid] = ev
    if len(excluded) == len(g.variant_ids) and g.variant_ids:
        log.warning("evidence contradicts every variant; the model set is likely incomplete")
    ordered = {vid: excluded[vid] for vid in g.variant_ids if vid in excluded}
    return ExclusionResult(_prune(g, set(ordered)), ordered, ignored)


def _prune(g: AttackGraph, drop: set) -> AttackGraph:
    if not drop:
        return g
    nodes = {}
    for nid, node in g.nodes.items():
        keep = node.variant_labels - drop
        if keep:
            nodes[nid] = AttackNode(
                nid,
                {v: c for v, c in node.coa_by_variant.items() if v in keep},
                keep,
                node.matched_vuln_ids,
                node.is_entry,
                {v: h for v, h in node.hints.items() if v in keep},
            )
    edges = {k: labels - drop for k, labels in g.edges.items() if labels - drop}
    return AttackGraph(nodes, edges, frozenset(e for e in g.entry_node_ids if e in nodes),
                       g.target_id, tuple(v for v in g.variant_ids if v not in drop))


# -- rendering -------------------------------------------------------------------

def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _dot_id(text: str) -> str:
    return '"' + _escape(text) + '"'


def _variant_text(labels, order) -> str:
    return "{" + ",".join(sorted(labels, key=_order_key(order))) + "}"


def export_dot(g: AttackGraph) -> str:
    """Deterministic Graphviz text; node labels read ``id / coa / {variants}``."""
    order = g.variant_ids
    lines = ["digraph attack_graph {", "  rankdir=LR;", "  node [shape=ellipse];"]
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        if node.uniform_coa:
            coa = str(node.coa)
        else:
            coa = " ".join(f"{v}:{node.coa_by_variant[v]}" for v in sorted(node.coa_by_variant, key=_order_key(order)))
        label = "\\n".join(_escape(p) for p in (nid, coa, _variant_text(node.variant_labels, order)))
        attrs = [f'label="{label}"']
        if node.is_entry:
            attrs.insert(0, "shape=box")
        elif nid == g.target_id:
            attrs.insert(0, "shape=doublecircle")
        lines.append(f"  {_dot_id(nid)} [{', '.join(attrs)}];")
    for (a, b) in sorted(g.edges):
        lines.append(f"  {_dot_id(a)} -> {_dot_id(b)} [label={_dot_id(_variant_text(g.edges[(a, b)], order))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
