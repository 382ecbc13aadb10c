"""SUT topology models, variant sets and the ``.sutm`` file format.

A ``.sutm`` file holds one model (one variant)::

    model id=variant-I
    segment id=can1 bus=Can
    component id=gw kind=Gateway segments=can1,can2 vendor=acme product=gw version=1.2
    entry id=obd host=gw kind=ObdII
    target id=ecu1

Element identity across variants is purely by id.
"""
from __future__ import annotations

import enum
import itertools
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

from .errors import ParseError, ValidationError
from .textfmt import Decl, format_decl, parse_decls

log = logging.getLogger(__name__)

_VERSION_RE = re.compile(r"^\d+(\.\d+){0,3}$")


class ComponentKind(str, enum.Enum):
    Ecu = "Ecu"
    Gateway = "Gateway"
    Sensor = "Sensor"
    Infotainment = "Infotainment"
    ExternalInterfaceHost = "ExternalInterfaceHost"


class BusKind(str, enum.Enum):
    Can = "Can"
    Lin = "Lin"
    Flexray = "Flexray"
    AutomotiveEthernet = "AutomotiveEthernet"
    Wireless = "Wireless"
    Diagnostic = "Diagnostic"


class InterfaceKind(str, enum.Enum):
    Bluetooth = "Bluetooth"
    Wifi = "Wifi"
    Usb = "Usb"
    ObdII = "ObdII"
    V2x = "V2x"
    Cellular = "Cellular"
    Rfid = "Rfid"


def is_version(text: str) -> bool:
    return bool(_VERSION_RE.match(text))


@dataclass(frozen=True)
class ProductHint:
    vendor: str
    product: str
    version: str

    def same_identity(self, other: "ProductHint") -> bool:
        from .vulndb import parse_version

        return (
            self.vendor.lower() == other.vendor.lower()
            and self.product.lower() == other.product.lower()
            and parse_version(self.version) == parse_version(other.version)
        )


@dataclass(frozen=True)
class Component:
    id: str
    kind: ComponentKind
    segment_ids: frozenset = frozenset()
    product_hint: ProductHint | None = None


@dataclass(frozen=True)
class NetworkSegment:
    id: str
    bus_kind: BusKind
    member_ids: frozenset = frozenset()


@dataclass(frozen=True)
class EntryInterface:
    id: str
    host_component_id: str
    interface_kind: InterfaceKind


@dataclass(frozen=True)
class SutModel:
    model_id: str
    components: tuple[Component, ...]
    segments: tuple[NetworkSegment, ...]
    entry_interfaces: tuple[EntryInterface, ...]
    target_candidates: frozenset = frozenset()

    @cached_property
    def component_map(self) -> dict[str, Component]:
        return {c.id: c for c in self.components}

    @cached_property
    def segment_map(self) -> dict[str, NetworkSegment]:
        return {s.id: s for s in self.segments}

    @cached_property
    def entry_map(self) -> dict[str, EntryInterface]:
        return {e.id: e for e in self.entry_interfaces}

    @cached_property
    def element_ids(self) -> frozenset:
        return frozenset(self.component_map) | frozenset(self.segment_map) | frozenset(self.entry_map)

    @property
    def variant_id(self) -> str:
        return self.model_id


@dataclass(frozen=True)
class VariantSet:
    variants: tuple[SutModel, ...]

    def __post_init__(self):
        if not self.variants:
            raise ValidationError("variant set is empty")
        ids = [v.variant_id for v in self.variants]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValidationError(f"duplicate variant ids: {', '.join(dupes)}")

    @property
    def variant_ids(self) -> tuple[str, ...]:
        return tuple(v.variant_id for v in self.variants)

    def get(self, variant_id: str) -> SutModel:
        for v in self.variants:
            if v.variant_id == variant_id:
                return v
        raise KeyError(variant_id)

    def restrict(self, variant_ids: Iterable[str]) -> "VariantSet":
        keep = set(variant_ids)
        return VariantSet(tuple(v for v in self.variants if v.variant_id in keep))


@dataclass
class Adjacency:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    entries: tuple[tuple[str, str], ...]
    warnings: list[str] = field(default_factory=list)


_ALLOWED = {
    "model": {"id"},
    "segment": {"id", "bus"},
    "component": {"id", "kind", "segments", "vendor", "product", "version"},
    "entry": {"id", "host", "kind"},
    "target": {"id"},
}


def _enum_value(enum_cls, decl: Decl, key: str):
    raw = decl.attrs.get(key)
    if raw is None:
        raise decl.error(f"{decl.directive} missing {key}=")
    try:
        return enum_cls(raw)
    except ValueError:
        choices = ", ".join(m.value for m in enum_cls)
        raise decl.error(f"unknown {key} {raw!r} (expected one of {choices})") from None


def _split_ids(raw: str) -> list[str]:
    return [s for s in raw.split(",") if s]


def parse_model(text: str, source: str = "<string>", strict: bool = True,
                warnings: list[str] | None = None) -> SutModel:
    """Parse and fully validate ``.sutm`` text.

    Raises ParseError for syntax problems and ValidationError for semantic ones;
    never returns a partially valid model.
    """
    warnings = warnings if warnings is not None else []
    model_id = None
    raw_components: list[tuple[Decl, Component]] = []
    segments: list[tuple[Decl, str, BusKind]] = []
    entries: list[tuple[Decl, EntryInterface]] = []
    targets: list[tuple[Decl, str]] = []

    for decl in parse_decls(text, source):
        allowed = _ALLOWED.get(decl.directive)
        if allowed is None:
            msg = f"unknown directive {decl.directive!r}"
            if strict:
                raise decl.error(msg)
            warnings.append(f"{source}:{decl.line}: {msg} (ignored)")
            continue
        unknown = sorted(set(decl.attrs) - allowed)
        if unknown:
            msg = f"unknown key(s) {', '.join(unknown)} on {decl.directive}"
            if strict:
                raise decl.error(msg)
            warnings.append(f"{source}:{decl.line}: {msg} (ignored)")
        ident = decl.attrs.get("id")
        if not ident:
            raise decl.error(f"{decl.directive} missing id=")

        if decl.directive == "model":
            if model_id is not None:
                raise decl.error("model declared twice")
            model_id = ident
        elif decl.directive == "segment":
            segments.append((decl, ident, _enum_value(BusKind, decl, "bus")))
        elif decl.directive == "component":
            hint_keys = [k for k in ("vendor", "product", "version") if k in decl.attrs]
            hint = None
            if hint_keys:
                if len(hint_keys) != 3:
                    raise decl.error("product hint needs vendor=, product= and version= together")
                version = decl.attrs["version"]
                if not is_version(version):
                    raise decl.error(f"bad version {version!r} (1-4 dot-separated integers)")
                hint = ProductHint(decl.attrs["vendor"], decl.attrs["product"], version)
            comp = Component(
                ident,
                _enum_value(ComponentKind, decl, "kind"),
                frozenset(_split_ids(decl.attrs.get("segments", ""))),
                hint,
            )
            raw_components.append((decl, comp))
        elif decl.directive == "entry":
            host = decl.attrs.get("host")
            if not host:
                raise decl.error("entry missing host=")
            entries.append((decl, EntryInterface(ident, host, _enum_value(InterfaceKind, decl, "kind"))))
        elif decl.directive == "target":
            targets.append((decl, ident))

    if model_id is None:
        raise ParseError("missing 'model id=...' declaration", source)

    problems = []
    seen: dict[str, int] = {}
    for decl, ident in (
        [(d, i) for d, i, _ in segments]
        + [(d, c.id) for d, c in raw_components]
        + [(d, e.id) for d, e in entries]
    ):
        if ident in seen:
            problems.append(f"line {decl.line}: duplicate element id {ident!r} (first on line {seen[ident]})")
        else:
            seen[ident] = decl.line

    seg_ids = {i for _, i, _ in segments}
    comp_ids = {c.id for _, c in raw_components}
    members: dict[str, set] = {i: set() for i in seg_ids}
    for decl, comp in raw_components:
        for s in sorted(comp.segment_ids):
            if s not in seg_ids:
                problems.append(f"line {decl.line}: component {comp.id!r} references undeclared segment {s!r}")
            else:
                members[s].add(comp.id)
    for decl, ident, _ in segments:
        if not members[ident]:
            problems.append(f"line {decl.line}: segment {ident!r} has no member components")
    for decl, entry in entries:
        if entry.host_component_id not in comp_ids:
            problems.append(f"line {decl.line}: entry {entry.id!r} references unknown host {entry.host_component_id!r}")
    for decl, ident in targets:
        if ident not in comp_ids:
            problems.append(f"line {decl.line}: target {ident!r} is not a declared component")
    if not entries:
        problems.append("model declares no entry interface")
    if problems:
        raise ValidationError(f"{source}: " + "; ".join(problems))

    return SutModel(
        model_id=model_id,
        components=tuple(sorted((c for _, c in raw_components), key=lambda c: c.id)),
        segments=tuple(sorted(
            (NetworkSegment(i, kind, frozenset(members[i])) for _, i, kind in segments),
            key=lambda s: s.id,
        )),
        entry_interfaces=tuple(sorted((e for _, e in entries), key=lambda e: e.id)),
        target_candidates=frozenset(i for _, i in targets),
    )


def load_model(path, strict: bool = True, warnings: list[str] | None = None) -> SutModel:
    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), str(path), strict, warnings)


def load_variants(paths, strict: bool = True, warnings: list[str] | None = None) -> VariantSet:
    return VariantSet(tuple(load_model(p, strict, warnings) for p in paths))


def serialize_model(model: SutModel) -> str:
    """Canonical, byte-stable text for a model (elements sorted by id)."""
    lines = [format_decl("model", [("id", model.model_id)])]
    for s in sorted(model.segments, key=lambda s: s.id):
        lines.append(format_decl("segment", [("id", s.id), ("bus", s.bus_kind.value)]))
    for c in sorted(model.components, key=lambda c: c.id):
        attrs = [("id", c.id), ("kind", c.kind.value)]
        if c.segment_ids:
            attrs.append(("segments", ",".join(sorted(c.segment_ids))))
        if c.product_hint:
            h = c.product_hint
            attrs += [("vendor", h.vendor), ("product", h.product), ("version", h.version)]
        lines.append(format_decl("component", attrs))
    for e in sorted(model.entry_interfaces, key=lambda e: e.id):
        lines.append(format_decl("entry", [("id", e.id), ("host", e.host_component_id),
                                            ("kind", e.interface_kind.value)]))
    for t in sorted(model.target_candidates):
        lines.append(format_decl("target", [("id", t)]))
    return "\n".join(lines) + "\n"


def derive_adjacency(model: SutModel) -> Adjacency:
    """Undirected component graph: an edge joins two components sharing a segment."""
    edges = set()
    for seg in model.segments:
        for a, b in itertools.combinations(sorted(seg.member_ids), 2):
            edges.add((a, b))
    nodes = tuple(c.id for c in model.components)
    touched = {x for e in edges for x in e}
    warnings = []
    for c in model.components:
        if not c.segment_ids:
            warnings.append(f"isolated component {c.id!r} (on no segment)")
        elif c.id not in touched:
            warnings.append(f"isolated component {c.id!r} (no segment peers)")
    for w in warnings:
        log.info("%s: %s", model.model_id, w)
    entries = tuple(sorted((e.id, e.host_component_id) for e in model.entry_interfaces))
    return Adjacency(nodes, tuple(sorted(edges)), entries, warnings)


def difference_set(vs: VariantSet) -> frozenset:
    """Element ids not present in every variant."""
    id_sets = [v.element_ids for v in vs.variants]
    return frozenset().union(*id_sets) - frozenset.intersection(*id_sets)
