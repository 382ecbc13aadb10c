"""Random SUT fixtures for property tests and experiment scripts."""
from __future__ import annotations

import random

from .campaign import SimulatedSut
from .model import (
    BusKind,
    Component,
    ComponentKind,
    EntryInterface,
    InterfaceKind,
    NetworkSegment,
    ProductHint,
    SutModel,
    VariantSet,
)
from .vulndb import AffectedProduct, VulnRecord, VulnStore


def random_variant_set(rng: random.Random, n_variants: int = 3, pool: int = 6) -> VariantSet:
    """Variants over a shared component pool; every variant has host ``h`` and target ``t``."""
    optional = [f"c{i}" for i in range(pool)]
    variants = []
    for v in range(n_variants):
        comps = ["h"] + sorted(rng.sample(optional, rng.randint(1, pool))) + ["t"]
        n_segs = rng.randint(1, 4)
        seg_members: dict[str, set] = {f"s{j}": set() for j in range(n_segs)}
        for c in comps:
            for s in rng.sample(sorted(seg_members), rng.randint(1, min(2, n_segs))):
                seg_members[s].add(c)
        for s, m in seg_members.items():
            if len(m) == 1:  # no lonely members
                m.add(rng.choice([c for c in comps if c not in m]))
        seg_members = {s: m for s, m in seg_members.items() if m}
        components = []
        for c in comps:
            hint = ProductHint("acme", f"p-{c}", rng.choice(["1.0", "2.0"])) if rng.random() < 0.8 else None
            kind = ComponentKind.Gateway if c == "h" else ComponentKind.Ecu
            components.append(Component(c, kind, frozenset(s for s, m in seg_members.items() if c in m), hint))
        variants.append(SutModel(
            model_id=f"V{v}",
            components=tuple(components),
            segments=tuple(NetworkSegment(s, BusKind.Can, frozenset(m)) for s, m in sorted(seg_members.items())),
            entry_interfaces=(EntryInterface("obd", "h", InterfaceKind.ObdII),),
            target_candidates=frozenset({"t"}),
        ))
    return VariantSet(tuple(variants))


def random_store(rng: random.Random, vs: VariantSet) -> VulnStore:
    products = sorted({c.product_hint.product for v in vs.variants for c in v.components if c.product_hint})
    records = []
    for i, product in enumerate(products):
        lo, hi = rng.choice([("1.0", "2.0"), ("2.0", "3.0"), ("1.0", "3.0")])
        records.append(VulnRecord(f"CVE-R-{i:03d}", round(rng.uniform(6.0, 10.0), 1),
                                  (AffectedProduct("acme", product, lo, hi),)))
    return VulnStore.from_records(records, source="synthetic")


def random_sut(rng: random.Random, vs: VariantSet) -> SimulatedSut:
    true = rng.choice(vs.variants)
    comps = sorted(true.component_map)
    exploitable = {c for c in comps if rng.random() < 0.5}
    return SimulatedSut.from_variant(true, exploitable)
