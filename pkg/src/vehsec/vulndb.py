"""Vulnerability records, feed parsing and severity-to-cost conversion."""
from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import urllib.request
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import OutOfRange, ParseError, SchemaError, ValidationError
from .model import Component, SutModel, VariantSet, is_version
from .textfmt import format_decl, parse_decls

log = logging.getLogger(__name__)

CACHE_ENV_VAR = "VEHSEC_CACHE_DIR"
DEFAULT_COA_SCALE = 10.0
DEFAULT_COA = 100


def parse_version(text: str) -> tuple[int, ...]:
    """Dotted version as a comparable tuple, zero-padded to 4 parts ("2" == "2.0")."""
    if not is_version(text):
        raise ValueError(f"bad version {text!r}")
    parts = [int(p) for p in text.split(".")]
    return tuple(parts + [0] * (4 - len(parts)))


@dataclass(frozen=True)
class AffectedProduct:
    vendor: str
    product: str
    min_inclusive: str | None = "0"
    max_exclusive: str | None = None
    exact: str | None = None

    def __post_init__(self):
        for v in (self.min_inclusive, self.max_exclusive, self.exact):
            if v is not None:
                parse_version(v)

    def contains(self, version: str) -> bool:
        v = parse_version(version)
        if self.exact is not None:
            return v == parse_version(self.exact)
        if self.min_inclusive is not None and v < parse_version(self.min_inclusive):
            return False
        if self.max_exclusive is not None and v >= parse_version(self.max_exclusive):
            return False
        return True

    def key(self) -> tuple[str, str]:
        return (self.vendor.lower(), self.product.lower())


@dataclass(frozen=True)
class VulnRecord:
    vuln_id: str
    cvss_base: float
    affected: tuple[AffectedProduct, ...]
    summary: str = ""

    def __post_init__(self):
        if not self.vuln_id:
            raise ValidationError("vulnerability id is empty")
        if not 0.0 <= self.cvss_base <= 10.0:
            raise ValidationError(f"{self.vuln_id}: cvss {self.cvss_base} outside [0, 10]")
        if not self.affected:
            raise ValidationError(f"{self.vuln_id}: no affected products")


@dataclass(frozen=True)
class MatchedVuln:
    component_id: str
    vuln_id: str
    cvss_base: float
    coa: int


def coa_from_cvss(cvss_base: float, scale: float = DEFAULT_COA_SCALE) -> int:
    """Cost of attack: ``max(1, round_half_up((10 - cvss) * scale))``.

    Decimal arithmetic keeps e.g. 7.7 -> 23 free of binary rounding surprises.
    """
    if not 0.0 <= cvss_base <= 10.0:
        raise OutOfRange(f"cvss {cvss_base} outside [0, 10]")
    raw = (Decimal(10) - Decimal(repr(float(cvss_base)))) * Decimal(repr(float(scale)))
    return max(1, int(raw.quantize(Decimal(1), rounding=ROUND_HALF_UP)))


# -- parsing -----------------------------------------------------------------

def _parse_native(text: str, source: str, diagnostics: list[str]) -> list[VulnRecord]:
    blocks: list[tuple[dict, list[dict], int]] = []
    for decl in parse_decls(text, source):
        if decl.directive == "vuln":
            blocks.append((dict(decl.attrs), [], decl.line))
        elif decl.directive == "affects":
            if not blocks:
                raise decl.error("'affects' before any 'vuln' block")
            blocks[-1][1].append(dict(decl.attrs, _line=decl.line))
        else:
            raise decl.error(f"unknown directive {decl.directive!r}")
    records = []
    for attrs, affects, line in blocks:
        where = f"{source}:{line}"
        try:
            if not attrs.get("id"):
                raise SchemaError("missing id")
            if "cvss" not in attrs:
                raise SchemaError("missing cvss")
            affected = []
            for a in affects:
                if "vendor" not in a or "product" not in a:
                    raise SchemaError(f"affects on line {a['_line']} missing vendor/product")
                if "version" in a:
                    affected.append(AffectedProduct(a["vendor"], a["product"], None, None, a["version"]))
                else:
                    affected.append(AffectedProduct(a["vendor"], a["product"],
                                                    a.get("min", "0"), a.get("max")))
            records.append(VulnRecord(attrs["id"], float(attrs["cvss"]), tuple(affected),
                                      attrs.get("summary", "")))
        except (SchemaError, ValidationError, ValueError) as exc:
            diagnostics.append(f"{where}: skipped record: {exc}")
    return records


def _cpe_product(cpe: Mapping) -> AffectedProduct | None:
    parts = str(cpe.get("criteria", "")).split(":")
    if len(parts) < 6 or parts[0] != "cpe":
        raise SchemaError(f"unparseable cpe criteria {cpe.get('criteria')!r}")
    vendor, product, version = parts[3], parts[4], parts[5]
    if "versionStartExcluding" in cpe or "versionEndIncluding" in cpe:
        return None
    if version not in ("*", "-", ""):
        return AffectedProduct(vendor, product, None, None, version)
    return AffectedProduct(vendor, product, cpe.get("versionStartIncluding", "0"),
                           cpe.get("versionEndExcluding"))


def _cvss31(cve: Mapping) -> float:
    metrics = cve.get("metrics", {}).get("cvssMetricV31") or []
    if not metrics:
        raise SchemaError("no cvssMetricV31 entry")
    primary = [m for m in metrics if m.get("type") == "Primary"] or metrics
    return float(primary[0]["cvssData"]["baseScore"])


def _parse_nvd(text: str, source: str, diagnostics: list[str]) -> list[VulnRecord]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, source, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict) or "vulnerabilities" not in doc:
        raise SchemaError(f"{source}: NVD document lacks 'vulnerabilities'")
    records = []
    for idx, item in enumerate(doc["vulnerabilities"]):
        cve = item.get("cve", {}) if isinstance(item, dict) else {}
        where = f"{source}: vulnerabilities[{idx}]"
        try:
            vuln_id = cve.get("id")
            if not vuln_id:
                raise SchemaError("missing id")
            affected = []
            for conf in cve.get("configurations", []):
                for node in conf.get("nodes", []):
                    for cpe in node.get("cpeMatch", []):
                        if cpe.get("vulnerable", True) is False:
                            continue
                        prod = _cpe_product(cpe)
                        if prod is None:
                            diagnostics.append(f"{where}: {vuln_id}: unsupported version bound kind ignored")
                        else:
                            affected.append(prod)
            summary = next((d.get("value", "") for d in cve.get("descriptions", [])
                            if d.get("lang") == "en"), "")
            records.append(VulnRecord(vuln_id, _cvss31(cve), tuple(affected), summary))
        except (SchemaError, ValidationError, ValueError, KeyError, TypeError) as exc:
            diagnostics.append(f"{where}: skipped record: {exc}")
    return records


def parse_feed_text(text: str, source: str = "<string>",
                    diagnostics: list[str] | None = None) -> list[VulnRecord]:
    diagnostics = diagnostics if diagnostics is not None else []
    n_before = len(diagnostics)
    if text.lstrip().startswith("{"):
        records = _parse_nvd(text, source, diagnostics)
    else:
        records = _parse_native(text, source, diagnostics)
    for d in diagnostics[n_before:]:
        log.warning(d)
    return records


def parse_feed(path, diagnostics: list[str] | None = None) -> list[VulnRecord]:
    """Read a native-format or NVD-JSON-2.0-subset feed.

    Malformed records are skipped and described in ``diagnostics``; only
    document-level problems raise.
    """
    path = Path(path)
    return parse_feed_text(path.read_text(encoding="utf-8"), str(path), diagnostics)


def serialize_feed(records: Iterable[VulnRecord]) -> str:
    blocks = []
    for r in sorted(records, key=lambda r: r.vuln_id):
        attrs = [("id", r.vuln_id), ("cvss", repr(r.cvss_base))]
        if r.summary:
            attrs.append(("summary", r.summary))
        lines = [format_decl("vuln", attrs)]
        for a in sorted(r.affected, key=lambda a: (a.vendor, a.product, a.exact or "", a.min_inclusive or "",
                                                   a.max_exclusive or "")):
            aattrs = [("vendor", a.vendor), ("product", a.product)]
            if a.exact is not None:
                aattrs.append(("version", a.exact))
            else:
                aattrs.append(("min", a.min_inclusive or "0"))
                if a.max_exclusive is not None:
                    aattrs.append(("max", a.max_exclusive))
            lines.append(format_decl("affects", aattrs))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


# -- store and matching --------------------------------------------------------

@dataclass(frozen=True)
class VulnStore:
    records: tuple[VulnRecord, ...] = ()
    source: str = ""
    fetched_at: str = ""
    index: Mapping[tuple[str, str], tuple[VulnRecord, ...]] = field(default_factory=dict, compare=False)

    @classmethod
    def from_records(cls, records: Iterable[VulnRecord], source: str = "", fetched_at: str = "") -> "VulnStore":
        records = tuple(sorted(records, key=lambda r: r.vuln_id))
        ids = [r.vuln_id for r in records]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValidationError(f"duplicate vulnerability ids: {', '.join(dupes)}")
        index: dict[tuple[str, str], list[VulnRecord]] = {}
        for r in records:
            for key in {a.key() for a in r.affected}:
                index.setdefault(key, []).append(r)
        return cls(records, source, fetched_at, {k: tuple(v) for k, v in index.items()})

    @classmethod
    def load(cls, paths: Sequence, diagnostics: list[str] | None = None) -> "VulnStore":
        records = []
        for p in paths:
            records.extend(parse_feed(p, diagnostics))
        stamp = max((_dt.datetime.fromtimestamp(Path(p).stat().st_mtime, _dt.timezone.utc) for p in paths),
                    default=None)
        return cls.from_records(records, ",".join(str(p) for p in paths),
                                stamp.isoformat() if stamp else "")

    def lookup(self, vendor: str, product: str) -> tuple[VulnRecord, ...]:
        return self.index.get((vendor.lower(), product.lower()), ())


def match_component(component: Component, store: VulnStore,
                    coa_scale: float = DEFAULT_COA_SCALE) -> list[MatchedVuln]:
    """Known vulnerabilities of a component, cheapest first.

    A component without a product hint is unidentified and matches nothing.
    """
    hint = component.product_hint
    if hint is None:
        return []
    matches = []
    for rec in store.lookup(hint.vendor, hint.product):
        if any(a.key() == (hint.vendor.lower(), hint.product.lower()) and a.contains(hint.version)
               for a in rec.affected):
            matches.append(MatchedVuln(component.id, rec.vuln_id, rec.cvss_base,
                                       coa_from_cvss(rec.cvss_base, coa_scale)))
    matches.sort(key=lambda m: (m.coa, m.vuln_id))
    return matches


@dataclass
class ModelMatches:
    matches: dict[str, list[MatchedVuln]]
    unidentified: list[str]


def match_model(model: SutModel, store: VulnStore, coa_scale: float = DEFAULT_COA_SCALE) -> ModelMatches:
    matches = {}
    unidentified = []
    for c in model.components:
        if c.product_hint is None:
            unidentified.append(c.id)
        matches[c.id] = match_component(c, store, coa_scale)
    return ModelMatches(matches, unidentified)


# Annotations: variant id -> component id -> matched vulnerabilities.
Annotations = Mapping[str, Mapping[str, Sequence[MatchedVuln]]]


def annotate_variants(vs: VariantSet, store: VulnStore, coa_scale: float = DEFAULT_COA_SCALE) -> dict:
    return {v.variant_id: match_model(v, store, coa_scale).matches for v in vs.variants}


def node_coa(matches: Sequence[MatchedVuln], default_coa: int = DEFAULT_COA) -> int:
    """The attacker uses the cheapest exploit; unmatched components cost ``default_coa``."""
    return min((m.coa for m in matches), default=default_coa)


# -- optional fetcher ----------------------------------------------------------

def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV_VAR) or Path.home() / ".cache" / "vehsec")


def fetch_feed(url: str, dest_dir=None, timeout: float = 30.0) -> Path:
    """Download a feed into the cache directory; the core never needs this."""
    dest_dir = Path(dest_dir) if dest_dir else cache_dir()
    dest_dir.mkdir(parents=True, exist_ok=True)
    name = url.rstrip("/").rsplit("/", 1)[-1] or "feed"
    target = dest_dir / name
    tmp = target.with_suffix(target.suffix + ".part")
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        tmp.write_bytes(resp.read())
    tmp.replace(target)
    return target
