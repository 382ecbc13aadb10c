"""Component fingerprinting from traces and signal samples.

Covers clock-skew estimation from periodic message arrivals, statistical
signal features, signature-database matching, combinatorial probe planning
and before/after delta reports for controlled updates.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import (
    EmptyObservation,
    EmptySeries,
    InsufficientSamples,
    InvalidStrength,
    ParseError,
    ValidationError,
    ZeroPeriod,
)
from .textfmt import format_decl, parse_decls

MIN_SKEW_SAMPLES = 10

FEATURE_NAMES = ("mean", "stddev", "mean_abs_dev", "skewness", "excess_kurtosis", "rms", "min", "max")
SKEW_FEATURE = "skew_ppm"


# -- traces -----------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    timestamp: float
    arbitration_id: int
    payload: bytes = b""


@dataclass(frozen=True)
class MessageTrace:
    records: tuple[TraceRecord, ...]

    def __post_init__(self):
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.timestamp < prev.timestamp:
                raise ValidationError(f"timestamps decrease at t={cur.timestamp}")
        for r in self.records:
            if len(r.payload) > 8:
                raise ValidationError(f"payload longer than 8 bytes at t={r.timestamp}")

    @classmethod
    def from_arrivals(cls, arrivals: Sequence[float], arbitration_id: int = 0) -> "MessageTrace":
        return cls(tuple(TraceRecord(float(t), arbitration_id) for t in arrivals))


def parse_trace(text: str, source: str = "<string>") -> MessageTrace:
    """Read ``timestamp arbitrationId payloadHex`` lines (candump-like).

    ``(1600000000.123) can0 123#DEADBEEF`` lines are accepted as well.
    """
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("(") else raw.strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0].startswith("("):
                ts = float(parts[0].strip("()"))
                arb_hex, _, data_hex = parts[2].partition("#")
                arb = int(arb_hex, 16)
            else:
                ts = float(parts[0])
                arb = int(parts[1], 0) if parts[1].lower().startswith("0x") else int(parts[1], 16)
                data_hex = parts[2] if len(parts) > 2 else ""
            payload = bytes.fromhex(data_hex)
        except (IndexError, ValueError) as exc:
            raise ParseError(f"bad trace record ({exc})", source, lineno, 1) from None
        records.append(TraceRecord(ts, arb, payload))
    try:
        return MessageTrace(tuple(records))
    except ValidationError as exc:
        raise ParseError(str(exc), source) from None


def load_trace(path) -> MessageTrace:
    path = Path(path)
    return parse_trace(path.read_text(encoding="utf-8"), str(path))


# -- clock skew -------------------------------------------------------------

@dataclass(frozen=True)
class ClockSkewEstimate:
    skew_ppm: float
    residual_rms: float
    sample_count: int


def estimate_clock_skew(trace: MessageTrace, arbitration_id: int,
                        nominal_period: float | None = None) -> ClockSkewEstimate:
    """Clock skew of the sender of ``arbitration_id`` in ppm.

    Offsets ``e_i = a_i - (a_0 + i*T)`` are regressed on ideal elapsed time
    ``i*T``; the slope times 1e6 is the skew. Without ``nominal_period`` the
    median inter-arrival time is used for T.
    """
    arrivals = [r.timestamp for r in trace.records if r.arbitration_id == arbitration_id]
    n = len(arrivals)
    if n < MIN_SKEW_SAMPLES:
        raise InsufficientSamples(
            f"need >= {MIN_SKEW_SAMPLES} records with id 0x{arbitration_id:x}, got {n}")
    if nominal_period is None:
        period = statistics.median(b - a for a, b in zip(arrivals, arrivals[1:]))
    else:
        period = float(nominal_period)
    if not period > 0:
        raise ZeroPeriod(f"period must be > 0, got {period}")

    a0 = arrivals[0]
    xs = [i * period for i in range(n)]
    # subtract a0 first: keeps absolute epoch timestamps from swamping the offsets
    es = [(a - a0) - x for a, x in zip(arrivals, xs)]
    x_mean = math.fsum(xs) / n
    e_mean = math.fsum(es) / n
    sxx = math.fsum((x - x_mean) ** 2 for x in xs)
    sxe = math.fsum((x - x_mean) * (e - e_mean) for x, e in zip(xs, es))
    slope = sxe / sxx
    intercept = e_mean - slope * x_mean
    rss = math.fsum((e - (intercept + slope * x)) ** 2 for x, e in zip(xs, es))
    return ClockSkewEstimate(slope * 1e6, math.sqrt(rss / n), n)


# -- signal features --------------------------------------------------------

@dataclass(frozen=True)
class SignalSampleSeries:
    values: tuple[float, ...]
    sample_rate: float = 0.0


@dataclass(frozen=True)
class FeatureVector:
    mean: float
    stddev: float
    mean_abs_dev: float
    skewness: float
    excess_kurtosis: float
    rms: float
    min: float
    max: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def extract_features(series) -> FeatureVector:
    """Population moments of a voltage sample series.

    Skewness and excess kurtosis are 0 for a constant signal.
    """
    values = list(series.values if isinstance(series, SignalSampleSeries) else series)
    if not values:
        raise EmptySeries("cannot extract features from an empty series")
    n = len(values)
    lo, hi = min(values), max(values)
    if lo == hi:
        return FeatureVector(lo, 0.0, 0.0, 0.0, 0.0, abs(lo), lo, hi)
    mean = min(max(math.fsum(values) / n, lo), hi)
    devs = [v - mean for v in values]
    # standardized moments are scale free; normalise by the range so tiny spreads don't underflow
    span = hi - lo
    z = [d / span for d in devs]
    z2 = math.fsum(x * x for x in z) / n
    if z2 == 0:
        skew = kurt = 0.0
    else:
        skew = (math.fsum(x ** 3 for x in z) / n) / z2 ** 1.5
        kurt = (math.fsum(x ** 4 for x in z) / n) / (z2 * z2) - 3.0
    return FeatureVector(
        mean=mean,
        stddev=math.sqrt(z2) * span,
        mean_abs_dev=math.fsum(abs(d) for d in devs) / n,
        skewness=skew,
        excess_kurtosis=kurt,
        rms=math.sqrt(math.fsum(v * v for v in values) / n),
        min=lo,
        max=hi,
    )


def load_samples(path) -> SignalSampleSeries:
    path = Path(path)
    values = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        for tok in raw.split("#", 1)[0].replace(",", " ").split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ParseError(f"not a number: {tok!r}", str(path), lineno) from None
    return SignalSampleSeries(tuple(values))


# -- signature matching -----------------------------------------------------

@dataclass(frozen=True)
class Identity:
    vendor: str
    product: str
    version: str

    def key(self) -> tuple[str, str, str]:
        return (self.vendor, self.product, self.version)

    def __str__(self):
        return f"{self.vendor}:{self.product}:{self.version}"


@dataclass(frozen=True)
class Signature:
    identity: Identity
    feature_ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    skew_range_ppm: tuple[float, float] | None = None

    def intervals(self) -> dict[str, tuple[float, float]]:
        out = dict(self.feature_ranges)
        if self.skew_range_ppm is not None:
            out[SKEW_FEATURE] = self.skew_range_ppm
        return out


@dataclass(frozen=True)
class SignatureDb:
    entries: tuple[Signature, ...] = ()

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.identity.key() in seen:
                raise ValidationError(f"duplicate signature identity {e.identity}")
            seen.add(e.identity.key())
            for name, (lo, hi) in e.intervals().items():
                if lo > hi:
                    raise ValidationError(f"{e.identity}: interval {name} has lo > hi")


def _parse_interval(text: str) -> tuple[float, float]:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ValueError(f"interval must be lo..hi, got {text!r}")
    return float(lo), float(hi)


def parse_signature_db(text: str, source: str = "<string>") -> SignatureDb:
    """``signature vendor=.. product=.. version=.. skew_ppm=190..210 mean=1.0..2.5``"""
    entries = []
    for decl in parse_decls(text, source):
        if decl.directive != "signature":
            raise decl.error(f"unknown directive {decl.directive!r}")
        attrs = dict(decl.attrs)
        try:
            ident = Identity(attrs.pop("vendor"), attrs.pop("product"), attrs.pop("version"))
        except KeyError as exc:
            raise decl.error(f"signature missing {exc.args[0]}=") from None
        skew = None
        ranges = {}
        for key, raw in attrs.items():
            try:
                interval = _parse_interval(raw)
            except ValueError as exc:
                raise decl.error(str(exc)) from None
            if key == SKEW_FEATURE:
                skew = interval
            elif key in FEATURE_NAMES:
                ranges[key] = interval
            else:
                raise decl.error(f"unknown feature {key!r}")
        entries.append(Signature(ident, ranges, skew))
    try:
        return SignatureDb(tuple(entries))
    except ValidationError as exc:
        raise ParseError(str(exc), source) from None


def load_signature_db(path) -> SignatureDb:
    path = Path(path)
    return parse_signature_db(path.read_text(encoding="utf-8"), str(path))


@dataclass(frozen=True)
class SignatureMatch:
    identity: Identity
    score: float


def _observed_values(features: FeatureVector | Mapping[str, float] | None,
                     skew: ClockSkewEstimate | float | None) -> dict[str, float]:
    obs: dict[str, float] = {}
    if isinstance(features, FeatureVector):
        obs.update(features.as_dict())
    elif features:
        obs.update({k: float(v) for k, v in features.items() if k in FEATURE_NAMES})
    if isinstance(skew, ClockSkewEstimate):
        obs[SKEW_FEATURE] = skew.skew_ppm
    elif skew is not None:
        obs[SKEW_FEATURE] = float(skew)
    return {k: v for k, v in obs.items() if not math.isnan(v)}


def match_signature(db: SignatureDb, features=None, skew=None) -> list[SignatureMatch]:
    """Rank database identities by the fraction of their intervals the observation falls in.

    Only intervals for which the observation carries a value are scored.
    Ties go to the narrower (more specific) signature, then to the identity.
    """
    obs = _observed_values(features, skew)
    if not obs:
        raise EmptyObservation("observation carries no usable feature")
    ranked = []
    for entry in db.entries:
        comparable = {k: iv for k, iv in entry.intervals().items() if k in obs}
        if not comparable:
            continue
        hits = sum(1 for k, (lo, hi) in comparable.items() if lo <= obs[k] <= hi)
        if hits == 0:
            continue
        width = math.fsum(hi - lo for lo, hi in comparable.values())
        ranked.append((-hits / len(comparable), width, entry.identity.key(), entry.identity))
    ranked.sort(key=lambda r: r[:3])
    return [SignatureMatch(ident, -neg) for neg, _, _, ident in ranked]


# -- probe planning ---------------------------------------------------------

@dataclass(frozen=True)
class ProbeParameter:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise InvalidStrength(f"parameter {self.name!r} has an empty domain")


@dataclass(frozen=True)
class ProbePlan:
    parameters: tuple[ProbeParameter, ...]
    strength: int
    rows: tuple[tuple, ...]

    def as_dicts(self) -> list[dict]:
        names = [p.name for p in self.parameters]
        return [dict(zip(names, row)) for row in self.rows]


def _row_tuples(row_idx: tuple[int, ...], combos) -> list:
    return [(cols, tuple(row_idx[c] for c in cols)) for cols in combos]


MAX_CANDIDATE_ROWS = 200_000


def generate_probe_plan(parameters: Sequence[ProbeParameter], t: int) -> ProbePlan:
    """Greedy t-way covering array over the parameter domains.

    Each step adds the full assignment covering the most still-uncovered
    t-tuples; ties go to the lexicographically smallest row (by domain order).
    """
    parameters = tuple(parameters)
    k = len(parameters)
    if not isinstance(t, int) or t < 1 or t > k:
        raise InvalidStrength(f"strength must be in 1..{k}, got {t}")
    sizes = [len(p.values) for p in parameters]
    if math.prod(sizes) > MAX_CANDIDATE_ROWS:
        raise InvalidStrength(f"candidate space {math.prod(sizes)} too large for greedy search")
    combos = list(itertools.combinations(range(k), t))
    uncovered = set()
    for cols in combos:
        for vals in itertools.product(*(range(sizes[c]) for c in cols)):
            uncovered.add((cols, vals))
    candidates = list(itertools.product(*(range(s) for s in sizes)))
    rows = []
    while uncovered:
        best, best_gain = None, 0
        for cand in candidates:
            gain = sum(1 for tup in _row_tuples(cand, combos) if tup in uncovered)
            if gain > best_gain:
                best, best_gain = cand, gain
        uncovered.difference_update(_row_tuples(best, combos))
        rows.append(best)
    return ProbePlan(
        parameters,
        t,
        tuple(tuple(parameters[i].values[j] for i, j in enumerate(row)) for row in rows),
    )


def parse_probe_parameters(text: str, source: str = "<string>") -> list[ProbeParameter]:
    """``param name=dlc values=0,4,8`` lines."""
    params = []
    for decl in parse_decls(text, source):
        if decl.directive != "param" or "name" not in decl.attrs or "values" not in decl.attrs:
            raise decl.error("expected 'param name=... values=a,b,c'")
        params.append(ProbeParameter(decl.attrs["name"],
                                     tuple(v for v in decl.attrs["values"].split(",") if v)))
    return params


# -- evidence and delta reports ---------------------------------------------

class EvidenceKind(str, enum.Enum):
    IdentityMatch = "IdentityMatch"
    ElementObserved = "ElementObserved"
    ElementAbsent = "ElementAbsent"


class EvidenceSource(str, enum.Enum):
    Fingerprint = "Fingerprint"
    AttackOutcome = "AttackOutcome"


@dataclass(frozen=True)
class Evidence:
    """One observation about the SUT.

    ``via`` names the element the observer stood on when it saw (or failed to
    see) ``subject_id``; ElementAbsent is only conclusive for variants in which
    the subject is adjacent to ``via``.
    """

    kind: EvidenceKind
    subject_id: str
    identity: Identity | None = None
    confidence: float = 1.0
    source: EvidenceSource = EvidenceSource.Fingerprint
    via: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "subject": self.subject_id,
            "identity": str(self.identity) if self.identity else None,
            "confidence": self.confidence,
            "source": self.source.value,
            "via": self.via,
        }


# A fingerprint report maps subject id -> feature name -> value.
FingerprintReport = Mapping[str, Mapping[str, float]]


@dataclass
class FingerprintDelta:
    added: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    changed: dict[str, list[str]] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.changed)

    def to_dict(self) -> dict:
        return {"added": self.added, "removed": self.removed, "changed": self.changed}


def diff_fingerprints(before: FingerprintReport, after: FingerprintReport,
                      tolerance: float | Mapping[str, float] = 1e-9) -> FingerprintDelta:
    delta = FingerprintDelta()
    delta.added = sorted(set(after) - set(before))
    delta.removed = sorted(set(before) - set(after))
    for subject in sorted(set(before) & set(after)):
        b, a = before[subject], after[subject]
        moved = []
        for feat in sorted(set(b) | set(a)):
            eps = tolerance.get(feat, 1e-9) if isinstance(tolerance, Mapping) else tolerance
            if feat not in a or feat not in b or abs(a[feat] - b[feat]) > eps:
                moved.append(feat)
        if moved:
            delta.changed[subject] = moved
    return delta


def load_fingerprint_report(path) -> dict[str, dict[str, float]]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, str(path), exc.lineno, exc.colno) from None
    return {str(k): {str(f): float(v) for f, v in feats.items()} for k, feats in data.items()}
