"""Clinical event-time case records: parsing, validation, filtering, synthesis.

A case record is an ordered list of (event text, timestamp) pairs plus an
optional binary risk label.  Timestamps are signed hours relative to hospital
admission (admission = 0, earlier events negative).  The interchange format is
line-delimited JSON, one case per line::

    {"id": "PMC10077184", "risk": 0, "events": [{"event": "depression", "t_hours": -672.0}, ...]}

``risk`` is 0 (low: symptom burden on quality of life), 1 (high: requiring
hospitalization, ICU stay or death), or null for unlabeled cases.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_PAIR_CAP = 150


class CaseParseError(ValueError):
    """A case file line could not be turned into a record."""


class CohortError(ValueError):
    """A cohort-level request was infeasible (e.g. empty cohort)."""


@dataclass(frozen=True)
class EventTime:
    event: str
    t_hours: float


@dataclass(frozen=True)
class CaseRecord:
    id: str
    events: tuple[EventTime, ...]
    risk: Optional[int] = None


@dataclass
class ValidationReport:
    case_id: str
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return not self.errors


def parse_case_file(data: bytes) -> list[CaseRecord]:
    """Parse line-delimited case JSON into records.

    Structural problems (bad JSON, wrong types, empty events, duplicate ids)
    raise :class:`CaseParseError` with the offending line number.  Domain
    violations such as an out-of-range risk are left for
    :func:`validate_case`, which treats them as data.
    """
    records: list[CaseRecord] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(data.decode("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CaseParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
        records.append(_record_from_obj(obj, line_no, seen))
    return records


def _record_from_obj(obj: object, line_no: int, seen: set[str]) -> CaseRecord:
    if not isinstance(obj, dict):
        raise CaseParseError(f"line {line_no}: expected an object, got {type(obj).__name__}")
    case_id = obj.get("id")
    if not isinstance(case_id, str) or not case_id:
        raise CaseParseError(f"line {line_no}: missing or empty 'id'")
    if case_id in seen:
        raise CaseParseError(f"line {line_no}: duplicate id '{case_id}'")
    seen.add(case_id)

    risk = obj.get("risk")
    if risk is not None and (isinstance(risk, bool) or not isinstance(risk, int)):
        raise CaseParseError(f"line {line_no}: 'risk' must be an integer or null")

    raw_events = obj.get("events")
    if not isinstance(raw_events, list):
        raise CaseParseError(f"line {line_no}: 'events' must be an array")
    if not raw_events:
        raise CaseParseError(f"line {line_no}: empty events")
    events = []
    for i, ev in enumerate(raw_events):
        if not isinstance(ev, dict) or not isinstance(ev.get("event"), str):
            raise CaseParseError(f"line {line_no}: event {i} must be an object with string 'event'")
        t = ev.get("t_hours")
        if isinstance(t, bool) or not isinstance(t, (int, float)):
            raise CaseParseError(f"line {line_no}: event {i} must carry a numeric 't_hours'")
        events.append(EventTime(event=ev["event"], t_hours=float(t)))
    return CaseRecord(id=case_id, events=tuple(events), risk=risk)


def serialize_cases(cases: Sequence[CaseRecord]) -> bytes:
    """Inverse of :func:`parse_case_file`; emits one JSON object per line."""
    lines = []
    for case in cases:
        obj = {
            "id": case.id,
            "risk": case.risk,
            "events": [{"event": e.event, "t_hours": e.t_hours} for e in case.events],
        }
        lines.append(json.dumps(obj, ensure_ascii=False))
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def validate_case(record: CaseRecord, pair_cap: int = DEFAULT_PAIR_CAP) -> ValidationReport:
    """Report every invariant violation on a record; violations are data, not failures."""
    report = ValidationReport(case_id=record.id)
    if not record.id.strip():
        report.errors.append("empty-id")
    if not record.events:
        report.errors.append("empty-events")
    for i, ev in enumerate(record.events):
        if not ev.event.strip():
            report.errors.append(f"empty-event-text (index {i})")
        if not math.isfinite(ev.t_hours):
            report.errors.append(f"non-finite-timestamp (index {i})")
    if record.risk is not None and record.risk not in (0, 1):
        report.errors.append(f"risk-out-of-range: {record.risk}")
    if len(record.events) > pair_cap:
        report.warnings.append(f"truncation: {len(record.events)} events exceed cap {pair_cap}")
    return report


def canonical_events(record: CaseRecord) -> tuple[EventTime, ...]:
    """Events sorted by timestamp ascending, stable on input order for ties.

    Every downstream consumer (featurization, importance naming) uses this
    order, so pair index p always refers to the p-th earliest event.
    """
    return tuple(sorted(record.events, key=lambda e: e.t_hours))


_WS = re.compile(r"\s+")


def filter_case_report_text(text: str) -> bool:
    """Corpus filter: keep documents that look like single-patient long-COVID case reports."""
    t = _WS.sub(" ", text.lower())
    return (
        ("case report" in t or "case presentation" in t)
        and ("year-old" in t or "year old" in t)
        and ("long covid" in t or "long-covid" in t)
    )


# Event vocabulary pools for the synthetic generator.  Low/high pools carry
# the class signal; shared events appear in both classes.
LOW_RISK_EVENTS = (
    "mild fatigue",
    "intermittent headache",
    "loss of smell",
    "mild brain fog",
    "outpatient follow-up",
    "returned to work",
    "mild anxiety",
    "improved sleep quality",
    "low-grade fever",
    "mild joint pain",
    "home rest advised",
    "symptoms improving",
)

HIGH_RISK_EVENTS = (
    "admitted to icu",
    "mechanical ventilation",
    "septic shock",
    "acute respiratory failure",
    "bilateral pneumonia",
    "vasopressor support",
    "intubation",
    "multi-organ dysfunction",
    "cardiac arrest",
    "emergency readmission",
    "severe hypoxemia",
    "prolonged hospitalization",
)

SHARED_EVENTS = (
    "female",
    "male",
    "persistent cough",
    "chest x-ray",
    "laboratory testing",
    "admitted to hospital",
    "shortness of breath",
    "physical examination",
    "chest computed tomography",
    "follow-up visit",
)


@dataclass(frozen=True)
class CohortSpec:
    """Configuration for the synthetic cohort generator.

    The cohort mixes two kinds of cases.  Prototypical cases are jittered
    copies of a few per-class template timelines dominated by class-pool
    events, giving the pool the redundancy real case-report corpora have.
    Subtle cases carry only a thin class-pool majority over shared-pool
    noise, so they sit near the decision boundary and are where labels are
    informative.
    """

    size: int
    balance: float = 0.5
    events_per_case: tuple[int, int] = (8, 12)
    t_range: tuple[float, float] = (-720.0, 720.0)
    vocab_low: tuple[str, ...] = LOW_RISK_EVENTS
    vocab_high: tuple[str, ...] = HIGH_RISK_EVENTS
    vocab_shared: tuple[str, ...] = SHARED_EVENTS
    subtle_fraction: float = 0.35
    subtle_majority: int = 2
    subtle_other: Optional[int] = None  # None: half the body minus the majority
    n_templates: int = 2
    id_prefix: str = "SYN"


def generate_synthetic_cohort(spec: CohortSpec, seed: int) -> list[CaseRecord]:
    """Deterministic labeled cohort whose labels correlate with event vocabulary.

    Cases are jittered copies of per-class template timelines (a timestamp
    shift plus one same-pool event swap per copy), so the cohort carries the
    cluster redundancy of a real corpus.  Prototypical templates are
    class-pool-heavy; subtle templates keep only a ``subtle_majority`` edge
    of class-pool events over opposite-pool events.  Every case anchors at
    an admission event (t = 0) and keeps a strict class-pool majority, so a
    bag-of-events linear model can separate the cohort.
    """
    if spec.size <= 0:
        raise CohortError("empty cohort: size must be positive")
    rng = np.random.default_rng(seed)

    n_high = int(round(spec.size * spec.balance))
    if spec.size >= 2 and 0.0 < spec.balance < 1.0:
        n_high = min(max(n_high, 1), spec.size - 1)
    labels = [1] * n_high + [0] * (spec.size - n_high)
    rng.shuffle(labels)

    n_subtle = int(round(spec.size * spec.subtle_fraction))
    subtle_flags = np.zeros(spec.size, dtype=bool)
    subtle_flags[rng.permutation(spec.size)[:n_subtle]] = True

    lo, hi = spec.events_per_case

    def pick(pool: tuple[str, ...]) -> str:
        return pool[int(rng.integers(len(pool)))]

    def draw_t() -> float:
        return float(rng.integers(int(spec.t_range[0]), int(spec.t_range[1]) + 1))

    def own_pool(label: int) -> tuple[str, ...]:
        return spec.vocab_high if label == 1 else spec.vocab_low

    def pool_for(tag: str, label: int) -> tuple[str, ...]:
        if tag == "own":
            return own_pool(label)
        if tag == "other":
            return own_pool(1 - label)
        return spec.vocab_shared

    # template bodies are (pool_tag, event, t) rows; jitter stays within the
    # row's pool so a copy's class-majority never flips
    def make_template(label: int, subtle: bool) -> list[tuple[str, str, float]]:
        n_events = int(rng.integers(lo, hi + 1))
        n_body = n_events - 1
        if subtle:
            if spec.subtle_other is None:
                n_own = min(
                    max((n_body + spec.subtle_majority) // 2, spec.subtle_majority), n_body
                )
                n_other = max(n_own - spec.subtle_majority, 0)
            else:
                n_other = min(spec.subtle_other, max(n_body - spec.subtle_majority, 0))
                n_own = min(n_other + spec.subtle_majority, n_body)
            tags = ["own"] * n_own + ["other"] * n_other + ["shared"] * (n_body - n_own - n_other)
        else:
            n_shared = max(1, n_body // 4)
            tags = ["own"] * (n_body - n_shared) + ["shared"] * n_shared
        return [(tag, pick(pool_for(tag, label)), draw_t()) for tag in tags]

    n_templates = max(spec.n_templates, 1)
    templates = {
        (label, subtle): [make_template(label, subtle) for _ in range(n_templates)]
        for label in (0, 1)
        for subtle in (False, True)
    }

    cases = []
    for i, (label, subtle) in enumerate(zip(labels, subtle_flags)):
        label = int(label)
        template = templates[(label, bool(subtle))][int(rng.integers(n_templates))]
        events = [EventTime("admitted to hospital", 0.0)]
        swap_at = int(rng.integers(len(template))) if template else -1
        for j, (tag, event, t) in enumerate(template):
            if j == swap_at:
                event = pick(pool_for(tag, label))
            events.append(EventTime(event, t + float(rng.integers(-24, 25))))
        cases.append(CaseRecord(id=f"{spec.id_prefix}-{i:04d}", events=tuple(events), risk=label))
    return cases
