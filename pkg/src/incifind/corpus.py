"""Data model for radiology reports, lesion findings, and labels.

The interchange format is line-delimited JSON, one report per line, with
stable snake_case field ordering so that ``load -> save`` is byte-identical.
Character offsets are Unicode code-point offsets into ``RadiologyReport.text``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .errors import (
    DuplicateLesionId,
    IoFailure,
    MalformedRecord,
    OverlappingSpans,
    UnknownEnumValue,
    UnknownLesion,
)

# Lesion labels: 0 = no incidentaloma, 1 = incidentaloma without risk,
# 2 = incidentaloma requiring follow-up.  The numeric order is meaningful:
# severity aggregation takes the max, vote ties break toward the lowest.
LABELS = (0, 1, 2)


def validate_label(value: int, field_name: str = "gold_label") -> int:
    if value not in LABELS:
        raise UnknownEnumValue(field_name, value)
    return value


class Anatomy(Enum):
    """The seven anatomy categories, in canonical serialization order."""

    LUNG = "lung"
    LIVER = "liver"
    KIDNEY = "kidney"
    ADRENAL = "adrenal"
    PANCREAS = "pancreas"
    THYROID = "thyroid"
    OTHER = "other"

    @property
    def display(self) -> str:
        return self.value.capitalize()


class SizeTrend(Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    NO_CHANGE = "no_change"
    DISAPPEARED = "disappeared"
    NEW = "new"
    ABSENT = "absent"  # the upstream extractor emitted no trend


class Assertion(Enum):
    PRESENT = "present"
    POSSIBLE = "possible"
    ABSENT = "absent"


class IndicationType(Enum):
    NEOPLASTIC_DIAGNOSIS = "neoplastic_diagnosis"
    NON_NEOPLASTIC_DIAGNOSIS = "non_neoplastic_diagnosis"
    SYMPTOM = "symptom"
    TRAUMA = "trauma"


def _parse_enum(enum_cls, value, field_name):
    try:
        return enum_cls(value)
    except ValueError:
        raise UnknownEnumValue(field_name, value) from None


@dataclass(frozen=True)
class LesionFinding:
    """One lesion mention with a character span and verified attributes."""

    lesion_id: str
    span_start: int
    span_end: int
    surface: str
    anatomy: Anatomy
    assertion: Assertion = Assertion.PRESENT
    size_trend: SizeTrend = SizeTrend.ABSENT
    gold_label: Optional[int] = None


@dataclass(frozen=True)
class ClinicalIndication:
    """The stated reason for the imaging study."""

    text: str
    indication_type: IndicationType
    anatomy: Optional[Anatomy] = None


@dataclass(frozen=True)
class RadiologyReport:
    report_id: str
    text: str
    lesions: tuple[LesionFinding, ...] = ()
    indications: tuple[ClinicalIndication, ...] = ()
    has_recommendation: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "lesions", tuple(self.lesions))
        object.__setattr__(self, "indications", tuple(self.indications))

    def lesion(self, lesion_id: str) -> LesionFinding:
        for les in self.lesions:
            if les.lesion_id == lesion_id:
                return les
        raise UnknownLesion(self.report_id, lesion_id)


@dataclass(frozen=True)
class AnatomyVector:
    """Report-level vector of seven anatomy labels in canonical order."""

    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(self.values)
        if len(vals) != len(Anatomy):
            raise ValueError(f"expected {len(Anatomy)} labels, got {len(vals)}")
        for v in vals:
            validate_label(v, "anatomy_vector")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mapping(cls, labels: Mapping[Anatomy, int]) -> "AnatomyVector":
        return cls(tuple(labels.get(a, 0) for a in Anatomy))

    def __getitem__(self, anatomy: Anatomy) -> int:
        return self.values[list(Anatomy).index(anatomy)]

    def to_dict(self) -> dict[str, int]:
        return {a.value: v for a, v in zip(Anatomy, self.values)}


def document_label(vector: AnatomyVector) -> int:
    """Reduce the seven anatomy labels to one document-level label (max)."""
    return max(vector.values)


# --- validation -----------------------------------------------------------

def validate_report(report: RadiologyReport) -> None:
    """Check span, overlap, and id invariants; raise a typed error on failure."""
    n = len(report.text)
    seen_ids = set()
    for les in report.lesions:
        if les.lesion_id in seen_ids:
            raise DuplicateLesionId(report.report_id, les.lesion_id)
        seen_ids.add(les.lesion_id)
        if not (0 <= les.span_start < les.span_end <= n):
            raise MalformedRecord(
                0,
                f"report {report.report_id}: lesion {les.lesion_id} span "
                f"[{les.span_start},{les.span_end}) out of bounds for text of length {n}",
            )
        if report.text[les.span_start : les.span_end] != les.surface:
            raise MalformedRecord(
                0,
                f"report {report.report_id}: lesion {les.lesion_id} surface "
                f"{les.surface!r} does not match text slice",
            )
        if les.gold_label is not None:
            validate_label(les.gold_label)
    ordered = sorted(report.lesions, key=lambda l: l.span_start)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.span_start < prev.span_end:
            raise OverlappingSpans(
                report.report_id, f"({prev.lesion_id}, {cur.lesion_id})"
            )
    for ind in report.indications:
        if not ind.text:
            raise MalformedRecord(
                0, f"report {report.report_id}: empty indication text"
            )


# --- interchange format ---------------------------------------------------

def report_to_dict(report: RadiologyReport) -> dict:
    return {
        "report_id": report.report_id,
        "text": report.text,
        "lesions": [
            {
                "lesion_id": l.lesion_id,
                "span_start": l.span_start,
                "span_end": l.span_end,
                "surface": l.surface,
                "anatomy": l.anatomy.value,
                "assertion": l.assertion.value,
                "size_trend": l.size_trend.value,
                "gold_label": l.gold_label,
            }
            for l in report.lesions
        ],
        "indications": [
            {
                "text": i.text,
                "indication_type": i.indication_type.value,
                "anatomy": i.anatomy.value if i.anatomy is not None else None,
            }
            for i in report.indications
        ],
        "has_recommendation": report.has_recommendation,
    }


def report_from_dict(obj: dict, line: int = 0) -> RadiologyReport:
    if not isinstance(obj, dict):
        raise MalformedRecord(line, "record is not a JSON object")
    try:
        report_id = obj["report_id"]
        text = obj["text"]
        raw_lesions = obj.get("lesions", [])
        raw_inds = obj.get("indications", [])
    except KeyError as exc:
        raise MalformedRecord(line, f"missing field {exc.args[0]!r}") from None
    if not isinstance(report_id, str) or not isinstance(text, str):
        raise MalformedRecord(line, "report_id and text must be strings")

    lesions = []
    for raw in raw_lesions:
        try:
            gold = raw.get("gold_label")
            lesions.append(
                LesionFinding(
                    lesion_id=str(raw["lesion_id"]),
                    span_start=int(raw["span_start"]),
                    span_end=int(raw["span_end"]),
                    surface=str(raw["surface"]),
                    anatomy=_parse_enum(Anatomy, raw["anatomy"], "anatomy"),
                    assertion=_parse_enum(Assertion, raw["assertion"], "assertion"),
                    size_trend=_parse_enum(SizeTrend, raw["size_trend"], "size_trend"),
                    gold_label=None if gold is None else validate_label(int(gold)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(line, f"bad lesion record: {exc}") from None
    indications = []
    for raw in raw_inds:
        try:
            anat = raw.get("anatomy")
            indications.append(
                ClinicalIndication(
                    text=str(raw["text"]),
                    indication_type=_parse_enum(
                        IndicationType, raw["indication_type"], "indication_type"
                    ),
                    anatomy=None if anat is None else _parse_enum(Anatomy, anat, "anatomy"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise MalformedRecord(line, f"bad indication record: {exc}") from None

    has_rec = obj.get("has_recommendation")
    if has_rec is not None and not isinstance(has_rec, bool):
        raise MalformedRecord(line, "has_recommendation must be a boolean or null")
    return RadiologyReport(
        report_id=report_id,
        text=text,
        lesions=tuple(lesions),
        indications=tuple(indications),
        has_recommendation=has_rec,
    )


def load_corpus(path) -> list[RadiologyReport]:
    """Read and fully validate a JSONL corpus; any violation rejects the file."""
    path = Path(path)
    reports: list[RadiologyReport] = []
    seen_report_ids: set[str] = set()
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    for line_no, raw in enumerate(raw_lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON: {exc}") from None
        try:
            report = report_from_dict(obj, line=line_no)
            validate_report(report)
        except MalformedRecord as exc:
            # re-raise with the actual line number when validate_report made it
            if exc.line == 0:
                raise MalformedRecord(line_no, exc.reason) from None
            raise
        if report.report_id in seen_report_ids:
            raise MalformedRecord(line_no, f"duplicate report_id {report.report_id!r}")
        seen_report_ids.add(report.report_id)
        reports.append(report)
    return reports


def save_corpus(reports: Iterable[RadiologyReport], path) -> None:
    """Write the corpus in canonical JSONL; load(save(x)) == x byte-stably."""
    path = Path(path)
    lines = []
    for report in reports:
        validate_report(report)
        lines.append(json.dumps(report_to_dict(report), ensure_ascii=False))
    try:
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def gold_anatomy_vector(report: RadiologyReport) -> Optional[AnatomyVector]:
    """Gold anatomy vector from gold lesion labels, or None if any lesion is unlabeled."""
    labels: dict[Anatomy, int] = {a: 0 for a in Anatomy}
    for les in report.lesions:
        if les.gold_label is None:
            return None
        labels[les.anatomy] = max(labels[les.anatomy], les.gold_label)
    return AnatomyVector.from_mapping(labels)
