"""Severity-precedence aggregation of lesion labels into anatomy labels.

The anatomy-level label is the maximum of that anatomy's lesion labels; an
anatomy with no lesions is 0.  The report vector stacks the seven anatomy
labels in canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import Anatomy, AnatomyVector, validate_label
from .errors import MixedReportIds


@dataclass(frozen=True)
class LesionPrediction:
    report_id: str
    lesion_id: str
    anatomy: Anatomy
    label: int
    model_id: str

    def __post_init__(self):
        validate_label(self.label, "label")


def aggregate_anatomy(labels: Iterable[int]) -> int:
    """Max label of the multiset; 0 when empty (no lesions, no incidentaloma)."""
    return max(labels, default=0)


def build_report_vector(predictions: Sequence[LesionPrediction]) -> AnatomyVector:
    """Assemble the seven-anatomy vector for one report's predictions."""
    if predictions:
        report_ids = {p.report_id for p in predictions}
        model_ids = {p.model_id for p in predictions}
        if len(report_ids) > 1:
            raise MixedReportIds(f"predictions span reports {sorted(report_ids)}")
        if len(model_ids) > 1:
            raise MixedReportIds(f"predictions span models {sorted(model_ids)}")
    by_anatomy: dict[Anatomy, list[int]] = {a: [] for a in Anatomy}
    for pred in predictions:
        by_anatomy[pred.anatomy].append(pred.label)
    return AnatomyVector.from_mapping(
        {a: aggregate_anatomy(labels) for a, labels in by_anatomy.items()}
    )
