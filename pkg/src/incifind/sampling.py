"""Four sequential corpus filters that enrich for incidentaloma-bearing reports.

Stage predicates are conjunctive: a report survives the pipeline iff it
satisfies all four, so stages can be checked independently.  Filters never
mutate report contents.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .corpus import (
    Anatomy,
    Assertion,
    IndicationType,
    LesionFinding,
    RadiologyReport,
    SizeTrend,
)

TARGET_ANATOMIES = frozenset({
    Anatomy.KIDNEY, Anatomy.LIVER, Anatomy.LUNG,
    Anatomy.PANCREAS, Anatomy.ADRENAL, Anatomy.THYROID,
})
QUALIFYING_ASSERTIONS = frozenset({Assertion.PRESENT, Assertion.POSSIBLE})
PRIOR_EXAM_TRENDS = frozenset({
    SizeTrend.INCREASING, SizeTrend.DECREASING,
    SizeTrend.DISAPPEARED, SizeTrend.NO_CHANGE,
})

# Cues for the default rule-based recommendation detector.  The detector is
# pluggable: any callable RadiologyReport -> bool can replace it.
RECOMMENDATION_CUES = (
    "recommend",
    "follow-up",
    "f/u",
    "advised",
    "suggest repeat",
    "per fleischner",
)

RecommendationDetector = Callable[[RadiologyReport], bool]


def default_recommendation_detector(report: RadiologyReport) -> bool:
    text = report.text.lower()
    return any(cue in text for cue in RECOMMENDATION_CUES)


def _qualifying(lesion: LesionFinding) -> bool:
    return lesion.anatomy in TARGET_ANATOMIES and lesion.assertion in QUALIFYING_ASSERTIONS


def filter1_target_anatomies(reports: Sequence[RadiologyReport]) -> list[RadiologyReport]:
    """Keep reports with >=1 present/possible lesion in a target anatomy."""
    return [r for r in reports if any(_qualifying(l) for l in r.lesions)]


def filter2_exclude_prior(reports: Sequence[RadiologyReport]) -> list[RadiologyReport]:
    """Drop reports whose qualifying lesions all show prior-exam size trends.

    A report is retained when at least one qualifying lesion has a trend of
    new or absent, i.e. was not visibly compared against earlier imaging.
    """
    return [
        r
        for r in reports
        if any(_qualifying(l) and l.size_trend not in PRIOR_EXAM_TRENDS for l in r.lesions)
    ]


def filter3_surveillance(reports: Sequence[RadiologyReport]) -> list[RadiologyReport]:
    """Drop reports with a neoplastic-diagnosis indication; no indications pass."""
    return [
        r
        for r in reports
        if all(i.indication_type is not IndicationType.NEOPLASTIC_DIAGNOSIS for i in r.indications)
    ]


def filter4_recommendation(
    reports: Sequence[RadiologyReport],
    detector: RecommendationDetector | None = None,
) -> list[RadiologyReport]:
    """Keep reports with a follow-up recommendation.

    A cached ``has_recommendation`` value wins over the detector; the
    detector only runs when the cache is unset.
    """
    detector = detector or default_recommendation_detector
    out = []
    for r in reports:
        verdict = r.has_recommendation if r.has_recommendation is not None else detector(r)
        if verdict:
            out.append(r)
    return out


@dataclass(frozen=True)
class StageCount:
    name: str
    reports_in: int
    reports_out: int

    @property
    def retention(self) -> float:
        return self.reports_out / self.reports_in if self.reports_in else 1.0


@dataclass(frozen=True)
class FilterTrace:
    stages: tuple[StageCount, ...]

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "name": s.name,
                    "in": s.reports_in,
                    "out": s.reports_out,
                    "retention": s.retention,
                }
                for s in self.stages
            ]
        }


def run_pipeline(
    reports: Sequence[RadiologyReport],
    detector: RecommendationDetector | None = None,
) -> tuple[list[RadiologyReport], FilterTrace]:
    """Apply filters 1..4 in order, recording per-stage counts."""
    stages = []
    current = list(reports)
    steps = (
        ("target_anatomies", filter1_target_anatomies),
        ("exclude_prior", filter2_exclude_prior),
        ("surveillance", filter3_surveillance),
        ("recommendation", lambda rs: filter4_recommendation(rs, detector)),
    )
    for name, step in steps:
        n_in = len(current)
        current = step(current)
        stages.append(StageCount(name, n_in, len(current)))
    return current, FilterTrace(tuple(stages))
