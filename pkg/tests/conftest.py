import pytest

from incifind.corpus import (
    Anatomy,
    Assertion,
    LesionFinding,
    RadiologyReport,
    SizeTrend,
)
from incifind.synthgen import GenConfig, generate


def make_report(report_id="R1", text=None, lesions=None, indications=(), has_recommendation=None):
    """Hand-built single-lesion liver report unless overridden."""
    if text is None:
        text = "FINDINGS: There is a 12 mm lesion in the right hepatic lobe."
    if lesions is None:
        start = text.index("lesion")
        lesions = (
            LesionFinding(
                lesion_id="L1",
                span_start=start,
                span_end=start + len("lesion"),
                surface="lesion",
                anatomy=Anatomy.LIVER,
                assertion=Assertion.PRESENT,
                size_trend=SizeTrend.ABSENT,
                gold_label=1,
            ),
        )
    return RadiologyReport(
        report_id=report_id,
        text=text,
        lesions=tuple(lesions),
        indications=tuple(indications),
        has_recommendation=has_recommendation,
    )


def make_lesion(lesion_id, text, surface, occurrence=0, anatomy=Anatomy.LIVER,
                assertion=Assertion.PRESENT, size_trend=SizeTrend.ABSENT, gold_label=None):
    """Locate the nth occurrence of ``surface`` in ``text`` and span it."""
    start = -1
    for _ in range(occurrence + 1):
        start = text.index(surface, start + 1)
    return LesionFinding(
        lesion_id=lesion_id,
        span_start=start,
        span_end=start + len(surface),
        surface=surface,
        anatomy=anatomy,
        assertion=assertion,
        size_trend=size_trend,
        gold_label=gold_label,
    )


@pytest.fixture(scope="session")
def small_corpus():
    return generate(GenConfig(seed=11, n_reports=40))


@pytest.fixture(scope="session")
def midsize_corpus():
    return generate(GenConfig(seed=5, n_reports=200))
