"""Seeded generator of synthetic radiology reports with gold lesion labels.

The generator is a pure function of its config: the PRNG is Python's
Mersenne Twister (``random.Random(seed)``) consumed in one fixed sequence,
so the same config always yields a byte-identical corpus.  Realism is
desk-scale only; texts exist to exercise sampling, tagging, prompting,
parsing, and evaluation, not to train clinical models.

Label/attribute coupling encoded here (so downstream filters and the oracle
transport agree):

* gold labels are drawn per lesion from ``label_prior``;
* a lesion with gold 1 or 2 always has assertion present/possible and no
  size trend (a comparison to a prior exam would make it non-incidental);
* size trends appear only on gold-0 lesions, at ``trend_rate``;
* neoplastic indications appear only on reports whose lesions are all gold 0;
* a follow-up recommendation sentence is inserted with probability
  ``recommendation_rate`` when the report's max gold label is 2, scaled by
  0.4 for max label 1 and 0.1 for all-negative reports.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .corpus import (
    Anatomy,
    Assertion,
    ClinicalIndication,
    IndicationType,
    LesionFinding,
    RadiologyReport,
    SizeTrend,
)
from .errors import InvalidConfig

LESION_WORDS = ("lesion", "nodule", "cyst", "mass")

SITES = {
    Anatomy.LUNG: ("right upper lobe", "left lower lobe", "lingula", "right middle lobe"),
    Anatomy.LIVER: ("hepatic segment VII", "right hepatic lobe", "left hepatic lobe"),
    Anatomy.KIDNEY: ("left kidney", "right renal cortex", "left renal interpolar region"),
    Anatomy.ADRENAL: ("left adrenal gland", "right adrenal gland"),
    Anatomy.PANCREAS: ("pancreatic tail", "pancreatic body", "uncinate process"),
    Anatomy.THYROID: ("right thyroid lobe", "left thyroid lobe", "thyroid isthmus"),
    Anatomy.OTHER: ("spleen", "mesentery", "subcutaneous tissues of the flank"),
}

TREND_CLAUSES = {
    SizeTrend.INCREASING: ", increased in size compared to the prior exam",
    SizeTrend.DECREASING: ", decreased in size since the prior study",
    SizeTrend.NO_CHANGE: ", stable compared to prior imaging",
    SizeTrend.DISAPPEARED: ", no longer seen on the current study",
    SizeTrend.NEW: ", new since the prior examination",
}

BENIGN_CLAUSES = (
    ", likely a benign simple cyst",
    ", probably benign",
    ", most consistent with a benign finding",
)

SUSPICIOUS_CLAUSES = (
    ", incompletely characterized on this exam",
    ", indeterminate by imaging criteria",
    ", with mildly irregular margins",
)

NEUTRAL_CLAUSES = (
    "",
    ", without suspicious features",
    ", related to the known clinical history",
)

# Recommendation sentences intentionally hit the rule-based detector cues.
RECOMMENDATION_SENTENCES = (
    "Follow-up CT in 6 months is recommended.",
    "Recommend dedicated ultrasound for further characterization.",
    "Repeat imaging advised per Fleischner Society guidelines.",
    "Suggest repeat ultrasound in 12 months.",
)

SYMPTOM_INDICATIONS = ("abdominal pain", "flank pain", "shortness of breath", "unintentional weight loss")
TRAUMA_INDICATIONS = ("motor vehicle collision", "fall from standing height")
NON_NEOPLASTIC_INDICATIONS = ("evaluation of cholelithiasis", "suspected pneumonia", "renal colic")
NEOPLASTIC_INDICATIONS = (
    "known lung carcinoma, restaging",
    "history of colon cancer, surveillance",
    "staging of pancreatic malignancy",
)

MODALITY_SENTENCES = (
    "EXAM: CT of the chest, abdomen, and pelvis with contrast.",
    "EXAM: CT of the abdomen and pelvis without contrast.",
    "EXAM: Ultrasound of the abdomen.",
)

CLOSING_SENTENCES = (
    "No acute abnormality otherwise.",
    "The remaining visualized structures are unremarkable.",
    "No free fluid or lymphadenopathy.",
)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 7
    n_reports: int = 100
    label_prior: tuple[float, float, float] = (0.8, 0.12, 0.08)
    lesions_per_report: tuple[int, int] = (1, 4)
    trend_rate: float = 0.25
    neoplastic_rate: float = 0.15
    recommendation_rate: float = 0.9

    def validate(self) -> None:
        p0, p1, p2 = self.label_prior
        if abs(p0 + p1 + p2 - 1.0) > 1e-9 or min(p0, p1, p2) < 0:
            raise InvalidConfig(f"label_prior must be a distribution, got {self.label_prior}")
        lo, hi = self.lesions_per_report
        if lo < 0 or hi < lo:
            raise InvalidConfig(f"lesions_per_report range invalid: {self.lesions_per_report}")
        if self.n_reports <= 0:
            raise InvalidConfig("n_reports must be positive")
        for name in ("trend_rate", "neoplastic_rate", "recommendation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0,1], got {v}")


def _draw_label(rng: random.Random, prior) -> int:
    u = rng.random()
    if u < prior[0]:
        return 0
    if u < prior[0] + prior[1]:
        return 1
    return 2


def _draw_anatomy(rng: random.Random) -> Anatomy:
    # six target anatomies at 15% each, "other" takes the remaining 10%
    u = rng.random()
    targets = [a for a in Anatomy if a is not Anatomy.OTHER]
    idx = int(u / 0.15)
    if idx < len(targets):
        return targets[idx]
    return Anatomy.OTHER


class _TextBuilder:
    """Accumulates sentence fragments while tracking character offsets."""

    def __init__(self):
        self.parts: list[str] = []
        self.length = 0

    def add(self, fragment: str) -> None:
        self.parts.append(fragment)
        self.length += len(fragment)

    def add_span(self, fragment: str) -> tuple[int, int]:
        start = self.length
        self.add(fragment)
        return start, self.length

    def text(self) -> str:
        return "".join(self.parts)


def _lesion_sentence(rng: random.Random, builder: _TextBuilder, lesion_no: int,
                     anatomy: Anatomy, gold: int, trend: SizeTrend) -> tuple[int, int, str]:
    word = rng.choice(LESION_WORDS)
    site = rng.choice(SITES[anatomy])
    if gold == 2:
        size = rng.randint(12, 30)
        clause = rng.choice(SUSPICIOUS_CLAUSES)
    elif gold == 1:
        size = rng.randint(3, 9)
        clause = rng.choice(BENIGN_CLAUSES)
    else:
        size = rng.randint(2, 40)
        clause = TREND_CLAUSES[trend] if trend is not SizeTrend.ABSENT else rng.choice(NEUTRAL_CLAUSES)
    opener = "There is a" if lesion_no == 0 else rng.choice(("There is also a", "Additionally, a", "A"))
    verb = "" if opener.startswith("There") else " is seen"
    builder.add(f"{opener} {size} mm ")
    start, end = builder.add_span(word)
    builder.add(f" in the {site}{verb}{clause}. ")
    return start, end, word


def _indications(rng: random.Random, cfg: GenConfig, max_gold: int) -> list[ClinicalIndication]:
    u = rng.random()
    count = 0 if u < 0.1 else (1 if u < 0.85 else 2)
    out: list[ClinicalIndication] = []
    for _ in range(count):
        if max_gold == 0 and rng.random() < cfg.neoplastic_rate:
            out.append(ClinicalIndication(
                text=rng.choice(NEOPLASTIC_INDICATIONS),
                indication_type=IndicationType.NEOPLASTIC_DIAGNOSIS,
                anatomy=rng.choice(list(Anatomy)),
            ))
        else:
            kind = rng.random()
            if kind < 0.6:
                out.append(ClinicalIndication(rng.choice(SYMPTOM_INDICATIONS), IndicationType.SYMPTOM))
            elif kind < 0.8:
                out.append(ClinicalIndication(
                    rng.choice(NON_NEOPLASTIC_INDICATIONS), IndicationType.NON_NEOPLASTIC_DIAGNOSIS))
            else:
                out.append(ClinicalIndication(rng.choice(TRAUMA_INDICATIONS), IndicationType.TRAUMA))
    return out


def generate(cfg: GenConfig) -> list[RadiologyReport]:
    """Generate a deterministic synthetic corpus from the config."""
    cfg.validate()
    rng = random.Random(cfg.seed)
    reports: list[RadiologyReport] = []
    for i in range(cfg.n_reports):
        report_id = f"R{i:05d}"
        n_lesions = rng.randint(cfg.lesions_per_report[0], cfg.lesions_per_report[1])

        drawn = []
        for _ in range(n_lesions):
            gold = _draw_label(rng, cfg.label_prior)
            anatomy = _draw_anatomy(rng)
            if gold != 0:
                assertion = Assertion.PRESENT if rng.random() < 0.85 else Assertion.POSSIBLE
                trend = SizeTrend.ABSENT
            else:
                u = rng.random()
                assertion = (Assertion.PRESENT if u < 0.78
                             else Assertion.POSSIBLE if u < 0.93 else Assertion.ABSENT)
                if rng.random() < cfg.trend_rate:
                    trend = rng.choice([t for t in SizeTrend if t is not SizeTrend.ABSENT])
                else:
                    trend = SizeTrend.ABSENT
            drawn.append((gold, anatomy, assertion, trend))
        max_gold = max((g for g, *_ in drawn), default=0)

        indications = _indications(rng, cfg, max_gold)
        rec_scale = {2: 1.0, 1: 0.4, 0: 0.1}[max_gold]
        wants_recommendation = rng.random() < cfg.recommendation_rate * rec_scale

        builder = _TextBuilder()
        builder.add(rng.choice(MODALITY_SENTENCES) + " ")
        if indications:
            builder.add("INDICATION: " + "; ".join(ind.text for ind in indications) + ". ")
        builder.add("FINDINGS: ")
        lesions = []
        for j, (gold, anatomy, assertion, trend) in enumerate(drawn):
            start, end, word = _lesion_sentence(rng, builder, j, anatomy, gold, trend)
            lesions.append(LesionFinding(
                lesion_id=f"L{j + 1}",
                span_start=start,
                span_end=end,
                surface=word,
                anatomy=anatomy,
                assertion=assertion,
                size_trend=trend,
                gold_label=gold,
            ))
        if wants_recommendation:
            builder.add(rng.choice(RECOMMENDATION_SENTENCES) + " ")
        builder.add("IMPRESSION: " + rng.choice(CLOSING_SENTENCES))

        reports.append(RadiologyReport(
            report_id=report_id,
            text=builder.text(),
            lesions=tuple(lesions),
            indications=tuple(indications),
            has_recommendation=None,
        ))
    return reports
