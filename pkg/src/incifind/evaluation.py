"""Lesion-level and anatomy-level evaluation.

Per-class F1 uses the usual conventions: a class with defined support but
zero precision+recall contributes F1 = 0, while a class absent from both
gold and predictions is excluded from macro averaging (relevant for
bootstrap resamples that miss a rare class entirely).  The incidentaloma
macro-F1 is always the plain mean of the class-1 and class-2 F1 values.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

import numpy as np

from .aggregation import LesionPrediction, build_report_vector
from .corpus import Anatomy, RadiologyReport, gold_anatomy_vector
from .ensemble import PredictionSet
from .errors import EmptyMatrix, EmptyPool, KeyMismatch


def round_half_up(value: float, ndigits: int) -> float:
    """Decimal half-up rounding for report presentation.

    Metrics are ratios of small integers, so the value is first snapped to
    ten decimal places to absorb binary-float noise (0.78499999... is 0.785),
    then rounded half away from zero like published tables do.
    """
    snapped = Decimal(repr(float(value))).quantize(Decimal("1e-10"), rounding=ROUND_HALF_UP)
    return float(snapped.quantize(Decimal(1).scaleb(-ndigits), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # [3, 3], rows = gold, columns = predicted
    unit: str = "lesion"

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(gold: Mapping, pred: Mapping, unit: str = "lesion") -> ConfusionMatrix:
    if set(gold) != set(pred):
        missing = set(gold) ^ set(pred)
        raise KeyMismatch(f"gold and predictions cover different items (e.g. {sorted(missing)[:3]})")
    counts = np.zeros((3, 3), dtype=np.int64)
    for key, g in gold.items():
        counts[g, pred[key]] += 1
    return ConfusionMatrix(counts, unit)


def confusion_from_arrays(y_true, y_pred, unit: str = "lesion") -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    counts = np.bincount(y_true * 3 + y_pred, minlength=9).reshape(3, 3)
    return ConfusionMatrix(counts, unit)


def _per_class(counts: np.ndarray):
    tp = np.diag(counts).astype(float)
    support = counts.sum(axis=1).astype(float)
    predicted = counts.sum(axis=0).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / predicted, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    present = (support + predicted) > 0
    return precision, recall, f1, support, present


@dataclass(frozen=True)
class MetricsReport:
    precision: tuple[float, float, float]
    recall: tuple[float, float, float]
    f1: tuple[float, float, float]
    accuracy: float
    macro_f1: float
    incidentaloma_macro_f1: float
    support: tuple[int, int, int]
    miss_rate_class2: float
    unit: str = "lesion"

    def to_dict(self, ndigits: int = 3) -> dict:
        r = lambda v: round_half_up(v, ndigits)
        return {
            "unit": self.unit,
            "per_class": {
                str(c): {
                    "precision": r(self.precision[c]),
                    "recall": r(self.recall[c]),
                    "f1": r(self.f1[c]),
                    "support": int(self.support[c]),
                }
                for c in range(3)
            },
            "accuracy": r(self.accuracy),
            "macro_f1": r(self.macro_f1),
            "incidentaloma_macro_f1": r(self.incidentaloma_macro_f1),
            "miss_rate_class2": r(self.miss_rate_class2),
        }

    def format_table(self) -> str:
        r2 = lambda v: round_half_up(v, 2)
        lines = [f"{'class':<8}{'prec':>8}{'rec':>8}{'f1':>8}{'support':>10}"]
        for c in range(3):
            lines.append(
                f"{c:<8}{r2(self.precision[c]):>8.2f}{r2(self.recall[c]):>8.2f}"
                f"{r2(self.f1[c]):>8.2f}{self.support[c]:>10d}"
            )
        lines.append(
            f"accuracy={r2(self.accuracy):.2f}  macro_f1={r2(self.macro_f1):.2f}  "
            f"incidentaloma_macro_f1={r2(self.incidentaloma_macro_f1):.2f}"
        )
        return "\n".join(lines)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise EmptyMatrix("no evaluated items")
    precision, recall, f1, support, present = _per_class(cm.counts)
    accuracy = float(np.diag(cm.counts).sum() / cm.total)
    macro = float(f1[present].mean()) if present.any() else 0.0
    inci = float((f1[1] + f1[2]) / 2.0)
    support2 = cm.counts[2].sum()
    miss2 = float(cm.counts[2, 0] / support2) if support2 else 0.0
    return MetricsReport(
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        accuracy=accuracy,
        macro_f1=macro,
        incidentaloma_macro_f1=inci,
        support=tuple(int(s) for s in support),
        miss_rate_class2=miss2,
        unit=cm.unit,
    )


def incidentaloma_macro_f1(f1_1: float, f1_2: float) -> float:
    """Mean F1 of the two incidentaloma classes."""
    return (f1_1 + f1_2) / 2.0


def incidentaloma_macro_f1_from_arrays(y_true, y_pred) -> float:
    cm = confusion_from_arrays(y_true, y_pred)
    _, _, f1, _, _ = _per_class(cm.counts)
    return incidentaloma_macro_f1(f1[1], f1[2])


def macro_f1_from_arrays(y_true, y_pred, all_classes: bool = False) -> float:
    """Macro-F1 over classes present in gold or predictions (or all three)."""
    cm = confusion_from_arrays(y_true, y_pred)
    _, _, f1, _, present = _per_class(cm.counts)
    if all_classes:
        return float(f1.mean())
    return float(f1[present].mean()) if present.any() else 0.0


def iaa(annotator_a: Mapping, annotator_b: Mapping, level: str = "document") -> MetricsReport:
    """Agreement metrics treating annotator A as the reference.

    Per-class F1 is symmetric under annotator swap; support counts are not.
    """
    return metrics(confusion(annotator_a, annotator_b, unit=level))


@dataclass(frozen=True)
class ErrorPatterns:
    missed_class2: int          # gold 2 predicted 0
    underestimated: int         # gold 2 predicted 1
    false_positives: int        # gold 0 predicted 1 or 2
    escalated: int              # gold 1 predicted 2
    miss_rate_class2: float     # missed_class2 / gold-2 support
    underestimation_rate: float  # underestimated / gold-2 support
    false_positive_rate: float  # false_positives / gold-0 support
    escalation_rate: float      # escalated / gold-1 support

    def to_dict(self, ndigits: int = 3) -> dict:
        return {
            "missed_class2": self.missed_class2,
            "underestimated": self.underestimated,
            "false_positives": self.false_positives,
            "escalated": self.escalated,
            "miss_rate_class2": round(self.miss_rate_class2, ndigits),
            "underestimation_rate": round(self.underestimation_rate, ndigits),
            "false_positive_rate": round(self.false_positive_rate, ndigits),
            "escalation_rate": round(self.escalation_rate, ndigits),
        }


def error_patterns(gold: Mapping, pred: Mapping) -> ErrorPatterns:
    cm = confusion(gold, pred).counts
    support = cm.sum(axis=1)
    rate = lambda count, denom: float(count / denom) if denom else 0.0
    return ErrorPatterns(
        missed_class2=int(cm[2, 0]),
        underestimated=int(cm[2, 1]),
        false_positives=int(cm[0, 1] + cm[0, 2]),
        escalated=int(cm[1, 2]),
        miss_rate_class2=rate(cm[2, 0], support[2]),
        underestimation_rate=rate(cm[2, 1], support[2]),
        false_positive_rate=rate(cm[0, 1] + cm[0, 2], support[0]),
        escalation_rate=rate(cm[1, 2], support[1]),
    )


@dataclass(frozen=True)
class BootstrapResult:
    model_a: str
    model_b: str
    mean_delta: float
    ci_low: float
    ci_high: float
    p_value: float
    n_resamples: int
    seed: int
    restricted_to_incidentalomas: bool

    def to_dict(self) -> dict:
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "mean_delta": self.mean_delta,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "n_resamples": self.n_resamples,
            "seed": self.seed,
            "restricted_to_incidentalomas": self.restricted_to_incidentalomas,
        }


def bootstrap_pairwise(
    gold: Mapping,
    pred_a: PredictionSet,
    pred_b: PredictionSet,
    n: int = 1000,
    seed: int = 0,
    restrict: bool = True,
    all_classes: bool = False,
) -> BootstrapResult:
    """Paired lesion-level bootstrap of the macro-F1 difference (A - B).

    With ``restrict``, the resampling pool holds only lesions whose gold
    label is 1 or 2.  Per-resample RNG streams are derived from
    (seed, resample index), so parallel and serial evaluation orders agree.
    The p-value is the two-sided sign fraction of the delta distribution.
    """
    for ps in (pred_a, pred_b):
        if set(ps.labels) != set(gold):
            raise KeyMismatch(f"{ps.model_id!r} does not cover the gold keys exactly")
    pool = sorted(k for k, g in gold.items() if (not restrict) or g in (1, 2))
    if not pool:
        raise EmptyPool("no lesions in the resampling pool")
    y = np.array([gold[k] for k in pool], dtype=np.int64)
    a = np.array([pred_a.labels[k] for k in pool], dtype=np.int64)
    b = np.array([pred_b.labels[k] for k in pool], dtype=np.int64)
    m = len(pool)
    deltas = np.empty(n)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        idx = rng.integers(0, m, size=m)
        fa = macro_f1_from_arrays(y[idx], a[idx], all_classes)
        fb = macro_f1_from_arrays(y[idx], b[idx], all_classes)
        deltas[i] = fa - fb
    ci_low, ci_high = np.percentile(deltas, [2.5, 97.5])
    p = 2.0 * min(float(np.mean(deltas <= 0)), float(np.mean(deltas >= 0)))
    return BootstrapResult(
        model_a=pred_a.model_id,
        model_b=pred_b.model_id,
        mean_delta=float(np.mean(deltas)),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        p_value=min(1.0, p),
        n_resamples=n,
        seed=seed,
        restricted_to_incidentalomas=restrict,
    )


# --- corpus/prediction adapters --------------------------------------------

def gold_lesion_labels(reports: Sequence[RadiologyReport]) -> dict:
    """(report_id, lesion_id) -> gold label; unlabeled lesions are skipped."""
    out = {}
    for report in reports:
        for lesion in report.lesions:
            if lesion.gold_label is not None:
                out[(report.report_id, lesion.lesion_id)] = lesion.gold_label
    return out


def gold_anatomy_labels(reports: Sequence[RadiologyReport]) -> dict:
    """(report_id, anatomy value) -> gold label, for fully labeled reports only."""
    out = {}
    for report in reports:
        vector = gold_anatomy_vector(report)
        if vector is None:
            continue
        for anatomy, label in zip(Anatomy, vector.values):
            out[(report.report_id, anatomy.value)] = label
    return out


def predicted_anatomy_labels(ps: PredictionSet, reports: Sequence[RadiologyReport]) -> dict:
    """Anatomy-level view of a lesion-level prediction set (7 labels per report)."""
    out = {}
    for report in reports:
        preds = []
        for lesion in report.lesions:
            key = (report.report_id, lesion.lesion_id)
            if key not in ps.labels:
                raise KeyMismatch(f"{ps.model_id!r} has no prediction for {key}")
            preds.append(
                LesionPrediction(
                    report_id=report.report_id,
                    lesion_id=lesion.lesion_id,
                    anatomy=lesion.anatomy,
                    label=ps.labels[key],
                    model_id=ps.model_id,
                )
            )
        vector = build_report_vector(preds)
        for anatomy, label in zip(Anatomy, vector.values):
            out[(report.report_id, anatomy.value)] = label
    return out


def restrict_predictions(ps: PredictionSet, keys) -> PredictionSet:
    """Subset a prediction set to the given lesion keys (KeyMismatch if absent)."""
    missing = [k for k in keys if k not in ps.labels]
    if missing:
        raise KeyMismatch(f"{ps.model_id!r} missing predictions for {missing[:3]}")
    return PredictionSet(ps.model_id, {k: ps.labels[k] for k in keys})
