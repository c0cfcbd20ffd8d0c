import itertools
import random

import pytest

from incifind.aggregation import LesionPrediction, aggregate_anatomy, build_report_vector
from incifind.corpus import Anatomy, AnatomyVector, document_label
from incifind.errors import MixedReportIds


def pred(lesion_id, anatomy, label, report_id="R1", model_id="m"):
    return LesionPrediction(report_id=report_id, lesion_id=lesion_id,
                            anatomy=anatomy, label=label, model_id=model_id)


def test_aggregate_paper_example():
    assert aggregate_anatomy([0, 0, 2]) == 2


def test_aggregate_empty_is_zero():
    assert aggregate_anatomy([]) == 0


def test_aggregate_equal_values():
    assert aggregate_anatomy([1, 1, 1]) == 1


def test_aggregate_matches_brute_force_up_to_size_four():
    cases = 0
    for size in range(5):
        for labels in itertools.product((0, 1, 2), repeat=size):
            cases += 1
            assert aggregate_anatomy(labels) == max(labels + (0,))
    assert cases == 1 + 3 + 9 + 27 + 81


def test_aggregate_idempotent_and_monotone():
    rng = random.Random(4)
    for _ in range(200):
        labels = [rng.choice((0, 1, 2)) for _ in range(rng.randint(0, 5))]
        agg = aggregate_anatomy(labels)
        assert aggregate_anatomy([agg]) == agg
        assert aggregate_anatomy(labels + [rng.choice((0, 1, 2))]) >= agg


def test_build_report_vector_per_anatomy_max():
    preds = [
        pred("L1", Anatomy.LIVER, 1),
        pred("L2", Anatomy.KIDNEY, 0),
        pred("L3", Anatomy.KIDNEY, 2),
    ]
    vector = build_report_vector(preds)
    assert vector == AnatomyVector.from_mapping({Anatomy.LIVER: 1, Anatomy.KIDNEY: 2})
    assert vector.to_dict() == {
        "lung": 0, "liver": 1, "kidney": 2, "adrenal": 0,
        "pancreas": 0, "thyroid": 0, "other": 0,
    }


def test_build_report_vector_empty():
    assert build_report_vector([]) == AnatomyVector((0,) * 7)


def test_build_report_vector_single_lung_two():
    vector = build_report_vector([pred("L1", Anatomy.LUNG, 2)])
    assert vector[Anatomy.LUNG] == 2
    assert sum(vector.values) == 2


def test_build_report_vector_rejects_mixed_reports():
    with pytest.raises(MixedReportIds):
        build_report_vector([pred("L1", Anatomy.LUNG, 1),
                             pred("L2", Anatomy.LUNG, 1, report_id="R2")])


def test_build_report_vector_rejects_mixed_models():
    with pytest.raises(MixedReportIds):
        build_report_vector([pred("L1", Anatomy.LUNG, 1),
                             pred("L2", Anatomy.LUNG, 1, model_id="other")])


def test_document_label_consistency():
    rng = random.Random(8)
    anatomies = list(Anatomy)
    for _ in range(100):
        preds = [
            pred(f"L{i}", rng.choice(anatomies), rng.choice((0, 1, 2)))
            for i in range(rng.randint(0, 6))
        ]
        vector = build_report_vector(preds)
        assert document_label(vector) == max((p.label for p in preds), default=0)
