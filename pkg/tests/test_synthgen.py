import collections

import pytest

from incifind.corpus import SizeTrend, load_corpus, save_corpus
from incifind.errors import InvalidConfig
from incifind.synthgen import GenConfig, generate


def test_same_seed_identical_corpora(tmp_path):
    cfg = GenConfig(seed=7, n_reports=10)
    a, b = generate(cfg), generate(cfg)
    assert a == b
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(a, pa)
    save_corpus(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_different_seeds_differ():
    assert generate(GenConfig(seed=1, n_reports=10)) != generate(GenConfig(seed=2, n_reports=10))


def test_degenerate_prior_all_zero():
    reports = generate(GenConfig(seed=3, n_reports=30, label_prior=(1.0, 0.0, 0.0)))
    assert all(l.gold_label == 0 for r in reports for l in r.lesions)


def test_label_frequencies_match_prior():
    cfg = GenConfig(seed=7, n_reports=2000, label_prior=(0.8, 0.12, 0.08))
    reports = generate(cfg)
    counts = collections.Counter(l.gold_label for r in reports for l in r.lesions)
    total = sum(counts.values())
    for label, expected in zip((0, 1, 2), cfg.label_prior):
        assert abs(counts[label] / total - expected) < 0.02


def test_trend_implies_gold_zero(midsize_corpus):
    for report in midsize_corpus:
        for lesion in report.lesions:
            if lesion.size_trend is not SizeTrend.ABSENT:
                assert lesion.gold_label == 0


def test_generated_corpus_passes_validation(tmp_path, midsize_corpus):
    path = tmp_path / "gen.jsonl"
    save_corpus(midsize_corpus, path)
    assert load_corpus(path) == midsize_corpus


def test_every_lesion_has_gold_label(small_corpus):
    assert all(l.gold_label is not None for r in small_corpus for l in r.lesions)


@pytest.mark.parametrize("kwargs", [
    {"label_prior": (0.5, 0.5, 0.5)},
    {"label_prior": (1.2, -0.1, -0.1)},
    {"lesions_per_report": (3, 1)},
    {"lesions_per_report": (-1, 2)},
    {"n_reports": 0},
    {"trend_rate": 1.5},
    {"recommendation_rate": -0.2},
])
def test_invalid_config_rejected(kwargs):
    with pytest.raises(InvalidConfig):
        generate(GenConfig(**kwargs))


def test_lesion_count_respects_range():
    reports = generate(GenConfig(seed=9, n_reports=50, lesions_per_report=(2, 3)))
    assert all(2 <= len(r.lesions) <= 3 for r in reports)
