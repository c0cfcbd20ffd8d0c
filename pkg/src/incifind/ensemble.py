"""Majority-vote combination of lesion-level prediction sets.

Votes are per lesion and unweighted; ties go to the lowest label, which
biases the ensemble toward non-incidentaloma calls.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import EmptyVotes, IoFailure, KeyMismatch, TooFewModels

LesionKey = tuple[str, str]  # (report_id, lesion_id)


@dataclass
class PredictionSet:
    model_id: str
    labels: dict[LesionKey, int] = field(default_factory=dict)


def majority_vote(votes: Sequence[int]) -> int:
    """Most frequent label; among tied counts the lowest label wins."""
    if not votes:
        raise EmptyVotes("majority_vote needs at least one vote")
    counts = Counter(votes)
    best = max(counts.values())
    return min(label for label, count in counts.items() if count == best)


def ensemble(sets: Sequence[PredictionSet]) -> PredictionSet:
    """Per-lesion majority vote across >=2 prediction sets with identical keys."""
    if len(sets) < 2:
        raise TooFewModels(f"need >=2 prediction sets, got {len(sets)}")
    keys = set(sets[0].labels)
    for ps in sets[1:]:
        if set(ps.labels) != keys:
            raise KeyMismatch(
                f"prediction sets {sets[0].model_id!r} and {ps.model_id!r} cover different lesions"
            )
    member_ids = sorted(ps.model_id for ps in sets)
    combined = PredictionSet(model_id="ensemble(" + ",".join(member_ids) + ")")
    for key in sorted(keys):  # stable output order regardless of hash seed
        combined.labels[key] = majority_vote([ps.labels[key] for ps in sets])
    return combined


# --- predictions interchange (JSONL rows, one report per line) -------------

def save_predictions(
    ps: PredictionSet,
    path,
    warnings_by_report: dict[str, list] | None = None,
    anatomy_vectors: dict[str, dict] | None = None,
) -> None:
    by_report: dict[str, dict[str, int]] = {}
    for (report_id, lesion_id), label in ps.labels.items():
        by_report.setdefault(report_id, {})[lesion_id] = label
    lines = []
    for report_id in sorted(by_report):
        row = {
            "report_id": report_id,
            "model_id": ps.model_id,
            "lesion_labels": by_report[report_id],
        }
        if warnings_by_report is not None:
            row["warnings"] = warnings_by_report.get(report_id, [])
        if anatomy_vectors is not None and report_id in anatomy_vectors:
            row["anatomy_vector"] = anatomy_vectors[report_id]
        lines.append(json.dumps(row, ensure_ascii=False))
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write predictions {path}: {exc}") from exc


def load_predictions(path) -> PredictionSet:
    path = Path(path)
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read predictions {path}: {exc}") from exc
    model_id = ""
    labels: dict[LesionKey, int] = {}
    for raw in raw_lines:
        if not raw.strip():
            continue
        row = json.loads(raw)
        model_id = row.get("model_id", model_id)
        for lesion_id, label in row["lesion_labels"].items():
            labels[(row["report_id"], lesion_id)] = int(label)
    return PredictionSet(model_id=model_id, labels=labels)
