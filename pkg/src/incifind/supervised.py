"""Cost-sensitive linear softmax baseline over hashed text features.

The input representation is the structured string
``Anatomy: <organ> | Lesion: <surface> | Context: <window>``; features are
word unigrams and adjacent bigrams hashed into 2^18 buckets with a 64-bit
BLAKE2b digest (stable across runs and platforms).

Three training objectives are supported, all with exact analytic gradients:

* class-weighted cross-entropy, weights w_c = N / (3 * n_c);
* focal loss, w_c * (1 - p_y)^gamma * (-log p_y);
* expected misclassification cost, sum_k C[y,k] * p_k for a 3x3 cost
  matrix C with zero diagonal.

Decoding is either argmax or cost-aware (argmin_k sum_j C[j,k] p_j); ties
break toward the lowest label in both modes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .corpus import RadiologyReport
from .ensemble import PredictionSet
from .errors import EmptyBatch, IoFailure, NoLabeledData
from .evaluation import incidentaloma_macro_f1_from_arrays
from .tagging import DEFAULT_CONTEXT_RADIUS, context_window

HASH_BITS = 18
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def build_input_string(
    report: RadiologyReport, lesion_id: str, radius: int = DEFAULT_CONTEXT_RADIUS
) -> str:
    lesion = report.lesion(lesion_id)
    window = context_window(report, lesion_id, radius)
    return f"Anatomy: {lesion.anatomy.display} | Lesion: {lesion.surface} | Context: {window}"


def _bucket(token: str, hash_bits: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") & ((1 << hash_bits) - 1)


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def featurize(text: str, hash_bits: int = HASH_BITS) -> dict[int, int]:
    """Sparse bucket -> count vector of unigrams and adjacent bigrams."""
    tokens = tokenize(text)
    vec: dict[int, int] = {}
    for tok in tokens:
        idx = _bucket(tok, hash_bits)
        vec[idx] = vec.get(idx, 0) + 1
    for a, b in zip(tokens, tokens[1:]):
        idx = _bucket(f"{a} {b}", hash_bits)
        vec[idx] = vec.get(idx, 0) + 1
    return vec


def vectors_to_csr(vectors: Sequence[dict[int, int]], hash_bits: int = HASH_BITS) -> sparse.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for vec in vectors:
        for idx in sorted(vec):
            indices.append(idx)
            data.append(float(vec[idx]))
        indptr.append(len(indices))
    return sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(vectors), 1 << hash_bits),
    )


class HashingFeaturizer(BaseEstimator, TransformerMixin):
    """Stateless text-to-CSR transformer; composes with sklearn pipelines."""

    def __init__(self, hash_bits: int = HASH_BITS):
        self.hash_bits = hash_bits

    def fit(self, X, y=None):
        return self

    def transform(self, X: Sequence[str]) -> sparse.csr_matrix:
        return vectors_to_csr([featurize(s, self.hash_bits) for s in X], self.hash_bits)


@dataclass(frozen=True)
class CostMatrix:
    """3x3 misclassification cost, rows = true class, columns = predicted."""

    rows: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        arr = np.asarray(self.rows, dtype=float)
        if arr.shape != (3, 3):
            raise ValueError(f"cost matrix must be 3x3, got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("costs must be non-negative")
        if np.diag(arr).any():
            raise ValueError("diagonal costs must be zero")
        object.__setattr__(self, "rows", tuple(tuple(float(v) for v in row) for row in arr))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float)

    @classmethod
    def zero_one(cls) -> "CostMatrix":
        return cls(((0, 1, 1), (1, 0, 1), (1, 1, 0)))


# Missing a follow-up-required lesion is costliest (bottom row); the values
# are a configurable default, not a clinically calibrated matrix.
DEFAULT_COST_MATRIX = CostMatrix(((0, 1, 4), (1, 0, 4), (8, 6, 0)))


@dataclass
class SoftmaxModel:
    """Linear softmax parameters: weights [D, 3] and bias [3]."""

    weights: np.ndarray
    bias: np.ndarray

    def logits(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights) + self.bias

    def probs(self, X) -> np.ndarray:
        return softmax(self.logits(X))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_probs(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def compute_class_weights(y: np.ndarray) -> np.ndarray:
    """w_c = N / (3 * n_c); a class absent from training counts as one example."""
    counts = np.bincount(np.asarray(y), minlength=3)[:3]
    return len(y) / (3.0 * np.maximum(counts, 1))


def _check_batch(X, y):
    y = np.asarray(y, dtype=int)
    if X.shape[0] == 0 or y.size == 0:
        raise EmptyBatch("loss needs a non-empty batch")
    if X.shape[0] != y.size:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} labels")
    if ((y < 0) | (y > 2)).any():
        raise ValueError("labels must be in {0,1,2}")
    return y


def _finalize(X, dz):
    grad_w = np.asarray(X.T @ dz)
    grad_b = dz.sum(axis=0)
    return grad_w, grad_b


def loss_weighted_ce(model: SoftmaxModel, X, y, class_weights: np.ndarray):
    """Mean w_y * (-log p_y); returns (value, grad_weights, grad_bias)."""
    y = _check_batch(X, y)
    n = y.size
    logp = _log_probs(model.logits(X))
    p = np.exp(logp)
    rows = np.arange(n)
    w = np.asarray(class_weights)[y]
    value = float(np.mean(w * -logp[rows, y]))
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    dz = w[:, None] * (p - onehot) / n
    return value, *_finalize(X, dz)


def loss_focal(model: SoftmaxModel, X, y, class_weights: np.ndarray, gamma: float = 2.0):
    """Mean w_y * (1 - p_y)^gamma * (-log p_y); gamma=0 reduces to weighted CE."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    y = _check_batch(X, y)
    n = y.size
    logp = _log_probs(model.logits(X))
    p = np.exp(logp)
    rows = np.arange(n)
    w = np.asarray(class_weights)[y]
    p_true = p[rows, y]
    nll = -logp[rows, y]
    one_minus = 1.0 - p_true
    value = float(np.mean(w * one_minus**gamma * nll))
    if gamma == 0.0:
        dldp = -w / p_true
    else:
        # (1-p)^(gamma-1) can blow up as p -> 1, but its coefficient vanishes there
        pow_gm1 = np.where(one_minus > 0.0, one_minus ** (gamma - 1.0), 0.0)
        dldp = -w * (gamma * pow_gm1 * nll + one_minus**gamma / np.maximum(p_true, 1e-300))
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    dz = (dldp * p_true)[:, None] * (onehot - p) / n
    return value, *_finalize(X, dz)


def loss_expected_cost(model: SoftmaxModel, X, y, cost_matrix: CostMatrix):
    """Mean over examples of sum_k C[y,k] * p_k."""
    y = _check_batch(X, y)
    n = y.size
    p = model.probs(X)
    c_rows = cost_matrix.array[y]  # [N, 3]
    exp_cost = (c_rows * p).sum(axis=1)
    value = float(np.mean(exp_cost))
    dz = p * (c_rows - exp_cost[:, None]) / n
    return value, *_finalize(X, dz)


def decode_probs(p: np.ndarray, mode: str = "argmax", cost_matrix: CostMatrix | None = None) -> int:
    """Decode one probability vector; ties break toward the lowest label."""
    p = np.asarray(p, dtype=float)
    if mode == "argmax":
        return int(np.argmax(p))
    if mode == "cost_aware":
        if cost_matrix is None:
            raise ValueError("cost_aware decoding requires a cost matrix")
        return int(np.argmin(cost_matrix.array.T @ p))
    raise ValueError(f"unknown decode mode {mode!r}")


def decode(
    model: SoftmaxModel,
    features: dict[int, int],
    mode: str = "argmax",
    cost_matrix: CostMatrix | None = None,
    hash_bits: int = HASH_BITS,
) -> int:
    X = vectors_to_csr([features], hash_bits)
    return decode_probs(model.probs(X)[0], mode, cost_matrix)


class CostSensitiveSoftmax(BaseEstimator, ClassifierMixin):
    """Mini-batch gradient-descent softmax classifier with cost-sensitive losses.

    Training is deterministic given ``seed``: per-epoch shuffling uses a
    dedicated generator, gradients are clipped to global norm 1.0, weight
    decay is decoupled from the loss, and the weights with the best
    validation incidentaloma macro-F1 are kept (early stopping patience 3).
    """

    def __init__(
        self,
        objective: str = "weighted_ce",
        gamma: float = 2.0,
        learning_rate: float = 0.1,
        weight_decay: float = 0.01,
        epochs: int = 30,
        batch_size: int = 32,
        seed: int = 0,
        cost_matrix: CostMatrix | None = None,
        patience: int = 3,
        decode_mode: str = "argmax",
    ):
        self.objective = objective
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.cost_matrix = cost_matrix
        self.patience = patience
        self.decode_mode = decode_mode

    def _loss(self, model: SoftmaxModel, X, y):
        if self.objective == "weighted_ce":
            return loss_weighted_ce(model, X, y, self.class_weights_)
        if self.objective == "focal":
            return loss_focal(model, X, y, self.class_weights_, self.gamma)
        if self.objective == "expected_cost":
            return loss_expected_cost(model, X, y, self.cost_matrix or DEFAULT_COST_MATRIX)
        raise ValueError(f"unknown objective {self.objective!r}")

    def fit(self, X, y, eval_set=None):
        X = sparse.csr_matrix(X, dtype=float)
        y = np.asarray(y, dtype=int)
        if y.size == 0:
            raise NoLabeledData("no labeled examples to train on")
        if ((y < 0) | (y > 2)).any():
            raise ValueError("labels must be in {0,1,2}")
        if eval_set is not None:
            X_val, y_val = eval_set
            X_val = sparse.csr_matrix(X_val, dtype=float)
            y_val = np.asarray(y_val, dtype=int)
        else:
            X_val, y_val = X, y

        rng = np.random.default_rng(self.seed)
        n, d = X.shape
        model = SoftmaxModel(np.zeros((d, 3)), np.zeros(3))
        self.class_weights_ = compute_class_weights(y)

        best_score = -1.0
        best_w = model.weights.copy()
        best_b = model.bias.copy()
        stale = 0
        history = []
        for epoch in range(self.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = perm[start : start + self.batch_size]
                _, grad_w, grad_b = self._loss(model, X[idx], y[idx])
                norm = float(np.sqrt((grad_w**2).sum() + (grad_b**2).sum()))
                if norm > 1.0:
                    grad_w /= norm
                    grad_b /= norm
                if self.weight_decay:
                    model.weights *= 1.0 - self.learning_rate * self.weight_decay
                model.weights -= self.learning_rate * grad_w
                model.bias -= self.learning_rate * grad_b
            val_pred = model.probs(X_val).argmax(axis=1)
            score = incidentaloma_macro_f1_from_arrays(y_val, val_pred)
            history.append(score)
            if score > best_score + 1e-12:
                best_score = score
                best_w = model.weights.copy()
                best_b = model.bias.copy()
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.model_ = SoftmaxModel(best_w, best_b)
        self.classes_ = np.array([0, 1, 2])
        self.validation_scores_ = history
        return self

    def predict_proba(self, X) -> np.ndarray:
        X = sparse.csr_matrix(X, dtype=float)
        return self.model_.probs(X)

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        if self.decode_mode == "argmax":
            return probs.argmax(axis=1)
        if self.decode_mode == "cost_aware":
            cm = (self.cost_matrix or DEFAULT_COST_MATRIX).array
            return (probs @ cm).argmin(axis=1)
        raise ValueError(f"unknown decode mode {self.decode_mode!r}")


def labeled_examples(reports: Iterable[RadiologyReport], radius: int = DEFAULT_CONTEXT_RADIUS):
    """(input string, gold label) pairs for every gold-labeled lesion."""
    texts: list[str] = []
    labels: list[int] = []
    for report in reports:
        for lesion in report.lesions:
            if lesion.gold_label is None:
                continue
            texts.append(build_input_string(report, lesion.lesion_id, radius))
            labels.append(lesion.gold_label)
    return texts, labels


def train(
    train_reports: Sequence[RadiologyReport],
    val_reports: Sequence[RadiologyReport] | None,
    clf: CostSensitiveSoftmax | None = None,
    hash_bits: int = HASH_BITS,
) -> CostSensitiveSoftmax:
    """Fit the classifier on every gold-labeled lesion of the training reports."""
    clf = clf or CostSensitiveSoftmax()
    featurizer = HashingFeaturizer(hash_bits)
    texts, labels = labeled_examples(train_reports)
    if not texts:
        raise NoLabeledData("training corpus has no gold-labeled lesions")
    eval_set = None
    if val_reports:
        val_texts, val_labels = labeled_examples(val_reports)
        if val_texts:
            eval_set = (featurizer.transform(val_texts), np.asarray(val_labels))
    clf.fit(featurizer.transform(texts), np.asarray(labels), eval_set=eval_set)
    clf.hash_bits_ = hash_bits
    return clf


def predict_corpus(clf: CostSensitiveSoftmax, reports: Sequence[RadiologyReport], model_id: str):
    """Lesion-level predictions for every lesion (labeled or not) of the corpus."""
    hash_bits = getattr(clf, "hash_bits_", HASH_BITS)
    featurizer = HashingFeaturizer(hash_bits)
    keys = []
    texts = []
    for report in reports:
        for lesion in report.lesions:
            keys.append((report.report_id, lesion.lesion_id))
            texts.append(build_input_string(report, lesion.lesion_id))
    ps = PredictionSet(model_id=model_id)
    if keys:
        preds = clf.predict(featurizer.transform(texts))
        ps.labels = {key: int(label) for key, label in zip(keys, preds)}
    return ps


# --- model persistence ------------------------------------------------------

def save_model(clf: CostSensitiveSoftmax, path) -> None:
    weights = clf.model_.weights
    nonzero_rows = np.flatnonzero(np.abs(weights).sum(axis=1))
    payload = {
        "version": 1,
        "hash_bits": getattr(clf, "hash_bits_", HASH_BITS),
        "weights": [[int(r)] + [float(v) for v in weights[r]] for r in nonzero_rows],
        "bias": [float(v) for v in clf.model_.bias],
        "class_weights": [float(v) for v in clf.class_weights_],
        "train_config": {
            "objective": clf.objective,
            "gamma": clf.gamma,
            "learning_rate": clf.learning_rate,
            "weight_decay": clf.weight_decay,
            "epochs": clf.epochs,
            "batch_size": clf.batch_size,
            "seed": clf.seed,
            "patience": clf.patience,
            "decode_mode": clf.decode_mode,
            "cost_matrix": clf.cost_matrix.rows if clf.cost_matrix else None,
        },
    }
    try:
        Path(path).write_text(json.dumps(payload), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write model {path}: {exc}") from exc


def load_model(path) -> CostSensitiveSoftmax:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read model {path}: {exc}") from exc
    cfg = payload["train_config"]
    cm = cfg.get("cost_matrix")
    clf = CostSensitiveSoftmax(
        objective=cfg["objective"],
        gamma=cfg["gamma"],
        learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        cost_matrix=CostMatrix(tuple(tuple(row) for row in cm)) if cm else None,
        patience=cfg["patience"],
        decode_mode=cfg["decode_mode"],
    )
    hash_bits = payload["hash_bits"]
    weights = np.zeros((1 << hash_bits, 3))
    for row in payload["weights"]:
        weights[int(row[0])] = row[1:]
    clf.model_ = SoftmaxModel(weights, np.asarray(payload["bias"], dtype=float))
    clf.class_weights_ = np.asarray(payload["class_weights"], dtype=float)
    clf.classes_ = np.array([0, 1, 2])
    clf.hash_bits_ = hash_bits
    return clf
