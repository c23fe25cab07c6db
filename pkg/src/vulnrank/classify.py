"""Soft classifiers over feature rows and the evaluation metrics.

Two model kinds estimate P(y=1 | x):

* ``gbm`` — gradient boosting on logistic loss.  The raw score starts
  at the base-rate log-odds; each round fits a regression tree to the
  current negative gradients with greedy variance-reduction splits and
  Newton-step leaf values, shrunk by the learning rate.
* ``linear`` — L2-regularized logistic regression by full-batch
  gradient descent, kept as the sanity baseline.

Evaluation reports rank-statistic AUC (ties count half), thresholded
accuracy/precision/recall/specificity, the cumulative gain curve, a
normalized lift area, and top-percentile capture.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import (
    as_float_matrix,
    check_binary_labels,
    check_feature_width,
    check_finite_rows,
    check_same_length,
)
from .errors import ContractViolation

logger = logging.getLogger(__name__)

MODEL_FILE_VERSION = "vulnrank-model-1"
LEAF_VALUE_CAP = 4.0
DEFAULT_PERCENTILES = (1.0, 5.0, 10.0)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_loss(y, raw):
    p = _sigmoid(raw)
    eps = 1e-15
    return float(-(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)).mean())


# ---------------------------------------------------------------------------
# regression tree on gradients


def _best_split(X, grad, min_leaf):
    """Greedy variance-reduction split.  Ties go to the lowest feature
    index, then the lowest threshold, so fitting is deterministic.

    A structurally valid split is taken even at zero immediate gain:
    patterns like XOR have no first-level gain at all, and the payoff
    only appears one level down.
    """
    n, n_features = X.shape
    total = grad.sum()
    best = None  # (gain, feature, threshold)
    for feature in range(n_features):
        order = np.argsort(X[:, feature], kind="stable")
        values = X[order, feature]
        sorted_grad = grad[order]
        csum = np.cumsum(sorted_grad)
        for pos in range(min_leaf - 1, n - min_leaf):
            if values[pos] == values[pos + 1]:
                continue
            threshold = 0.5 * (values[pos] + values[pos + 1])
            if not (values[pos] < threshold <= values[pos + 1]):
                continue  # adjacent floats collapsed the midpoint
            n_left = pos + 1
            left = csum[pos]
            right = total - left
            gain = left * left / n_left + right * right / (n - n_left) - total * total / n
            if best is None or gain > best[0] + 1e-12:
                best = (gain, feature, threshold)
    if best is None:
        return None
    return best[1], best[2]


def _fit_tree(X, grad, hess, max_depth, min_leaf):
    """Recursive dict-based tree; leaves carry the capped Newton step
    sum(grad)/sum(hess)."""
    if max_depth == 0 or len(X) < 2 * min_leaf or np.ptp(grad) == 0.0:
        return _leaf(grad, hess)
    split = _best_split(X, grad, min_leaf)
    if split is None:
        return _leaf(grad, hess)
    feature, threshold = split
    mask = X[:, feature] <= threshold
    return {
        "feature": int(feature),
        "threshold": float(threshold),
        "left": _fit_tree(X[mask], grad[mask], hess[mask], max_depth - 1, min_leaf),
        "right": _fit_tree(X[~mask], grad[~mask], hess[~mask], max_depth - 1, min_leaf),
    }


def _leaf(grad, hess):
    value = grad.sum() / (hess.sum() + 1e-12)
    return {"value": float(np.clip(value, -LEAF_VALUE_CAP, LEAF_VALUE_CAP))}


def _tree_predict(node, X):
    out = np.zeros(len(X))
    stack = [(node, np.arange(len(X)))]
    while stack:
        current, idx = stack.pop()
        if "value" in current:
            out[idx] = current["value"]
            continue
        mask = X[idx, current["feature"]] <= current["threshold"]
        stack.append((current["left"], idx[mask]))
        stack.append((current["right"], idx[~mask]))
    return out


# ---------------------------------------------------------------------------
# estimators


class GradientBoostingScorer(BaseEstimator):
    """Gradient-boosted trees on logistic loss.

    Parameters
    ----------
    num_trees : int
        Boosting rounds; zero rounds predicts the base rate everywhere.
    max_depth : int
        Maximum split levels per tree.
    learning_rate : float
        Shrinkage applied to each tree's contribution.
    min_leaf : int
        Minimum samples per leaf.
    seed : int
        Accepted for interface parity; fitting is fully deterministic.
    """

    def __init__(self, num_trees=100, max_depth=3, learning_rate=0.1, min_leaf=5, seed=0):
        self.num_trees = num_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.seed = seed

    def fit(self, X, y):
        X = check_finite_rows(as_float_matrix(X), "X")
        y = check_binary_labels(y)
        check_same_length(X, y, ("X", "y"))
        if y.min() == y.max():
            raise ValueError("training data must contain both classes")
        base_rate = y.mean()
        self.base_score_ = float(np.log(base_rate / (1.0 - base_rate)))
        self.n_features_in_ = X.shape[1]
        self.trees_ = []
        self.train_loss_ = [_log_loss(y, np.full(len(y), self.base_score_))]
        raw = np.full(len(y), self.base_score_)
        for _ in range(self.num_trees):
            p = _sigmoid(raw)
            grad = y - p  # negative gradient of logistic loss
            hess = p * (1.0 - p)
            tree = _fit_tree(X, grad, hess, self.max_depth, self.min_leaf)
            raw += self.learning_rate * _tree_predict(tree, X)
            self.trees_.append(tree)
            self.train_loss_.append(_log_loss(y, raw))
        return self

    def predict_raw(self, X):
        self._check_fitted()
        X = check_finite_rows(as_float_matrix(X), "X")
        check_feature_width(self.n_features_in_, X)
        raw = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            raw += self.learning_rate * _tree_predict(tree, X)
        return raw

    def predict_scores(self, X):
        return _sigmoid(self.predict_raw(X))

    def predict_proba(self, X):
        scores = self.predict_scores(X)
        return np.column_stack([1.0 - scores, scores])

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError("GradientBoostingScorer is not fitted")


class LinearScorer(BaseEstimator):
    """Logistic regression by full-batch gradient descent with L2 on
    the weights (not the intercept)."""

    def __init__(self, iterations=500, learning_rate=0.5, l2=1e-4, seed=0):
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.l2 = l2
        self.seed = seed

    def fit(self, X, y):
        X = check_finite_rows(as_float_matrix(X), "X")
        y = check_binary_labels(y)
        check_same_length(X, y, ("X", "y"))
        if y.min() == y.max():
            raise ValueError("training data must contain both classes")
        n = len(y)
        self.n_features_in_ = X.shape[1]
        w = np.zeros(X.shape[1])
        b = 0.0
        for _ in range(self.iterations):
            p = _sigmoid(X @ w + b)
            err = p - y
            w -= self.learning_rate * (X.T @ err / n + self.l2 * w)
            b -= self.learning_rate * float(err.mean())
        self.coef_ = w
        self.intercept_ = b
        return self

    def predict_raw(self, X):
        self._check_fitted()
        X = check_finite_rows(as_float_matrix(X), "X")
        check_feature_width(self.n_features_in_, X)
        return X @ self.coef_ + self.intercept_

    def predict_scores(self, X):
        return _sigmoid(self.predict_raw(X))

    def predict_proba(self, X):
        scores = self.predict_scores(X)
        return np.column_stack([1.0 - scores, scores])

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError("LinearScorer is not fitted")


@dataclass
class ModelSpec:
    """Which model kind to train and its hyperparameters."""

    kind: str = "gbm"
    num_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    iterations: int = 500
    linear_learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gbm", "linear"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("num_trees", "max_depth", "min_leaf", "iterations"):
            if getattr(self, name) < 0 or (name != "num_trees" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.linear_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")

    def build(self):
        if self.kind == "gbm":
            return GradientBoostingScorer(
                num_trees=self.num_trees, max_depth=self.max_depth,
                learning_rate=self.learning_rate, min_leaf=self.min_leaf,
                seed=self.seed,
            )
        return LinearScorer(
            iterations=self.iterations, learning_rate=self.linear_learning_rate,
            l2=self.l2, seed=self.seed,
        )


def train_model(spec: ModelSpec, X, y):
    return spec.build().fit(X, y)


def save_model(model, path):
    """Versioned, self-describing JSON; reloading reproduces scores
    bit-for-bit (floats round-trip through repr)."""
    if isinstance(model, GradientBoostingScorer):
        state = {
            "base_score": model.base_score_,
            "trees": model.trees_,
            "train_loss": model.train_loss_,
        }
        kind = "gbm"
    elif isinstance(model, LinearScorer):
        state = {"coef": list(model.coef_), "intercept": model.intercept_}
        kind = "linear"
    else:
        raise ContractViolation(f"cannot serialize model of type {type(model)!r}")
    payload = {
        "format_version": MODEL_FILE_VERSION,
        "kind": kind,
        "params": model.get_params(),
        "feature_width": model.n_features_in_,
        "state": state,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != MODEL_FILE_VERSION:
        raise ValueError(f"{path}: unsupported model format")
    if payload["kind"] == "gbm":
        model = GradientBoostingScorer(**payload["params"])
        model.base_score_ = payload["state"]["base_score"]
        model.trees_ = payload["state"]["trees"]
        model.train_loss_ = payload["state"]["train_loss"]
    elif payload["kind"] == "linear":
        model = LinearScorer(**payload["params"])
        model.coef_ = np.asarray(payload["state"]["coef"], dtype=np.float64)
        model.intercept_ = payload["state"]["intercept"]
    else:
        raise ValueError(f"{path}: unknown model kind {payload['kind']!r}")
    model.n_features_in_ = payload["feature_width"]
    return model


# ---------------------------------------------------------------------------
# metrics


def auc_score(scores, labels) -> float:
    """AUC by the rank statistic; tied scores count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = check_binary_labels(labels)
    check_same_length(scores, labels, ("scores", "labels"))
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined for single-class labels")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gain_curve(scores, labels) -> np.ndarray:
    """Cumulative gain: (population fraction, captured positive
    fraction) after each prefix of the descending-score order.  Ties
    are broken by input position, so the curve is deterministic and
    invariant under monotone score transforms."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = check_binary_labels(labels)
    check_same_length(scores, labels, ("scores", "labels"))
    n = len(scores)
    n_pos = int(labels.sum())
    order = np.argsort(-scores, kind="stable")
    captured = np.concatenate([[0], np.cumsum(labels[order])])
    fractions = np.arange(n + 1) / n
    if n_pos == 0:
        return np.column_stack([fractions, np.concatenate([[0.0], np.ones(n)])])
    return np.column_stack([fractions, captured / n_pos])


def _area_under(points):
    return float(np.trapezoid(points[:, 1], points[:, 0]))


def lift_area(scores, labels) -> float:
    """Area between the gain curve and the diagonal, normalized by the
    perfect ranker's area for the observed base rate; 0 for a random
    ranker, 1 for a perfect one."""
    labels = check_binary_labels(labels)
    aug = _area_under(gain_curve(scores, labels))
    perfect = _area_under(gain_curve(labels.astype(np.float64), labels))
    if perfect <= 0.5:
        raise ValueError("lift is undefined without both classes")
    return (aug - 0.5) / (perfect - 0.5)


def top_percent_capture(scores, labels, percentiles=DEFAULT_PERCENTILES):
    """Fraction of all positives found in the top p% of ranked rows;
    the bucket holds max(1, floor(p/100 * n)) rows."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = check_binary_labels(labels)
    n = len(scores)
    n_pos = int(labels.sum())
    order = np.argsort(-scores, kind="stable")
    cumulative = np.cumsum(labels[order])
    out = {}
    for pct in percentiles:
        k = max(1, int(np.floor(pct / 100.0 * n)))
        out[float(pct)] = float(cumulative[k - 1] / n_pos) if n_pos else 0.0
    return out


@dataclass
class EvalReport:
    auc: float | None
    accuracy: float
    precision: float
    recall: float
    specificity: float
    lift_area: float | None
    gain_curve: list
    top_percent_capture: dict
    threshold: float
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "specificity": self.specificity,
            "lift_area": self.lift_area,
            "top_percent_capture": {str(k): v for k, v in self.top_percent_capture.items()},
            "threshold": self.threshold,
            "notes": self.notes,
        }


def evaluate(scores, labels, threshold=0.5, percentiles=DEFAULT_PERCENTILES) -> EvalReport:
    """Full metric set at the given hard threshold (score >= threshold
    predicts 1).  With single-class labels, AUC and lift are reported
    as None and noted; threshold metrics are still emitted."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = check_binary_labels(labels)
    check_same_length(scores, labels, ("scores", "labels"))
    predicted = scores >= threshold
    tp = int((predicted & (labels == 1)).sum())
    fp = int((predicted & (labels == 0)).sum())
    tn = int((~predicted & (labels == 0)).sum())
    fn = int((~predicted & (labels == 1)).sum())
    notes = []
    try:
        auc = auc_score(scores, labels)
        lift = lift_area(scores, labels)
    except ValueError as exc:
        auc = None
        lift = None
        notes.append(str(exc))
        logger.warning("%s", exc)
    return EvalReport(
        auc=auc,
        accuracy=(tp + tn) / len(labels),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        specificity=tn / (tn + fp) if tn + fp else 0.0,
        lift_area=lift,
        gain_curve=[(float(a), float(b)) for a, b in gain_curve(scores, labels)],
        top_percent_capture=top_percent_capture(scores, labels, percentiles),
        threshold=float(threshold),
        notes=notes,
    )


def rank_report(records, scores, percentiles=DEFAULT_PERCENTILES):
    """Order records by descending score (stable on function id) and
    attach the top-percentile capture statistics.

    Returns (rows, capture) where each row is a dict with rank,
    function name, file, score, and the known label.
    """
    records = list(records)
    scores = np.asarray(scores, dtype=np.float64)
    check_same_length(records, scores, ("records", "scores"))
    order = sorted(range(len(records)), key=lambda i: (-scores[i], records[i].id))
    rows = [
        {
            "rank": pos + 1,
            "function_id": records[i].id,
            "name": records[i].name,
            "file_path": records[i].file_path,
            "score": float(scores[i]),
            "label": records[i].label,
        }
        for pos, i in enumerate(order)
    ]
    labels = np.array([records[i].label for i in range(len(records))])
    capture = top_percent_capture(scores, labels, percentiles) if labels.any() else {}
    return rows, capture


def write_eval_json(report: EvalReport, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_gain_curve_csv(curve, path):
    lines = ["fraction,captured"]
    lines.extend(f"{float(a)!r},{float(b)!r}" for a, b in curve)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
