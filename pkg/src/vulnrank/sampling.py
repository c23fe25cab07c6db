"""Rebalancing for the heavily imbalanced label distribution.

SMOTE is the primary route: synthetic positives are interpolated
between a real positive row and one of its k nearest positive
neighbors.  A bootstrap class balancer is kept as a sanity-check
alternative.  Real rows are never mutated; synthetic rows are flagged
in the ``provenance`` column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_float_matrix, check_binary_labels, check_finite_rows

PROVENANCE_REAL = "real"
PROVENANCE_SYNTHETIC = "synthetic"


@dataclass
class LabeledDataset:
    """Feature rows with labels and per-row real/synthetic provenance."""

    X: np.ndarray
    y: np.ndarray
    provenance: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = as_float_matrix(self.X, "X")
        self.y = check_binary_labels(self.y)
        if self.provenance is None:
            self.provenance = np.array([PROVENANCE_REAL] * len(self.y))
        self.provenance = np.asarray(self.provenance)
        if not (len(self.X) == len(self.y) == len(self.provenance)):
            raise ValueError("X, y, provenance must have equal length")

    def __len__(self):
        return len(self.y)

    @property
    def synthetic_mask(self):
        return self.provenance == PROVENANCE_SYNTHETIC


def _synthetic_target(n_real: int, synth_percent: float) -> int:
    """Smallest s with s = ceil(synth_percent * (n_real + s)); the map
    is a contraction for synth_percent < 1, so iterate to the fixed
    point."""
    s = 0
    while True:
        nxt = math.ceil(synth_percent * (n_real + s))
        if nxt <= s:
            return s
        s = nxt


def smote(data: LabeledDataset, synth_percent=0.2, k=5, seed=0) -> LabeledDataset:
    """Append interpolated minority rows until they form the requested
    share of the final dataset.

    Each synthetic row is ``x + lam * (x_nn - x)`` for a uniformly
    chosen real minority row x, one of its k nearest real minority
    neighbors x_nn (exact Euclidean), and lam ~ Uniform[0, 1].
    Deterministic given the seed; real rows pass through untouched.
    """
    if not 0.0 <= synth_percent < 1.0:
        raise ValueError("synth_percent must be in [0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    X = check_finite_rows(data.X, "X")
    n_real = len(data)
    target = _synthetic_target(n_real, synth_percent)
    if target == 0:
        return LabeledDataset(X=X.copy(), y=data.y.copy(),
                              provenance=data.provenance.copy())

    minority_idx = np.where((data.y == 1) & (data.provenance == PROVENANCE_REAL))[0]
    m = len(minority_idx)
    if m < k + 1:
        raise ValueError(
            f"SMOTE needs at least k+1={k + 1} real minority rows, found {m}; "
            "use a smaller k"
        )
    minority = X[minority_idx]

    # exact brute-force neighbor lists; stable argsort keeps ties
    # deterministic
    d2 = ((minority[:, None, :] - minority[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    neighbor_lists = np.argsort(d2, axis=1, kind="stable")[:, :k]

    rng = np.random.default_rng(seed)
    synthetic = np.empty((target, X.shape[1]))
    for row in range(target):
        base = int(rng.integers(m))
        nn = int(neighbor_lists[base, int(rng.integers(k))])
        lam = rng.random()
        synthetic[row] = minority[base] + lam * (minority[nn] - minority[base])

    return LabeledDataset(
        X=np.vstack([X, synthetic]),
        y=np.concatenate([data.y, np.ones(target, dtype=np.int64)]),
        provenance=np.concatenate([
            data.provenance,
            np.array([PROVENANCE_SYNTHETIC] * target),
        ]),
    )


def bootstrap_balance(data: LabeledDataset, rounds=5, seed=0) -> list[LabeledDataset]:
    """Per round: all positive rows plus an equal-count with-replacement
    uniform sample of negative rows."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    pos_idx = np.where(data.y == 1)[0]
    neg_idx = np.where(data.y == 0)[0]
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        raise ValueError("bootstrap balancing needs both classes present")
    rng = np.random.default_rng(seed)
    datasets = []
    for _ in range(rounds):
        sampled_neg = rng.choice(neg_idx, size=len(pos_idx), replace=True)
        chosen = np.concatenate([pos_idx, sampled_neg])
        datasets.append(
            LabeledDataset(
                X=data.X[chosen].copy(),
                y=data.y[chosen].copy(),
                provenance=data.provenance[chosen].copy(),
            )
        )
    return datasets


class SmoteOversampler(BaseEstimator):
    """Estimator-style wrapper around :func:`smote`.

    ``fit_resample(X, y)`` follows the resampler convention and returns
    ``(X_res, y_res)``; row provenance is kept on ``provenance_``.
    """

    def __init__(self, synth_percent=0.2, k=5, seed=0):
        self.synth_percent = synth_percent
        self.k = k
        self.seed = seed

    def fit_resample(self, X, y):
        out = smote(
            LabeledDataset(X=X, y=y),
            synth_percent=self.synth_percent,
            k=self.k,
            seed=self.seed,
        )
        self.provenance_ = out.provenance
        return out.X, out.y


def write_sampled_csv(data: LabeledDataset, path, function_ids=None):
    """Feature-matrix CSV with an extra provenance column; synthetic
    rows carry function_id -1."""
    d = data.X.shape[1]
    header = (
        "function_id," + ",".join(f"x{k + 1}" for k in range(d)) + ",label,provenance"
    )
    if function_ids is None:
        function_ids = list(range(len(data)))
    lines = [header]
    for i in range(len(data)):
        fid = function_ids[i] if i < len(function_ids) else -1
        feats = ",".join(repr(float(v)) for v in data.X[i])
        lines.append(f"{fid},{feats},{int(data.y[i])},{data.provenance[i]}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sampled_csv(path):
    """Returns (function_ids, LabeledDataset)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "function_id" or header[-1] != "provenance":
            raise ValueError(f"{path}: not a sampled dataset csv")
        ids = []
        X = []
        y = []
        prov = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            ids.append(int(parts[0]))
            X.append([float(v) for v in parts[1:-2]])
            y.append(int(parts[-2]))
            prov.append(parts[-1])
    return ids, LabeledDataset(X=np.asarray(X), y=np.asarray(y),
                               provenance=np.asarray(prov))
