"""Cosine similarity between function embeddings.

The full pairwise cosine matrix for N functions is N x N and is never
materialized; row sums (a degree-like feature per function) are
accumulated block by block, and only small submatrices for named
function groups are ever built explicitly.
"""

from __future__ import annotations

import logging

import numpy as np

from ._validation import as_float_matrix, check_finite_rows
from .errors import ContractViolation

logger = logging.getLogger(__name__)

DEFAULT_BLOCK_SIZE = 1024


def cosine(u, v) -> float:
    """Cosine of two vectors, clamped to [-1, 1] against float drift.
    A zero vector has cosine 0 with everything (logged)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        logger.warning("cosine of a zero vector requested; defining it as 0")
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _normalize_rows(X):
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0.0
    if zero.any():
        logger.warning("%d zero-norm embedding rows contribute cosine 0", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    return X / safe[:, None]


def cosine_row_sums(embeddings, block_size=DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Row sums of the full cosine matrix, including the diagonal.

    The computation walks fixed-order column blocks for each row block,
    so only (block, block) tiles are ever in memory and the result does
    not depend on block_size beyond ~1e-6 float reordering.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    X = check_finite_rows(as_float_matrix(embeddings, "embeddings"), "embeddings")
    if X.shape[0] < 1:
        raise ValueError("need at least one embedding row")
    normed = _normalize_rows(X)
    n = normed.shape[0]
    sums = np.zeros(n)
    for i0 in range(0, n, block_size):
        rows = normed[i0 : i0 + block_size]
        acc = np.zeros(rows.shape[0])
        for j0 in range(0, n, block_size):
            tile = rows @ normed[j0 : j0 + block_size].T
            np.clip(tile, -1.0, 1.0, out=tile)
            acc += tile.sum(axis=1)
        sums[i0 : i0 + rows.shape[0]] = acc
    return sums


def pairwise_submatrix(embeddings, ids) -> np.ndarray:
    """Symmetric cosine matrix for the selected row indices.

    Entries are computed once for the upper triangle and mirrored; the
    diagonal is exactly 1 for nonzero rows.
    """
    X = check_finite_rows(as_float_matrix(embeddings, "embeddings"), "embeddings")
    idx = list(ids)
    if len(set(idx)) != len(idx):
        raise ContractViolation("ids must be distinct")
    for i in idx:
        if not 0 <= i < X.shape[0]:
            raise ContractViolation(f"unknown embedding id {i}")
    normed = _normalize_rows(X[idx])
    nonzero = np.linalg.norm(X[idx], axis=1) > 0.0
    raw = np.clip(normed @ normed.T, -1.0, 1.0)
    upper = np.triu(raw, k=1)
    matrix = upper + upper.T
    np.fill_diagonal(matrix, np.where(nonzero, 1.0, 0.0))
    return matrix


def write_row_sums_csv(function_ids, sums, path):
    lines = ["function_id,row_sum"]
    for fid, value in zip(function_ids, sums):
        lines.append(f"{fid},{float(value)!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_row_sums_csv(path):
    ids = []
    sums = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "function_id,row_sum":
            raise ValueError(f"{path}: not a row-sums csv")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fid, value = line.split(",")
            ids.append(int(fid))
            sums.append(float(value))
    return ids, np.asarray(sums)


def write_submatrix_csv(names, matrix, path):
    """Square cosine table with a header row/column of function names."""
    lines = ["function," + ",".join(names)]
    for name, row in zip(names, matrix):
        lines.append(name + "," + ",".join(f"{v:.6f}" for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
