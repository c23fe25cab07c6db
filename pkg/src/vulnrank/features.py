"""Heuristic features and assembly of the final feature matrix.

Five per-function heuristics join the d-dimensional embedding:

* function length — bag-of-tokens size, counted with multiplicity
* token prevalence — distinct trimmed-lexicon tokens present, over the
  bag size
* cosine-matrix row sum (computed by :mod:`vulnrank.similarity`)
* longest line — max word tokens on one physical line
* parameter count (from extraction)

All heuristics operate on pre-merge word tokens, not BPE subtokens.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .bpe import pretokenize
from .errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrimmedLexicon:
    """Tokens frequent in CVE-labeled functions, minus the globally
    most frequent (punctuation-like) and rarest tokens."""

    tokens: frozenset[str]
    lower_cut: int
    upper_cut_percentile: float

    def __len__(self):
        return len(self.tokens)


@dataclass
class FeatureRow:
    function_id: int
    embedding: np.ndarray
    fn_length: int
    token_prevalence: float
    row_sum: float
    longest_line: int
    param_count: int
    label: int

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.embedding,
            [self.fn_length, self.token_prevalence, self.row_sum,
             self.longest_line, self.param_count],
        ])


def function_length(tokens) -> int:
    """Bag size: every token counts as many times as it appears."""
    return len(tokens)


def longest_line(body: str) -> int:
    """Max word-token count over the physical lines of the body."""
    if not body:
        return 0
    return max((len(pretokenize(line)) for line in body.split("\n")), default=0)


def _rank_percentile_cutoff(frequencies, percentile: float) -> int:
    """Highest frequency a token may have without landing in the top
    (100 - percentile)% of distinct tokens ranked by frequency.

    Ties at the boundary are kept: the cutoff is the frequency of the
    first token *after* the dropped head of the descending ranking, and
    only strictly greater frequencies are dropped.
    """
    ordered = sorted(frequencies, reverse=True)
    n_drop = math.floor((100.0 - percentile) / 100.0 * len(ordered))
    if n_drop <= 0:
        return ordered[0]
    return ordered[min(n_drop, len(ordered) - 1)]


def build_trimmed_lexicon(records, lower_cut=3, upper_cut_percentile=99.0,
                          tokens_of=None) -> TrimmedLexicon:
    """Build the CVE token lexicon from labeled records.

    Counts word tokens over label-1 functions, then drops tokens seen
    fewer than ``lower_cut`` times there, plus any token ranking in the
    top ``100 - upper_cut_percentile`` percent of distinct corpus
    tokens by whole-corpus frequency (the punctuation-and-delimiter
    band).
    """
    if lower_cut < 1:
        raise ValueError("lower_cut must be >= 1")
    if not 0.0 < upper_cut_percentile <= 100.0:
        raise ValueError("upper_cut_percentile must be in (0, 100]")
    tokens_of = tokens_of or (lambda record: pretokenize(record.body))
    cve_counts: Counter = Counter()
    corpus_counts: Counter = Counter()
    n_positive = 0
    for record in records:
        tokens = tokens_of(record)
        corpus_counts.update(tokens)
        if record.label == 1:
            n_positive += 1
            cve_counts.update(tokens)
    if n_positive == 0:
        raise ValueError(
            "no CVE-labeled functions in the corpus; supply a label file "
            "with at least one matching entry before building the lexicon"
        )
    if corpus_counts:
        cutoff = _rank_percentile_cutoff(corpus_counts.values(), upper_cut_percentile)
    else:
        cutoff = 0
    kept = frozenset(
        token
        for token, count in cve_counts.items()
        if count >= lower_cut and corpus_counts[token] <= cutoff
    )
    if not kept:
        logger.warning(
            "trimmed lexicon is empty (lower_cut=%d, upper_cut=%s%%)",
            lower_cut, upper_cut_percentile,
        )
    return TrimmedLexicon(tokens=kept, lower_cut=lower_cut,
                          upper_cut_percentile=upper_cut_percentile)


def token_prevalence(tokens, lexicon: TrimmedLexicon) -> float:
    """Distinct lexicon tokens present in the bag, over the bag size
    (with multiplicity).  Zero for an empty bag."""
    n = len(tokens)
    if n == 0:
        return 0.0
    bag = set(tokens)
    k = sum(1 for token in lexicon.tokens if token in bag)
    return k / n


def assemble_features(records, embeddings_by_id, row_sums_by_id,
                      lexicon: TrimmedLexicon) -> list[FeatureRow]:
    """Join embeddings, row sums, and heuristics into FeatureRows.

    Column order is fixed: embedding dims, then fn_length,
    token_prevalence, row_sum, longest_line, param_count, then label.
    """
    rows = []
    for record in records:
        if record.id not in embeddings_by_id:
            raise ContractViolation(f"no embedding for function id {record.id}")
        if record.id not in row_sums_by_id:
            raise ContractViolation(f"no cosine row sum for function id {record.id}")
        tokens = pretokenize(record.body)
        rows.append(
            FeatureRow(
                function_id=record.id,
                embedding=np.asarray(embeddings_by_id[record.id], dtype=np.float64),
                fn_length=function_length(tokens),
                token_prevalence=token_prevalence(tokens, lexicon),
                row_sum=float(row_sums_by_id[record.id]),
                longest_line=longest_line(record.body),
                param_count=record.param_count,
                label=record.label,
            )
        )
    return rows


def feature_matrix(rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack FeatureRows into (ids, X (n, d+5), y)."""
    ids = np.array([r.function_id for r in rows], dtype=np.int64)
    X = np.vstack([r.to_vector() for r in rows]) if rows else np.zeros((0, 0))
    y = np.array([r.label for r in rows], dtype=np.int64)
    return ids, X, y


def write_features_csv(rows, path):
    if not rows:
        raise ValueError("no feature rows to write")
    d = len(rows[0].embedding)
    header = (
        "function_id,"
        + ",".join(f"e{k + 1}" for k in range(d))
        + ",fn_length,token_prevalence,row_sum,longest_line,param_count,label"
    )
    lines = [header]
    for row in rows:
        emb = ",".join(repr(float(v)) for v in row.embedding)
        lines.append(
            f"{row.function_id},{emb},{row.fn_length},{row.token_prevalence!r},"
            f"{row.row_sum!r},{row.longest_line},{row.param_count},{row.label}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_features_csv(path):
    """Returns (ids, X, y) with X of width d+5."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "function_id" or header[-1] != "label":
            raise ValueError(f"{path}: not a feature matrix csv")
        ids = []
        X = []
        y = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            ids.append(int(parts[0]))
            X.append([float(v) for v in parts[1:-1]])
            y.append(int(parts[-1]))
    return (
        np.asarray(ids, dtype=np.int64),
        np.asarray(X, dtype=np.float64),
        np.asarray(y, dtype=np.int64),
    )


def write_lexicon(lexicon: TrimmedLexicon, path):
    lines = [f"#lower_cut={lexicon.lower_cut}",
             f"#upper_cut_percentile={lexicon.upper_cut_percentile}"]
    lines.extend(sorted(lexicon.tokens))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
