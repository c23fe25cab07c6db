"""Byte-pair tokenization of function bodies.

A function body is first split into word tokens (identifier runs stay
whole, every other printable character is a token of its own).  Merge
rules are then learned over the word corpus: at each step the most
frequent adjacent subtoken pair, weighted by word frequency, is fused
into a single subtoken.  Encoding a body applies the learned merges to
every word and maps the resulting subtokens to dense integer ids.

One source-level quirk is handled here: C++ names such as
``Kind<block_width, block_height>::Fill`` contain commas that would
otherwise shatter the name.  Such names are kept as a single word token
with each embedded comma replaced by a tab character.
"""

from __future__ import annotations

import heapq
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
BOS_ID = 2
EOS_ID = 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

MERGE_FILE_VERSION = "#version vulnrank-bpe-1"
VOCAB_FILE_VERSION = "#version vulnrank-vocab-1"

# identifier<...>::identifier — a template-scoped name.  The argument list
# may not contain characters that would make this an ordinary comparison
# expression (parens, braces, logic operators).
_TEMPLATE_NAME = re.compile(r"[A-Za-z_]\w*<[^<>(){};&|!=\n]{1,200}>::~?[A-Za-z_]\w*")
_IDENT = re.compile(r"[A-Za-z0-9_]+")


def _collapse_template_name(name: str) -> str:
    # Embedded commas become tabs so the scoped name survives as one
    # word; any remaining whitespace inside the name is dropped (the
    # substituted tabs must survive, so don't match \s here).
    name = re.sub(r"\s*,\s*", "\t", name)
    return re.sub(r"[ \n\r\f\v]+", "", name)


def pretokenize(text: str) -> list[str]:
    """Split source text into word tokens.

    Runs of ``[A-Za-z0-9_]`` are kept whole, whitespace is discarded,
    and every other character becomes a single-character token.
    Template-scoped names are emitted as one token (see module docs).
    """
    words = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isalpha() or ch == "_":
            m = _TEMPLATE_NAME.match(text, i)
            if m:
                words.append(_collapse_template_name(m.group()))
                i = m.end()
                continue
        m = _IDENT.match(text, i)
        if m:
            words.append(m.group())
            i = m.end()
            continue
        words.append(ch)
        i += 1
    return words


@dataclass
class MergeTable:
    """Ordered byte-pair merge rules, in the order they were learned."""

    merges: list[tuple[str, str]]
    _output_index: dict | None = field(default=None, repr=False, compare=False)

    @property
    def num_merges(self) -> int:
        return len(self.merges)

    def output_index(self):
        """Map merged-output string -> sorted merge indices producing it."""
        if self._output_index is None:
            index = defaultdict(list)
            for rank, (left, right) in enumerate(self.merges):
                index[left + right].append(rank)
            self._output_index = dict(index)
        return self._output_index

    def max_output_len(self) -> int:
        return max((len(l) + len(r) for l, r in self.merges), default=0)

    def save(self, path):
        lines = [MERGE_FILE_VERSION]
        lines.extend(f"{left} {right}" for left, right in self.merges)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if not lines or lines[0] != MERGE_FILE_VERSION:
            raise ValueError(f"{path}: not a merge table (missing version header)")
        merges = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValueError(f"{path}:{lineno}: malformed merge line {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(merges=merges)


@dataclass
class Vocabulary:
    """Dense subtoken -> id map; ids 0..3 are PAD/UNK/BOS/EOS."""

    id_of: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.id_of)

    def id_for(self, subtoken: str) -> int:
        return self.id_of.get(subtoken, UNK_ID)

    def save(self, path):
        rows = sorted(self.id_of.items(), key=lambda kv: kv[1])
        lines = [VOCAB_FILE_VERSION]
        # Subtokens may contain tabs (template names), so escape them.
        for subtoken, idx in rows:
            escaped = subtoken.replace("\\", "\\\\").replace("\t", "\\t")
            lines.append(f"{escaped}\t{idx}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if not lines or lines[0] != VOCAB_FILE_VERSION:
            raise ValueError(f"{path}: not a vocabulary file (missing version header)")
        id_of = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            escaped, _, idx = line.rpartition("\t")
            if not escaped or not idx:
                raise ValueError(f"{path}:{lineno}: malformed vocabulary line")
            subtoken = escaped.replace("\\t", "\t").replace("\\\\", "\\")
            id_of[subtoken] = int(idx)
        return cls(id_of=id_of)


@dataclass
class TokenSequence:
    """Encoded function body: BOS ... subtoken ids ... EOS."""

    function_id: int
    ids: list[int]


@dataclass
class EncodeStats:
    total_subtokens: int
    unk_count: int

    @property
    def oov_rate(self) -> float:
        if self.total_subtokens == 0:
            return 0.0
        return self.unk_count / self.total_subtokens


def _merge_pass(symbols: list[str], left: str, right: str) -> list[str]:
    """One left-to-right pass fusing every adjacency of (left, right)."""
    out = []
    i, n = 0, len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _iter_pairs(symbols):
    return zip(symbols, symbols[1:])


def learn_bpe(word_frequency: dict[str, int], num_merges: int):
    """Learn a merge table and vocabulary from a word-frequency map.

    Repeatedly fuses the adjacent subtoken pair with the highest total
    frequency (weighted by word counts).  Equal-frequency pairs are
    broken lexicographically on (left, right).  Learning stops early
    once no pair occurs at least twice.

    Returns
    -------
    (MergeTable, Vocabulary)
        The vocabulary contains the four reserved tokens, every single
        character seen in training (sorted), then merge outputs in
        learning order.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    if num_merges > 0 and not word_frequency:
        raise ValueError("word_frequency must be non-empty when num_merges > 0")

    words = []
    for word, freq in sorted(word_frequency.items()):
        if freq <= 0:
            raise ValueError(f"word frequency must be positive, got {word!r}: {freq}")
        words.append([list(word), freq])

    pair_counts: Counter = Counter()
    pair_words: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, (symbols, freq) in enumerate(words):
        for pair in _iter_pairs(symbols):
            pair_counts[pair] += freq
            pair_words[pair].add(idx)

    # Max-heap with lazy invalidation: entries are (-count, pair); a fresh
    # entry is pushed whenever a pair's count changes, stale ones are
    # dropped on pop.  Heap order also implements the lexicographic
    # tie-break, since equal counts compare on the pair itself.
    heap = [(-count, pair) for pair, count in pair_counts.items() if count >= 2]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges and heap:
        neg_count, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg_count:
            continue  # stale entry
        merges.append(pair)
        left, right = pair
        for idx in sorted(pair_words.get(pair, ())):
            symbols, freq = words[idx]
            new_symbols = _merge_pass(symbols, left, right)
            if len(new_symbols) == len(symbols):
                continue
            old_pairs = Counter(_iter_pairs(symbols))
            new_pairs = Counter(_iter_pairs(new_symbols))
            for p in set(old_pairs) | set(new_pairs):
                delta = (new_pairs[p] - old_pairs[p]) * freq
                if new_pairs[p] > 0:
                    pair_words[p].add(idx)
                else:
                    pair_words[p].discard(idx)
                if delta == 0:
                    continue
                updated = pair_counts[p] + delta
                if updated <= 0:
                    pair_counts.pop(p, None)
                else:
                    pair_counts[p] = updated
                    if updated >= 2:
                        heapq.heappush(heap, (-updated, p))
            words[idx][0] = new_symbols
        pair_counts.pop(pair, None)
        pair_words.pop(pair, None)

    chars = sorted({ch for word in word_frequency for ch in word})
    id_of = {token: i for i, token in enumerate(RESERVED_TOKENS)}
    for ch in chars:
        id_of[ch] = len(id_of)
    for left, right in merges:
        output = left + right
        if output not in id_of:  # two merge routes can produce one string
            id_of[output] = len(id_of)
    return MergeTable(merges=merges), Vocabulary(id_of=id_of)


def apply_bpe(word: str, table: MergeTable) -> list[str]:
    """Segment one word by applying merge rules in table order.

    Concatenating the returned subtokens always reproduces ``word``.
    """
    if not word:
        raise ValueError("word must be non-empty")
    symbols = list(word)
    if len(symbols) == 1:
        return symbols
    # A merge can only ever apply if its fused output occurs as a
    # substring of the original word, so restrict the table scan to
    # those candidates (in table order, which preserves semantics).
    index = table.output_index()
    max_len = min(table.max_output_len(), len(word))
    candidates: set[int] = set()
    for start in range(len(word)):
        for stop in range(start + 2, min(start + max_len, len(word)) + 1):
            ranks = index.get(word[start:stop])
            if ranks:
                candidates.update(ranks)
    for rank in sorted(candidates):
        if len(symbols) < 2:
            break
        left, right = table.merges[rank]
        symbols = _merge_pass(symbols, left, right)
    return symbols


def encode_words(words: list[str], table: MergeTable, vocab: Vocabulary, _cache=None):
    """Encode pretokenized words to a BOS/EOS-wrapped id list.

    Returns (ids, unk_count).  Subtokens missing from the vocabulary
    (unseen characters on held-out data) map to UNK.
    """
    ids = [BOS_ID]
    unk = 0
    for word in words:
        if _cache is not None and word in _cache:
            subtokens = _cache[word]
        else:
            subtokens = apply_bpe(word, table)
            if _cache is not None:
                _cache[word] = subtokens
        for subtoken in subtokens:
            idx = vocab.id_for(subtoken)
            if idx == UNK_ID:
                unk += 1
            ids.append(idx)
    ids.append(EOS_ID)
    return ids, unk


def encode_records(records, table: MergeTable, vocab: Vocabulary):
    """Encode FunctionRecords into TokenSequences plus corpus OOV stats."""
    cache: dict[str, list[str]] = {}
    sequences = []
    total = 0
    unk_total = 0
    for record in records:
        words = pretokenize(record.body)
        ids, unk = encode_words(words, table, vocab, _cache=cache)
        sequences.append(TokenSequence(function_id=record.id, ids=ids))
        total += len(ids) - 2  # BOS/EOS are wrappers, not content
        unk_total += unk
    stats = EncodeStats(total_subtokens=total, unk_count=unk_total)
    if stats.unk_count:
        logger.warning(
            "encoded corpus has OOV rate %.4f (%d/%d subtokens)",
            stats.oov_rate, stats.unk_count, stats.total_subtokens,
        )
    return sequences, stats


class BpeTokenizer(BaseEstimator, TransformerMixin):
    """Estimator wrapper: learn merges on bodies, transform to id lists.

    Parameters
    ----------
    num_merges : int, default=8192
        Maximum number of merge operations to learn.  Learning stops
        early when no adjacent pair occurs at least twice.
    """

    def __init__(self, num_merges=8192):
        self.num_merges = num_merges

    def fit(self, X, y=None):
        """Learn the merge table from an iterable of body strings."""
        counts: Counter = Counter()
        for body in X:
            counts.update(pretokenize(body))
        self.merge_table_, self.vocabulary_ = learn_bpe(dict(counts), self.num_merges)
        return self

    def transform(self, X):
        """Encode bodies to BOS/EOS-wrapped id lists."""
        self._check_fitted()
        cache: dict[str, list[str]] = {}
        out = []
        for body in X:
            ids, _ = encode_words(
                pretokenize(body), self.merge_table_, self.vocabulary_, _cache=cache
            )
            out.append(ids)
        return out

    def _check_fitted(self):
        if not hasattr(self, "merge_table_"):
            raise NotFittedError("BpeTokenizer is not fitted; call fit first")
