"""Corpus ingestion: scan a source tree, extract C-family functions,
and join them with a CVE label file.

The extractor is a lexical scanner, not a parser.  It masks comments,
string/char literals and preprocessor directive lines, then looks for
``name ( params ) {`` shapes and matches the body braces on the masked
text.  Bodies are always taken verbatim from the original text.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_EXTENSIONS = (".c", ".cc", ".cpp", ".h")

# Identifiers that can precede "(" without being a function name.
_NOT_A_NAME = {
    "if", "for", "while", "switch", "return", "sizeof", "catch", "do",
    "else", "case", "default", "new", "delete", "throw", "goto",
    "alignof", "decltype", "typeid", "static_assert", "_Static_assert",
    "defined", "asm", "not", "and", "or", "void", "int", "char", "long",
    "short", "float", "double", "unsigned", "signed", "bool",
}

# Words allowed between the parameter list and the opening brace.
_TRAILING_WORDS = {
    "const", "noexcept", "override", "final", "volatile", "restrict",
    "mutable", "throw", "_Noexcept", "__attribute__",
}

_IDENT_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_")
_TYPEISH_CHARS = _IDENT_CHARS | set("*&<>:~,[] \t\n")


@dataclass
class FunctionRecord:
    """One extracted function and its CVE tag."""

    id: int
    name: str
    file_path: str
    line_start: int
    line_end: int
    body: str
    param_count: int
    label: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=True, sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "FunctionRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class CveLabelEntry:
    cve_id: str
    file_path: str
    function_name: str


_CVE_ID_RE = re.compile(r"CVE-\d{4}-\d+$")


def scan_sources(root, extensions=DEFAULT_EXTENSIONS):
    """List files under ``root`` with a matching suffix, sorted by
    POSIX-style relative path so the order is deterministic."""
    root = Path(root)
    if not root.is_dir():
        from .errors import ConfigError

        raise ConfigError(f"source root {root} is not a readable directory")
    suffixes = {e if e.startswith(".") else "." + e for e in extensions}
    found = []
    for path in root.rglob("*"):
        if path.is_file() and path.suffix in suffixes:
            found.append(path.relative_to(root).as_posix())
    return sorted(found)


def _mask_text(text: str) -> str:
    """Replace comments, string/char literals and preprocessor directive
    lines with spaces, preserving newlines so line numbers survive."""
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                out[i] = " "
                i += 1
            continue
        if c == "/" and i + 1 < n and text[i + 1] == "*":
            out[i] = out[i + 1] = " "
            i += 2
            while i < n:
                if text[i] == "*" and i + 1 < n and text[i + 1] == "/":
                    out[i] = out[i + 1] = " "
                    i += 2
                    break
                if text[i] != "\n":
                    out[i] = " "
                i += 1
            continue
        if c == '"' or (
            c == "'" and not (i > 0 and (text[i - 1].isalnum() or text[i - 1] == "_"))
        ):
            quote = c
            out[i] = " "
            i += 1
            while i < n:
                if text[i] == "\\" and i + 1 < n:
                    out[i] = " "
                    if text[i + 1] != "\n":
                        out[i + 1] = " "
                    i += 2
                    continue
                if text[i] == quote:
                    out[i] = " "
                    i += 1
                    break
                if text[i] == "\n":
                    break  # unterminated literal; stop at end of line
                out[i] = " "
                i += 1
            continue
        i += 1

    # Second pass: blank out preprocessor directive lines (plus their
    # backslash continuations) so stray braces in macros cannot unbalance
    # the scan.  Conditional regions themselves are still scanned as-is.
    masked = "".join(out)
    lines = masked.split("\n")
    in_continuation = False
    for ln, line in enumerate(lines):
        if in_continuation or line.lstrip().startswith("#"):
            in_continuation = line.rstrip().endswith("\\")
            lines[ln] = " " * len(line)
        else:
            in_continuation = False
    return "\n".join(lines)


def _scan_name_backwards(masked: str, open_paren: int):
    """Return (name, name_start) for the possibly qualified identifier
    ending just before ``open_paren``, or (None, -1)."""
    j = open_paren - 1
    while j >= 0 and masked[j] in " \t\n":
        j -= 1
    if j < 0 or masked[j] not in _IDENT_CHARS:
        return None, -1
    end = j + 1
    while j >= 0 and masked[j] in _IDENT_CHARS:
        j -= 1
    start = j + 1
    # extend left over ~, ::, and <...> qualified segments
    while True:
        k = start - 1
        if k >= 0 and masked[k] == "~":
            start = k
            k -= 1
        if k >= 1 and masked[k] == ":" and masked[k - 1] == ":":
            k -= 2
            if k >= 0 and masked[k] == ">":  # template argument group
                depth = 0
                m = k
                while m >= 0:
                    if masked[m] == ">":
                        depth += 1
                    elif masked[m] == "<":
                        depth -= 1
                        if depth == 0:
                            break
                    elif masked[m] in "{};":
                        m = -1
                        break
                    m -= 1
                if m < 0:
                    break
                k = m - 1
            if k < 0 or masked[k] not in _IDENT_CHARS:
                break
            while k >= 0 and masked[k] in _IDENT_CHARS:
                k -= 1
            start = k + 1
            continue
        break
    name = re.sub(r"\s+", "", masked[start:end])
    return name, start


def _match_paren(masked: str, open_paren: int):
    depth = 0
    for i in range(open_paren, len(masked)):
        if masked[i] == "(":
            depth += 1
        elif masked[i] == ")":
            depth -= 1
            if depth == 0:
                return i
    return -1


def _find_body_open(masked: str, close_paren: int):
    """Scan past trailing qualifiers / initializer lists for the opening
    brace of the body.  Returns its index or -1 if this is not a
    function definition."""
    i = close_paren + 1
    n = len(masked)
    while i < n:
        c = masked[i]
        if c in " \t\n":
            i += 1
            continue
        if c == "{":
            return i
        if c in _IDENT_CHARS and (c.isalpha() or c == "_"):
            j = i
            while j < n and masked[j] in _IDENT_CHARS:
                j += 1
            word = masked[i:j]
            if word not in _TRAILING_WORDS:
                return -1
            i = j
            # optional parenthesized argument: throw(...), noexcept(...)
            k = i
            while k < n and masked[k] in " \t\n":
                k += 1
            if k < n and masked[k] == "(":
                end = _match_paren(masked, k)
                if end < 0:
                    return -1
                i = end + 1
            continue
        if c == ":" and i + 1 < n and masked[i + 1] != ":":
            # constructor initializer list: skip to "{" at paren depth 0
            depth = 0
            j = i + 1
            while j < n:
                cj = masked[j]
                if cj == "(":
                    depth += 1
                elif cj == ")":
                    depth -= 1
                elif cj == "{" and depth == 0:
                    return j
                elif cj == ";" or depth < 0:
                    return -1
                j += 1
            return -1
        if c == "-" and i + 1 < n and masked[i + 1] == ">":
            # trailing return type
            i += 2
            while i < n and masked[i] in _TYPEISH_CHARS:
                i += 1
            continue
        return -1
    return -1


def _signature_start(masked: str, text: str, name_start: int, max_lines=12):
    """Walk back from the name over return-type characters to find where
    the signature begins, then trim leading blank/masked-only lines."""
    j = name_start - 1
    lines_crossed = 0
    while j >= 0:
        c = masked[j]
        if c == "\n":
            lines_crossed += 1
            if lines_crossed > max_lines:
                break
        if c == ":":
            # a lone colon is a label (public:, case ...:), not part of a
            # qualified return type, so the signature cannot cross it
            prev_is = j > 0 and masked[j - 1] == ":"
            next_is = j + 1 < len(masked) and masked[j + 1] == ":"
            if not prev_is and not next_is:
                break
        if c in _TYPEISH_CHARS:
            j -= 1
            continue
        break
    start = j + 1
    # drop leading lines that hold no original code for this signature
    while True:
        nl = text.find("\n", start)
        if nl == -1 or nl >= name_start:
            break
        masked_line = masked[start:nl]
        if masked_line.strip() == "" and (
            text[start:nl].strip() != "" or masked_line == ""
        ):
            start = nl + 1
            continue
        if text[start:nl].strip() == "":
            start = nl + 1
            continue
        break
    while start < name_start and text[start] in " \t":
        start += 1
    return start


def count_parameters(params: str) -> int:
    """Top-level commas plus one; ``()`` and ``(void)`` count zero.
    Commas inside nested parens or template brackets do not count."""
    stripped = params.strip()
    if stripped == "" or stripped == "void":
        return 0
    commas = 0
    paren_depth = 0
    angle_depth = 0
    for c in params:
        if c == "(":
            paren_depth += 1
        elif c == ")":
            paren_depth -= 1
        elif c == "<":
            angle_depth += 1
        elif c == ">":
            angle_depth = max(0, angle_depth - 1)
        elif c == "," and paren_depth == 0 and angle_depth == 0:
            commas += 1
    return commas + 1


def extract_functions(file_text: str, file_path: str) -> list[FunctionRecord]:
    """Extract function definitions from one file.

    Returned records have ``id`` -1 and ``label`` 0; final ids are
    assigned corpus-wide by :func:`extract_corpus`.  If braces are
    unbalanced at EOF the remainder of the file is skipped with a
    warning.
    """
    masked = _mask_text(file_text)
    records = []
    i, n = 0, len(masked)
    while i < n:
        if masked[i] != "(":
            i += 1
            continue
        name, name_start = _scan_name_backwards(masked, i)
        if name is None:
            i += 1
            continue
        simple = name.rsplit("::", 1)[-1].lstrip("~")
        if simple in _NOT_A_NAME or name.rsplit("::", 1)[-1] in _NOT_A_NAME:
            i += 1
            continue
        close = _match_paren(masked, i)
        if close < 0:
            i += 1
            continue
        body_open = _find_body_open(masked, close)
        if body_open < 0:
            i += 1
            continue
        depth = 0
        body_close = -1
        for j in range(body_open, n):
            if masked[j] == "{":
                depth += 1
            elif masked[j] == "}":
                depth -= 1
                if depth == 0:
                    body_close = j
                    break
        if body_close < 0:
            line = masked.count("\n", 0, body_open) + 1
            logger.warning(
                "%s:%d: unbalanced braces at EOF in %s; skipping rest of file",
                file_path, line, name,
            )
            break
        sig_start = _signature_start(masked, file_text, name_start)
        records.append(
            FunctionRecord(
                id=-1,
                name=name,
                file_path=file_path,
                line_start=masked.count("\n", 0, sig_start) + 1,
                line_end=masked.count("\n", 0, body_close) + 1,
                body=file_text[sig_start : body_close + 1],
                param_count=count_parameters(masked[i + 1 : close]),
                label=0,
            )
        )
        i = body_close + 1
    return records


def extract_corpus(root, extensions=DEFAULT_EXTENSIONS):
    """Scan a tree and extract every function, with ids assigned in
    (file_path, line_start) order.  Unreadable files are skipped with a
    warning."""
    root = Path(root)
    records = []
    skipped = []
    for rel in scan_sources(root, extensions):
        try:
            text = (root / rel).read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            logger.warning("skipping unreadable file %s: %s", rel, exc)
            skipped.append(rel)
            continue
        records.extend(extract_functions(text, rel))
    records.sort(key=lambda r: (r.file_path, r.line_start))
    for idx, record in enumerate(records):
        record.id = idx
    return records, skipped


def load_cve_labels(path) -> list[CveLabelEntry]:
    """Load and deduplicate the CVE label CSV
    (header ``cve_id,file_path,function_name``)."""
    from .errors import ContractViolation

    entries = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["cve_id", "file_path", "function_name"]
        if reader.fieldnames != expected:
            raise ContractViolation(
                f"{path}: expected header {','.join(expected)}, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            cve_id = (row["cve_id"] or "").strip()
            if not _CVE_ID_RE.match(cve_id):
                raise ContractViolation(f"{path}:{lineno}: bad cve_id {cve_id!r}")
            key = (row["file_path"], row["function_name"])
            if key in seen:
                continue
            seen.add(key)
            entries.append(
                CveLabelEntry(
                    cve_id=cve_id,
                    file_path=row["file_path"],
                    function_name=row["function_name"],
                )
            )
    return entries


def merge_cve_labels(records, labels):
    """Set label=1 on every record matching a (file_path, function_name)
    entry.  An entry naming a function with several same-named
    definitions in one file labels all of them.

    Returns a report dict with matched/unmatched entry counts and the
    list of unmatched entries.
    """
    by_key = {}
    for record in records:
        by_key.setdefault((record.file_path, record.name), []).append(record)
    matched = 0
    unmatched = []
    for entry in labels:
        hits = by_key.get((entry.file_path, entry.function_name))
        if hits:
            matched += 1
            for record in hits:
                record.label = 1
        else:
            unmatched.append(entry)
    report = {
        "label_entries": len(labels),
        "matched_entries": matched,
        "unmatched_entries": len(unmatched),
        "unmatched": [asdict(e) for e in unmatched],
        "labeled_records": sum(r.label for r in records),
    }
    if unmatched:
        logger.warning("%d CVE label entries matched no record", len(unmatched))
    return report


def write_records_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")


def read_records_jsonl(path) -> list[FunctionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(FunctionRecord.from_json(line))
    return records
