"""Desk-scale synthetic C corpus with a planted lexical signal.

Real vulnerability corpora and their label joins cannot be shipped, so
this generator stands in: it emits syntactically valid C-like
functions plus a matching CVE label CSV.  "Vulnerable" functions call
a characteristic pool of risky-sounding helpers with elevated
probability; ``signal_strength`` 0 makes both classes draw from the
same distribution, 1 separates them completely.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

COMMON_CALLS = (
    "log_msg", "copy_buf", "init_ctx", "update_state", "read_field",
    "write_field", "check_len", "sum_vals", "pack_bytes", "next_item",
)
RISKY_CALLS = (
    "legacy_strcpy", "raw_memcpy", "unchecked_free", "alloc_nocheck",
    "deref_fast", "cast_blind", "trust_input", "skip_bounds",
)
VAR_NAMES = ("buf", "len", "ptr", "idx", "tmp", "val", "n", "out", "src", "dst")
PARAM_TYPES = ("int", "unsigned", "long", "char *", "const char *", "double")


def risky_call_probability(vulnerable: bool, signal_strength: float) -> float:
    """Chance that one call statement uses the risky pool.

    At strength 0 both classes sit at 0.5; at strength 1 the classes
    are fully separated (1.0 vs 0.0).
    """
    if not 0.0 <= signal_strength <= 1.0:
        raise ValueError("signal_strength must be in [0, 1]")
    if vulnerable:
        return 0.5 + 0.5 * signal_strength
    return 0.5 - 0.5 * signal_strength


@dataclass
class GeneratedCorpus:
    source_root: Path
    cve_csv: Path
    function_names: list[str]
    vulnerable_names: list[str]

    @property
    def num_functions(self):
        return len(self.function_names)


def _make_params(rng) -> tuple[str, int]:
    count = int(rng.integers(0, 5))
    if count == 0:
        return "void", 0
    parts = []
    for k in range(count):
        ptype = PARAM_TYPES[int(rng.integers(len(PARAM_TYPES)))]
        sep = "" if ptype.endswith("*") else " "
        parts.append(f"{ptype}{sep}p{k}")
    return ", ".join(parts), count


def _make_body_lines(rng, vulnerable, signal_strength):
    p_risky = risky_call_probability(vulnerable, signal_strength)
    lines = [
        f"    int {VAR_NAMES[int(rng.integers(len(VAR_NAMES)))]} = {int(rng.integers(0, 16))};",
        "    char buf[64];",
    ]
    for _ in range(int(rng.integers(2, 6))):
        target = VAR_NAMES[int(rng.integers(len(VAR_NAMES)))]
        pool = RISKY_CALLS if rng.random() < p_risky else COMMON_CALLS
        call = pool[int(rng.integers(len(pool)))]
        arg = VAR_NAMES[int(rng.integers(len(VAR_NAMES)))]
        shape = int(rng.integers(3))
        if shape == 0:
            lines.append(f"    {target} = {call}(buf, {arg});")
        elif shape == 1:
            lines.append(f"    {call}({arg}, sizeof(buf));")
        else:
            lines.append(f"    if ({arg} > {int(rng.integers(1, 9))}) {{")
            lines.append(f"        {call}(buf, {arg});")
            lines.append("    }")
    lines.append(f"    return {int(rng.integers(0, 4))};")
    return lines


def generate_synthetic_corpus(source_root, cve_csv, num_functions,
                              vuln_fraction, signal_strength, seed=0,
                              functions_per_file=50) -> GeneratedCorpus:
    """Write the source tree and label CSV; fully seed-deterministic.

    Exactly round(num_functions * vuln_fraction) functions are listed
    in the CVE CSV.
    """
    if num_functions < 1:
        raise ValueError("num_functions must be >= 1")
    if not 0.0 < vuln_fraction <= 0.5:
        raise ValueError("vuln_fraction must be in (0, 0.5]")
    n_vulnerable = round(num_functions * vuln_fraction)
    if n_vulnerable < 1:
        raise ValueError(
            f"vuln_fraction {vuln_fraction} rounds to zero vulnerable "
            f"functions for a corpus of {num_functions}; enlarge the corpus"
        )
    source_root = Path(source_root)
    source_root.mkdir(parents=True, exist_ok=True)
    cve_csv = Path(cve_csv)
    cve_csv.parent.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    vulnerable_ids = set(
        rng.choice(num_functions, size=n_vulnerable, replace=False).tolist()
    )

    names = []
    vulnerable_names = []
    label_rows = []
    n_files = (num_functions + functions_per_file - 1) // functions_per_file
    for file_no in range(n_files):
        file_name = f"src_{file_no:03d}.c"
        chunk = []
        start = file_no * functions_per_file
        for i in range(start, min(start + functions_per_file, num_functions)):
            name = f"func_{i:05d}"
            names.append(name)
            vulnerable = i in vulnerable_ids
            params, _ = _make_params(rng)
            chunk.append(f"static int {name}({params})")
            chunk.append("{")
            chunk.extend(_make_body_lines(rng, vulnerable, signal_strength))
            chunk.append("}")
            chunk.append("")
            if vulnerable:
                vulnerable_names.append(name)
                label_rows.append(
                    (f"CVE-2020-{10000 + i}", file_name, name)
                )
        (source_root / file_name).write_text("\n".join(chunk), encoding="utf-8")

    with open(cve_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cve_id", "file_path", "function_name"])
        writer.writerows(label_rows)

    logger.info(
        "generated %d functions (%d vulnerable) in %d files under %s",
        num_functions, n_vulnerable, n_files, source_root,
    )
    return GeneratedCorpus(
        source_root=source_root,
        cve_csv=cve_csv,
        function_names=names,
        vulnerable_names=vulnerable_names,
    )
