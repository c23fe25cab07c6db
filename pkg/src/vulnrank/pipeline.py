"""Stage orchestration: a resumable batch pipeline over file artifacts.

Stages communicate only through documented files in the workspace
directory; nothing is handed off in memory.  Every stage records a
manifest entry (input hashes, a hash of the config section it reads,
output hashes, duration), writes its artifacts atomically, and is a
no-op when nothing it depends on has changed.

The config file is a small TOML-like text format::

    # comment
    seed = 42
    [section]
    key = value          # ints, floats, booleans, bare or quoted strings
    list_key = a, b, c   # comma lists where the key expects one

One global seed is mixed with each stage name to derive that stage's
seed, so a single value pins the whole run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bpe as bpe_mod
from . import classify as classify_mod
from . import features as features_mod
from . import ingest as ingest_mod
from . import lm as lm_mod
from . import sampling as sampling_mod
from . import similarity as similarity_mod
from . import synth as synth_mod
from .errors import ConfigError, ContractViolation, MissingArtifactError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

ARTIFACTS = {
    "functions": "functions.jsonl",
    "label_report": "label_report.json",
    "merges": "bpe_merges.txt",
    "vocab": "bpe_vocab.tsv",
    "sequences": "sequences.jsonl",
    "encode_stats": "encode_stats.json",
    "lm_params": "lm_params.npz",
    "lm_history": "lm_history.json",
    "embeddings": "embeddings.csv",
    "row_sums": "row_sums.csv",
    "features": "features.csv",
    "lexicon": "lexicon.txt",
    "train_rows": "train_rows.csv",
    "test_rows": "test_rows.csv",
    "split_report": "split_report.json",
    "model": "model.json",
    "scores": "scores.csv",
    "eval": "eval.json",
    "gain_curve": "gain_curve.csv",
    "report": "report.md",
    "top_cluster": "top_cluster_similarity.csv",
}


# ---------------------------------------------------------------------------
# config


def _parse_scalar(raw: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config_text(text: str) -> dict:
    """Parse the key/value grammar documented in the module docstring."""
    root: dict = {}
    section = root
    for lineno, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if not name:
                raise ConfigError(f"line {lineno}: empty section name")
            section = root.setdefault(name, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        value = value.split(" #", 1)[0]
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        section[key] = _parse_scalar(value)
    return root


def _as_list(value, cast=str):
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
    else:
        parts = [value]
    return [cast(p) for p in parts]


@dataclass
class PipelineConfig:
    """Validated, typed view of the config file."""

    seed: int
    source_root: Path
    cve_csv: Path
    workspace: Path
    extensions: tuple
    num_merges: int
    lm: dict
    block_size: int
    lower_cut: int
    upper_cut_percentile: float
    synth_percent: float
    smote_k: int
    model: dict
    test_fraction: float
    threshold: float
    percentiles: tuple
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        raw = parse_config_text(path.read_text(encoding="utf-8"))
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=Path(".")):
        def section(name):
            value = raw.get(name, {})
            if not isinstance(value, dict):
                raise ConfigError(f"[{name}] must be a section")
            return value

        paths = section("paths")
        try:
            for required in ("source_root", "cve_csv", "workspace"):
                if required not in paths:
                    raise ConfigError(f"[paths] {required} is required")
            lm_sec = section("lm")
            model_sec = section("model")
            eval_sec = section("eval")
            cfg = cls(
                seed=int(raw.get("seed", 0)),
                source_root=base_dir / str(paths["source_root"]),
                cve_csv=base_dir / str(paths["cve_csv"]),
                workspace=base_dir / str(paths["workspace"]),
                extensions=tuple(_as_list(
                    section("extract").get("extensions", ".c,.cc,.cpp,.h")
                )),
                num_merges=int(section("bpe").get("num_merges", 8192)),
                lm={
                    "embed_dim": int(lm_sec.get("embed_dim", 32)),
                    "epochs": int(lm_sec.get("epochs", 5)),
                    "batch_size": int(lm_sec.get("batch_size", 32)),
                    "learning_rate": float(lm_sec.get("learning_rate", 0.5)),
                    "max_seq_len": int(lm_sec.get("max_seq_len", 256)),
                    "val_fraction": float(lm_sec.get("val_fraction", 0.1)),
                },
                block_size=int(section("similarity").get("block_size", 1024)),
                lower_cut=int(section("lexicon").get("lower_cut", 3)),
                upper_cut_percentile=float(
                    section("lexicon").get("upper_cut_percentile", 99.0)
                ),
                synth_percent=float(section("smote").get("synth_percent", 0.2)),
                smote_k=int(section("smote").get("k", 5)),
                model={
                    "kind": str(model_sec.get("kind", "gbm")),
                    "num_trees": int(model_sec.get("num_trees", 100)),
                    "max_depth": int(model_sec.get("max_depth", 3)),
                    "learning_rate": float(model_sec.get("learning_rate", 0.1)),
                    "min_leaf": int(model_sec.get("min_leaf", 5)),
                    "iterations": int(model_sec.get("iterations", 500)),
                    "linear_learning_rate": float(
                        model_sec.get("linear_learning_rate", 0.5)
                    ),
                    "l2": float(model_sec.get("l2", 1e-4)),
                },
                test_fraction=float(eval_sec.get("test_fraction", 0.2)),
                threshold=float(eval_sec.get("threshold", 0.5)),
                percentiles=tuple(
                    _as_list(eval_sec.get("percentiles", "1, 5, 10"), float)
                ),
                synth={
                    "num_functions": int(section("synth").get("num_functions", 1000)),
                    "vuln_fraction": float(section("synth").get("vuln_fraction", 0.01)),
                    "signal_strength": float(
                        section("synth").get("signal_strength", 1.0)
                    ),
                },
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc
        if not 0.0 < cfg.test_fraction < 1.0:
            raise ConfigError("eval.test_fraction must be in (0, 1)")
        return cfg

    def stage_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(digest[:4], "big")

    def section_snapshot(self, names) -> str:
        """Canonical JSON of the config slices a stage depends on."""
        payload = {"seed": self.seed}
        for name in names:
            value = getattr(self, name)
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, tuple):
                value = list(value)
            payload[name] = value
        return json.dumps(payload, sort_keys=True)


# ---------------------------------------------------------------------------
# manifest and atomic writes


def atomic_write_text(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_manifest(workspace: Path) -> dict:
    path = workspace / MANIFEST_NAME
    if not path.is_file():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def save_manifest(workspace: Path, manifest: dict):
    atomic_write_text(
        workspace / MANIFEST_NAME, json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    )


# ---------------------------------------------------------------------------
# stage definitions


@dataclass(frozen=True)
class Stage:
    name: str
    inputs: tuple          # artifact keys consumed (workspace files)
    outputs: tuple         # artifact keys produced
    config_fields: tuple   # PipelineConfig attributes hashed for staleness
    runner: object
    external_inputs: tuple = ()  # config-path attributes hashed as inputs


def _hash_tree(root: Path, extensions) -> str:
    digest = hashlib.sha256()
    suffixes = {e if e.startswith(".") else "." + e for e in extensions}
    for rel in sorted(
        p.relative_to(root).as_posix()
        for p in root.rglob("*")
        if p.is_file() and p.suffix in suffixes
    ):
        digest.update(rel.encode())
        digest.update(file_sha256(root / rel).encode())
    return digest.hexdigest()


def _stage_extract(cfg: PipelineConfig, ws: Path, out: Path):
    records, skipped = ingest_mod.extract_corpus(cfg.source_root, cfg.extensions)
    if not cfg.cve_csv.is_file():
        raise ConfigError(f"CVE label file {cfg.cve_csv} not found")
    labels = ingest_mod.load_cve_labels(cfg.cve_csv)
    report = ingest_mod.merge_cve_labels(records, labels)
    report["skipped_files"] = skipped
    report["functions"] = len(records)
    ingest_mod.write_records_jsonl(records, out / ARTIFACTS["functions"])
    atomic_write_text(
        out / ARTIFACTS["label_report"],
        json.dumps(report, indent=1, sort_keys=True) + "\n",
    )


def _stage_bpe(cfg: PipelineConfig, ws: Path, out: Path):
    from collections import Counter

    records = ingest_mod.read_records_jsonl(ws / ARTIFACTS["functions"])
    counts = Counter()
    for record in records:
        counts.update(bpe_mod.pretokenize(record.body))
    table, vocab = bpe_mod.learn_bpe(dict(counts), cfg.num_merges)
    table.save(out / ARTIFACTS["merges"])
    vocab.save(out / ARTIFACTS["vocab"])


def _stage_encode(cfg: PipelineConfig, ws: Path, out: Path):
    records = ingest_mod.read_records_jsonl(ws / ARTIFACTS["functions"])
    table = bpe_mod.MergeTable.load(ws / ARTIFACTS["merges"])
    vocab = bpe_mod.Vocabulary.load(ws / ARTIFACTS["vocab"])
    sequences, stats = bpe_mod.encode_records(records, table, vocab)
    lines = [
        json.dumps({"function_id": s.function_id, "ids": s.ids}) for s in sequences
    ]
    atomic_write_text(out / ARTIFACTS["sequences"], "\n".join(lines) + "\n")
    atomic_write_text(
        out / ARTIFACTS["encode_stats"],
        json.dumps(
            {
                "total_subtokens": stats.total_subtokens,
                "unk_count": stats.unk_count,
                "oov_rate": stats.oov_rate,
                "vocab_size": vocab.size,
            },
            indent=1, sort_keys=True,
        ) + "\n",
    )


def _read_sequences(ws: Path):
    sequences = []
    with open(ws / ARTIFACTS["sequences"], encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                data = json.loads(line)
                sequences.append(
                    bpe_mod.TokenSequence(function_id=data["function_id"], ids=data["ids"])
                )
    return sequences


def _stage_train_lm(cfg: PipelineConfig, ws: Path, out: Path):
    sequences = _read_sequences(ws)
    vocab = bpe_mod.Vocabulary.load(ws / ARTIFACTS["vocab"])
    config = lm_mod.LmConfig(
        vocab_size=vocab.size, seed=cfg.stage_seed("train-lm"), **cfg.lm
    )
    params = lm_mod.init_params(config)
    params, history = lm_mod.train(params, sequences, config)
    lm_mod.save_params(params, config, out / ARTIFACTS["lm_params"])
    atomic_write_text(
        out / ARTIFACTS["lm_history"], json.dumps(history, indent=1) + "\n"
    )


def _stage_embed(cfg: PipelineConfig, ws: Path, out: Path):
    sequences = _read_sequences(ws)
    params, _ = lm_mod.load_params(ws / ARTIFACTS["lm_params"])
    ids, vectors = lm_mod.embed_records(params, sequences)
    lm_mod.write_embeddings_csv(ids, vectors, out / ARTIFACTS["embeddings"])


def _stage_simrows(cfg: PipelineConfig, ws: Path, out: Path):
    ids, vectors = lm_mod.read_embeddings_csv(ws / ARTIFACTS["embeddings"])
    sums = similarity_mod.cosine_row_sums(vectors, block_size=cfg.block_size)
    similarity_mod.write_row_sums_csv(ids, sums, out / ARTIFACTS["row_sums"])


def _stage_features(cfg: PipelineConfig, ws: Path, out: Path):
    records = ingest_mod.read_records_jsonl(ws / ARTIFACTS["functions"])
    emb_ids, vectors = lm_mod.read_embeddings_csv(ws / ARTIFACTS["embeddings"])
    sum_ids, sums = similarity_mod.read_row_sums_csv(ws / ARTIFACTS["row_sums"])
    lexicon = features_mod.build_trimmed_lexicon(
        records, lower_cut=cfg.lower_cut,
        upper_cut_percentile=cfg.upper_cut_percentile,
    )
    rows = features_mod.assemble_features(
        records,
        {fid: vectors[i] for i, fid in enumerate(emb_ids)},
        {fid: sums[i] for i, fid in enumerate(sum_ids)},
        lexicon,
    )
    features_mod.write_features_csv(rows, out / ARTIFACTS["features"])
    features_mod.write_lexicon(lexicon, out / ARTIFACTS["lexicon"])


def _stage_sample(cfg: PipelineConfig, ws: Path, out: Path):
    ids, X, y = features_mod.read_features_csv(ws / ARTIFACTS["features"])
    rng = np.random.default_rng(cfg.stage_seed("sample"))
    test_mask = np.zeros(len(y), dtype=bool)
    for cls in (0, 1):
        members = np.where(y == cls)[0]
        if len(members) < 2:
            raise ContractViolation(
                f"stratified split needs at least 2 rows of class {cls}"
            )
        n_test = int(np.clip(round(cfg.test_fraction * len(members)), 1,
                             len(members) - 1))
        test_mask[rng.permutation(members)[:n_test]] = True

    train_ds = sampling_mod.LabeledDataset(X=X[~test_mask], y=y[~test_mask])
    # rebalance the training side only; evaluation rows stay untouched
    sampled = sampling_mod.smote(
        train_ds, synth_percent=cfg.synth_percent, k=cfg.smote_k,
        seed=cfg.stage_seed("smote"),
    )
    train_ids = [int(v) for v in ids[~test_mask]]
    train_ids += [-1] * (len(sampled) - len(train_ds))
    sampling_mod.write_sampled_csv(sampled, out / ARTIFACTS["train_rows"], train_ids)
    test_ds = sampling_mod.LabeledDataset(X=X[test_mask], y=y[test_mask])
    sampling_mod.write_sampled_csv(
        test_ds, out / ARTIFACTS["test_rows"], [int(v) for v in ids[test_mask]]
    )
    atomic_write_text(
        out / ARTIFACTS["split_report"],
        json.dumps(
            {
                "train_rows": int((~test_mask).sum()),
                "test_rows": int(test_mask.sum()),
                "synthetic_rows": int(sampled.synthetic_mask.sum()),
                "train_positives": int(y[~test_mask].sum()),
                "test_positives": int(y[test_mask].sum()),
            },
            indent=1, sort_keys=True,
        ) + "\n",
    )


def _stage_train(cfg: PipelineConfig, ws: Path, out: Path):
    _, train_ds = sampling_mod.read_sampled_csv(ws / ARTIFACTS["train_rows"])
    spec = classify_mod.ModelSpec(seed=cfg.stage_seed("train"), **cfg.model)
    model = classify_mod.train_model(spec, train_ds.X, train_ds.y)
    classify_mod.save_model(model, out / ARTIFACTS["model"])


def _stage_score(cfg: PipelineConfig, ws: Path, out: Path):
    ids, X, _ = features_mod.read_features_csv(ws / ARTIFACTS["features"])
    model = classify_mod.load_model(ws / ARTIFACTS["model"])
    scores = model.predict_scores(X)
    lines = ["function_id,score"]
    lines.extend(f"{fid},{float(s)!r}" for fid, s in zip(ids, scores))
    atomic_write_text(out / ARTIFACTS["scores"], "\n".join(lines) + "\n")


def read_scores_csv(path):
    ids = []
    scores = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "function_id,score":
            raise ValueError(f"{path}: not a scores csv")
        for line in fh:
            line = line.strip()
            if line:
                fid, score = line.split(",")
                ids.append(int(fid))
                scores.append(float(score))
    return ids, np.asarray(scores)


def _stage_evaluate(cfg: PipelineConfig, ws: Path, out: Path):
    _, test_ds = sampling_mod.read_sampled_csv(ws / ARTIFACTS["test_rows"])
    model = classify_mod.load_model(ws / ARTIFACTS["model"])
    scores = model.predict_scores(test_ds.X)
    report = classify_mod.evaluate(
        scores, test_ds.y, threshold=cfg.threshold, percentiles=cfg.percentiles
    )
    classify_mod.write_eval_json(report, out / ARTIFACTS["eval"])
    classify_mod.write_gain_curve_csv(report.gain_curve, out / ARTIFACTS["gain_curve"])


def _stage_report(cfg: PipelineConfig, ws: Path, out: Path):
    records = ingest_mod.read_records_jsonl(ws / ARTIFACTS["functions"])
    score_ids, scores = read_scores_csv(ws / ARTIFACTS["scores"])
    by_id = {r.id: r for r in records}
    ordered_records = [by_id[f] for f in score_ids]
    rows, capture = classify_mod.rank_report(
        ordered_records, scores, percentiles=cfg.percentiles
    )
    eval_data = json.loads((ws / ARTIFACTS["eval"]).read_text())

    emb_ids, vectors = lm_mod.read_embeddings_csv(ws / ARTIFACTS["embeddings"])
    row_of = {fid: i for i, fid in enumerate(emb_ids)}
    top = rows[: min(8, len(rows))]
    top_rows = [row_of[r["function_id"]] for r in top]
    submatrix = similarity_mod.pairwise_submatrix(vectors, top_rows)
    names = [r["name"] for r in top]
    similarity_mod.write_submatrix_csv(names, submatrix, out / ARTIFACTS["top_cluster"])

    lines = ["# Function risk report", ""]
    lines.append(f"- functions scored: {len(rows)}")
    lines.append(f"- known positives: {sum(r['label'] for r in rows)}")
    auc = eval_data.get("auc")
    lift = eval_data.get("lift_area")
    lines.append(f"- held-out AUC: {auc if auc is not None else 'undefined'}")
    lines.append(f"- held-out lift area: {lift if lift is not None else 'undefined'}")
    lines.append(f"- gain curve: {ARTIFACTS['gain_curve']}")
    lines.append("")
    lines.append("## Top-percentile capture (all scored functions)")
    lines.append("")
    lines.append("| percentile | captured fraction of positives |")
    lines.append("|---|---|")
    for pct in sorted(capture):
        lines.append(f"| {pct:g}% | {capture[pct]:.4f} |")
    lines.append("")
    lines.append("## Highest-risk functions")
    lines.append("")
    lines.append("| rank | function | file | score | label |")
    lines.append("|---|---|---|---|---|")
    for r in rows[:25]:
        lines.append(
            f"| {r['rank']} | {r['name']} | {r['file_path']} "
            f"| {r['score']:.6f} | {r['label']} |"
        )
    lines.append("")
    lines.append("## Pairwise similarity of the top-scored cluster")
    lines.append("")
    lines.append(f"(also written to {ARTIFACTS['top_cluster']})")
    lines.append("")
    lines.append("| function | " + " | ".join(names) + " |")
    lines.append("|" + "---|" * (len(names) + 1))
    for name, matrix_row in zip(names, submatrix):
        cells = " | ".join(f"{v:.4f}" for v in matrix_row)
        lines.append(f"| {name} | {cells} |")
    lines.append("")
    atomic_write_text(out / ARTIFACTS["report"], "\n".join(lines))


STAGES = [
    Stage("extract", (), ("functions", "label_report"),
          ("source_root", "cve_csv", "extensions"), _stage_extract,
          external_inputs=("source_tree", "cve_csv")),
    Stage("bpe", ("functions",), ("merges", "vocab"), ("num_merges",), _stage_bpe),
    Stage("encode", ("functions", "merges", "vocab"),
          ("sequences", "encode_stats"), (), _stage_encode),
    Stage("train-lm", ("sequences", "vocab"), ("lm_params", "lm_history"),
          ("lm",), _stage_train_lm),
    Stage("embed", ("sequences", "lm_params"), ("embeddings",), (), _stage_embed),
    Stage("simrows", ("embeddings",), ("row_sums",), ("block_size",), _stage_simrows),
    Stage("features", ("functions", "embeddings", "row_sums"),
          ("features", "lexicon"), ("lower_cut", "upper_cut_percentile"),
          _stage_features),
    Stage("sample", ("features",), ("train_rows", "test_rows", "split_report"),
          ("synth_percent", "smote_k", "test_fraction"), _stage_sample),
    Stage("train", ("train_rows",), ("model",), ("model",), _stage_train),
    Stage("score", ("features", "model"), ("scores",), (), _stage_score),
    Stage("evaluate", ("test_rows", "model"), ("eval", "gain_curve"),
          ("threshold", "percentiles"), _stage_evaluate),
    Stage("report", ("functions", "scores", "eval", "embeddings"),
          ("report", "top_cluster"), ("percentiles",), _stage_report),
]

STAGES_BY_NAME = {stage.name: stage for stage in STAGES}
_PRODUCER = {key: stage.name for stage in STAGES for key in stage.outputs}


def _stage_input_hashes(stage: Stage, cfg: PipelineConfig, ws: Path) -> dict:
    hashes = {}
    for key in stage.inputs:
        path = ws / ARTIFACTS[key]
        if not path.is_file():
            raise MissingArtifactError(
                f"stage {stage.name} needs {path.name}; "
                f"run stage {_PRODUCER[key]} first"
            )
        hashes[key] = file_sha256(path)
    for ext in stage.external_inputs:
        if ext == "source_tree":
            if not cfg.source_root.is_dir():
                raise ConfigError(f"source root {cfg.source_root} not found")
            hashes[ext] = _hash_tree(cfg.source_root, cfg.extensions)
        elif ext == "cve_csv":
            if not cfg.cve_csv.is_file():
                raise ConfigError(f"CVE label file {cfg.cve_csv} not found")
            hashes[ext] = file_sha256(cfg.cve_csv)
    return hashes


def run_stage(name: str, cfg: PipelineConfig, force=False) -> str:
    """Run one stage; returns "ran" or "skipped".

    A stage is skipped when its manifest entry matches the current
    input hashes and config hash and all outputs are present with their
    recorded hashes.  A config change with surviving outputs is refused
    without ``force``.
    """
    if name not in STAGES_BY_NAME:
        raise ConfigError(
            f"unknown stage {name!r}; choose from "
            + ", ".join(s.name for s in STAGES)
        )
    stage = STAGES_BY_NAME[name]
    ws = cfg.workspace
    ws.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(ws)

    input_hashes = _stage_input_hashes(stage, cfg, ws)
    config_hash = hashlib.sha256(
        cfg.section_snapshot(stage.config_fields).encode()
    ).hexdigest()

    entry = manifest.get(name)
    outputs_exist = all((ws / ARTIFACTS[k]).is_file() for k in stage.outputs)
    if entry and outputs_exist and not force:
        same_inputs = entry.get("inputs") == input_hashes
        same_config = entry.get("config_hash") == config_hash
        outputs_match = all(
            file_sha256(ws / ARTIFACTS[k]) == h
            for k, h in entry.get("outputs", {}).items()
        )
        if same_inputs and same_config and outputs_match:
            logger.info("stage %s: up to date, skipping", name)
            return "skipped"
        if not same_config and outputs_match and same_inputs:
            raise ConfigError(
                f"stage {name}: config changed since its artifacts were "
                "written; rerun with --force to overwrite"
            )

    logger.info("stage %s: running", name)
    started = time.time()
    # outputs land in a scratch dir and are renamed into place, so a
    # failed stage never leaves a half-written artifact behind
    with tempfile.TemporaryDirectory(dir=ws, prefix=f".{name}.") as scratch:
        out = Path(scratch)
        stage.runner(cfg, ws, out)
        for key in stage.outputs:
            produced = out / ARTIFACTS[key]
            if not produced.is_file():
                raise ContractViolation(
                    f"stage {name} did not produce {ARTIFACTS[key]}"
                )
            os.replace(produced, ws / ARTIFACTS[key])
    duration = time.time() - started
    manifest = load_manifest(ws)
    manifest[name] = {
        "inputs": input_hashes,
        "config_hash": config_hash,
        "outputs": {k: file_sha256(ws / ARTIFACTS[k]) for k in stage.outputs},
        "duration_s": round(duration, 3),
        "completed_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    save_manifest(ws, manifest)
    return "ran"


def run_all(cfg: PipelineConfig, force=False) -> dict:
    return {stage.name: run_stage(stage.name, cfg, force=force) for stage in STAGES}


def run_synth(cfg: PipelineConfig) -> synth_mod.GeneratedCorpus:
    return synth_mod.generate_synthetic_corpus(
        cfg.source_root,
        cfg.cve_csv,
        num_functions=cfg.synth["num_functions"],
        vuln_fraction=cfg.synth["vuln_fraction"],
        signal_strength=cfg.synth["signal_strength"],
        seed=cfg.stage_seed("synth"),
    )
