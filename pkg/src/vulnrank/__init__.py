"""vulnrank: rate source-code functions for vulnerability risk.

The pipeline extracts C-family functions from a source tree, tokenizes
them with learned byte-pair merges, embeds each function by averaging
the hidden states of an LSTM next-token model, joins the embedding
with five lexical heuristics, rebalances the CVE labels with SMOTE,
and trains a gradient-boosted soft classifier whose scores rank the
corpus by risk.
"""

__version__ = "0.1.0"

from .bpe import BpeTokenizer, MergeTable, TokenSequence, Vocabulary, apply_bpe, learn_bpe, pretokenize
from .classify import (
    EvalReport,
    GradientBoostingScorer,
    LinearScorer,
    ModelSpec,
    auc_score,
    evaluate,
    gain_curve,
    lift_area,
    rank_report,
    top_percent_capture,
)
from .errors import (
    ConfigError,
    ContractViolation,
    MissingArtifactError,
    TrainingDiverged,
    VulnrankError,
)
from .features import TrimmedLexicon, build_trimmed_lexicon, function_length, longest_line, token_prevalence
from .ingest import CveLabelEntry, FunctionRecord, extract_functions, merge_cve_labels, scan_sources
from .lm import LmConfig, LmParameters, LstmEmbedder, embed_function, forward, init_params, perplexity
from .pipeline import PipelineConfig, run_all, run_stage
from .sampling import LabeledDataset, SmoteOversampler, bootstrap_balance, smote
from .similarity import cosine, cosine_row_sums, pairwise_submatrix
from .synth import generate_synthetic_corpus

__all__ = [
    "BpeTokenizer", "MergeTable", "TokenSequence", "Vocabulary",
    "apply_bpe", "learn_bpe", "pretokenize",
    "EvalReport", "GradientBoostingScorer", "LinearScorer", "ModelSpec",
    "auc_score", "evaluate", "gain_curve", "lift_area", "rank_report",
    "top_percent_capture",
    "ConfigError", "ContractViolation", "MissingArtifactError",
    "TrainingDiverged", "VulnrankError",
    "TrimmedLexicon", "build_trimmed_lexicon", "function_length",
    "longest_line", "token_prevalence",
    "CveLabelEntry", "FunctionRecord", "extract_functions",
    "merge_cve_labels", "scan_sources",
    "LmConfig", "LmParameters", "LstmEmbedder", "embed_function",
    "forward", "init_params", "perplexity",
    "PipelineConfig", "run_all", "run_stage",
    "LabeledDataset", "SmoteOversampler", "bootstrap_balance", "smote",
    "cosine", "cosine_row_sums", "pairwise_submatrix",
    "generate_synthetic_corpus",
]
