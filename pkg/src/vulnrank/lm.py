"""LSTM next-token language model and function embeddings.

A single LSTM layer reads each token sequence; a learnable embedding
table feeds it and a fully-connected decoder with a softmax produces
next-token probabilities.  Training minimizes mean cross-entropy with
plain mini-batch gradient descent under global gradient-norm clipping.
A function's embedding is the arithmetic mean of its hidden states.

Everything runs in float64 numpy; gradients are derived by hand and
checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .bpe import PAD_ID
from .errors import ContractViolation, TrainingDiverged

logger = logging.getLogger(__name__)

PRESET_DIMS = (32, 64, 128)
PARAMS_FILE_VERSION = "vulnrank-lm-1"
GRAD_CLIP_NORM = 5.0


@dataclass
class LmConfig:
    """Hyperparameters of the language model.

    ``hidden_dim`` always equals ``embed_dim``: hidden states are
    averaged into the function vector, so the two widths are tied.
    """

    vocab_size: int
    embed_dim: int = 32
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.5
    max_seq_len: int = 256
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved ids plus content")
        for name in ("embed_dim", "epochs", "batch_size", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.embed_dim not in PRESET_DIMS:
            logger.warning(
                "embed_dim %d is not one of the calibrated presets %s",
                self.embed_dim, PRESET_DIMS,
            )

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_seq_len": self.max_seq_len,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
        }


@dataclass
class LmParameters:
    """Trainable state: embedding table, gate weights, decoder.

    Gate weights are stored concatenated along the output axis in the
    order input, forget, cell, output; slice ``[k*H:(k+1)*H]``.
    """

    embedding: np.ndarray  # (V, d)
    w_x: np.ndarray        # (d, 4H)
    w_h: np.ndarray        # (H, 4H)
    bias: np.ndarray       # (4H,)
    dec_w: np.ndarray      # (H, V)
    dec_b: np.ndarray      # (V,)

    def arrays(self):
        return {
            "embedding": self.embedding,
            "w_x": self.w_x,
            "w_h": self.w_h,
            "bias": self.bias,
            "dec_w": self.dec_w,
            "dec_b": self.dec_b,
        }

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    def copy(self):
        return LmParameters(**{k: v.copy() for k, v in self.arrays().items()})

    def check_finite(self):
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise ContractViolation(f"non-finite entries in parameter {name}")


def init_params(config: LmConfig) -> LmParameters:
    """Uniform init in [-1/sqrt(H), +1/sqrt(H)]; forget-gate bias is 1."""
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    v = config.vocab_size
    limit = 1.0 / np.sqrt(h)

    def uniform(*shape):
        return rng.uniform(-limit, limit, size=shape)

    params = LmParameters(
        embedding=uniform(v, config.embed_dim),
        w_x=uniform(config.embed_dim, 4 * h),
        w_h=uniform(h, 4 * h),
        bias=uniform(4 * h),
        dec_w=uniform(h, v),
        dec_b=uniform(v),
    )
    params.bias[h : 2 * h] = 1.0
    return params


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class _ForwardCache:
    __slots__ = ("x", "i", "f", "g", "o", "c", "tc", "h", "ids")

    def __init__(self, batch, steps, d, h):
        self.x = np.zeros((batch, steps, d))
        self.i = np.zeros((batch, steps, h))
        self.f = np.zeros((batch, steps, h))
        self.g = np.zeros((batch, steps, h))
        self.o = np.zeros((batch, steps, h))
        self.c = np.zeros((batch, steps, h))
        self.tc = np.zeros((batch, steps, h))
        self.h = np.zeros((batch, steps, h))
        self.ids = None


def _forward_batch(params: LmParameters, ids: np.ndarray) -> _ForwardCache:
    """Run the recurrence over a (batch, steps) id matrix."""
    batch, steps = ids.shape
    h_dim = params.hidden_dim
    cache = _ForwardCache(batch, steps, params.embedding.shape[1], h_dim)
    cache.ids = ids
    cache.x[:] = params.embedding[ids]
    h_prev = np.zeros((batch, h_dim))
    c_prev = np.zeros((batch, h_dim))
    for t in range(steps):
        gates = cache.x[:, t] @ params.w_x + h_prev @ params.w_h + params.bias
        i_g = _sigmoid(gates[:, :h_dim])
        f_g = _sigmoid(gates[:, h_dim : 2 * h_dim])
        g_g = np.tanh(gates[:, 2 * h_dim : 3 * h_dim])
        o_g = _sigmoid(gates[:, 3 * h_dim :])
        c_t = f_g * c_prev + i_g * g_g
        tc = np.tanh(c_t)
        h_t = o_g * tc
        cache.i[:, t], cache.f[:, t], cache.g[:, t], cache.o[:, t] = i_g, f_g, g_g, o_g
        cache.c[:, t], cache.tc[:, t], cache.h[:, t] = c_t, tc, h_t
        h_prev, c_prev = h_t, c_t
    return cache


def _check_ids(params, ids):
    arr = np.asarray(ids, dtype=np.int64)
    if arr.size == 0:
        raise ContractViolation("token sequence must be non-empty")
    if arr.min() < 0 or arr.max() >= params.vocab_size:
        raise ContractViolation(
            f"token id out of range [0, {params.vocab_size}) in sequence"
        )
    return arr


def forward(params: LmParameters, ids):
    """Hidden states and decoder logits for one sequence.

    Returns (hidden (T, H), logits (T, V)); the initial hidden and cell
    states are zero.
    """
    arr = _check_ids(params, ids)
    cache = _forward_batch(params, arr.reshape(1, -1))
    hidden = cache.h[0]
    logits = hidden @ params.dec_w + params.dec_b
    return hidden, logits


def _loss_and_grads(params: LmParameters, ids: np.ndarray, target_mask: np.ndarray):
    """Mean next-token cross-entropy over masked targets plus gradients.

    ``ids`` is (batch, steps); position t predicts the token at t+1, so
    only ``target_mask`` (batch, steps-1) positions contribute.
    """
    batch, steps = ids.shape
    h_dim = params.hidden_dim
    cache = _forward_batch(params, ids)

    hidden = cache.h[:, : steps - 1].reshape(-1, h_dim)
    logits = hidden @ params.dec_w + params.dec_b
    targets = ids[:, 1:].reshape(-1)
    mask = target_mask.reshape(-1)
    count = int(mask.sum())
    if count == 0:
        raise ContractViolation("batch contains no prediction targets")

    logp = _log_softmax(logits)
    loss = -logp[np.arange(len(targets)), targets][mask].sum() / count

    dlogits = np.exp(logp)
    dlogits[np.arange(len(targets)), targets] -= 1.0
    dlogits *= (mask / count)[:, None]

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    grads["dec_w"] = hidden.T @ dlogits
    grads["dec_b"] = dlogits.sum(axis=0)

    dh_ext = np.zeros((batch, steps, h_dim))
    dh_ext[:, : steps - 1] = (dlogits @ params.dec_w.T).reshape(batch, steps - 1, h_dim)

    dh_next = np.zeros((batch, h_dim))
    dc_next = np.zeros((batch, h_dim))
    dx = np.zeros_like(cache.x)
    for t in range(steps - 1, -1, -1):
        dh = dh_ext[:, t] + dh_next
        i_g, f_g, g_g, o_g = cache.i[:, t], cache.f[:, t], cache.g[:, t], cache.o[:, t]
        tc = cache.tc[:, t]
        c_prev = cache.c[:, t - 1] if t > 0 else np.zeros((batch, h_dim))
        h_prev = cache.h[:, t - 1] if t > 0 else np.zeros((batch, h_dim))

        do = dh * tc
        dc = dc_next + dh * o_g * (1.0 - tc * tc)
        di = dc * g_g
        df = dc * c_prev
        dg = dc * i_g
        dc_next = dc * f_g

        dgates = np.concatenate(
            [
                di * i_g * (1.0 - i_g),
                df * f_g * (1.0 - f_g),
                dg * (1.0 - g_g * g_g),
                do * o_g * (1.0 - o_g),
            ],
            axis=1,
        )
        grads["w_x"] += cache.x[:, t].T @ dgates
        grads["w_h"] += h_prev.T @ dgates
        grads["bias"] += dgates.sum(axis=0)
        dx[:, t] = dgates @ params.w_x.T
        dh_next = dgates @ params.w_h.T

    np.add.at(grads["embedding"], ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    return loss, grads


def _clip_global_norm(grads, max_norm=GRAD_CLIP_NORM):
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _pad_batch(sequences, max_seq_len):
    """Truncate to max_seq_len and right-pad with PAD to a rectangle.
    Also returns the target mask (targets at padded positions drop out)."""
    clipped = [seq[:max_seq_len] for seq in sequences]
    width = max(len(seq) for seq in clipped)
    ids = np.full((len(clipped), width), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(clipped):
        ids[row, : len(seq)] = seq
    target_mask = np.zeros((len(clipped), max(width - 1, 0)), dtype=bool)
    for row, seq in enumerate(clipped):
        target_mask[row, : len(seq) - 1] = True
    return ids, target_mask


def _as_id_lists(sequences):
    out = []
    for seq in sequences:
        ids = seq.ids if hasattr(seq, "ids") else list(seq)
        out.append(ids)
    return out


def _metrics(params, id_lists, max_seq_len, batch_size=64):
    """Next-token accuracy and total cross-entropy over real targets."""
    total_ce = 0.0
    correct = 0
    count = 0
    for start in range(0, len(id_lists), batch_size):
        chunk = id_lists[start : start + batch_size]
        ids, mask = _pad_batch(chunk, max_seq_len)
        if ids.shape[1] < 2:
            continue
        cache = _forward_batch(params, ids)
        hidden = cache.h[:, :-1].reshape(-1, params.hidden_dim)
        logits = hidden @ params.dec_w + params.dec_b
        logp = _log_softmax(logits)
        targets = ids[:, 1:].reshape(-1)
        flat_mask = mask.reshape(-1)
        picked = logp[np.arange(len(targets)), targets]
        total_ce += -picked[flat_mask].sum()
        correct += int((logp.argmax(axis=1)[flat_mask] == targets[flat_mask]).sum())
        count += int(flat_mask.sum())
    if count == 0:
        return {"accuracy": 0.0, "perplexity": float("nan"), "cross_entropy": float("nan")}
    ce = total_ce / count
    return {"accuracy": correct / count, "perplexity": float(np.exp(ce)), "cross_entropy": ce}


def train(params: LmParameters, sequences, config: LmConfig):
    """Train in place on the next-token objective.

    Returns (params, history) where history holds one entry per epoch
    (epoch 0 is the pre-training state) with accuracy and perplexity on
    the train and held-out splits.
    """
    id_lists = _as_id_lists(sequences)
    if len(id_lists) < 2:
        raise ValueError("training needs at least 2 sequences")
    for ids in id_lists:
        _check_ids(params, ids)

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(id_lists))
    n_val = min(max(1, round(config.val_fraction * len(id_lists))), len(id_lists) - 1)
    val_idx = order[:n_val]
    train_idx = order[n_val:]
    train_seqs = [id_lists[i] for i in train_idx]
    val_seqs = [id_lists[i] for i in val_idx]

    def history_row(epoch):
        tr = _metrics(params, train_seqs, config.max_seq_len)
        va = _metrics(params, val_seqs, config.max_seq_len)
        return {
            "epoch": epoch,
            "train_accuracy": tr["accuracy"],
            "train_perplexity": tr["perplexity"],
            "train_cross_entropy": tr["cross_entropy"],
            "val_accuracy": va["accuracy"],
            "val_perplexity": va["perplexity"],
            "val_cross_entropy": va["cross_entropy"],
        }

    history = [history_row(0)]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(train_seqs))
        for batch_no, start in enumerate(range(0, len(perm), config.batch_size)):
            chosen = [train_seqs[i] for i in perm[start : start + config.batch_size]]
            ids, mask = _pad_batch(chosen, config.max_seq_len)
            if ids.shape[1] < 2 or not mask.any():
                continue
            loss, grads = _loss_and_grads(params, ids, mask)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )
            _clip_global_norm(grads)
            for name, arr in params.arrays().items():
                arr -= config.learning_rate * grads[name]
        row = history_row(epoch)
        history.append(row)
        logger.info(
            "epoch %d: train ppl %.4f acc %.4f | val ppl %.4f acc %.4f",
            epoch, row["train_perplexity"], row["train_accuracy"],
            row["val_perplexity"], row["val_accuracy"],
        )
    return params, history


def perplexity(params: LmParameters, sequences, max_seq_len=None) -> float:
    """exp(mean cross-entropy) over every predicted position."""
    id_lists = _as_id_lists(sequences)
    if not id_lists:
        raise ValueError("sequences must be non-empty")
    limit = max_seq_len or max(len(s) for s in id_lists)
    return _metrics(params, id_lists, limit)["perplexity"]


def embed_function(params: LmParameters, ids) -> np.ndarray:
    """Mean of the hidden states over every position of one sequence."""
    hidden, _ = forward(params, ids)
    return hidden.mean(axis=0)


def embed_records(params: LmParameters, sequences, batch_size=64):
    """Embed many sequences; returns (function_ids, (n, d) matrix).

    Batches are padded internally; PAD positions are excluded from each
    mean, so results match per-sequence embedding exactly.
    """
    id_lists = _as_id_lists(sequences)
    function_ids = [
        seq.function_id if hasattr(seq, "function_id") else i
        for i, seq in enumerate(sequences)
    ]
    vectors = np.zeros((len(id_lists), params.hidden_dim))
    for start in range(0, len(id_lists), batch_size):
        chunk = id_lists[start : start + batch_size]
        ids, _ = _pad_batch(chunk, max(len(s) for s in chunk))
        cache = _forward_batch(params, ids)
        for row, seq in enumerate(chunk):
            vectors[start + row] = cache.h[row, : len(seq)].mean(axis=0)
    return function_ids, vectors


def save_params(params: LmParameters, config: LmConfig, path):
    payload = dict(params.arrays())
    payload["format_version"] = np.array(PARAMS_FILE_VERSION)
    payload["config_json"] = np.array(json.dumps(config.to_dict(), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_params(path):
    with np.load(path, allow_pickle=False) as data:
        version = str(data["format_version"])
        if version != PARAMS_FILE_VERSION:
            raise ValueError(f"{path}: unsupported parameters format {version!r}")
        config = LmConfig(**json.loads(str(data["config_json"])))
        params = LmParameters(
            embedding=data["embedding"],
            w_x=data["w_x"],
            w_h=data["w_h"],
            bias=data["bias"],
            dec_w=data["dec_w"],
            dec_b=data["dec_b"],
        )
    params.check_finite()
    return params, config


class LstmEmbedder(BaseEstimator, TransformerMixin):
    """Estimator wrapper: fit the language model, transform sequences to
    fixed-length function vectors.

    Parameters mirror :class:`LmConfig`; ``vocab_size`` is inferred from
    the training sequences unless passed to :meth:`fit`.
    """

    def __init__(self, embed_dim=32, epochs=10, batch_size=16, learning_rate=0.5,
                 max_seq_len=256, val_fraction=0.1, seed=0):
        self.embed_dim = embed_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_seq_len = max_seq_len
        self.val_fraction = val_fraction
        self.seed = seed

    def fit(self, X, y=None, vocab_size=None):
        id_lists = _as_id_lists(X)
        if vocab_size is None:
            vocab_size = max(max(ids) for ids in id_lists if ids) + 1
        self.config_ = LmConfig(
            vocab_size=int(vocab_size),
            embed_dim=self.embed_dim,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            max_seq_len=self.max_seq_len,
            val_fraction=self.val_fraction,
            seed=self.seed,
        )
        params = init_params(self.config_)
        self.params_, self.history_ = train(params, X, self.config_)
        return self

    def transform(self, X):
        self._check_fitted()
        _, vectors = embed_records(self.params_, X)
        return vectors

    def perplexity(self, X):
        self._check_fitted()
        return perplexity(self.params_, X, self.config_.max_seq_len)

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("LstmEmbedder is not fitted; call fit first")


def write_embeddings_csv(function_ids, vectors, path):
    """CSV with header function_id,v1,...,vd."""
    d = vectors.shape[1]
    header = "function_id," + ",".join(f"v{k + 1}" for k in range(d))
    lines = [header]
    for fid, row in zip(function_ids, vectors):
        lines.append(str(fid) + "," + ",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_embeddings_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "function_id" or len(header) < 2:
            raise ValueError(f"{path}: not an embeddings csv")
        ids = []
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            ids.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    return ids, np.asarray(rows, dtype=np.float64)
