"""Multilabel keyword predictor: TextCNN over the context, one sigmoid per
keyword. Keyword probabilities are modeled independently given the context."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import ContextRecord
from .nn import Adam, ParamStore, Rng, clip_grad_norm, no_grad
from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import embedding_init, glorot_init
from .nn.tensor import Tensor
from .vocab import KeywordVocab, PAD_ID, TokenVocab


@dataclass
class PredictorConfig:
    embed_dim: int = 200
    filter_widths: tuple[int, ...] = (3, 4, 5)
    n_filters: int = 100
    dropout: float = 0.5
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    patience: int = 5
    grad_clip: float = 5.0
    seed: int = 0
    positive_only_loss: bool = False
    per_question_targets: bool = False

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["filter_widths"] = list(self.filter_widths)
        return d

    @staticmethod
    def from_dict(d: dict) -> "PredictorConfig":
        d = dict(d)
        d["filter_widths"] = tuple(d.get("filter_widths", (3, 4, 5)))
        return PredictorConfig(**d)


@dataclass
class KeywordLogits:
    logits: np.ndarray  # (C,)
    probs: np.ndarray  # sigmoid(logits)

    def ranked(self) -> list[int]:
        """Keyword ids by descending probability; ties go to vocabulary order."""
        c = len(self.probs)
        return sorted(range(c), key=lambda i: (-self.probs[i], i))


class PredictorModel:
    def __init__(self, token_vocab: TokenVocab, keyword_vocab: KeywordVocab,
                 config: PredictorConfig, rng: Rng | None = None):
        self.token_vocab = token_vocab
        self.keyword_vocab = keyword_vocab
        self.config = config
        self.store = ParamStore()
        rng = rng or Rng(config.seed)
        V, d, C = len(token_vocab), config.embed_dim, len(keyword_vocab)
        total_filters = config.n_filters * len(config.filter_widths)
        self.emb = self.store.new("emb", embedding_init(rng, (V, d)))
        self.conv_w = {
            w: self.store.new(f"conv{w}.w", glorot_init(rng, (w, d, config.n_filters)))
            for w in config.filter_widths
        }
        self.conv_b = {
            w: self.store.new(f"conv{w}.b", np.zeros(config.n_filters))
            for w in config.filter_widths
        }
        self.out_w = self.store.new("out.w", glorot_init(rng, (total_filters, C)))
        self.out_b = self.store.new("out.b", np.zeros(C))

    # -- forward ---------------------------------------------------------------

    def _pad_batch(self, id_lists: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
        max_w = max(self.config.filter_widths)
        lens = np.array([max(len(ids), max_w) for ids in id_lists], dtype=np.int64)
        width = int(lens.max())
        ids = np.full((len(id_lists), width), PAD_ID, dtype=np.int64)
        for i, row in enumerate(id_lists):
            ids[i, : len(row)] = row
        return ids, lens

    def logits_batch(self, id_lists: list[list[int]], train: bool = False,
                     rng: Rng | None = None) -> Tensor:
        ids, lens = self._pad_batch(id_lists)
        x = T.embedding_lookup(self.emb.tensor, ids)  # (B, T, d)
        pooled = []
        for w in self.config.filter_widths:
            conv = T.conv1d_valid(x, self.conv_w[w].tensor)
            conv = T.add(conv, self.conv_b[w].tensor)
            conv = T.tanh(conv)
            # windows past a sample's true length only see PAD; mask them out
            pooled.append(T.max_over_time(conv, valid_counts=np.maximum(lens - w + 1, 1)))
        feats = T.concat(pooled, axis=1)
        feats = T.dropout(feats, self.config.dropout, rng=rng, train=train)
        return T.add(T.matmul(feats, self.out_w.tensor), self.out_b.tensor)

    def predict(self, context_tokens: list[str]) -> KeywordLogits:
        """Deterministic eval-mode keyword scores for one context."""
        if not context_tokens:
            raise ValueError("empty context")
        ids = self.token_vocab.encode(list(context_tokens))
        return self.predict_ids(ids)

    def predict_ids(self, context_ids: list[int]) -> KeywordLogits:
        if not context_ids:
            raise ValueError("empty context")
        with no_grad():
            out = self.logits_batch([context_ids], train=False)
        logits = out.data[0].copy()
        return KeywordLogits(logits=logits, probs=_sigmoid(logits))

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "predictor",
            "config": self.config.to_dict(),
            "token_vocab_digest": self.token_vocab.digest(),
            "keyword_vocab_digest": self.keyword_vocab.digest(),
        }
        save_checkpoint(path, self.store.state(), meta)

    @staticmethod
    def load(path, token_vocab: TokenVocab, keyword_vocab: KeywordVocab) -> "PredictorModel":
        state, meta = load_checkpoint(path)
        if meta.get("kind") != "predictor":
            raise ValueError(f"{path}: expected a predictor checkpoint, got {meta.get('kind')}")
        config = PredictorConfig.from_dict(meta["config"])
        model = PredictorModel(token_vocab, keyword_vocab, config)
        model.store.load_state(state)
        if meta.get("token_vocab_digest") != token_vocab.digest():
            raise ValueError(f"{path}: token vocabulary does not match checkpoint")
        if meta.get("keyword_vocab_digest") != keyword_vocab.digest():
            raise ValueError(f"{path}: keyword vocabulary does not match checkpoint")
        return model


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def precision_at_5(logits: KeywordLogits, truth_union: set[str], vocab: KeywordVocab) -> float:
    if len(vocab) < 5:
        raise ValueError("precision_at_5 needs a keyword vocabulary of size >= 5")
    top5 = logits.ranked()[:5]
    hits = sum(1 for i in top5 if vocab.entries[i] in truth_union)
    return hits / 5.0


@dataclass
class TrainResult:
    loss_curve: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    seconds: float = 0.0


def _targets_for_corpus(records: list[ContextRecord], kw_vocab: KeywordVocab,
                        per_question: bool) -> list[tuple[list[int], np.ndarray]]:
    """Pairs of (context token ids placeholder, target vector). Context ids are
    filled by the caller; here we only decide the target granularity."""
    out = []
    for rec in records:
        if per_question:
            for q in rec.questions:
                out.append((rec, kw_vocab.targets(set(q.keywords))))
        else:
            out.append((rec, kw_vocab.targets(set(rec.keyword_union()))))
    return out


def train_predictor(train_records: list[ContextRecord], valid_records: list[ContextRecord],
                    token_vocab: TokenVocab, keyword_vocab: KeywordVocab,
                    config: PredictorConfig) -> tuple[PredictorModel, TrainResult]:
    """Minimize mean keyword BCE; early stopping on validation loss."""
    if not train_records:
        raise ValueError("empty training corpus")
    if len(keyword_vocab) == 0:
        raise ValueError("empty keyword vocabulary")
    t0 = time.time()
    rng = Rng(config.seed)
    model = PredictorModel(token_vocab, keyword_vocab, config, rng=rng.derive("init"))
    opt = Adam(model.store.trainable(), lr=config.lr)
    drop_rng = rng.derive("dropout")
    order_rng = rng.derive("order")

    def encode(rec: ContextRecord) -> list[int]:
        return token_vocab.encode(list(rec.context))

    train_items = [(encode(r), t) for r, t in
                   _targets_for_corpus(train_records, keyword_vocab, config.per_question_targets)]
    valid_items = [(encode(r), t) for r, t in
                   _targets_for_corpus(valid_records, keyword_vocab, config.per_question_targets)]

    loss_fn = T.positive_only_bce if config.positive_only_loss else T.bce_with_logits
    result = TrainResult()
    best_state: dict[str, np.ndarray] | None = None
    bad_epochs = 0

    def eval_loss(items) -> float:
        if not items:
            return float("nan")
        total, count = 0.0, 0
        with no_grad():
            for lo in range(0, len(items), config.batch_size):
                chunk = items[lo : lo + config.batch_size]
                logits = model.logits_batch([c for c, _ in chunk], train=False)
                targets = np.stack([t for _, t in chunk])
                total += float(loss_fn(logits, targets).data) * len(chunk)
                count += len(chunk)
        return total / count

    for epoch in range(config.epochs):
        idx = order_rng.permutation(len(train_items))
        epoch_loss, seen = 0.0, 0
        for lo in range(0, len(idx), config.batch_size):
            chunk = [train_items[i] for i in idx[lo : lo + config.batch_size]]
            logits = model.logits_batch([c for c, _ in chunk], train=True, rng=drop_rng)
            targets = np.stack([t for _, t in chunk])
            loss = loss_fn(logits, targets)
            loss.backward()
            clip_grad_norm(opt.params, config.grad_clip)
            opt.step()
            epoch_loss += float(loss.data) * len(chunk)
            seen += len(chunk)
        val_loss = eval_loss(valid_items)
        result.loss_curve.append({"epoch": epoch, "train_loss": epoch_loss / max(seen, 1),
                                  "val_loss": val_loss})
        if np.isnan(val_loss) or val_loss < result.best_val_loss - 1e-6:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.store.state().items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                break
    if best_state is not None:
        model.store.load_state(best_state)
    result.seconds = time.time() - t0
    return model, result
