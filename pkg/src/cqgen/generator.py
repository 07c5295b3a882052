"""Keyword-conditioned question generator.

Attention seq2seq (2-layer GRU encoder/decoder, Luong dot attention) with a
keyword bridge: masked keyword logits pass through dropout and a shared MLP,
then two heads produce an encoder feature (overwrites memory slot 0, so
attention can address it) and a decoder feature (replaces the first decoder
input embedding).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .corpus import TrainingPair
from .nn import Adam, GruStack, Linear, ParamStore, Rng, clip_grad_norm, no_grad
from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import embedding_init
from .nn.tensor import Tensor
from .predictor import PredictorModel
from .vocab import EOS_ID, PAD_ID, SOS_ID, TokenVocab, UNK_ID, KeywordVocab

log = logging.getLogger(__name__)

_NEG_INF = -1e30


@dataclass
class GeneratorConfig:
    embed_dim: int = 200
    hidden: int = 100
    n_layers: int = 2
    dropout: float = 0.3
    bridge_dropout: float = 0.3
    lr: float = 3e-4
    epochs: int = 60
    batch_size: int = 32
    grad_clip: float = 5.0
    seed: int = 0
    use_encoder_feature: bool = True
    use_decoder_feature: bool = True
    hard_label_bridge: bool = False
    bridge_train_input: str = "logits"  # "logits" | "hard"
    max_question_len: int = 20
    val_every: int = 1
    val_sample: int = 64
    patience: int = 8

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(**d)


@dataclass
class MaskedLogits:
    """Predictor logits with everything outside the selected keyword set zeroed."""

    values: np.ndarray  # (C,)
    keyword_set: frozenset[str]


@dataclass
class BridgeFeatures:
    encoder_feature: np.ndarray  # (hidden,)
    decoder_feature: np.ndarray  # (embed_dim,)


def mask_logits(logits: np.ndarray, keyword_set: Iterable[str], keyword_vocab: KeywordVocab,
                hard_label: bool = False) -> MaskedLogits:
    """Elementwise product of logits with the indicator of keyword_set.

    hard_label substitutes the indicator itself for the masked logits.
    """
    keyword_set = frozenset(keyword_set)
    indicator = np.zeros(len(keyword_vocab), dtype=np.float64)
    for kw in keyword_set:
        idx = keyword_vocab.index.get(kw)
        if idx is None:
            raise KeyError(f"unknown keyword: {kw!r}")
        indicator[idx] = 1.0
    values = indicator if hard_label else np.asarray(logits, dtype=np.float64) * indicator
    return MaskedLogits(values=values, keyword_set=keyword_set)


class GeneratorModel:
    def __init__(self, token_vocab: TokenVocab, keyword_vocab: KeywordVocab,
                 config: GeneratorConfig, rng: Rng | None = None):
        self.token_vocab = token_vocab
        self.keyword_vocab = keyword_vocab
        self.config = config
        self.store = ParamStore()
        rng = rng or Rng(config.seed)
        V, d, H, C = len(token_vocab), config.embed_dim, config.hidden, len(keyword_vocab)
        self.emb = self.store.new("emb", embedding_init(rng, (V, d)))
        self.encoder = GruStack.create(self.store, "enc", d, H, config.n_layers, rng, dropout=config.dropout)
        self.decoder = GruStack.create(self.store, "dec", d, H, config.n_layers, rng, dropout=config.dropout)
        self.attn_combine = Linear.create(self.store, "attn", 2 * H, H, rng)
        self.out_proj = Linear.create(self.store, "out", H, V, rng)
        self.bridge_shared = Linear.create(self.store, "bridge.shared", C, 2 * H, rng)
        self.bridge_enc = Linear.create(self.store, "bridge.enc", 2 * H, H, rng)
        self.bridge_dec = Linear.create(self.store, "bridge.dec", 2 * H, d, rng)

    # -- keyword bridge ---------------------------------------------------------

    def bridge_tensors(self, p_tilde: Tensor, train: bool = False,
                       rng: Rng | None = None) -> tuple[Tensor, Tensor]:
        """p_tilde (B, C) -> encoder features (B, H), decoder features (B, d)."""
        x = T.dropout(p_tilde, self.config.bridge_dropout, rng=rng, train=train)
        h = T.tanh(self.bridge_shared(x))
        return self.bridge_enc(h), self.bridge_dec(h)

    def bridge(self, p_tilde: np.ndarray, train_mode: bool = False,
               rng: Rng | None = None) -> BridgeFeatures:
        with no_grad():
            enc, dec = self.bridge_tensors(Tensor(np.atleast_2d(p_tilde)), train=train_mode, rng=rng)
        return BridgeFeatures(encoder_feature=enc.data[0].copy(), decoder_feature=dec.data[0].copy())

    # -- encoder ------------------------------------------------------------------

    def encode_batch(self, ids: np.ndarray, lens: np.ndarray, enc_feat: Optional[Tensor],
                     train: bool = False, rng: Rng | None = None) -> tuple[Tensor, list[Tensor], np.ndarray]:
        """ids (B, T) padded, lens (B,) true lengths.

        Returns memory (B, T, H), final per-layer states, and an additive
        attention mask (B, T) with -inf-like values on padded slots.

        Padded steps hold their hidden state, so the final state equals the
        state at each sample's true length.
        """
        B, Tmax = ids.shape
        states = self.encoder.init_state(B)
        step_outputs: list[Tensor] = []
        for t in range(Tmax):
            x_t = T.embedding_lookup(self.emb.tensor, ids[:, t])
            hold = (t < lens).astype(np.float64)[:, None]
            out, states = self.encoder.step(x_t, states, train=train, rng=rng, hold_mask=hold)
            step_outputs.append(out)
        memory = T.stack(step_outputs, axis=1)  # (B, T, H)
        if enc_feat is not None:
            first = T.reshape(enc_feat, (B, 1, self.config.hidden))
            memory = first if Tmax == 1 else T.concat([first, memory[:, 1:, :]], axis=1)
        attn_mask = np.where(np.arange(Tmax)[None, :] < lens[:, None], 0.0, _NEG_INF)
        return memory, states, attn_mask

    def encode(self, context_ids: list[int], feats: Optional[BridgeFeatures]) -> tuple[np.ndarray, list[np.ndarray]]:
        """Single-sequence eval-mode encoding -> (memory (T, H), final states)."""
        if not context_ids:
            raise ValueError("empty context")
        ids = np.asarray([context_ids], dtype=np.int64)
        lens = np.asarray([len(context_ids)], dtype=np.int64)
        enc_feat = None
        if feats is not None and self.config.use_encoder_feature:
            enc_feat = Tensor(feats.encoder_feature[None, :])
        with no_grad():
            memory, states, _ = self.encode_batch(ids, lens, enc_feat, train=False)
        return memory.data[0].copy(), [s.data[0].copy() for s in states]

    # -- decoder -------------------------------------------------------------------

    def _attend(self, h: Tensor, memory: Tensor, attn_mask: np.ndarray) -> Tensor:
        """Luong dot attention: scores h.memory, softmax, context concat, tanh."""
        scores = T.matmul(memory, T.reshape(h, (h.shape[0], h.shape[1], 1)))  # (B, T, 1)
        scores = T.add(scores, attn_mask[:, :, None])
        weights = T.softmax(scores, axis=1)
        ctx = T.sum_(T.mul(memory, weights), axis=1)  # (B, H)
        return T.tanh(self.attn_combine(T.concat([h, ctx], axis=1)))

    def decode_step_batch(self, prev_ids: np.ndarray, states: list[Tensor], memory: Tensor,
                          attn_mask: np.ndarray, step_index: int, dec_feat: Optional[Tensor],
                          train: bool = False, rng: Rng | None = None,
                          suppress_reserved: bool = True) -> tuple[Tensor, list[Tensor]]:
        """One decoder step over a batch; returns logits (B, V) and new states."""
        if step_index == 0 and dec_feat is not None and self.config.use_decoder_feature:
            x_t = dec_feat
        else:
            x_t = T.embedding_lookup(self.emb.tensor, prev_ids)
        h, new_states = self.decoder.step(x_t, states, train=train, rng=rng)
        attn_h = self._attend(h, memory, attn_mask)
        logits = self.out_proj(attn_h)
        if suppress_reserved:
            mask = np.zeros(logits.shape[1])
            mask[[PAD_ID, SOS_ID, UNK_ID]] = _NEG_INF
            logits = T.add(logits, mask)
        return logits, new_states

    def decode_step(self, prev_token_id: int, dec_state: list[np.ndarray], memory: np.ndarray,
                    step_index: int, feats: Optional[BridgeFeatures] = None) -> tuple[np.ndarray, list[np.ndarray]]:
        """Single-sequence eval-mode decode step -> (log-probs (V,), new state)."""
        states = [Tensor(s[None, :]) for s in dec_state]
        dec_feat = None
        if step_index == 0 and feats is not None and self.config.use_decoder_feature:
            dec_feat = Tensor(feats.decoder_feature[None, :])
        attn_mask = np.zeros((1, memory.shape[0]))
        with no_grad():
            logits, new_states = self.decode_step_batch(
                np.asarray([prev_token_id]), states, Tensor(memory[None, :, :]), attn_mask,
                step_index, dec_feat, train=False)
            logprobs = T.log_softmax(logits, axis=1)
        return logprobs.data[0].copy(), [s.data[0].copy() for s in new_states]

    # -- persistence -------------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "generator",
            "config": self.config.to_dict(),
            "token_vocab_digest": self.token_vocab.digest(),
            "keyword_vocab_digest": self.keyword_vocab.digest(),
        }
        save_checkpoint(path, self.store.state(), meta)

    @staticmethod
    def load(path, token_vocab: TokenVocab, keyword_vocab: KeywordVocab) -> "GeneratorModel":
        state, meta = load_checkpoint(path)
        if meta.get("kind") != "generator":
            raise ValueError(f"{path}: expected a generator checkpoint, got {meta.get('kind')}")
        config = GeneratorConfig.from_dict(meta["config"])
        model = GeneratorModel(token_vocab, keyword_vocab, config)
        model.store.load_state(state)
        if meta.get("token_vocab_digest") != token_vocab.digest():
            raise ValueError(f"{path}: token vocabulary does not match checkpoint")
        if meta.get("keyword_vocab_digest") != keyword_vocab.digest():
            raise ValueError(f"{path}: keyword vocabulary does not match checkpoint")
        return model


# -- decode sessions -------------------------------------------------------------


class DecodeSession:
    """A generator bound to one context and one conditioning keyword set.

    Exposes the two-call protocol the decoding strategies consume:
    initial() -> (log-probs, state); step(state, token) -> (log-probs, state).
    State is (per-layer hidden, step_index).
    """

    def __init__(self, model: GeneratorModel, context_ids: list[int],
                 p_tilde: Optional[np.ndarray], use_bridge: bool = True):
        self.model = model
        self.eos_id = EOS_ID
        self.vocab_size = len(model.token_vocab)
        feats: Optional[BridgeFeatures] = None
        if use_bridge and p_tilde is not None:
            feats = model.bridge(p_tilde)
        self._feats = feats
        self._memory, self._init_states = model.encode(context_ids, feats)

    def initial(self) -> tuple[np.ndarray, tuple]:
        logprobs, states = self.model.decode_step(SOS_ID, self._init_states, self._memory, 0, self._feats)
        return logprobs, (states, 1)

    def step(self, state: tuple, token: int) -> tuple[np.ndarray, tuple]:
        states, step_index = state
        logprobs, new_states = self.model.decode_step(int(token), states, self._memory,
                                                      step_index, self._feats)
        return logprobs, (new_states, step_index + 1)


# -- training ------------------------------------------------------------------------


@dataclass
class GeneratorTrainResult:
    loss_curve: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_bleu: float = -1.0
    skipped_pairs: int = 0
    seconds: float = 0.0


def _pad_ids(id_lists: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    lens = np.array([len(x) for x in id_lists], dtype=np.int64)
    out = np.full((len(id_lists), int(lens.max())), PAD_ID, dtype=np.int64)
    for i, row in enumerate(id_lists):
        out[i, : len(row)] = row
    return out, lens


def teacher_forcing_loss(model: GeneratorModel, contexts: list[list[int]],
                         questions: list[list[int]], p_tilde: np.ndarray,
                         train: bool = False, rng: Rng | None = None) -> tuple[Tensor, int]:
    """Mean per-token negative log-likelihood of questions given contexts and
    masked keyword logits. Returns (loss, token count)."""
    B = len(contexts)
    ctx_ids, ctx_lens = _pad_ids(contexts)
    tgt_ids, tgt_lens = _pad_ids([q + [EOS_ID] for q in questions])
    dec_in = np.full_like(tgt_ids, PAD_ID)
    dec_in[:, 0] = SOS_ID
    dec_in[:, 1:] = tgt_ids[:, :-1]

    enc_feat_t = dec_feat_t = None
    if model.config.use_encoder_feature or model.config.use_decoder_feature:
        enc_feat_t, dec_feat_t = model.bridge_tensors(Tensor(p_tilde), train=train, rng=rng)
    memory, states, attn_mask = model.encode_batch(
        ctx_ids, ctx_lens, enc_feat_t if model.config.use_encoder_feature else None,
        train=train, rng=rng)

    total = None
    n_tokens = int(tgt_lens.sum())
    for t in range(tgt_ids.shape[1]):
        logits, states = model.decode_step_batch(
            dec_in[:, t], states, memory, attn_mask, t,
            dec_feat_t if model.config.use_decoder_feature else None,
            train=train, rng=rng, suppress_reserved=False)
        step_loss = T.cross_entropy(logits, tgt_ids[:, t])  # (B,)
        valid = (t < tgt_lens).astype(np.float64)
        term = T.sum_(T.mul(step_loss, valid))
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / n_tokens), n_tokens


def build_bridge_inputs(pairs: list[TrainingPair], keyword_vocab: KeywordVocab,
                        predictor: Optional[PredictorModel], mode: str,
                        hard_label: bool) -> tuple[list[TrainingPair], np.ndarray, int]:
    """Masked bridge input per pair: ground-truth-masked predictor logits when a
    predictor is available (mode "logits"), else the hard indicator of the
    ground-truth keywords. Pairs without keywords are skipped."""
    kept: list[TrainingPair] = []
    rows: list[np.ndarray] = []
    skipped = 0
    logits_cache: dict[str, np.ndarray] = {}
    vocab_set = set(keyword_vocab.entries)
    use_logits = mode == "logits" and predictor is not None and not hard_label
    for p in pairs:
        in_vocab = p.keywords & vocab_set
        if not in_vocab:
            skipped += 1
            continue
        if use_logits:
            key = p.record_id
            if key not in logits_cache:
                logits_cache[key] = predictor.predict_ids(p.context_ids).logits
            masked = mask_logits(logits_cache[key], in_vocab, keyword_vocab)
        else:
            masked = mask_logits(np.zeros(len(keyword_vocab)), in_vocab,
                                 keyword_vocab, hard_label=True)
        kept.append(p)
        rows.append(masked.values)
    if skipped:
        log.warning("skipped %d pairs with no in-vocabulary keywords", skipped)
    mat = np.stack(rows) if rows else np.zeros((0, len(keyword_vocab)))
    return kept, mat, skipped


def greedy_decode(model: GeneratorModel, context_ids: list[int], p_tilde: Optional[np.ndarray],
                  max_len: int | None = None) -> list[int]:
    """Plain argmax decode, used for validation checkpoint selection."""
    session = DecodeSession(model, context_ids, p_tilde)
    max_len = max_len or model.config.max_question_len
    logprobs, state = session.initial()
    out: list[int] = []
    tok = int(np.argmax(logprobs))
    while len(out) < max_len:
        if tok == EOS_ID:
            break
        out.append(tok)
        logprobs, state = session.step(state, tok)
        tok = int(np.argmax(logprobs))
    return out


def train_generator(train_pairs: list[TrainingPair], valid_pairs: list[TrainingPair],
                    token_vocab: TokenVocab, keyword_vocab: KeywordVocab,
                    config: GeneratorConfig,
                    predictor: Optional[PredictorModel] = None) -> tuple[GeneratorModel, GeneratorTrainResult]:
    """MLE training with teacher forcing; the conditioning keyword set is the
    ground-truth set of each question. Checkpoint selection by validation BLEU.

    Predictor parameters are never updated here: its logits enter as constants.
    """
    from .metrics import corpus_bleu  # local import to avoid a module cycle

    if not train_pairs:
        raise ValueError("empty training corpus")
    t0 = time.time()
    rng = Rng(config.seed)
    model = GeneratorModel(token_vocab, keyword_vocab, config, rng=rng.derive("init"))
    opt = Adam(model.store.trainable(), lr=config.lr)
    drop_rng = rng.derive("dropout")
    order_rng = rng.derive("order")

    result = GeneratorTrainResult()
    kept, bridge_rows, skipped = build_bridge_inputs(
        train_pairs, keyword_vocab, predictor, config.bridge_train_input, config.hard_label_bridge)
    result.skipped_pairs = skipped
    val_kept, val_bridge, _ = build_bridge_inputs(
        valid_pairs, keyword_vocab, predictor, config.bridge_train_input, config.hard_label_bridge)
    if config.val_sample and len(val_kept) > config.val_sample:
        pick = rng.derive("val").choice(len(val_kept), size=config.val_sample, replace=False)
        val_kept = [val_kept[i] for i in pick]
        val_bridge = val_bridge[pick]

    # sort by context length so batches pad less
    order = sorted(range(len(kept)), key=lambda i: len(kept[i].context_ids))
    kept = [kept[i] for i in order]
    bridge_rows = bridge_rows[order]

    def val_bleu() -> float:
        if not val_kept:
            return float("nan")
        hyps, refs = [], []
        by_record: dict[str, list[list[str]]] = {}
        for p in val_kept:
            by_record.setdefault(p.record_id, []).append(token_vocab.decode(p.question_ids))
        seen: set[str] = set()
        for p, row in zip(val_kept, val_bridge):
            if p.record_id in seen:
                continue
            seen.add(p.record_id)
            ids = greedy_decode(model, p.context_ids, row)
            hyps.append(token_vocab.decode(ids))
            refs.append(by_record[p.record_id])
        return corpus_bleu(hyps, refs)

    best_state = {k: v.copy() for k, v in model.store.state().items()}
    bad_epochs = 0
    n_batches = (len(kept) + config.batch_size - 1) // config.batch_size
    for epoch in range(config.epochs):
        batch_order = order_rng.permutation(n_batches)
        epoch_loss, epoch_tokens = 0.0, 0
        for b in batch_order:
            lo = b * config.batch_size
            chunk = kept[lo : lo + config.batch_size]
            if not chunk:
                continue
            loss, n_tok = teacher_forcing_loss(
                model, [p.context_ids for p in chunk], [p.question_ids for p in chunk],
                bridge_rows[lo : lo + config.batch_size], train=True, rng=drop_rng)
            loss.backward()
            clip_grad_norm(opt.params, config.grad_clip)
            opt.step()
            epoch_loss += float(loss.data) * n_tok
            epoch_tokens += n_tok
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(epoch_tokens, 1)}
        if (epoch + 1) % config.val_every == 0:
            bleu = val_bleu()
            entry["val_bleu"] = bleu
            if np.isnan(bleu) or bleu > result.best_val_bleu + 1e-9:
                result.best_val_bleu = bleu
                result.best_epoch = epoch
                best_state = {k: v.copy() for k, v in model.store.state().items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
        result.loss_curve.append(entry)
        if bad_epochs > config.patience:
            break
    model.store.load_state(best_state)
    result.seconds = time.time() - t0
    return model, result
