"""Multimodal dialogue-act classifier with an uncertainty-propagating gated decoder.

Each utterance is encoded by a text LSTM over word embeddings and a speech
LSTM over CNN features of its MFCCs; the two final hidden states are
concatenated.  The decoder keeps a distribution ``q`` over DAs: at step t
the per-DA weights ``W[a]``, ``b[a]`` are mixed by ``q_{t-1}`` and
``q_t = softmax(W_mix @ c_t + b_mix)``.  The full distribution, never a hard
label, is carried forward, in training and at inference.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .audio import MfccSequence
from .corpus import Conversation, Corpus, CorpusError, Utterance, Vocab
from .nn import ParameterStore, Tensor

MODES = ("text", "speech", "both")
TEXT_RNN = ("text_lstm.Wx", "text_lstm.Wh", "text_lstm.b")
SPEECH_RNN = ("speech_lstm.Wx", "speech_lstm.Wh", "speech_lstm.b")
CNN = ("conv.W", "conv.b")
EMBED = ("embed",)
DECODER = ("decoder.W", "decoder.b")


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    num_das: int
    vocab_size: int
    n_mfcc: int = 13
    d_e: int = 32
    d_tx: int = 64
    d_sp: int = 64
    cnn_channels: int = 64
    cnn_width: int = 5
    cnn_stride: int = 2

    @property
    def fused_dim(self) -> int:
        return self.d_tx + self.d_sp


@dataclass
class UtteranceEncoding:
    c_tx: Tensor
    c_sp: Tensor
    fused: Tensor


def _lstm_params(rng, prefix, d_in, d_h):
    b = np.zeros(4 * d_h)
    b[d_h:2 * d_h] = 1.0  # forget gate
    return [(f"{prefix}.Wx", nn.glorot(rng, (4 * d_h, d_in))),
            (f"{prefix}.Wh", nn.glorot(rng, (4 * d_h, d_h))),
            (f"{prefix}.b", b)]


def init_params(cfg: ModelConfig, seed: int) -> ParameterStore:
    if cfg.num_das < 2:
        raise ModelError("need at least two DAs")
    rng = np.random.default_rng(seed)
    A, D = cfg.num_das, cfg.fused_dim
    items = [("embed", nn.glorot(rng, (cfg.vocab_size, cfg.d_e)))]
    items += _lstm_params(rng, "text_lstm", cfg.d_e, cfg.d_tx)
    items += [("conv.W", nn.glorot(rng, (cfg.cnn_channels, cfg.cnn_width, cfg.n_mfcc))),
              ("conv.b", np.zeros(cfg.cnn_channels))]
    items += _lstm_params(rng, "speech_lstm", cfg.cnn_channels, cfg.d_sp)
    items += [("decoder.W", np.stack([nn.glorot(rng, (A, D)) for _ in range(A)])),
              ("decoder.b", np.zeros((A, A)))]
    return ParameterStore(items)


# --------------------------------------------------------------------------
# Decoder primitives


def gate_parameters(q_prev: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """q_prev-weighted sums of the per-DA matrices W[a] (A, A, D) and biases b[a] (A, A)."""
    if q_prev.shape[0] != W.shape[0] or W.shape[0] != b.shape[0]:
        raise ModelError(f"DA count mismatch: q{q_prev.shape} W{W.shape} b{b.shape}")
    return nn.gate_mix(q_prev, W), nn.gate_mix(q_prev, b)


def check_distribution(q: np.ndarray, tol: float = 1e-9):
    if np.any(q < 0) or abs(q.sum() - 1.0) > tol:
        raise ModelError(f"invalid DA distribution {q}")


def decoder_step(q_prev: Tensor, fused: Tensor, W: Tensor, b: Tensor) -> Tensor:
    W_mix, b_mix = gate_parameters(q_prev, W, b)
    q = nn.softmax(nn.affine(fused, W_mix, b_mix))
    check_distribution(q.value)
    return q


def uniform(num_das: int) -> Tensor:
    return nn.constant(np.full(num_das, 1.0 / num_das))


# --------------------------------------------------------------------------


class DAModel:
    def __init__(self, cfg: ModelConfig, vocab: Vocab, tags: list[str], params: ParameterStore | None = None,
                 seed: int = 0):
        if cfg.vocab_size != len(vocab):
            raise ModelError(f"vocab size {len(vocab)} != configured {cfg.vocab_size}")
        if cfg.num_das != len(tags):
            raise ModelError(f"tag count {len(tags)} != configured {cfg.num_das}")
        self.cfg = cfg
        self.vocab = vocab
        self.tags = list(tags)
        self.params = params if params is not None else init_params(cfg, seed)

    @property
    def num_das(self) -> int:
        return self.cfg.num_das

    # -- encoders ----------------------------------------------------------

    def token_ids(self, utt: Utterance) -> np.ndarray:
        return self.vocab.encode(utt.tokens)

    def encode_text(self, ids) -> Tensor:
        p = self.params
        x = nn.embedding(p["embed"], ids)
        return nn.lstm_sequence(x, *(p[n] for n in TEXT_RNN))

    def conv_features(self, feats) -> Tensor:
        frames = feats.frames if isinstance(feats, MfccSequence) else np.asarray(feats)
        if frames.ndim != 2 or frames.shape[1] != self.cfg.n_mfcc:
            raise ModelError(f"expected (k, {self.cfg.n_mfcc}) MFCC frames, got {frames.shape}")
        p = self.params
        return nn.conv1d(nn.constant(frames), p["conv.W"], p["conv.b"], stride=self.cfg.cnn_stride)

    def speech_rnn(self, conv_out: Tensor, speech: ParameterStore | None = None) -> Tensor:
        store = self.params if speech is None else speech
        return nn.lstm_sequence(conv_out, *(store[n] for n in SPEECH_RNN))

    def encode_speech(self, feats, speech: ParameterStore | None = None) -> Tensor:
        """CNN over MFCC frames, then the speech LSTM; ``speech`` swaps in other RNN weights."""
        return self.speech_rnn(self.conv_features(feats), speech)

    def fuse(self, c_tx: Tensor | None, c_sp: Tensor | None) -> UtteranceEncoding:
        c_tx = c_tx if c_tx is not None else nn.constant(np.zeros(self.cfg.d_tx))
        c_sp = c_sp if c_sp is not None else nn.constant(np.zeros(self.cfg.d_sp))
        return UtteranceEncoding(c_tx, c_sp, nn.concat(c_tx, c_sp))

    def encode_utterance(self, utt: Utterance, mode: str = "both",
                         speech: ParameterStore | None = None) -> UtteranceEncoding:
        if mode not in MODES:
            raise ModelError(f"unknown mode {mode!r}; expected one of {MODES}")
        c_tx = c_sp = None
        if mode in ("text", "both"):
            if not utt.tokens and mode == "text":
                raise ModelError("mode 'text' requires tokens")
            c_tx = self.encode_text(self.token_ids(utt))
        if mode in ("speech", "both"):
            if not isinstance(utt.audio, MfccSequence):
                raise ModelError(f"mode {mode!r} requires inline MFCC features (featurize the corpus first)")
            c_sp = self.encode_speech(utt.audio, speech)
        return self.fuse(c_tx, c_sp)

    # -- decoding ----------------------------------------------------------

    def decode(self, encodings) -> list[Tensor]:
        """Chain decoder steps from a uniform q_0; returns q_1..q_T."""
        W, b = self.params["decoder.W"], self.params["decoder.b"]
        q = uniform(self.num_das)
        out = []
        for fused in encodings:
            q = decoder_step(q, fused, W, b)
            out.append(q)
        return out

    def distributions(self, conv: Conversation, mode: str = "both", speech=None) -> list[Tensor]:
        return self.decode(self.encode_utterance(u, mode, speech).fused for u in conv.utterances)

    def sequence_nll(self, conv: Conversation, mode: str = "both", speech=None) -> Tensor:
        labels = conv.labels
        if any(a is None for a in labels):
            raise CorpusError(f"missing DA label in conversation {conv.id}")
        qs = self.distributions(conv, mode, speech)
        loss = nn.neg_log_at(qs[0], labels[0])
        for q, a in zip(qs[1:], labels[1:]):
            loss = nn.add(loss, nn.neg_log_at(q, a))
        return loss

    def predict_sequence(self, conv: Conversation, mode: str = "both", speech=None) -> list[int]:
        # np.argmax picks the lowest index among ties
        return [int(np.argmax(q.value)) for q in self.distributions(conv, mode, speech)]

    # -- persistence -------------------------------------------------------

    def meta(self) -> dict:
        return {"model": asdict(self.cfg), "tags": self.tags, "vocab": self.vocab.tokens,
                "min_count": self.vocab.min_count}

    def save(self, path):
        path = Path(path)
        nn.save_checkpoint(path, self.params)
        meta_path(path).write_text(json.dumps(self.meta(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DAModel":
        path = Path(path)
        meta = json.loads(meta_path(path).read_text())
        cfg = ModelConfig(**meta["model"])
        vocab = Vocab(meta["vocab"], meta.get("min_count", 1))
        return cls(cfg, vocab, meta["tags"], nn.load_checkpoint(path))


def meta_path(checkpoint) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".json")


# --------------------------------------------------------------------------
# Training and evaluation


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0
    seed: int = 0
    mode: str = "both"


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # confusion[gold, predicted]
    total: int = field(default=0)

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "total": self.total, "confusion": self.confusion.tolist()}


def evaluate(model: DAModel, corpus: Corpus, mode: str = "both", speech=None) -> EvalResult:
    if not corpus.conversations:
        raise CorpusError("cannot evaluate on an empty corpus")
    A = model.num_das
    confusion = np.zeros((A, A), dtype=np.int64)
    for conv in corpus.conversations:
        gold = conv.labels
        if any(a is None for a in gold):
            raise CorpusError(f"missing DA label in conversation {conv.id}")
        for g, p in zip(gold, model.predict_sequence(conv, mode, speech)):
            confusion[g, p] += 1
    total = int(confusion.sum())
    return EvalResult(float(np.trace(confusion)) / total, confusion, total)


def train_model(model: DAModel, train: Corpus, cfg: TrainConfig, dev: Corpus | None = None,
                log=None) -> tuple[DAModel, list[dict]]:
    """One Adam step per conversation, for ``cfg.epochs`` seeded epochs.

    With ``dev`` given, the parameters with the best dev accuracy (earliest on
    ties, epoch 0 being the initialization) are restored at the end.
    """
    if not train.conversations:
        raise CorpusError("empty training corpus")
    if cfg.mode not in MODES:
        raise ModelError(f"unknown mode {cfg.mode!r}")
    rng = np.random.default_rng(cfg.seed)
    state = nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, clip_norm=cfg.clip_norm)
    store = model.params
    history = []
    best_acc, best = -1.0, None
    if dev is not None:
        best_acc, best = evaluate(model, dev, cfg.mode).accuracy, store.copy()

    for epoch in range(1, cfg.epochs + 1):
        total_loss, total_utts = 0.0, 0
        for i in rng.permutation(len(train.conversations)):
            conv = train.conversations[i]
            loss = model.sequence_nll(conv, cfg.mode)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, conversation {conv.id}")
            loss.backward()
            nn.adam_step(store, state)
            total_loss += value
            total_utts += len(conv)
        record = {"epoch": epoch, "loss": total_loss / total_utts}
        if dev is not None:
            acc = evaluate(model, dev, cfg.mode).accuracy
            record["dev_accuracy"] = acc
            if acc > best_acc:
                best_acc, best = acc, store.copy()
        history.append(record)
        if log is not None:
            log(record)
    if best is not None:
        store.load_values(best)
    return model, history
