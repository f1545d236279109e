"""Adversarial speaker adaptation of the speech encoder.

A logistic domain classifier ``C(r) = sigmoid(W_C r + b_C)`` learns to tell
source encodings (frozen source model) from target encodings; a copy of the
speech LSTM is trained to make target encodings look like source ones.  The
two objectives alternate, each with its own Adam state.  Nothing here reads a
DA label: ``AdaptationCorpus`` strips them on construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .audio import MfccSequence
from .corpus import Conversation, Corpus, CorpusError, Utterance
from .model import MODES, SPEECH_RNN, DAModel, ModelError
from .nn import ParameterStore, Tensor

DOMAIN_PARAMS = ("domain.W", "domain.b")


class AdaptationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdaptationCorpus:
    source: tuple[Utterance, ...]
    target: tuple[Utterance, ...]

    def __post_init__(self):
        if not self.source or not self.target:
            raise CorpusError("adaptation corpus needs nonempty source and target sides")
        strip = lambda us: tuple(replace(u, label=None) for u in us)  # noqa: E731
        object.__setattr__(self, "source", strip(self.source))
        object.__setattr__(self, "target", strip(self.target))

    @classmethod
    def from_corpora(cls, source: Corpus, target: Corpus) -> "AdaptationCorpus":
        return cls(tuple(source.utterances()), tuple(target.utterances()))

    @property
    def source_speakers(self) -> list[str]:
        return sorted({u.speaker for u in self.source})

    @property
    def target_speakers(self) -> list[str]:
        return sorted({u.speaker for u in self.target})


@dataclass
class AdaptationConfig:
    disc_steps: int = 1
    enc_steps: int = 1
    batch_size: int = 16
    max_iterations: int = 500
    min_iterations: int = 50
    window: int = 10
    band: float = 0.05
    heldout: float = 0.2
    disc_lr: float = 1e-3
    enc_lr: float = 1e-4
    clip_norm: float | None = 5.0
    seed: int = 0
    mode: str = "speech"

    def validate(self):
        if min(self.disc_steps, self.enc_steps, self.batch_size, self.max_iterations, self.window) < 1:
            raise AdaptationError("adaptation counts must be positive")
        if not 0.0 < self.band < 0.5:
            raise AdaptationError("band must lie in (0, 0.5)")
        if not 0.0 < self.heldout < 1.0:
            raise AdaptationError("heldout fraction must lie in (0, 1)")
        if self.mode not in ("speech", "both"):
            raise AdaptationError("adaptation needs a mode that uses speech")


def init_domain_classifier(dim: int, seed: int = 0, zero: bool = False) -> ParameterStore:
    rng = np.random.default_rng(seed)
    W = np.zeros((1, dim)) if zero else nn.glorot(rng, (1, dim))
    return ParameterStore([("domain.W", W), ("domain.b", np.zeros(1))])


def domain_logits(r: Tensor, phi: ParameterStore, trainable: bool = True) -> Tensor:
    """W_C r + b_C for r of shape (D,) or (n, D); returns shape (…,)."""
    W, b = phi["domain.W"], phi["domain.b"]
    if not trainable:
        W, b = nn.constant(W.value), nn.constant(b.value)
    if r.shape[-1] != W.shape[1]:
        raise ModelError(f"encoding width {r.shape[-1]} != classifier width {W.shape[1]}")
    z = nn.affine(r, W, b)
    return _squeeze_last(z)


def _squeeze_last(z: Tensor) -> Tensor:
    shape = z.shape[:-1]

    def backward(out):
        if z.requires_grad:
            z.grad += out.grad.reshape(z.shape)

    return Tensor(z.value.reshape(shape), (z,), backward)


def classify_domain(r, phi: ParameterStore) -> float | np.ndarray:
    """Probability that encoding(s) ``r`` come from the source domain."""
    z = domain_logits(nn.constant(np.asarray(r, dtype=np.float64)), phi)
    out = nn.ops.sigmoid_np(np.atleast_1d(z.value))
    return float(out[0]) if np.ndim(r) == 1 else out


def discriminator_loss(src: Tensor, trg: Tensor, phi: ParameterStore) -> Tensor:
    """L1 = -mean log C(src) - mean log(1 - C(trg)); encodings enter as constants."""
    if src.shape[0] == 0 or trg.shape[0] == 0:
        raise CorpusError("empty batch")
    z_src = domain_logits(nn.constant(src.value), phi)
    z_trg = domain_logits(nn.constant(trg.value), phi)
    return nn.add(nn.mean(nn.neg_log_sigmoid(z_src)), nn.mean(nn.neg_log_sigmoid(nn.scale(z_trg, -1.0))))


def target_encoder_loss(trg: Tensor, phi: ParameterStore) -> Tensor:
    """L2 = -mean log C(trg), with the classifier held fixed."""
    if trg.shape[0] == 0:
        raise CorpusError("empty batch")
    return nn.mean(nn.neg_log_sigmoid(domain_logits(trg, phi, trainable=False)))


def copy_speech_encoder(model: DAModel) -> ParameterStore:
    return ParameterStore((n, model.params[n].value.copy()) for n in SPEECH_RNN)


class _Encoder:
    """Fused encodings with everything frozen except the target speech RNN.

    CNN outputs (and text encodings in "both" mode) are computed once; the
    speech RNN then runs batched over utterances of equal length.
    """

    def __init__(self, model: DAModel, mode: str):
        self.model, self.mode = model, mode
        self.d_tx = model.cfg.d_tx

    def prepare(self, utt: Utterance):
        if not isinstance(utt.audio, MfccSequence):
            raise ModelError("adaptation requires inline MFCC features (featurize first)")
        conv = self.model.conv_features(utt.audio).value
        text = np.zeros(self.d_tx)
        if self.mode == "both":
            text = self.model.encode_text(self.model.token_ids(utt)).value
        return conv, text

    def fused_batch(self, items, speech: ParameterStore) -> Tensor:
        """Rows of [text code, speech code], in the order of ``items``."""
        groups: dict[int, list[int]] = {}
        for i, (conv, _) in enumerate(items):
            groups.setdefault(conv.shape[0], []).append(i)
        weights = [speech[n] for n in SPEECH_RNN]
        parts, order = [], []
        for length in sorted(groups):
            idx = groups[length]
            parts.append(nn.lstm_batch(nn.constant(np.stack([items[i][0] for i in idx])), *weights))
            order.extend(idx)
        rows = parts[0] if len(parts) == 1 else nn.concat_rows(parts)
        rows = nn.take_rows(rows, np.argsort(order, kind="stable"))
        return nn.concat(nn.constant(np.stack([t for _, t in items])), rows)

    def codes(self, items, speech: ParameterStore) -> np.ndarray:
        return self.fused_batch(items, speech).value


@dataclass
class AdaptationResult:
    encoder: ParameterStore
    classifier: ParameterStore
    trace: list[dict]
    stopped_early: bool


def heldout_accuracy(src: np.ndarray, trg: np.ndarray, phi: ParameterStore) -> float:
    p_src = classify_domain(src, phi)
    p_trg = classify_domain(trg, phi)
    return 0.5 * (float(np.mean(p_src > 0.5)) + float(np.mean(p_trg < 0.5)))


def adapt_speaker(source_model: DAModel, corpus: AdaptationCorpus, cfg: AdaptationConfig,
                  log=None, check_freeze: bool = False) -> AdaptationResult:
    """Train a target speech RNN against a domain classifier.

    The target RNN starts as a copy of the source speech RNN.  Each iteration
    runs ``disc_steps`` classifier updates then ``enc_steps`` encoder updates
    on freshly sampled batches.  Training stops after ``max_iterations`` or,
    once ``min_iterations`` have run, when held-out classifier accuracy has
    stayed within 0.5 +/- band for ``window`` consecutive iterations.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    enc = _Encoder(source_model, cfg.mode)
    source_bytes = source_model.params.snapshot() if check_freeze else None

    src_all = [enc.prepare(u) for u in corpus.source]
    trg_all = [enc.prepare(u) for u in corpus.target]
    src_codes = enc.codes(src_all, source_model.params)

    def holdout(n):
        order = rng.permutation(n)
        k = max(1, int(round(cfg.heldout * n)))
        if k >= n:
            raise CorpusError("too few utterances to hold out for classifier accuracy")
        return order[k:], order[:k]

    src_train, src_held = holdout(len(src_all))
    trg_train, trg_held = holdout(len(trg_all))

    target = copy_speech_encoder(source_model)
    phi = init_domain_classifier(source_model.cfg.fused_dim, seed=cfg.seed)
    disc_state = nn.AdamState(lr=cfg.disc_lr, clip_norm=cfg.clip_norm)
    enc_state = nn.AdamState(lr=cfg.enc_lr, clip_norm=cfg.clip_norm)

    def batch(pool):
        return rng.choice(pool, size=min(cfg.batch_size, len(pool)), replace=False)

    def trg_codes(idx):
        return enc.codes([trg_all[i] for i in idx], target)

    trace, streak, stopped = [], 0, False
    for it in range(1, cfg.max_iterations + 1):
        before = target.snapshot() if check_freeze else None
        l1 = 0.0
        for _ in range(cfg.disc_steps):
            loss = discriminator_loss(nn.constant(src_codes[batch(src_train)]),
                                      nn.constant(trg_codes(batch(trg_train))), phi)
            l1 = _finite(loss, "L1", it)
            loss.backward()
            nn.adam_step(phi, disc_state)
        if check_freeze and target.snapshot() != before:
            raise AdaptationError("target encoder changed during a classifier step")

        before = phi.snapshot() if check_freeze else None
        l2 = 0.0
        for _ in range(cfg.enc_steps):
            loss = target_encoder_loss(enc.fused_batch([trg_all[i] for i in batch(trg_train)], target), phi)
            l2 = _finite(loss, "L2", it)
            loss.backward()
            nn.adam_step(target, enc_state)
        if check_freeze and phi.snapshot() != before:
            raise AdaptationError("domain classifier changed during an encoder step")
        if check_freeze and source_model.params.snapshot() != source_bytes:
            raise AdaptationError("source model changed during adaptation")

        acc = heldout_accuracy(src_codes[src_held], trg_codes(trg_held), phi)
        record = {"iteration": it, "L1": l1, "L2": l2, "disc_accuracy": acc}
        trace.append(record)
        if log is not None:
            log(record)
        streak = streak + 1 if abs(acc - 0.5) <= cfg.band else 0
        if it >= cfg.min_iterations and streak >= cfg.window:
            stopped = True
            break
    return AdaptationResult(target, phi, trace, stopped)


def _finite(loss: Tensor, name: str, it: int) -> float:
    value = float(loss.value)
    if not np.isfinite(value):
        raise AdaptationError(f"non-finite {name} at iteration {it}")
    return value


def predict_with_adapted(target_encoder: ParameterStore, source_model: DAModel, conv: Conversation,
                         mode: str = "speech") -> list[int]:
    """Source-model decoding with the adapted speech RNN substituted in."""
    if mode not in MODES:
        raise ModelError(f"unknown mode {mode!r}")
    for n in SPEECH_RNN:
        if target_encoder[n].shape != source_model.params[n].shape:
            raise ModelError(f"dimension mismatch for {n}")
    return source_model.predict_sequence(conv, mode, speech=target_encoder)


def write_trace(path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "L1", "L2", "disc_accuracy"])
        for r in trace:
            writer.writerow([r["iteration"], repr(r["L1"]), repr(r["L2"]), repr(r["disc_accuracy"])])


def read_trace(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return [{"iteration": int(r["iteration"]), "L1": float(r["L1"]), "L2": float(r["L2"]),
                 "disc_accuracy": float(r["disc_accuracy"])} for r in csv.DictReader(fh)]
