"""Reference experiments on synthetic corpora.

``multimodal_trend`` compares text, speech and fused models with clean and
ASR-corrupted evaluation text.  ``adaptation_trend`` compares a source-only
model, its adversarially adapted variant and a model trained with target
labels, on target speakers whose voices are shifted in gain and pitch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .adapt import AdaptationConfig, AdaptationCorpus, adapt_speaker
from .corpus import Corpus, build_vocab, featurize, noisy_corpus, split_corpus
from .model import DAModel, ModelConfig, TrainConfig, evaluate, train_model
from .toy import ToyConfig, default_speakers, shifted_speakers, synthesize_toy_corpus


def _train(train: Corpus, dev: Corpus, mode: str, epochs: int, lr: float, seed: int, vocab=None) -> DAModel:
    vocab = vocab or build_vocab(train)
    model = DAModel(ModelConfig(len(train.tags), len(vocab)), vocab, train.tags, seed=seed)
    train_model(model, train, TrainConfig(epochs=epochs, lr=lr, seed=seed, mode=mode), dev=dev)
    return model


@dataclass
class MultimodalTrendConfig:
    toy: ToyConfig = field(default_factory=ToyConfig)
    data_seed: int = 11
    test_seed: int = 12
    noise_seed: int = 5
    model_seed: int = 0
    wer: float = 0.3
    dev_fraction: float = 0.2
    epochs: int = 15
    lr: float = 2e-3


def multimodal_trend(cfg: MultimodalTrendConfig | None = None, log=None) -> dict:
    """Accuracies per mode on clean and noisy test text.

    The test corpus is drawn independently of the training corpus; noise is
    applied to evaluation text only.
    """
    cfg = cfg or MultimodalTrendConfig()
    started = time.perf_counter()
    full = featurize(synthesize_toy_corpus(cfg.toy, cfg.data_seed))
    test = featurize(synthesize_toy_corpus(replace(cfg.toy, id_prefix="test"), cfg.test_seed))
    train, dev, _ = split_corpus(full, (1 - cfg.dev_fraction, cfg.dev_fraction, 0.0), seed=cfg.model_seed)
    vocab = build_vocab(train)
    noisy = noisy_corpus(test, cfg.wer, cfg.noise_seed, vocab.words)
    out = {}
    for mode in ("text", "speech", "both"):
        model = _train(train, dev, mode, cfg.epochs, cfg.lr, cfg.model_seed, vocab)
        out[mode] = {"clean": evaluate(model, test, mode).accuracy, "noisy": evaluate(model, noisy, mode).accuracy}
        if log is not None:
            log(mode, out[mode])
    out["seconds"] = time.perf_counter() - started
    return out


@dataclass
class AdaptationTrendConfig:
    toy: ToyConfig = field(default_factory=ToyConfig)
    target_speakers: int = 3
    gain: float = 0.3
    freq_scale: float = 1.2
    target_conversations: int = 400
    mode: str = "speech"
    seeds: tuple[int, ...] = (10, 11, 12)
    dev_fraction: float = 0.2
    labeled_fraction: float = 2 / 3
    epochs: int = 12
    lr: float = 2e-3
    adapt: AdaptationConfig = field(default_factory=lambda: AdaptationConfig(
        batch_size=64, disc_steps=3, disc_lr=3e-3, enc_lr=1e-4, max_iterations=1500, min_iterations=1500))
    check_freeze: bool = True


def adaptation_run(cfg: AdaptationTrendConfig, seed: int) -> dict:
    """One replicate: source data, target data and model seeds all derive from ``seed``."""
    src = featurize(synthesize_toy_corpus(cfg.toy, 21 + seed))
    speakers = shifted_speakers(cfg.toy.speakers[:cfg.target_speakers], cfg.gain, cfg.freq_scale)
    trg = featurize(synthesize_toy_corpus(
        replace(cfg.toy, conversations=cfg.target_conversations, speakers=speakers, id_prefix="trg"), 22 + seed))
    train, dev, _ = split_corpus(src, (1 - cfg.dev_fraction, cfg.dev_fraction, 0.0), seed=0)
    trg_pool, trg_test, _ = split_corpus(trg, (0.5, 0.5, 0.0), seed=0)
    vocab = build_vocab(train)

    source = _train(train, dev, cfg.mode, cfg.epochs, cfg.lr, 0, vocab)
    unadapted = evaluate(source, trg_test, cfg.mode).accuracy

    # the adversarial step only ever sees the label-free view of the target pool
    result = adapt_speaker(source, AdaptationCorpus.from_corpora(train, trg_pool),
                           replace(cfg.adapt, mode=cfg.mode, seed=seed), check_freeze=cfg.check_freeze)
    adapted = evaluate(source, trg_test, cfg.mode, speech=result.encoder).accuracy

    labeled, _, _ = split_corpus(trg_pool, (cfg.labeled_fraction, 1 - cfg.labeled_fraction, 0.0), seed=0)
    supervised_model = _train(train.merged(labeled), dev, cfg.mode, cfg.epochs, cfg.lr, 0, vocab)
    supervised = evaluate(supervised_model, trg_test, cfg.mode).accuracy
    return {"seed": seed, "unadapted": unadapted, "adapted": adapted, "supervised": supervised,
            "iterations": len(result.trace), "test_utterances": trg_test.num_utterances}


def adaptation_trend(cfg: AdaptationTrendConfig | None = None, log=None) -> dict:
    """Replicates over ``cfg.seeds`` plus accuracies pooled across them.

    ``recovered`` is (adapted - unadapted) / (supervised - unadapted) on the
    pooled accuracies, i.e. the share of the supervised gain reached without
    target labels.
    """
    cfg = cfg or AdaptationTrendConfig()
    started = time.perf_counter()
    runs = []
    for seed in cfg.seeds:
        runs.append(adaptation_run(cfg, seed))
        if log is not None:
            log(runs[-1])
    pooled = {}
    for key in ("unadapted", "adapted", "supervised"):
        total = sum(r["test_utterances"] for r in runs)
        pooled[key] = sum(r[key] * r["test_utterances"] for r in runs) / total
    gap = pooled["supervised"] - pooled["unadapted"]
    recovered = (pooled["adapted"] - pooled["unadapted"]) / gap if gap > 0 else float("nan")
    return {"runs": runs, **pooled, "recovered": recovered, "seconds": time.perf_counter() - started}
