import numpy as np
import pytest

from daf.audio import MfccSequence
from daf.corpus import Conversation, Corpus, Utterance, build_vocab
from daf.model import DAModel, ModelConfig


def make_conversation(rng, T, A, n_mfcc=4, frames=(7, 11), cid="c0", words=("a", "b", "c", "d")):
    utts = []
    for _ in range(T):
        k = int(rng.integers(frames[0], frames[1] + 1))
        tokens = [words[i] for i in rng.integers(len(words), size=int(rng.integers(1, 4)))]
        utts.append(Utterance(tokens, "s", int(rng.integers(A)), MfccSequence(rng.normal(size=(k, n_mfcc)))))
    return Conversation(cid, utts)


def tiny_model(A=3, seed=0, corpus=None, scale=1.0, **dims):
    if corpus is None:
        corpus = Corpus([Conversation("v", [Utterance(["a", "b", "c", "d"], "s")])], [f"t{i}" for i in range(A)])
    vocab = build_vocab(corpus)
    cfg = ModelConfig(num_das=A, vocab_size=len(vocab), **{
        "n_mfcc": 4, "d_e": 3, "d_tx": 3, "d_sp": 2, "cnn_channels": 3, "cnn_width": 3, "cnn_stride": 2, **dims})
    model = DAModel(cfg, vocab, [f"t{i}" for i in range(A)], seed=seed)
    rng = np.random.default_rng(seed + 100)
    for name, p in model.params.items():
        if scale != 1.0 or name.startswith("decoder") or name.endswith(".b"):
            p.value = scale * rng.normal(size=p.shape) * (0.8 if name != "decoder.b" else 0.5)
    return model


def zero_model(A=3, **kw):
    model = tiny_model(A, **kw)
    for _, p in model.params.items():
        p.value = np.zeros_like(p.value)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
