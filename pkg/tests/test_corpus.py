import itertools

import numpy as np
import pytest

from daf.audio import MfccConfig, MfccSequence, mfcc
from daf.corpus import (
    UNK,
    Conversation,
    Corpus,
    CorpusError,
    Utterance,
    build_vocab,
    featurize,
    load_corpus,
    noisy_corpus,
    save_corpus,
    simulate_asr_noise,
    split_corpus,
    word_error_rate,
)
from daf.toy import SpeakerProfile, ToyConfig, synthesize_toy_corpus


def _dummy_corpus(n):
    convs = [Conversation(f"c{i:04d}", [Utterance(["hi"], "s")]) for i in range(n)]
    return Corpus(convs, ["a", "b"])


def test_load_minimal(tmp_path):
    path = tmp_path / "c.conv"
    path.write_text("#tags st qu\n#conv x\nA\tqu\t-\thello there\n")
    corpus = load_corpus(path)
    assert len(corpus) == 1
    assert len(corpus.conversations[0]) == 1
    u = corpus.conversations[0].utterances[0]
    assert u.tokens == ["hello", "there"] and u.label == 1 and u.speaker == "A" and u.audio is None


def test_unknown_tag_names_line(tmp_path):
    path = tmp_path / "c.conv"
    path.write_text("#tags st qu\n#conv x\nA\tst\t-\thi\nB\tzz\t-\tho\n")
    with pytest.raises(CorpusError, match="line 4.*unknown DA tag"):
        load_corpus(path)


def test_malformed_record_and_dangling_audio(tmp_path):
    path = tmp_path / "c.conv"
    path.write_text("#tags st\n#conv x\nA st - hi\n")
    with pytest.raises(CorpusError, match="line 3: malformed"):
        load_corpus(path)
    path.write_text("#tags st\n#conv x\nA\tst\tnope.wav\thi\n")
    with pytest.raises(CorpusError, match="line 3: dangling audio"):
        load_corpus(path)
    path.write_text("#tags st\n#speakers A\n#conv x\nB\tst\t-\thi\n")
    with pytest.raises(CorpusError, match="not in roster"):
        load_corpus(path)


def test_roundtrip_with_audio(tmp_path):
    corpus = synthesize_toy_corpus(ToyConfig(conversations=3, length=2), seed=0)
    save_corpus(corpus, tmp_path / "toy.conv")
    back = load_corpus(tmp_path / "toy.conv")
    assert back.tags == corpus.tags and back.speakers == corpus.speakers
    for a, b in zip(corpus.conversations, back.conversations):
        assert a.id == b.id
        for ua, ub in zip(a.utterances, b.utterances):
            assert (ua.tokens, ua.speaker, ua.label) == (ub.tokens, ub.speaker, ub.label)
            assert isinstance(ub.audio, str) and (tmp_path / ub.audio).exists()
    save_corpus(back, tmp_path / "again.conv")
    assert (tmp_path / "again.conv").read_text() == (tmp_path / "toy.conv").read_text()


def test_featurized_roundtrip_through_caches(tmp_path):
    corpus = featurize(synthesize_toy_corpus(ToyConfig(conversations=2, length=2), seed=0))
    save_corpus(corpus, tmp_path / "f.conv", audio_dir="feats")
    back = featurize(load_corpus(tmp_path / "f.conv"))
    for ua, ub in zip(corpus.utterances(), back.utterances()):
        assert ua.audio.frames.tobytes() == ub.audio.frames.tobytes()


def test_vocab_ordering_and_threshold():
    corpus = Corpus([Conversation("x", [Utterance(["a", "a", "b"], "s")])], ["t"])
    v1 = build_vocab(corpus, min_count=1)
    assert v1.tokens[:2] == ["<unk>", "<pad>"]
    assert v1["a"] == 2 and v1["b"] == 3
    v2 = build_vocab(corpus, min_count=2)
    assert v2["b"] == UNK and v2["a"] == 2
    assert build_vocab(corpus, 1).tokens == v1.tokens
    tie = Corpus([Conversation("x", [Utterance(["z", "y"], "s")])], ["t"])
    assert build_vocab(tie).tokens[2:] == ["y", "z"]
    assert list(v1.encode([])) == [UNK]


def test_split_ratio_floor_rule():
    train, dev, test = split_corpus(_dummy_corpus(128), (0.8, 0.1, 0.1), seed=3)
    assert (len(train), len(dev), len(test)) == (102, 12, 14)
    ids = [c.id for part in (train, dev, test) for c in part.conversations]
    assert sorted(ids) == sorted(c.id for c in _dummy_corpus(128).conversations)
    again = split_corpus(_dummy_corpus(128), (0.8, 0.1, 0.1), seed=3)
    assert [c.id for c in again[0].conversations] == [c.id for c in train.conversations]


def test_split_list_mode_switchboard_sizes():
    corpus = _dummy_corpus(1155)
    ids = [c.id for c in corpus.conversations]
    train, dev, test = split_corpus(corpus, lists=(ids[:1115], ids[1115:1136], ids[1136:]))
    assert (len(train), len(dev), len(test)) == (1115, 21, 19)


def test_split_list_mode_errors():
    corpus = _dummy_corpus(4)
    with pytest.raises(CorpusError, match="duplicated"):
        split_corpus(corpus, lists=(["c0000", "c0001"], ["c0001"], ["c0002", "c0003"]))
    with pytest.raises(CorpusError, match="unknown"):
        split_corpus(corpus, lists=(["c0000", "c0001"], ["zz"], ["c0002", "c0003"]))


def test_asr_identity_and_range():
    u = Utterance(["a", "b", "c"], "s", 0)
    assert simulate_asr_noise(u, 0.0, 1, ["a", "b"]).tokens == ["a", "b", "c"]
    with pytest.raises(CorpusError):
        simulate_asr_noise(u, 1.0, 1, ["a", "b"])
    with pytest.raises(CorpusError):
        simulate_asr_noise(u, -0.1, 1, ["a", "b"])


def test_asr_never_empties_and_keeps_label_and_audio():
    feats = MfccSequence(np.zeros((3, 2)))
    rng = np.random.default_rng(0)
    for _ in range(500):
        u = Utterance(["only"], "s", 1, feats)
        out = simulate_asr_noise(u, 0.95, rng, ["x", "y", "only"])
        assert out.tokens and out.label == 1 and out.audio is feats


def test_asr_measured_wer_close_to_target():
    rng = np.random.default_rng(42)
    vocab = [f"w{i}" for i in range(50)]
    for wer in (0.1, 0.3):
        errors = total = 0
        while total < 10000:
            ref = [vocab[i] for i in rng.integers(50, size=10)]
            hyp = simulate_asr_noise(Utterance(ref, "s"), wer, rng, vocab).tokens
            errors += word_error_rate(ref, hyp) * len(ref)
            total += len(ref)
        assert abs(errors / total - wer) <= 0.03


def test_noisy_corpus_is_seeded():
    corpus = synthesize_toy_corpus(ToyConfig(conversations=3), seed=0)
    a = noisy_corpus(corpus, 0.3, seed=1)
    b = noisy_corpus(corpus, 0.3, seed=1)
    assert [u.tokens for u in a.utterances()] == [u.tokens for u in b.utterances()]
    assert [u.label for u in a.utterances()] == [u.label for u in corpus.utterances()]


def test_word_error_rate():
    assert word_error_rate("a b c".split(), "a b c".split()) == 0.0
    assert word_error_rate("a b c".split(), "a x c d".split()) == pytest.approx(2 / 3)


# --------------------------------------------------------------------------
# synthetic generator


def _cue_bayes(cfg: ToyConfig, use_text: bool, use_audio: bool) -> float:
    """Single-utterance Bayes accuracy by enumerating cue outcomes of the generator."""
    A, pt, pa = cfg.num_das, cfg.p_text, cfg.p_audio
    prior = np.full(A, 1.0 / A)
    text_outcomes = list(range(A)) + [None] if use_text else [None]
    audio_outcomes = list(range(A)) if use_audio else [None]
    acc = 0.0
    for kw, tone in itertools.product(text_outcomes, audio_outcomes):
        joint = np.zeros(A)
        for a in range(A):
            p = prior[a]
            if use_text:
                p *= pt if kw == a else (1 - pt) if kw is None else 0.0
            if use_audio:
                p *= pa * (tone == a) + (1 - pa) / A
            joint[a] = p
        acc += joint.max()
    return acc


def test_cue_combination_beats_single_cues():
    cfg = ToyConfig(p_text=0.7, p_audio=0.7)
    text, audio, both = _cue_bayes(cfg, True, False), _cue_bayes(cfg, False, True), _cue_bayes(cfg, True, True)
    assert text == pytest.approx(0.7 + 0.3 / 4)
    assert audio == pytest.approx(0.7 + 0.3 / 4)
    assert both > max(text, audio) + 0.05


def _dominant_class(signal, cfg):
    spec = np.abs(np.fft.rfft(signal.samples))
    peak = np.argmax(spec) * signal.sample_rate / len(signal.samples)
    return int(np.argmin(np.abs(np.log(peak / cfg.da_frequencies()))))


def test_perfect_cues_give_perfect_rule():
    cfg = ToyConfig(conversations=10, p_text=1.0, p_audio=1.0,
                    speakers=[SpeakerProfile("a"), SpeakerProfile("b")])
    corpus = synthesize_toy_corpus(cfg, seed=5)
    for u in corpus.utterances():
        keywords = [t for t in u.tokens if t.startswith("kw")]
        assert len(keywords) == 1 and int(keywords[0][2:].split("_")[0]) == u.label
        assert _dominant_class(u.audio, cfg) == u.label


def test_cue_rates_match_configuration():
    cfg = ToyConfig(conversations=150, p_text=0.7, p_audio=0.7, speakers=[SpeakerProfile("a"), SpeakerProfile("b")])
    corpus = synthesize_toy_corpus(cfg, seed=9)
    utts = list(corpus.utterances())
    text_hit = np.mean([any(t.startswith(f"kw{u.label}_") for t in u.tokens) for u in utts])
    audio_hit = np.mean([_dominant_class(u.audio, cfg) == u.label for u in utts])
    assert abs(text_hit - 0.7) < 0.03
    assert abs(audio_hit - (0.7 + 0.3 / 4)) < 0.03


def test_generator_is_byte_deterministic(tmp_path):
    cfg = ToyConfig(conversations=4, length=3)
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        save_corpus(synthesize_toy_corpus(cfg, seed=7), tmp_path / name / "c.conv")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 1 + 4 * 3
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    other = synthesize_toy_corpus(cfg, seed=8)
    assert [u.tokens for u in other.utterances()] != [u.tokens for u in synthesize_toy_corpus(cfg, 7).utterances()]


def test_degenerate_config_rejected():
    with pytest.raises(CorpusError):
        synthesize_toy_corpus(ToyConfig(num_das=1), seed=0)
    with pytest.raises(CorpusError):
        synthesize_toy_corpus(ToyConfig(speakers=[]), seed=0)


def test_audio_class_recoverable_by_nearest_centroid():
    cfg = ToyConfig(conversations=60)
    probe = synthesize_toy_corpus(cfg, seed=1)
    held = synthesize_toy_corpus(cfg, seed=2)
    mcfg = MfccConfig()

    def feats(corpus):
        x = np.array([mfcc(u.audio, mcfg).frames.mean(axis=0) for u in corpus.utterances()])
        return x, np.array([u.label for u in corpus.utterances()])

    x, y = feats(probe)
    mu, sd = x.mean(axis=0), x.std(axis=0) + 1e-9
    centroids = np.array([((x[y == a] - mu) / sd).mean(axis=0) for a in range(cfg.num_das)])
    xt, yt = feats(held)
    dist = (((xt - mu) / sd)[:, None, :] - centroids[None]) ** 2
    accuracy = np.mean(dist.sum(axis=2).argmin(axis=1) == yt)
    assert accuracy >= cfg.p_audio - 0.05


def test_speaker_profile_parse():
    s = SpeakerProfile.parse("x:0.5:1.2:0.01")
    assert s == SpeakerProfile("x", 0.5, 1.2, 0.01)
    assert SpeakerProfile.parse(s.format()) == s
    with pytest.raises(CorpusError):
        SpeakerProfile.parse("x:1")
