"""Conversation data model, the line-delimited corpus format, vocabulary,
splitting and ASR-noise simulation.

File grammar (UTF-8, one record per line)::

    #tags <tag> <tag> ...          DA tag set, once, before any labels
    #speakers <id> <id> ...        optional roster; utterance speakers must be in it
    #conv <id>                     starts a conversation
    <speaker>\\t<tag|->\\t<audio|->\\t<space separated tokens>

Audio references are WAV paths or ``mfcc:<cache-path>``, relative to the
corpus file's directory.  Blank lines are ignored.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import MfccConfig, MfccSequence, SampledSignal, load_mfcc, mfcc, read_wav, save_mfcc, write_wav

UNK, PAD = 0, 1
UNK_TOKEN, PAD_TOKEN = "<unk>", "<pad>"
# substitution / deletion / insertion mix of the ASR simulator
ASR_ERROR_MIX = (0.6, 0.3, 0.1)


class CorpusError(ValueError):
    pass


@dataclass
class Utterance:
    tokens: list[str]
    speaker: str
    label: int | None = None
    # WAV path, "mfcc:<path>", in-memory signal or features, or None
    audio: str | SampledSignal | MfccSequence | None = None

    def __post_init__(self):
        if not self.tokens and self.audio is None:
            raise CorpusError("utterance carries neither text nor audio")


@dataclass
class Conversation:
    id: str
    utterances: list[Utterance]

    def __post_init__(self):
        if not self.utterances:
            raise CorpusError(f"conversation {self.id} is empty")

    def __len__(self):
        return len(self.utterances)

    @property
    def labels(self) -> list[int | None]:
        return [u.label for u in self.utterances]


@dataclass
class Corpus:
    conversations: list[Conversation]
    tags: list[str]
    speakers: list[str] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        if not self.speakers:
            self.speakers = sorted({u.speaker for c in self.conversations for u in c.utterances})
        roster = set(self.speakers)
        for conv in self.conversations:
            for u in conv.utterances:
                if u.label is not None and not 0 <= u.label < len(self.tags):
                    raise CorpusError(f"label {u.label} outside tag set of size {len(self.tags)}")
                if u.speaker not in roster:
                    raise CorpusError(f"speaker {u.speaker!r} not in roster")

    def __len__(self):
        return len(self.conversations)

    @property
    def num_utterances(self) -> int:
        return sum(len(c) for c in self.conversations)

    def utterances(self):
        for conv in self.conversations:
            yield from conv.utterances

    def subset(self, ids) -> "Corpus":
        by_id = {c.id: c for c in self.conversations}
        return Corpus([by_id[i] for i in ids], list(self.tags), list(self.speakers), self.root)

    def with_conversations(self, conversations) -> "Corpus":
        return Corpus(list(conversations), list(self.tags), list(self.speakers), self.root)

    def merged(self, other: "Corpus") -> "Corpus":
        """Union of conversations; tag sets must agree."""
        if other.tags != self.tags:
            raise CorpusError("cannot merge corpora with different tag sets")
        speakers = list(self.speakers) + [s for s in other.speakers if s not in self.speakers]
        return Corpus(self.conversations + other.conversations, list(self.tags), speakers, self.root)

    def token_inventory(self) -> list[str]:
        return sorted({t for u in self.utterances() for t in u.tokens})


# --------------------------------------------------------------------------
# File format


def _check_audio_ref(ref: str, root: Path, lineno: int):
    path = ref[len("mfcc:"):] if ref.startswith("mfcc:") else ref
    if not (root / path).exists():
        raise CorpusError(f"line {lineno}: dangling audio reference {ref!r}")


def load_corpus(path, check_audio: bool = True) -> Corpus:
    path = Path(path)
    root = path.parent
    tags: list[str] | None = None
    roster: list[str] | None = None
    conversations: list[Conversation] = []
    current_id, current = None, []

    def flush():
        if current_id is not None:
            conversations.append(Conversation(current_id, list(current)))

    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#tags"):
            tags = line.split()[1:]
            if len(set(tags)) != len(tags):
                raise CorpusError(f"line {lineno}: duplicated tag")
            continue
        if line.startswith("#speakers"):
            roster = line.split()[1:]
            continue
        if line.startswith("#conv"):
            parts = line.split(maxsplit=1)
            if len(parts) != 2:
                raise CorpusError(f"line {lineno}: malformed record: conversation header without id")
            flush()
            current_id, current = parts[1].strip(), []
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise CorpusError(f"line {lineno}: malformed record: expected 4 tab-separated fields, got {len(fields)}")
        if current_id is None:
            raise CorpusError(f"line {lineno}: malformed record: utterance before any #conv header")
        speaker, tag, audio_ref, text = fields
        if not speaker:
            raise CorpusError(f"line {lineno}: malformed record: empty speaker")
        if roster is not None and speaker not in roster:
            raise CorpusError(f"line {lineno}: speaker {speaker!r} not in roster")
        label = None
        if tag != "-":
            if tags is None or tag not in tags:
                raise CorpusError(f"line {lineno}: unknown DA tag {tag!r}")
            label = tags.index(tag)
        audio = None
        if audio_ref != "-":
            if check_audio:
                _check_audio_ref(audio_ref, root, lineno)
            audio = audio_ref
        tokens = text.split()
        if not tokens and audio is None:
            raise CorpusError(f"line {lineno}: malformed record: neither tokens nor audio")
        current.append(Utterance(tokens, speaker, label, audio))
    if current_id is not None and not current:
        raise CorpusError(f"conversation {current_id} is empty")
    flush()
    return Corpus(conversations, tags or [], roster or [], root)


def save_corpus(corpus: Corpus, path, audio_dir: str = "audio") -> None:
    """Write ``corpus`` to ``path``.

    In-memory signals become WAV files and in-memory features become MFCC1
    caches under ``audio_dir`` (relative to the corpus file).  String
    references are written unchanged.
    """
    path = Path(path)
    root = path.parent
    lines = []
    if corpus.tags:
        lines.append("#tags " + " ".join(corpus.tags))
    if corpus.speakers:
        lines.append("#speakers " + " ".join(corpus.speakers))
    for conv in corpus.conversations:
        lines.append(f"#conv {conv.id}")
        for i, u in enumerate(conv.utterances):
            ref = "-"
            if isinstance(u.audio, str):
                ref = u.audio
            elif u.audio is not None:
                (root / audio_dir).mkdir(parents=True, exist_ok=True)
                if isinstance(u.audio, SampledSignal):
                    ref = f"{audio_dir}/{conv.id}_{i:03d}.wav"
                    write_wav(root / ref, u.audio)
                else:
                    rel = f"{audio_dir}/{conv.id}_{i:03d}.mfcc"
                    save_mfcc(root / rel, u.audio)
                    ref = "mfcc:" + rel
            tag = "-" if u.label is None else corpus.tags[u.label]
            lines.append("\t".join([u.speaker, tag, ref, " ".join(u.tokens)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_audio(u: Utterance, root: Path | None, cfg: MfccConfig | None = None) -> MfccSequence | None:
    """Features for one utterance, computing MFCCs from raw audio if needed."""
    audio = u.audio
    if audio is None or isinstance(audio, MfccSequence):
        return audio
    if isinstance(audio, SampledSignal):
        return mfcc(audio, cfg)
    base = root or Path(".")
    if audio.startswith("mfcc:"):
        return load_mfcc(base / audio[len("mfcc:"):])
    return mfcc(read_wav(base / audio), cfg)


def featurize(corpus: Corpus, cfg: MfccConfig | None = None) -> Corpus:
    """Copy of ``corpus`` with every audio reference replaced by inline MFCCs."""
    convs = []
    for conv in corpus.conversations:
        utts = [replace(u, audio=resolve_audio(u, corpus.root, cfg)) for u in conv.utterances]
        convs.append(Conversation(conv.id, utts))
    return corpus.with_conversations(convs)


# --------------------------------------------------------------------------
# Vocabulary


@dataclass
class Vocab:
    tokens: list[str]
    min_count: int = 1

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise CorpusError("duplicate vocabulary entry")

    def __len__(self):
        return len(self.tokens)

    @property
    def words(self) -> list[str]:
        """Tokens other than the reserved ids."""
        return [t for t in self.tokens if t not in (UNK_TOKEN, PAD_TOKEN)]

    def __getitem__(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens) -> np.ndarray:
        ids = [self[t] for t in tokens] or [UNK]
        return np.array(ids, dtype=np.int64)


def build_vocab(corpus: Corpus, min_count: int = 1) -> Vocab:
    """Reserved ids first, then tokens with count >= min_count by
    descending frequency, ties broken lexicographically."""
    counts = Counter(t for u in corpus.utterances() for t in u.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab([UNK_TOKEN, PAD_TOKEN] + [t for t in kept if t not in (UNK_TOKEN, PAD_TOKEN)], min_count)


# --------------------------------------------------------------------------
# Splitting


def split_corpus(corpus: Corpus, ratios=(0.8, 0.1, 0.1), seed: int | None = None, lists=None):
    """Partition into (train, dev, test).

    Ratio mode shuffles conversation ids with ``seed`` and takes
    floor(r0 N), floor(r1 N) and the remainder.  List mode (``lists`` given as
    three id sequences) uses exact membership and must cover every id once.
    """
    ids = [c.id for c in corpus.conversations]
    if lists is not None:
        parts = [list(p) for p in lists]
        if len(parts) != 3:
            raise CorpusError("list mode needs exactly three id lists")
        flat = [i for p in parts for i in p]
        dup = [i for i, c in Counter(flat).items() if c > 1]
        if dup:
            raise CorpusError(f"duplicated conversation ids in split lists: {sorted(dup)[:5]}")
        unknown = sorted(set(flat) - set(ids))
        if unknown:
            raise CorpusError(f"unknown conversation ids in split lists: {unknown[:5]}")
        missing = sorted(set(ids) - set(flat))
        if missing:
            raise CorpusError(f"split lists do not cover conversations: {missing[:5]}")
    else:
        if seed is None:
            raise CorpusError("ratio mode needs a seed")
        if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-9:
            raise CorpusError(f"bad split ratios {ratios}")
        order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
        n = len(ids)
        n_train = int(np.floor(ratios[0] * n + 1e-9))
        n_dev = int(np.floor(ratios[1] * n + 1e-9))
        parts = [order[:n_train], order[n_train:n_train + n_dev], order[n_train + n_dev:]]
    return tuple(corpus.subset(p) for p in parts)


# --------------------------------------------------------------------------
# ASR simulation


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_asr_noise(utterance: Utterance, wer: float, seed, vocabulary) -> Utterance:
    """Corrupt the tokens of ``utterance`` at rate ``wer``.

    Each token independently suffers an error with probability ``wer``:
    substitution by a different vocabulary token, deletion, or insertion of a
    random token after it, mixed 60/30/10.  A deletion that would empty the
    utterance becomes a substitution.  Label and audio are untouched.
    """
    if not 0.0 <= wer < 1.0:
        raise CorpusError(f"wer must lie in [0, 1), got {wer}")
    if wer == 0.0 or not utterance.tokens:
        return replace(utterance, tokens=list(utterance.tokens))
    vocabulary = list(vocabulary)
    if len(vocabulary) < 2:
        raise CorpusError("ASR simulation needs at least two vocabulary tokens")
    rng = _rng(seed)

    def substitute(tok):
        while True:
            cand = vocabulary[rng.integers(len(vocabulary))]
            if cand != tok:
                return cand

    out = []
    n = len(utterance.tokens)
    for i, tok in enumerate(utterance.tokens):
        if rng.random() >= wer:
            out.append(tok)
            continue
        kind = rng.choice(3, p=ASR_ERROR_MIX)
        if kind == 1 and i == n - 1 and not out:
            kind = 0
        if kind == 0:
            out.append(substitute(tok))
        elif kind == 2:
            out.append(tok)
            out.append(vocabulary[rng.integers(len(vocabulary))])
    return replace(utterance, tokens=out)


def noisy_corpus(corpus: Corpus, wer: float, seed: int, vocabulary=None) -> Corpus:
    """Apply ``simulate_asr_noise`` to every utterance with one seeded stream."""
    vocabulary = corpus.token_inventory() if vocabulary is None else list(vocabulary)
    rng = np.random.default_rng(seed)
    convs = [
        Conversation(c.id, [simulate_asr_noise(u, wer, rng, vocabulary) for u in c.utterances])
        for c in corpus.conversations
    ]
    return corpus.with_conversations(convs)


def word_error_rate(reference, hypothesis) -> float:
    """Levenshtein distance over tokens divided by the reference length."""
    ref, hyp = list(reference), list(hypothesis)
    prev = np.arange(len(hyp) + 1)
    for i, r in enumerate(ref, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return float(prev[-1]) / max(1, len(ref))
