"""Synthetic dialogue corpora with paired text and tone audio.

DA sequences follow a sticky Markov chain.  Each utterance's text holds one
DA keyword with probability ``p_text`` (otherwise only shared filler words);
its audio is a sine mixture whose dominant tone sits at the DA's frequency
with probability ``p_audio`` (otherwise at the frequency of a uniformly drawn
DA).  Both cue events are independent.  Speakers distort audio by a gain, a
frequency scale and additive white noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import SampledSignal
from .corpus import Conversation, Corpus, CorpusError, Utterance


@dataclass(frozen=True)
class SpeakerProfile:
    name: str
    gain: float = 1.0
    freq_scale: float = 1.0
    noise: float = 0.01

    @classmethod
    def parse(cls, text: str) -> "SpeakerProfile":
        """Parse ``name:gain:freq_scale:noise``."""
        parts = text.strip().split(":")
        if len(parts) != 4:
            raise CorpusError(f"speaker profile needs name:gain:freq_scale:noise, got {text!r}")
        return cls(parts[0], float(parts[1]), float(parts[2]), float(parts[3]))

    def format(self) -> str:
        return f"{self.name}:{self.gain!r}:{self.freq_scale!r}:{self.noise!r}"


def default_speakers():
    return [SpeakerProfile(f"spk{i}", g, s, 0.01) for i, (g, s) in
            enumerate([(1.0, 1.0), (0.8, 0.96), (0.9, 1.04), (0.7, 0.98), (0.6, 1.02)])]


@dataclass
class ToyConfig:
    num_das: int = 4
    conversations: int = 200
    length: int = 8
    stay_prob: float = 0.85
    filler_words: int = 40
    keywords_per_da: int = 2
    min_tokens: int = 4
    max_tokens: int = 8
    p_text: float = 0.75
    p_audio: float = 0.75
    sample_rate: int = 16000
    duration: float = 0.25
    min_freq: float = 250.0
    max_freq: float = 2000.0
    tone_amplitude: float = 0.5
    background_amplitude: float = 0.1
    background_partials: int = 2
    speakers: list[SpeakerProfile] = field(default_factory=default_speakers)
    id_prefix: str = "conv"

    def validate(self):
        if self.num_das < 2:
            raise CorpusError("toy corpus needs at least two DAs")
        if not self.speakers:
            raise CorpusError("toy corpus needs at least one speaker")
        if self.conversations < 1 or self.length < 1:
            raise CorpusError("toy corpus needs positive conversation count and length")
        if not (0.0 <= self.p_text <= 1.0 and 0.0 <= self.p_audio <= 1.0):
            raise CorpusError("cue probabilities must lie in [0, 1]")
        if not 0.0 <= self.stay_prob <= 1.0:
            raise CorpusError("stay_prob must lie in [0, 1]")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise CorpusError("need 1 <= min_tokens <= max_tokens")

    @property
    def tags(self) -> list[str]:
        return [f"da{a}" for a in range(self.num_das)]

    def da_frequencies(self) -> np.ndarray:
        return np.geomspace(self.min_freq, self.max_freq, self.num_das)

    def transition_matrix(self) -> np.ndarray:
        A = self.num_das
        T = np.full((A, A), (1.0 - self.stay_prob) / (A - 1))
        np.fill_diagonal(T, self.stay_prob)
        return T

    def keyword(self, da: int, j: int) -> str:
        return f"kw{da}_{j}"

    def filler(self, j: int) -> str:
        return f"w{j}"


def render_tone_audio(freq: float, speaker: SpeakerProfile, cfg: ToyConfig, rng) -> SampledSignal:
    """Dominant tone at ``freq`` plus weak random partials, speaker-distorted."""
    n = int(round(cfg.duration * cfg.sample_rate))
    t = np.arange(n) / cfg.sample_rate
    nyquist = cfg.sample_rate / 2.0
    f = min(freq * speaker.freq_scale, 0.95 * nyquist)
    sig = cfg.tone_amplitude * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    for _ in range(cfg.background_partials):
        fb = min(rng.uniform(0.5 * cfg.min_freq, 1.5 * cfg.max_freq) * speaker.freq_scale, 0.95 * nyquist)
        sig += cfg.background_amplitude * np.sin(2 * np.pi * fb * t + rng.uniform(0, 2 * np.pi))
    sig = speaker.gain * sig + speaker.noise * rng.standard_normal(n)
    return SampledSignal(np.clip(sig, -1.0, 1.0), cfg.sample_rate)


def synthesize_toy_corpus(cfg: ToyConfig, seed: int) -> Corpus:
    """Generate a labeled corpus with in-memory audio, a pure function of (cfg, seed)."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    A = cfg.num_das
    trans = cfg.transition_matrix()
    freqs = cfg.da_frequencies()
    conversations = []
    for c in range(cfg.conversations):
        if len(cfg.speakers) >= 2:
            pair = rng.choice(len(cfg.speakers), size=2, replace=False)
        else:
            pair = np.array([0, 0])
        da = int(rng.integers(A))
        utts = []
        for t in range(cfg.length):
            if t > 0:
                da = int(rng.choice(A, p=trans[da]))
            speaker = cfg.speakers[int(pair[t % 2])]
            n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
            tokens = [cfg.filler(int(j)) for j in rng.integers(cfg.filler_words, size=n_tok)]
            if rng.random() < cfg.p_text:
                tokens[int(rng.integers(n_tok))] = cfg.keyword(da, int(rng.integers(cfg.keywords_per_da)))
            tone_da = da if rng.random() < cfg.p_audio else int(rng.integers(A))
            audio = render_tone_audio(freqs[tone_da], speaker, cfg, rng)
            utts.append(Utterance(tokens, speaker.name, da, audio))
        conversations.append(Conversation(f"{cfg.id_prefix}{c:04d}", utts))
    return Corpus(conversations, cfg.tags, [s.name for s in cfg.speakers])


def shifted_speakers(base: list[SpeakerProfile], gain: float, freq_scale: float, noise: float | None = None,
                     prefix: str = "new") -> list[SpeakerProfile]:
    """New speakers derived from ``base`` by multiplying gain and frequency scale."""
    return [SpeakerProfile(f"{prefix}{i}", s.gain * gain, s.freq_scale * freq_scale,
                           s.noise if noise is None else noise) for i, s in enumerate(base)]
