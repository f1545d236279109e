"""Audio front-end: WAV input, framing and MFCC extraction.

Pipeline per frame: pre-emphasis, Hamming window, power spectrum,
triangular filterbank on the HTK mel scale, natural log with a floor,
orthonormal DCT-II truncated to ``num_coefficients``.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

MFCC_MAGIC = b"MFCC1"


class AudioError(ValueError):
    """Raised for malformed audio input or an unusable signal."""


@dataclass(frozen=True)
class SampledSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError("signal must be one-dimensional")
        if not isinstance(self.sample_rate, (int, np.integer)) or self.sample_rate <= 0:
            raise AudioError("sample_rate must be a positive integer")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class MfccConfig:
    frame_length: float = 0.025
    hop: float = 0.010
    num_mel_filters: int = 26
    num_coefficients: int = 13
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10
    # None: next power of two >= frame length in samples
    n_fft: int | None = None

    def __post_init__(self):
        if not (self.hop > 0 and self.frame_length >= self.hop):
            raise AudioError("need frame_length >= hop > 0")
        if not 0 < self.num_coefficients <= self.num_mel_filters:
            raise AudioError("need 0 < num_coefficients <= num_mel_filters")
        if not 0.0 <= self.pre_emphasis < 1.0:
            raise AudioError("pre_emphasis must lie in [0, 1)")
        if not self.log_floor > 0:
            raise AudioError("log_floor must be positive")

    def frame_samples(self, sample_rate: int) -> tuple[int, int]:
        """Frame and hop length in samples."""
        return int(round(self.frame_length * sample_rate)), int(round(self.hop * sample_rate))

    def fft_size(self, sample_rate: int) -> int:
        length, _ = self.frame_samples(sample_rate)
        if self.n_fft is not None:
            if self.n_fft < length:
                raise AudioError("n_fft shorter than the frame")
            return int(self.n_fft)
        return 1 << max(0, (length - 1).bit_length())


@dataclass
class MfccSequence:
    frames: np.ndarray
    utterance_id: str | None = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise AudioError("MFCC frames must form a 2-D array")
        if not np.all(np.isfinite(frames)):
            raise AudioError("non-finite MFCC value")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_coefficients(self) -> int:
        return self.frames.shape[1]


# --------------------------------------------------------------------------
# WAV I/O


def read_wav(path) -> SampledSignal:
    """Read a PCM 16-bit mono RIFF/WAVE file into [-1, 1] amplitudes."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"audio file not found: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise AudioError(f"truncated header: {path}")
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioError(f"not a RIFF/WAVE file: {path}")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise AudioError(f"truncated header: {path}")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise AudioError(f"truncated header: {path}")

    encoding, channels, rate, _, _, bits = fmt
    if encoding != 1 or bits != 16:
        raise AudioError(f"unsupported encoding (need PCM 16-bit): {path}")
    if channels != 1:
        raise AudioError(f"unsupported channel count {channels}: {path}")
    usable = len(payload) - (len(payload) % 2)
    pcm = np.frombuffer(payload[:usable], dtype="<i2")
    return SampledSignal(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, signal: SampledSignal) -> None:
    """Write a signal as PCM 16-bit mono, clipping to the representable range."""
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(signal.sample_rate)
        fh.writeframes(pcm.tobytes())


# --------------------------------------------------------------------------
# Feature extraction


def frame_signal(signal: SampledSignal, cfg: MfccConfig) -> np.ndarray:
    """Slice ``signal`` into overlapping frames without padding.

    Returns an array of shape ``(floor((N - L) / H) + 1, L)``.
    """
    length, hop = cfg.frame_samples(signal.sample_rate)
    n = len(signal)
    if n < length:
        raise AudioError(f"utterance too short: {n} samples < frame of {length}")
    count = (n - length) // hop + 1
    idx = np.arange(length)[None, :] + hop * np.arange(count)[:, None]
    return signal.samples[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def _mel_filterbank(num_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - left) / (center - left)
    falling = (right - freqs[None, :]) / (right - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def mel_filterbank(num_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters of shape (num_filters, n_fft // 2 + 1), peak weight 1."""
    return _mel_filterbank(int(num_filters), int(n_fft), int(sample_rate))


@lru_cache(maxsize=32)
def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    mat[0] /= np.sqrt(2.0)
    mat.setflags(write=False)
    return mat


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row k holds basis function k."""
    return _dct_matrix(int(n))


def power_spectrum(frames: np.ndarray, n_fft: int) -> np.ndarray:
    """|DFT|^2 of each row, zero-padded to ``n_fft``, bins 0..n_fft/2."""
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=-1)) ** 2


def mfcc(signal: SampledSignal, cfg: MfccConfig | None = None, utterance_id=None) -> MfccSequence:
    cfg = cfg or MfccConfig()
    if not np.all(np.isfinite(signal.samples)):
        raise AudioError("non-finite sample")
    frames = frame_signal(signal, cfg)
    emphasized = frames.copy()
    emphasized[:, 1:] -= cfg.pre_emphasis * frames[:, :-1]
    windowed = emphasized * np.hamming(frames.shape[1])

    n_fft = cfg.fft_size(signal.sample_rate)
    spec = power_spectrum(windowed, n_fft)
    energies = spec @ mel_filterbank(cfg.num_mel_filters, n_fft, signal.sample_rate).T
    log_mel = np.log(np.maximum(energies, cfg.log_floor))
    coeffs = log_mel @ dct_matrix(cfg.num_mel_filters)[: cfg.num_coefficients].T
    return MfccSequence(coeffs, utterance_id)


def floor_clamped(signal: SampledSignal, cfg: MfccConfig) -> bool:
    """True if any filterbank energy falls at or below ``log_floor``."""
    frames = frame_signal(signal, cfg)
    emphasized = frames.copy()
    emphasized[:, 1:] -= cfg.pre_emphasis * frames[:, :-1]
    n_fft = cfg.fft_size(signal.sample_rate)
    spec = power_spectrum(emphasized * np.hamming(frames.shape[1]), n_fft)
    energies = spec @ mel_filterbank(cfg.num_mel_filters, n_fft, signal.sample_rate).T
    return bool(np.any(energies <= cfg.log_floor))


# --------------------------------------------------------------------------
# Feature cache files: b"MFCC1", u32 frame count, u32 coefficient count,
# then row-major little-endian float64.


def save_mfcc(path, seq: MfccSequence) -> None:
    header = MFCC_MAGIC + struct.pack("<II", seq.num_frames, seq.num_coefficients)
    Path(path).write_bytes(header + seq.frames.astype("<f8").tobytes())


def load_mfcc(path, utterance_id=None) -> MfccSequence:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature cache not found: {path}")
    data = path.read_bytes()
    if data[:5] != MFCC_MAGIC:
        raise AudioError(f"bad feature cache magic: {path}")
    if len(data) < 13:
        raise AudioError(f"truncated feature cache: {path}")
    rows, cols = struct.unpack("<II", data[5:13])
    body = data[13:]
    if len(body) != 8 * rows * cols:
        raise AudioError(f"truncated feature cache: {path}")
    frames = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return MfccSequence(frames, utterance_id)
