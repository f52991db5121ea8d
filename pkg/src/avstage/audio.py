"""Deterministic audio frontend: resampling, log-mel filterbank energies,
frame clipping, and 16-bit PCM WAV input/output.

Conventions (fixed so every stage downstream sees identical features):
25 ms periodic Hann window, 10 ms hop, 512-point DFT, 80 triangular mel
filters spanning 0 Hz to Nyquist with unit peaks, energy floor 1e-10
applied before the log. Frame count for a signal of `len` samples is
1 + floor((len - win) / hop).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps


@dataclass
class Waveform:
    samples: np.ndarray  # float, amplitudes in [-1, 1]
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.rate}")
        if self.samples.size and not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


@dataclass(frozen=True)
class LfbeConfig:
    n_mels: int = 80
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0 < self.hop_ms <= self.win_ms:
            raise ValueError("need 0 < hop_ms <= win_ms")
        if self.floor <= 0:
            raise ValueError("floor must be positive")

    def win_samples(self, rate: int) -> int:
        return int(round(self.win_ms * rate / 1000.0))

    def hop_samples(self, rate: int) -> int:
        return int(round(self.hop_ms * rate / 1000.0))


@dataclass
class LogMelFrames:
    """T x F log filterbank energy matrix with a recorded valid length.

    `valid_len` counts real frames; rows at or beyond it are zero padding
    added by `clip_frames` and must be ignored by masking and losses.
    """

    values: np.ndarray
    frame_rate: float
    valid_len: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError("LFBE values must be a 2-D (frames x mels) matrix")
        if not 0 <= self.valid_len <= self.values.shape[0]:
            raise ValueError("valid_len out of range")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_mels(self) -> int:
        return self.values.shape[1]


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling to `target_rate`.

    The same-rate case is an exact identity. Spectral content below the
    smaller Nyquist frequency is preserved up to filter ripple.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if w.samples.size == 0:
        return Waveform(np.zeros(0), target_rate)
    if w.rate == target_rate:
        return Waveform(w.samples.copy(), target_rate)
    g = np.gcd(w.rate, target_rate)
    up, down = target_rate // g, w.rate // g
    out = sps.resample_poly(w.samples, up, down)
    return Waveform(out, target_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(n_mels: int, rate: int) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    pts = np.linspace(0.0, hz_to_mel(rate / 2.0), n_mels + 2)
    return mel_to_hz(pts[1:-1])


def mel_filterbank(n_mels: int, n_fft: int, rate: int) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular weights, unit peak, 0..Nyquist."""
    pts_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * (rate / n_fft)
    weights = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        lo, mid, hi = pts_hz[m], pts_hz[m + 1], pts_hz[m + 2]
        rise = (bin_hz - lo) / (mid - lo)
        fall = (hi - bin_hz) / (hi - mid)
        weights[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return weights


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window 0.5 - 0.5 cos(2 pi k / n)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def lfbe(w: Waveform, cfg: LfbeConfig = LfbeConfig()) -> LogMelFrames:
    """Log filterbank energies of a 16 kHz waveform."""
    if w.rate != 16000:
        raise ValueError(f"lfbe expects a 16 kHz waveform, got {w.rate} Hz")
    win = cfg.win_samples(w.rate)
    hop = cfg.hop_samples(w.rate)
    if cfg.n_fft < win:
        raise ValueError(f"n_fft {cfg.n_fft} smaller than window {win}")
    n = w.samples.size
    if n < win:
        raise ValueError(f"audio too short: {n} samples < one {win}-sample window")
    n_frames = 1 + (n - win) // hop
    starts = np.arange(n_frames) * hop
    frames = w.samples[starts[:, None] + np.arange(win)[None, :]]
    spec = np.fft.rfft(frames * hann_window(win), n=cfg.n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    energies = power @ mel_filterbank(cfg.n_mels, cfg.n_fft, w.rate).T
    values = np.log(np.maximum(energies, cfg.floor))
    return LogMelFrames(values, frame_rate=w.rate / hop, valid_len=n_frames)


def clip_frames(f: LogMelFrames, max_frames: int) -> LogMelFrames:
    """First `max_frames` frames; shorter inputs are zero-padded.

    The physical matrix always has `max_frames` rows so batch shapes are
    uniform; `valid_len` records how many rows carry real frames.
    """
    if max_frames < 1:
        raise ValueError("max_frames must be >= 1")
    t = f.values.shape[0]
    valid = min(f.valid_len, max_frames)
    if t >= max_frames:
        values = f.values[:max_frames].copy()
    else:
        values = np.zeros((max_frames, f.values.shape[1]), dtype=f.values.dtype)
        values[:t] = f.values
    return LogMelFrames(values, frame_rate=f.frame_rate, valid_len=valid)


_WAV_TAG_NAMES = {1: "PCM", 3: "IEEE float", 6: "A-law", 7: "mu-law", 0xFFFE: "extensible"}


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono RIFF WAV; samples scaled to [-1, 1] by 1/32768."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise ValueError(f"{path}: truncated {cid.decode('ascii', 'replace')} chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise ValueError(f"{path}: missing fmt/data chunk")
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag != 1:
        name = _WAV_TAG_NAMES.get(tag, "unknown")
        raise ValueError(f"{path}: unsupported WAV format tag {tag} ({name}); only PCM (1) is supported")
    if channels != 1:
        raise ValueError(f"{path}: expected mono, got {channels} channels")
    if bits != 16:
        raise ValueError(f"{path}: expected 16-bit samples, got {bits}")
    ints = np.frombuffer(data, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def write_wav(path, samples: np.ndarray, rate: int):
    """Write int16 samples (or floats in [-1, 1], scaled by 32768) as PCM WAV."""
    samples = np.asarray(samples)
    if samples.dtype.kind == "f":
        samples = np.clip(np.round(samples * 32768.0), -32768, 32767)
    ints = samples.astype("<i2")
    payload = ints.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(payload))
    with open(path, "wb") as fh:
        fh.write(hdr + payload)
