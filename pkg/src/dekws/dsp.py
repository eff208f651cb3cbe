"""MFCC frontend: 16 kHz waveforms to 40-coefficient feature matrices.

Pipeline: pad_or_trim -> stft_power -> log_mel_energies -> orthonormal DCT-II
along the mel axis. Under the default config a one-second clip yields a
98 x 40 matrix. All stages are pure functions of their arguments, so
featurization is deterministic and thread-safe.

Conventions fixed here (they vary between toolkits):
  * mel(f) = 2595 * log10(1 + f / 700)  (HTK scale)
  * periodic Hann analysis window
  * triangular mel filters with edge points snapped to FFT bins, which makes
    every filter's peak weight exactly 1.0
  * log floor of 1e-10 before the natural log, bounding silence at a finite
    value
  * short clips are zero-padded at the end, long clips truncated at the end
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import InvalidInputError, InvalidShapeError

LOG_FLOOR_EPSILON = 1e-10


@dataclass
class Waveform:
    """Mono audio clip. Samples are float32 in [-1, 1)."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise InvalidShapeError(
                f"waveform must be 1-D, got shape {self.samples.shape}"
            )
        if self.samples.size and not np.isfinite(self.samples).all():
            raise InvalidInputError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class MfccConfig:
    """Feature-extraction hyperparameters (25 ms frames, 10 ms hop)."""

    n_mfcc: int = 40
    n_mels: int = 40
    frame_length: int = 400
    hop_length: int = 160
    fft_size: int = 512
    fmin: float = 20.0
    fmax: float = 8000.0
    target_length: int = 16000
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_mfcc > self.n_mels:
            raise InvalidInputError(
                f"n_mfcc ({self.n_mfcc}) must not exceed n_mels ({self.n_mels})"
            )
        if self.frame_length > self.fft_size:
            raise InvalidInputError(
                f"frame_length ({self.frame_length}) must not exceed "
                f"fft_size ({self.fft_size})"
            )
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise InvalidInputError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got "
                f"fmin={self.fmin}, fmax={self.fmax}, rate={self.sample_rate}"
            )

    @property
    def n_frames(self) -> int:
        return (self.target_length - self.frame_length) // self.hop_length + 1

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class FeatureMatrix:
    """MFCC features of one utterance: n_frames x n_mfcc."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidShapeError(
                f"feature matrix must be 2-D, got shape {self.values.shape}"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mfcc(self) -> int:
        return self.values.shape[1]


def pad_or_trim(w: Waveform, target_length: int) -> Waveform:
    """Zero-pad at the end or truncate at the end to exactly target_length."""
    if len(w) == 0:
        raise InvalidInputError("cannot pad or trim an empty waveform")
    n = len(w)
    if n == target_length:
        return w
    if n > target_length:
        return Waveform(w.samples[:target_length].copy(), w.sample_rate)
    out = np.zeros(target_length, dtype=np.float32)
    out[:n] = w.samples
    return Waveform(out, w.sample_rate)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window: 0.5 - 0.5*cos(2*pi*n/N)."""
    n = np.arange(length, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft_power(w: Waveform, cfg: MfccConfig, window: np.ndarray | None = None) -> np.ndarray:
    """Power spectrogram, n_frames x (fft_size/2 + 1).

    Frames of frame_length at stride hop_length are windowed (periodic Hann
    unless an override window is given), zero-padded to fft_size, and
    transformed; each entry is the squared DFT magnitude.
    """
    if cfg.frame_length > len(w):
        raise InvalidInputError(
            f"frame_length ({cfg.frame_length}) exceeds waveform length ({len(w)})"
        )
    if window is None:
        window = hann_window(cfg.frame_length)
    elif window.shape != (cfg.frame_length,):
        raise InvalidShapeError(
            f"window must have shape ({cfg.frame_length},), got {window.shape}"
        )
    x = w.samples.astype(np.float64)
    n_frames = (len(w) - cfg.frame_length) // cfg.hop_length + 1
    stride = x.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        x,
        shape=(n_frames, cfg.frame_length),
        strides=(cfg.hop_length * stride, stride),
    )
    spectrum = np.fft.rfft(frames * window, n=cfg.fft_size, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).astype(np.float64)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular mel filters as an (n_mels, n_bins) weight matrix.

    Filter edge frequencies are equally spaced on the mel scale between fmin
    and fmax, then snapped to FFT bin indices; each filter rises linearly to
    weight 1.0 at its peak bin and falls back to 0 at the next filter's peak.
    """
    edges = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    bins = np.floor((cfg.fft_size + 1) * mel_to_hz(edges) / cfg.sample_rate).astype(int)
    if np.any(bins[2:] <= bins[1:-1]):
        raise InvalidInputError(
            "mel filter peaks collide on FFT bins; increase fft_size or "
            "reduce n_mels"
        )
    weights = np.zeros((cfg.n_mels, cfg.n_bins), dtype=np.float64)
    for m in range(cfg.n_mels):
        left, peak, right = bins[m], bins[m + 1], bins[m + 2]
        for i in range(left, peak):
            weights[m, i] = (i - left) / (peak - left)
        for i in range(peak, right):
            weights[m, i] = (right - i) / (right - peak)
    return weights


def log_mel_energies(spec: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """Natural log of (mel filterbank energies + floor), n_frames x n_mels."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != cfg.n_bins:
        raise InvalidShapeError(
            f"spectrogram must be (n_frames, {cfg.n_bins}), got {spec.shape}"
        )
    energies = spec @ mel_filterbank(cfg).T
    return np.log(energies + LOG_FLOOR_EPSILON)


def mfcc(w: Waveform, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """Full frontend: waveform to n_frames x n_mfcc feature matrix."""
    padded = pad_or_trim(w, cfg.target_length)
    spec = stft_power(padded, cfg)
    logmels = log_mel_energies(spec, cfg)
    coeffs = scipy.fft.dct(logmels, type=2, norm="ortho", axis=1)
    return FeatureMatrix(coeffs[:, : cfg.n_mfcc])
