"""Feature extraction: spectral analysis for gesture windows, MFCC for audio.

Both blocks turn a fixed-size window into a fixed-length feature vector
whose layout is a pure function of the configuration. The layout_id
string pins the producing config so downstream stages can check that a
model and a feature pipeline actually belong together.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .dataset import (
    Dataset,
    LabeledWindow,
    GESTURE_SAMPLE_RATE,
    KEYWORD_SAMPLE_RATE,
)

LOG_FLOOR = 1e-10   # keeps log compression finite on silent input


@dataclass(frozen=True)
class SpectralConfig:
    """Settings for the gesture (3-axis) spectral analysis block."""

    scale: float = 1.0
    filter_cutoff: float = 8.0
    filter_order: int = 2
    fft_len: int = 128
    power_bins: int = 16

    def __post_init__(self):
        if self.fft_len < 2 or self.fft_len & (self.fft_len - 1):
            raise ValueError("fft_len must be a power of two")
        if not 1 <= self.power_bins <= self.fft_len // 2:
            raise ValueError("power_bins must be in [1, fft_len/2]")
        if self.filter_order < 1:
            raise ValueError("filter_order must be >= 1")
        if self.filter_cutoff <= 0:
            raise ValueError("filter_cutoff must be positive")

    def layout_id(self, sample_rate: float) -> str:
        return (f"spectral-v1:scale={self.scale}:cutoff={self.filter_cutoff}"
                f":order={self.filter_order}:fft={self.fft_len}"
                f":bins={self.power_bins}:sr={sample_rate}")

    @property
    def feature_len(self) -> int:
        return 3 * (1 + self.power_bins)


@dataclass(frozen=True)
class MfccConfig:
    """Settings for the keyword (mono audio) MFCC block."""

    frame_len: int = 512
    frame_stride: int = 256
    mel_filters: int = 26
    coefficients: int = 13
    fft_len: int = 512

    def __post_init__(self):
        if self.fft_len < 2 or self.fft_len & (self.fft_len - 1):
            raise ValueError("fft_len must be a power of two")
        if self.coefficients > self.mel_filters:
            raise ValueError("coefficients must be <= mel_filters")
        if self.frame_len > self.fft_len:
            raise ValueError("frame_len must be <= fft_len")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")

    def layout_id(self, sample_rate: float) -> str:
        return (f"mfcc-v1:frame={self.frame_len}:stride={self.frame_stride}"
                f":mel={self.mel_filters}:cep={self.coefficients}"
                f":fft={self.fft_len}:sr={sample_rate}")

    def frame_count(self, window_len: int) -> int:
        if window_len < self.frame_len:
            raise ValueError("window shorter than one frame")
        return 1 + (window_len - self.frame_len) // self.frame_stride

    def feature_len(self, window_len: int) -> int:
        return self.coefficients * self.frame_count(window_len)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout_id: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature vector contains non-finite values")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


def fft_real(signal: np.ndarray) -> np.ndarray:
    """One-sided DFT of a real power-of-two-length signal.

    Bin k equals sum_t x[t] * exp(-2j*pi*k*t/n) for k = 0..n/2.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"fft_real requires a power-of-two length, got {n}")
    return np.fft.rfft(x)


def lowpass(signal: np.ndarray, cutoff: float, order: int,
            sample_rate: float) -> np.ndarray:
    """Causal (forward-only) Butterworth low-pass filter."""
    if not 0.0 < cutoff < sample_rate / 2.0:
        raise ValueError(
            f"cutoff must be in (0, sample_rate/2), got {cutoff} at fs={sample_rate}"
        )
    b, a = scipy.signal.butter(order, cutoff, btype="low", fs=sample_rate)
    return scipy.signal.lfilter(b, a, np.asarray(signal, dtype=np.float64))


def spectral_bin_edges(cfg: SpectralConfig, sample_rate: float) -> np.ndarray:
    """Frequency edges (Hz) of the power-bin groups.

    Groups cover FFT bins 1..fft_len/2 (DC excluded), split into
    power_bins contiguous runs; edge g is the lower frequency of group g.
    """
    n_bins = cfg.fft_len // 2
    sizes = [len(s) for s in np.array_split(np.arange(n_bins), cfg.power_bins)]
    starts = np.concatenate([[0], np.cumsum(sizes)]) + 1  # k index of each boundary
    return starts * sample_rate / cfg.fft_len


def spectral_features(win: LabeledWindow, cfg: SpectralConfig,
                      sample_rate: float) -> FeatureVector:
    """RMS plus binned log-power spectrum per accelerometer axis.

    Per channel: scale, low-pass, mean removal, then the RMS of the
    processed signal and the one-sided power spectrum (channel truncated
    or zero-padded to fft_len) averaged into power_bins groups and
    compressed as log10(power + 1e-10). Output is the channel-major
    concatenation [rms, bins...] of length 3 * (1 + power_bins).
    """
    if win.channels != 3:
        raise ValueError(f"spectral features require 3 channels, got {win.channels}")
    parts = []
    for ch in range(3):
        x = win.data[ch] * cfg.scale
        x = lowpass(x, cfg.filter_cutoff, cfg.filter_order, sample_rate)
        x = x - np.mean(x)
        rms = float(np.sqrt(np.mean(x * x)))
        if x.shape[0] >= cfg.fft_len:
            seg = x[:cfg.fft_len]
        else:
            seg = np.zeros(cfg.fft_len)
            seg[:x.shape[0]] = x
        spec = fft_real(seg)
        power = np.abs(spec) ** 2
        groups = np.array_split(power[1:cfg.fft_len // 2 + 1], cfg.power_bins)
        binned = np.log10(np.array([g.mean() for g in groups]) + LOG_FLOOR)
        parts.append(np.concatenate([[rms], binned]))
    return FeatureVector(values=np.concatenate(parts),
                         layout_id=cfg.layout_id(sample_rate))


def hz_to_mel(freq_hz):
    """Mel scale: m = 2595 * log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_filterbank(n_filters: int, fft_len: int, sample_rate: float) -> np.ndarray:
    """Triangular filters on mel-spaced points from 0 Hz to Nyquist."""
    points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_filters + 2)
    bins = np.floor((fft_len + 1) * mel_to_hz(points) / sample_rate).astype(int)
    fb = np.zeros((n_filters, fft_len // 2 + 1))
    for j in range(n_filters):
        for i in range(bins[j], bins[j + 1]):
            fb[j, i] = (i - bins[j]) / (bins[j + 1] - bins[j])
        for i in range(bins[j + 1], bins[j + 2]):
            fb[j, i] = (bins[j + 2] - i) / (bins[j + 2] - bins[j + 1])
    return fb


def mfcc(win: LabeledWindow, cfg: MfccConfig, sample_rate: float) -> FeatureVector:
    """Frame-major MFCC matrix of a mono window, flattened to one vector.

    Frames are taken at frame_stride, Hamming-windowed, zero-padded to
    fft_len, turned into a power spectrum, pooled through a triangular
    mel filterbank, log-compressed (floored at 1e-10) and decorrelated
    with an orthonormal DCT-II of which the first `coefficients` values
    are kept per frame.
    """
    if win.channels != 1:
        raise ValueError(f"mfcc requires a mono window, got {win.channels} channels")
    x = win.data[0]
    n_frames = cfg.frame_count(x.shape[0])  # raises when too short
    idx = np.arange(cfg.frame_len)[np.newaxis, :] + \
        cfg.frame_stride * np.arange(n_frames)[:, np.newaxis]
    frames = x[idx] * np.hamming(cfg.frame_len)
    spec = np.fft.rfft(frames, n=cfg.fft_len, axis=1)
    power = (np.abs(spec) ** 2) / cfg.fft_len
    fb = _mel_filterbank(cfg.mel_filters, cfg.fft_len, sample_rate)
    energies = power @ fb.T
    log_e = np.log(np.maximum(energies, LOG_FLOOR))
    coefs = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, :cfg.coefficients]
    return FeatureVector(values=coefs.reshape(-1),
                         layout_id=cfg.layout_id(sample_rate))


@dataclass(frozen=True)
class FeatureSet:
    """A feature matrix with its labels and frozen normalization stats."""

    X: np.ndarray           # (n_windows, n_features)
    y: np.ndarray           # (n_windows,) indices into labels
    labels: list[str]
    mean: np.ndarray        # per-column mean of X
    std: np.ndarray         # per-column std, zero-variance columns set to 1
    layout_id: str


def default_sample_rate(kind: str) -> float:
    return GESTURE_SAMPLE_RATE if kind == "gesture" else KEYWORD_SAMPLE_RATE


def featurize(ds: Dataset, cfg, sample_rate: float | None = None) -> FeatureSet:
    """Extract one feature row per window, in window order.

    Also computes per-column mean/std on this dataset so the caller can
    reuse them for normalization (training stats get frozen into the
    model).
    """
    if isinstance(cfg, SpectralConfig):
        if ds.kind != "gesture":
            raise ValueError("spectral config requires a gesture dataset")
        fn = spectral_features
    elif isinstance(cfg, MfccConfig):
        if ds.kind != "keyword":
            raise ValueError("mfcc config requires a keyword dataset")
        fn = mfcc
    else:
        raise TypeError(f"unsupported config type {type(cfg).__name__}")
    if not ds.windows:
        raise ValueError("no windows")
    if sample_rate is None:
        sample_rate = default_sample_rate(ds.kind)
    rows = [fn(w, cfg, sample_rate).values for w in ds.windows]
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray([ds.labels.index(w.label) for w in ds.windows], dtype=np.int64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return FeatureSet(X=X, y=y, labels=list(ds.labels), mean=mean, std=std,
                      layout_id=cfg.layout_id(sample_rate))


def _window_matrix(X, channels: int):
    """Accept a list of LabeledWindow or an (n, channels, len) array."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], LabeledWindow):
        return [w.data for w in X]
    arr = check_array(X, allow_nd=True, dtype=np.float64)
    if arr.ndim == 2 and channels == 1:
        arr = arr[:, np.newaxis, :]
    if arr.ndim != 3 or arr.shape[1] != channels:
        raise ValueError(f"expected windows with {channels} channels")
    return list(arr)


class SpectralFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless sklearn-style transformer around the spectral block.

    transform() accepts an (n, 3, window_len) array or a list of
     3-channel LabeledWindow and returns an (n, 3*(1+power_bins)) matrix.
    """

    def __init__(self, scale=1.0, filter_cutoff=8.0, filter_order=2,
                 fft_len=128, power_bins=16, sample_rate=GESTURE_SAMPLE_RATE):
        self.scale = scale
        self.filter_cutoff = filter_cutoff
        self.filter_order = filter_order
        self.fft_len = fft_len
        self.power_bins = power_bins
        self.sample_rate = sample_rate

    def _config(self) -> SpectralConfig:
        return SpectralConfig(scale=self.scale, filter_cutoff=self.filter_cutoff,
                              filter_order=self.filter_order, fft_len=self.fft_len,
                              power_bins=self.power_bins)

    def fit(self, X, y=None):
        self._config()  # validates parameters
        return self

    def transform(self, X) -> np.ndarray:
        cfg = self._config()
        rows = []
        for data in _window_matrix(X, channels=3):
            w = LabeledWindow(label="", data=np.asarray(data), origin=("", 0))
            rows.append(spectral_features(w, cfg, self.sample_rate).values)
        return np.asarray(rows)


class MfccFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless sklearn-style transformer around the MFCC block.

    transform() accepts an (n, window_len) or (n, 1, window_len) array,
    or a list of mono LabeledWindow.
    """

    def __init__(self, frame_len=512, frame_stride=256, mel_filters=26,
                 coefficients=13, fft_len=512, sample_rate=KEYWORD_SAMPLE_RATE):
        self.frame_len = frame_len
        self.frame_stride = frame_stride
        self.mel_filters = mel_filters
        self.coefficients = coefficients
        self.fft_len = fft_len
        self.sample_rate = sample_rate

    def _config(self) -> MfccConfig:
        return MfccConfig(frame_len=self.frame_len, frame_stride=self.frame_stride,
                          mel_filters=self.mel_filters, coefficients=self.coefficients,
                          fft_len=self.fft_len)

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X) -> np.ndarray:
        cfg = self._config()
        rows = []
        for data in _window_matrix(X, channels=1):
            w = LabeledWindow(label="", data=np.asarray(data), origin=("", 0))
            rows.append(mfcc(w, cfg, self.sample_rate).values)
        return np.asarray(rows)
