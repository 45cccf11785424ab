"""Loading, windowing, splitting and synthesis of labeled sensor recordings.

Two kinds of data flow through the toolkit: 3-axis accelerometer traces
sampled at 100 Hz ("gesture") and mono 16 kHz audio ("keyword"). Both are
represented as channel-major recordings that get cut into fixed-size
windows before feature extraction.
"""

from __future__ import annotations

import math
import wave
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GESTURE_SAMPLE_RATE = 100.0
GESTURE_WINDOW = 200        # 2 s at 100 Hz
GESTURE_STRIDE = 50         # 0.5 s hop
KEYWORD_SAMPLE_RATE = 16000.0
KEYWORD_WINDOW = 16000      # 1 s at 16 kHz

GESTURE_CLASSES = ("updown", "leftright", "circle", "idle")
KEYWORD_CLASSES = ("red", "green", "blue", "noise")

# Formant-like sinusoid bands per color keyword; center frequencies are
# disjoint across classes so templates stay spectrally separable.
KEYWORD_BANDS = {
    "red": (400.0, 800.0, 1200.0),
    "green": (1600.0, 2000.0, 2400.0),
    "blue": (2800.0, 3400.0, 4000.0),
}
_KEYWORD_BAND_AMPS = (0.35, 0.30, 0.25)
_KEYWORD_SNR_DB = 20.0
_NOISE_BAND_HZ = 7000.0     # bandlimit for synthetic noise


@dataclass(frozen=True)
class Recording:
    """A labeled multi-channel time series, channel-major."""

    label: str
    sample_rate: float
    samples: np.ndarray     # shape (channels, n)
    source_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("samples must be a 2-D channel-major array")
        if arr.shape[0] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {arr.shape[0]}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(arr)):
            raise ValueError("recording contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class LabeledWindow:
    """A fixed-size slice of a recording, ready for feature extraction."""

    label: str
    data: np.ndarray        # shape (channels, window_len)
    origin: tuple[str, int]  # (source_id, start sample index)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Dataset:
    """An ordered label table plus the windows drawn from it."""

    labels: list[str]
    windows: list[LabeledWindow]
    kind: str               # "gesture" | "keyword"

    def __post_init__(self):
        if self.kind not in ("gesture", "keyword"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if not self.labels:
            raise ValueError("label table is empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("label table contains duplicates")
        known = set(self.labels)
        for w in self.windows:
            if w.label not in known:
                raise ValueError(f"window label {w.label!r} missing from label table")

    def count(self, label: str) -> int:
        return sum(1 for w in self.windows if w.label == label)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def load_csv_recording(path, label: str, sample_rate: float) -> Recording:
    """Read a headerless x,y,z CSV into a 3-channel recording.

    Row order is preserved; malformed rows are reported with their
    1-based row number.
    """
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 3:
                raise ValueError(
                    f"{path.name}: row {lineno}: expected 3 values, got {len(fields)}"
                )
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise ValueError(f"{path.name}: row {lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path.name}: row {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path.name}: empty recording")
    samples = np.asarray(rows, dtype=np.float64).T
    return Recording(label=label, sample_rate=sample_rate, samples=samples,
                     source_id=str(path))


def load_wav_recording(path, label: str) -> Recording:
    """Read a mono 16-bit PCM WAV; samples are scaled to [-1, 1) by 1/32768."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise ValueError(f"{path.name}: mono required")
            if wf.getsampwidth() != 2:
                raise ValueError(f"{path.name}: 16-bit PCM required")
            if wf.getcomptype() != "NONE":
                raise ValueError(f"{path.name}: compressed WAV not supported")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path.name}: bad WAV header ({exc})") from None
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if data.size == 0:
        raise ValueError(f"{path.name}: empty recording")
    return Recording(label=label, sample_rate=float(rate),
                     samples=data[np.newaxis, :], source_id=str(path))


def save_csv_recording(rec: Recording, path) -> None:
    if rec.channels != 3:
        raise ValueError("CSV output requires a 3-channel recording")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(rec.length):
            x, y, z = rec.samples[:, i]
            fh.write(f"{x:.6f},{y:.6f},{z:.6f}\n")


def save_wav_recording(rec: Recording, path) -> None:
    if rec.channels != 1:
        raise ValueError("WAV output requires a mono recording")
    pcm = np.clip(np.rint(rec.samples[0] * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(rec.sample_rate))
        wf.writeframes(pcm.tobytes())


def window(rec: Recording, window_len: int, stride: int) -> list[LabeledWindow]:
    """Cut a recording into windows at offsets 0, stride, 2*stride, ...

    The trailing partial window is discarded. A recording shorter than
    one window yields an empty list with a warning rather than an error.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if window_len > rec.length:
        warnings.warn(
            f"recording {rec.source_id or rec.label!r} shorter than one window "
            f"({rec.length} < {window_len}); no windows produced",
            stacklevel=2,
        )
        return []
    out = []
    for start in range(0, rec.length - window_len + 1, stride):
        data = rec.samples[:, start:start + window_len].copy()
        out.append(LabeledWindow(label=rec.label, data=data,
                                 origin=(rec.source_id, start)))
    return out


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Stratified deterministic train/test split.

    Per label, windows are shuffled under spec.seed and the first
    floor(train_fraction * n) go to train, the remainder to test.
    """
    rng = np.random.default_rng(spec.seed)
    train_windows: list[LabeledWindow] = []
    test_windows: list[LabeledWindow] = []
    for label in ds.labels:
        idx = [i for i, w in enumerate(ds.windows) if w.label == label]
        if len(idx) < 2:
            raise ValueError(f"label {label!r} has fewer than 2 windows")
        order = rng.permutation(len(idx))
        n_train = int(math.floor(spec.train_fraction * len(idx)))
        picked = [idx[j] for j in order]
        train_windows.extend(ds.windows[i] for i in picked[:n_train])
        test_windows.extend(ds.windows[i] for i in picked[n_train:])
    train = Dataset(labels=list(ds.labels), windows=train_windows, kind=ds.kind)
    test = Dataset(labels=list(ds.labels), windows=test_windows, kind=ds.kind)
    return train, test


def _class_rng(kind: str, cls: str, classes: tuple, seed: int) -> np.random.Generator:
    # One stream per (kind, class, seed) so generators are pure functions
    # of their arguments regardless of call order.
    kind_tag = 0 if kind == "gesture" else 1
    return np.random.default_rng([seed, classes.index(cls), kind_tag])


def synth_gesture(cls: str, seed: int, count: int) -> list[Recording]:
    """Generate reproducible 2 s accelerometer traces for one gesture class.

    updown puts a sinusoid on z, leftright on x, circle drives x/y in
    quadrature; idle is low-amplitude noise only. Every recording draws
    its own phase, +-20% amplitude jitter and 0.05 g additive noise.
    """
    if cls not in GESTURE_CLASSES:
        raise ValueError(f"unknown gesture class {cls!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = _class_rng("gesture", cls, GESTURE_CLASSES, seed)
    n = GESTURE_WINDOW
    t = np.arange(n) / GESTURE_SAMPLE_RATE
    out = []
    for i in range(count):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = 1.0 * (1.0 + rng.uniform(-0.2, 0.2))
        sig = np.zeros((3, n))
        if cls == "updown":
            sig[2] = amp * np.sin(2.0 * np.pi * 2.0 * t + phase)
        elif cls == "leftright":
            sig[0] = amp * np.sin(2.0 * np.pi * 2.0 * t + phase)
        elif cls == "circle":
            sig[0] = amp * np.sin(2.0 * np.pi * 1.5 * t + phase)
            sig[1] = amp * np.cos(2.0 * np.pi * 1.5 * t + phase)
        sig += rng.normal(0.0, 0.05, size=(3, n))
        out.append(Recording(label=cls, sample_rate=GESTURE_SAMPLE_RATE,
                             samples=sig, source_id=f"synth:gesture:{cls}:{seed}:{i}"))
    return out


def _bandlimited_noise(rng: np.random.Generator, n: int, sample_rate: float,
                       cutoff_hz: float) -> np.ndarray:
    """Flat-spectrum noise up to cutoff_hz, zero above, unit RMS."""
    half = n // 2 + 1
    freqs = np.arange(half) * sample_rate / n
    mag = (freqs <= cutoff_hz).astype(np.float64)
    mag[0] = 0.0
    phases = rng.uniform(0.0, 2.0 * np.pi, size=half)
    phases[0] = 0.0
    if n % 2 == 0:
        phases[-1] = 0.0
    spec = mag * np.exp(1j * phases)
    x = np.fft.irfft(spec, n=n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms


def synth_keyword(cls: str, seed: int, count: int) -> list[Recording]:
    """Generate reproducible 1 s mono 16 kHz utterances for one keyword class.

    Each color class is three enveloped sinusoid bands with per-recording
    phase jitter plus additive noise at 20 dB SNR; the noise class is
    bandlimited noise only and stands in for the inactive state.
    """
    if cls not in KEYWORD_CLASSES:
        raise ValueError(f"unknown keyword class {cls!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = _class_rng("keyword", cls, KEYWORD_CLASSES, seed)
    n = KEYWORD_WINDOW
    t = np.arange(n) / KEYWORD_SAMPLE_RATE
    envelope = np.hanning(n)
    out = []
    for i in range(count):
        if cls == "noise":
            sig = 0.1 * _bandlimited_noise(rng, n, KEYWORD_SAMPLE_RATE, _NOISE_BAND_HZ)
        else:
            sig = np.zeros(n)
            for freq, amp in zip(KEYWORD_BANDS[cls], _KEYWORD_BAND_AMPS):
                phase = rng.uniform(0.0, 2.0 * np.pi)
                sig += amp * np.sin(2.0 * np.pi * freq * t + phase)
            sig *= envelope
            sig_power = np.mean(sig * sig)
            noise_rms = np.sqrt(sig_power / (10.0 ** (_KEYWORD_SNR_DB / 10.0)))
            sig = sig + noise_rms * _bandlimited_noise(rng, n, KEYWORD_SAMPLE_RATE,
                                                       _NOISE_BAND_HZ)
        out.append(Recording(label=cls, sample_rate=KEYWORD_SAMPLE_RATE,
                             samples=sig[np.newaxis, :],
                             source_id=f"synth:keyword:{cls}:{seed}:{i}"))
    return out


def synth_class_names(kind: str) -> tuple:
    if kind == "gesture":
        return GESTURE_CLASSES
    if kind == "keyword":
        return KEYWORD_CLASSES
    raise ValueError(f"unknown dataset kind {kind!r}")


def synth_recordings(kind: str, cls: str, seed: int, count: int) -> list[Recording]:
    if kind == "gesture":
        return synth_gesture(cls, seed, count)
    return synth_keyword(cls, seed, count)


def write_dataset_dir(root, kind: str, per_class: int, seed: int) -> int:
    """Write a synthetic corpus as <root>/<label>/<name>.{csv|wav}.

    Returns the number of files written. Identical arguments produce
    byte-identical trees.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    root = Path(root)
    written = 0
    for cls in synth_class_names(kind):
        d = root / cls
        d.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(synth_recordings(kind, cls, seed, per_class)):
            if kind == "gesture":
                save_csv_recording(rec, d / f"{cls}_{i:03d}.csv")
            else:
                save_wav_recording(rec, d / f"{cls}_{i:03d}.wav")
            written += 1
    return written


def read_dataset_dir(root, kind: str) -> list[Recording]:
    """Load every recording under <root>/<label>/, label taken from the
    directory name. Files are visited in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} does not exist")
    recs = []
    for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        label = label_dir.name
        for f in sorted(label_dir.iterdir()):
            if f.suffix == ".csv":
                recs.append(load_csv_recording(f, label, GESTURE_SAMPLE_RATE))
            elif f.suffix == ".wav":
                recs.append(load_wav_recording(f, label))
    if not recs:
        raise ValueError(f"no recordings found under {root}")
    if kind == "gesture" and any(r.channels != 3 for r in recs):
        raise ValueError("gesture dataset contains non 3-channel recordings")
    if kind == "keyword" and any(r.channels != 1 for r in recs):
        raise ValueError("keyword dataset contains non-mono recordings")
    return recs


def build_dataset(recordings: list[Recording], kind: str,
                  window_len: int | None = None,
                  stride: int | None = None) -> Dataset:
    """Window a list of recordings into a Dataset with a stable label table."""
    if window_len is None:
        window_len = GESTURE_WINDOW if kind == "gesture" else KEYWORD_WINDOW
    if stride is None:
        stride = GESTURE_STRIDE if kind == "gesture" else KEYWORD_WINDOW
    labels = sorted({r.label for r in recordings})
    windows: list[LabeledWindow] = []
    for rec in recordings:
        windows.extend(window(rec, window_len, stride))
    return Dataset(labels=labels, windows=windows, kind=kind)
