"""Deployable model blobs and the fixed-memory streaming classifier.

The blob is a little-endian byte image: a 16-byte header (magic,
version, kind, payload length, CRC32) followed by the DSP config,
topology, normalization vectors, quantized tensors, label table and the
runtime thresholds. Loading is the exact inverse of exporting, down to
the bit pattern of every scale, so a shipped model behaves identically
to the one that was measured on the desk.
"""

from __future__ import annotations

import enum
import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    GESTURE_STRIDE,
    GESTURE_WINDOW,
    KEYWORD_WINDOW,
    LabeledWindow,
)
from .dsp import MfccConfig, SpectralConfig, default_sample_rate, mfcc, spectral_features
from .quant import QuantizedModel, QuantParams, q_forward

BLOB_MAGIC = b"TNYM"
BLOB_VERSION = 1
BLOB_HEADER_LEN = 16
_HEADER = struct.Struct("<4sHBBII")

STREAM_STRIDES = {"gesture": GESTURE_STRIDE, "keyword": 4000}
_KIND_CODES = {"gesture": 0, "keyword": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class BlobError(ValueError):
    """Base class for model-blob problems."""


class TruncatedBlobError(BlobError):
    pass


class BadMagicError(BlobError):
    pass


class UnsupportedVersionError(BlobError):
    pass


class CrcMismatchError(BlobError):
    pass


class Action(enum.Enum):
    NONE = "NONE"
    LED_RED = "LED_RED"
    LED_GREEN = "LED_GREEN"
    LED_BLUE = "LED_BLUE"
    DIRECTION_UPDOWN = "DIRECTION_UPDOWN"
    DIRECTION_LEFTRIGHT = "DIRECTION_LEFTRIGHT"
    DIRECTION_CIRCLE = "DIRECTION_CIRCLE"


_ACTION_BY_LABEL = {
    "red": Action.LED_RED,
    "green": Action.LED_GREEN,
    "blue": Action.LED_BLUE,
    "noise": Action.NONE,
    "updown": Action.DIRECTION_UPDOWN,
    "leftright": Action.DIRECTION_LEFTRIGHT,
    "circle": Action.DIRECTION_CIRCLE,
    "idle": Action.NONE,
}


def action_map(label: str) -> Action:
    """Fixed label-to-action mapping; unknown labels map to NONE."""
    try:
        return _ACTION_BY_LABEL[label]
    except KeyError:
        warnings.warn(f"label {label!r} has no action mapping; using NONE",
                      stacklevel=2)
        return Action.NONE


@dataclass(frozen=True)
class RuntimeConfig:
    kind: str
    min_confidence: float = 0.6
    smoother_k: int = 4
    event_cooldown: int = 2     # in stream strides

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ValueError(f"unknown kind {self.kind!r}")
        if not 0.0 < self.min_confidence <= 1.0:
            raise ValueError("min_confidence must be in (0, 1]")
        if not 1 <= self.smoother_k <= 255:
            raise ValueError("smoother_k must be in [1, 255]")
        if not 0 <= self.event_cooldown <= 255:
            raise ValueError("event_cooldown must be in [0, 255]")


@dataclass(frozen=True)
class ActionEvent:
    timestamp: int          # sample index of the window that fired
    label: str
    confidence: float
    action: Action


def format_event(ev: ActionEvent) -> str:
    return f"{ev.timestamp}\t{ev.label}\t{ev.confidence:.4f}\t{ev.action.value}"


def _pack_f32(values) -> bytes:
    return np.asarray(values, dtype="<f4").tobytes()


def serialize_blob(qm: QuantizedModel, dsp_cfg, runtime_cfg: RuntimeConfig) -> bytes:
    """Byte image of a quantized model plus its DSP and runtime config."""
    kind = runtime_cfg.kind
    if kind == "gesture" and not isinstance(dsp_cfg, SpectralConfig):
        raise ValueError("gesture blobs require a SpectralConfig")
    if kind == "keyword" and not isinstance(dsp_cfg, MfccConfig):
        raise ValueError("keyword blobs require an MfccConfig")
    if any(d > 65535 for d in qm.dims):
        raise ValueError("model exceeds format limits: layer width > 65535")
    if len(qm.dims) > 255 or len(qm.labels) > 255:
        raise ValueError("model exceeds format limits: too many layers or labels")

    out = bytearray()
    if isinstance(dsp_cfg, SpectralConfig):
        out += struct.pack("<Bff", 0, dsp_cfg.scale, dsp_cfg.filter_cutoff)
        out += struct.pack("<III", dsp_cfg.filter_order, dsp_cfg.fft_len,
                           dsp_cfg.power_bins)
    else:
        out += struct.pack("<BIIIII", 1, dsp_cfg.frame_len, dsp_cfg.frame_stride,
                           dsp_cfg.mel_filters, dsp_cfg.coefficients,
                           dsp_cfg.fft_len)
    out += struct.pack("<B", len(qm.dims))
    out += struct.pack(f"<{len(qm.dims)}H", *qm.dims)
    out += _pack_f32(qm.norm_mean)
    out += _pack_f32(qm.norm_std)
    for l in range(qm.n_layers):
        out += struct.pack("<fb", qm.w_scales[l], 0)
        out += qm.weights[l].astype("<i1").tobytes()
        out += qm.biases[l].astype("<i4").tobytes()
    for qp in qm.act:
        out += struct.pack("<fb", qp.scale, qp.zero_point)
    out += struct.pack("<B", len(qm.labels))
    for lab in qm.labels:
        enc = lab.encode("utf-8")
        if len(enc) > 255:
            raise ValueError("model exceeds format limits: label too long")
        out += struct.pack("<B", len(enc)) + enc
    out += struct.pack("<fBB", runtime_cfg.min_confidence,
                       runtime_cfg.smoother_k, runtime_cfg.event_cooldown)

    payload = bytes(out)
    header = _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, _KIND_CODES[kind], 0,
                          len(payload), zlib.crc32(payload) & 0xFFFFFFFF)
    return header + payload


def export_blob(qm: QuantizedModel, dsp_cfg, runtime_cfg: RuntimeConfig,
                path) -> int:
    """Write the blob to disk; returns the byte count (= flash_bytes)."""
    data = serialize_blob(qm, dsp_cfg, runtime_cfg)
    Path(path).write_bytes(data)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncatedBlobError("truncated payload")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def take_bytes(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise TruncatedBlobError("truncated payload")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out


def deserialize_blob(data: bytes):
    """Parse a blob image back into (QuantizedModel, dsp config, runtime config)."""
    if len(data) < BLOB_HEADER_LEN:
        raise TruncatedBlobError("truncated header")
    magic, version, kind_code, _, payload_len, crc = _HEADER.unpack_from(data, 0)
    if magic != BLOB_MAGIC:
        raise BadMagicError("bad magic")
    if version != BLOB_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise BlobError(f"unknown kind byte {kind_code}")
    payload = data[BLOB_HEADER_LEN:]
    if len(payload) < payload_len:
        raise TruncatedBlobError("truncated payload")
    payload = payload[:payload_len]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CrcMismatchError("payload CRC mismatch")
    kind = _KIND_NAMES[kind_code]

    r = _Reader(payload)
    (tag,) = r.take("<B")
    if tag == 0:
        scale, cutoff = r.take("<ff")
        order, fft_len, power_bins = r.take("<III")
        dsp_cfg = SpectralConfig(scale=scale, filter_cutoff=cutoff,
                                 filter_order=order, fft_len=fft_len,
                                 power_bins=power_bins)
    elif tag == 1:
        frame_len, frame_stride, mel_filters, coefficients, fft_len = r.take("<IIIII")
        dsp_cfg = MfccConfig(frame_len=frame_len, frame_stride=frame_stride,
                             mel_filters=mel_filters, coefficients=coefficients,
                             fft_len=fft_len)
    else:
        raise BlobError(f"unknown dsp config tag {tag}")

    (n_dims,) = r.take("<B")
    dims = list(r.take(f"<{n_dims}H"))
    input_dim = dims[0]
    norm_mean = np.frombuffer(r.take_bytes(4 * input_dim), dtype="<f4").copy()
    norm_std = np.frombuffer(r.take_bytes(4 * input_dim), dtype="<f4").copy()
    n_layers = len(dims) - 1
    weights, w_scales, biases = [], [], []
    for l in range(n_layers):
        out_dim, in_dim = dims[l + 1], dims[l]
        s_w, _zp = r.take("<fb")
        qw = np.frombuffer(r.take_bytes(out_dim * in_dim), dtype="<i1")
        weights.append(qw.reshape(out_dim, in_dim).copy())
        biases.append(np.frombuffer(r.take_bytes(4 * out_dim), dtype="<i4").copy())
        w_scales.append(float(s_w))
    act = []
    for _ in range(n_layers):
        s, zp = r.take("<fb")
        act.append(QuantParams(scale=float(s), zero_point=int(zp)))
    (n_labels,) = r.take("<B")
    labels = []
    for _ in range(n_labels):
        (ln,) = r.take("<B")
        labels.append(r.take_bytes(ln).decode("utf-8"))
    min_conf, smoother_k, cooldown = r.take("<fBB")
    if r.pos != len(payload):
        raise BlobError("trailing bytes in payload")

    qm = QuantizedModel(dims=dims, labels=labels, norm_mean=norm_mean,
                        norm_std=norm_std, weights=weights, w_scales=w_scales,
                        biases=biases, act=act)
    runtime_cfg = RuntimeConfig(kind=kind, min_confidence=float(min_conf),
                                smoother_k=int(smoother_k),
                                event_cooldown=int(cooldown))
    return qm, dsp_cfg, runtime_cfg


def load_blob(path):
    """Exact inverse of export_blob."""
    return deserialize_blob(Path(path).read_bytes())


class StreamClassifier:
    """Memory-budgeted sliding-window classifier over a sample stream.

    A ring buffer holds exactly one window; every `stride` new samples
    the current window runs DSP and int8 inference, the probability
    vector joins a K-deep uniform moving average, and an event fires
    when the smoothed top class is actionable, confident enough, and
    outside the cooldown. Buffer capacities are fixed at construction.
    """

    def __init__(self, qm: QuantizedModel, dsp_cfg, runtime_cfg: RuntimeConfig,
                 window_hook=None):
        self.kind = runtime_cfg.kind
        self.config = runtime_cfg
        if self.kind == "gesture":
            if not isinstance(dsp_cfg, SpectralConfig):
                raise ValueError("gesture stream requires a SpectralConfig")
            self.channels, self.window_len = 3, GESTURE_WINDOW
            expected = dsp_cfg.feature_len
        else:
            if not isinstance(dsp_cfg, MfccConfig):
                raise ValueError("keyword stream requires an MfccConfig")
            self.channels, self.window_len = 1, KEYWORD_WINDOW
            expected = dsp_cfg.feature_len(KEYWORD_WINDOW)
        if expected != qm.input_dim:
            raise ValueError(
                f"model expects {qm.input_dim} features but DSP config "
                f"produces {expected}"
            )
        self.qm = qm
        self.dsp_cfg = dsp_cfg
        self.sample_rate = default_sample_rate(self.kind)
        self.stride = STREAM_STRIDES[self.kind]
        self._ring = np.zeros((self.channels, self.window_len))
        self._write_pos = 0
        self._total = 0
        self._next_infer = self.window_len
        self._smooth = np.zeros((runtime_cfg.smoother_k, qm.output_dim))
        self._smooth_count = 0
        self._smooth_pos = 0
        self._last_event_at = None
        self._window_hook = window_hook

    def buffer_sizes(self) -> dict:
        """Capacities in elements; constant for the classifier's lifetime."""
        return {"ring": self._ring.shape, "smoother": self._smooth.shape}

    def _current_window(self) -> np.ndarray:
        wp = self._write_pos
        return np.concatenate([self._ring[:, wp:], self._ring[:, :wp]], axis=1)

    def _infer(self) -> ActionEvent | None:
        win = LabeledWindow(label="", data=self._current_window(),
                            origin=("stream", self._total - self.window_len))
        if self.kind == "gesture":
            feats = spectral_features(win, self.dsp_cfg, self.sample_rate)
        else:
            feats = mfcc(win, self.dsp_cfg, self.sample_rate)
        probs = q_forward(self.qm, feats)
        self._smooth[self._smooth_pos] = probs
        self._smooth_pos = (self._smooth_pos + 1) % self.config.smoother_k
        self._smooth_count = min(self._smooth_count + 1, self.config.smoother_k)
        smoothed = self._smooth[:self._smooth_count].mean(axis=0)
        if self._window_hook is not None:
            self._window_hook(self._total, smoothed)
        top = int(smoothed.argmax())
        conf = float(smoothed[top])
        label = self.qm.labels[top]
        action = action_map(label)
        if action is Action.NONE or conf < self.config.min_confidence:
            return None
        if self._last_event_at is not None and \
                self._total - self._last_event_at <= self.config.event_cooldown * self.stride:
            return None
        self._last_event_at = self._total
        return ActionEvent(timestamp=self._total, label=label,
                           confidence=conf, action=action)

    def push_samples(self, samples) -> list[ActionEvent]:
        """Feed a channel-major chunk; returns any events it triggered.

        Chunks may be any size up to one window; larger chunks are the
        caller's job to split. Event sequences are invariant to how the
        stream is chunked.
        """
        chunk = np.asarray(samples, dtype=np.float64)
        if chunk.ndim == 1:
            chunk = chunk[np.newaxis, :]
        if chunk.shape[0] != self.channels:
            raise ValueError(
                f"expected {self.channels}-channel chunks, got {chunk.shape[0]}"
            )
        if chunk.shape[1] > self.window_len:
            raise ValueError("chunk larger than one window; split it first")
        events = []
        pos = 0
        n = chunk.shape[1]
        while pos < n:
            take = min(n - pos, self._next_infer - self._total)
            end = self._write_pos + take
            if end <= self.window_len:
                self._ring[:, self._write_pos:end] = chunk[:, pos:pos + take]
            else:
                first = self.window_len - self._write_pos
                self._ring[:, self._write_pos:] = chunk[:, pos:pos + first]
                self._ring[:, :end - self.window_len] = chunk[:, pos + first:pos + take]
            self._write_pos = end % self.window_len
            self._total += take
            pos += take
            if self._total == self._next_infer:
                ev = self._infer()
                if ev is not None:
                    events.append(ev)
                self._next_infer += self.stride
        return events
