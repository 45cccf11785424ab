"""Post-training 8-bit quantization and the memory-budget gate.

Weights are symmetric per-tensor int8 (zero point 0), activations affine
per-tensor from calibration ranges, biases int32 at the combined
input*weight scale. The softmax head stays in float: it is monotone, so
argmax and confidence thresholding are unaffected. All scales are stored
as float32 so a model survives blob serialization bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import GESTURE_WINDOW, KEYWORD_WINDOW
from .model import ModelParams, _core_forward, _normalize, _softmax

FLASH_BUDGET = 1_048_576    # 1 MB program flash
RAM_BUDGET = 262_144        # 256 KB RAM

_I32_MAX = 2**31 - 1


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not -128 <= self.zero_point <= 127:
            raise ValueError("zero_point must fit int8")


@dataclass(frozen=True)
class QuantizedModel:
    """int8 weights and activation quant params; norm vectors and labels
    stay float so the pre/post processing matches the float model."""

    dims: list[int]
    labels: list[str]
    norm_mean: np.ndarray       # float32
    norm_std: np.ndarray        # float32
    weights: list               # per layer, int8 (out, in)
    w_scales: list[float]       # float32 values, zero point always 0
    biases: list                # per layer, int32 (out,)
    act: list[QuantParams]      # input quant params per layer

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]


def calibrate(params: ModelParams, calib_X: np.ndarray) -> list[tuple[float, float]]:
    """Observed (min, max) per layer boundary over a calibration set.

    Boundary 0 is the normalized input; boundary l >= 1 is layer l-1's
    pre-activation. Degenerate ranges are widened by +-1e-6 so no scale
    can collapse to zero.
    """
    X = np.atleast_2d(np.asarray(calib_X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty calibration set")
    if X.shape[0] < 10:
        raise ValueError(f"calibration needs at least 10 rows, got {X.shape[0]}")
    Xn = _normalize(params, X)
    _, _, pre = _core_forward(params, Xn)
    ranges = []
    for values in [Xn, *pre]:
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            lo, hi = lo - 1e-6, hi + 1e-6
        ranges.append((lo, hi))
    return ranges


def _affine_from_range(lo: float, hi: float) -> QuantParams:
    # Zero must stay representable so relu outputs and padding quantize cleanly.
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi == lo:
        lo, hi = lo - 1e-6, hi + 1e-6
    scale = np.float32((hi - lo) / 255.0)
    zp = int(np.clip(np.rint(-128.0 - lo / float(scale)), -128, 127))
    return QuantParams(scale=float(scale), zero_point=zp)


def quantize(params: ModelParams, ranges: list[tuple[float, float]]) -> QuantizedModel:
    """Quantize a calibrated float model to int8.

    q = clamp(round(x / scale) + zero_point, -128, 127); weight tensors
    use scale = max|w|/127 with zero point 0 (an all-zero tensor gets
    scale 1). The final pre-softmax boundary in `ranges` is ignored: the
    output stays float.
    """
    n_layers = params.topology.n_layers
    if len(ranges) != n_layers + 1:
        raise ValueError(f"expected {n_layers + 1} boundary ranges, got {len(ranges)}")
    # Layer 0 sees the normalized input; layer l >= 1 sees relu of the
    # previous pre-activation, so its range clips at zero.
    act = [_affine_from_range(*ranges[0])]
    for l in range(1, n_layers):
        lo, hi = ranges[l]
        act.append(_affine_from_range(max(lo, 0.0), max(hi, 0.0)))
    weights, w_scales, biases = [], [], []
    for l in range(n_layers):
        w = params.weights[l]
        max_abs = float(np.max(np.abs(w)))
        s_w = np.float32(max_abs / 127.0) if max_abs > 0 else np.float32(1.0)
        qw = np.clip(np.rint(w / float(s_w)), -128, 127).astype(np.int8)
        s_b = float(np.float32(act[l].scale)) * float(s_w)
        qb = np.clip(np.rint(params.biases[l] / s_b), -_I32_MAX - 1, _I32_MAX)
        qb = qb.astype(np.int64)
        # 32-bit accumulators must be safe by construction: worst case is
        # every product saturated plus the bias.
        worst = w.shape[1] * 127 * 255 + int(np.max(np.abs(qb), initial=0))
        assert worst <= _I32_MAX, "accumulator would overflow int32"
        weights.append(qw)
        w_scales.append(float(s_w))
        biases.append(qb.astype(np.int32))
    return QuantizedModel(dims=list(params.topology.dims), labels=list(params.labels),
                          norm_mean=params.norm_mean.astype(np.float32),
                          norm_std=params.norm_std.astype(np.float32),
                          weights=weights, w_scales=w_scales, biases=biases,
                          act=act)


def quantize_tensor(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) / float(np.float32(qp.scale)))
                   + qp.zero_point, -128, 127).astype(np.int64)


def dequantize_tensor(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - qp.zero_point) * float(np.float32(qp.scale))


def q_forward_batch(qm: QuantizedModel, X: np.ndarray) -> np.ndarray:
    """Integer inference path for a batch of raw feature rows.

    Input is normalized in float, each layer runs an int8 matmul with a
    32-bit accumulator, hidden activations are requantized, and the last
    layer is dequantized to float for the softmax.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != qm.input_dim:
        raise ValueError(f"expected {qm.input_dim} features, got {X.shape[1]}")
    xn = (X - qm.norm_mean.astype(np.float64)) / qm.norm_std.astype(np.float64)
    q = quantize_tensor(xn, qm.act[0])
    z = None
    for l in range(qm.n_layers):
        qp = qm.act[l]
        acc = (q - qp.zero_point) @ qm.weights[l].astype(np.int64).T \
            + qm.biases[l].astype(np.int64)
        assert np.all(np.abs(acc) <= _I32_MAX)
        z = acc.astype(np.float64) * (float(np.float32(qp.scale)) * qm.w_scales[l])
        if l < qm.n_layers - 1:
            q = quantize_tensor(np.maximum(z, 0.0), qm.act[l + 1])
    return _softmax(z)


def q_forward(qm: QuantizedModel, features) -> np.ndarray:
    values = getattr(features, "values", features)
    return q_forward_batch(qm, np.asarray(values))[0]


@dataclass(frozen=True)
class BudgetReport:
    flash_bytes: int
    ram_bytes: int
    fits: bool
    breakdown: dict

    def to_dict(self) -> dict:
        return {
            "flash_bytes": self.flash_bytes,
            "ram_bytes": self.ram_bytes,
            "flash_budget": FLASH_BUDGET,
            "ram_budget": RAM_BUDGET,
            "fits": self.fits,
            "breakdown": dict(self.breakdown),
        }


def budget_report(qm: QuantizedModel, dsp_cfg, runtime_cfg) -> BudgetReport:
    """Flash/RAM accounting against the 1 MB / 256 KB device budget.

    Flash is the serialized blob size. RAM counts the loaded model image
    (payload) plus the streaming window buffer, the float feature row,
    the worst-case per-layer scratch (int8 in, int32 accumulator, int8
    out), the float probability row and the smoother history.
    """
    from .runtime import BLOB_HEADER_LEN, serialize_blob  # avoids a module cycle

    blob = serialize_blob(qm, dsp_cfg, runtime_cfg)
    flash = len(blob)
    if runtime_cfg.kind == "gesture":
        channels, window_len = 3, GESTURE_WINDOW
    else:
        channels, window_len = 1, KEYWORD_WINDOW
    model_image = flash - BLOB_HEADER_LEN
    window_bytes = channels * window_len * 4
    feature_bytes = qm.input_dim * 4
    scratch = max(qm.dims[l] + 5 * qm.dims[l + 1] for l in range(qm.n_layers))
    probs_bytes = qm.output_dim * 8
    smoother_bytes = runtime_cfg.smoother_k * qm.output_dim * 4
    ram = model_image + window_bytes + feature_bytes + scratch \
        + probs_bytes + smoother_bytes
    breakdown = {
        "model_image": model_image,
        "window_buffer": window_bytes,
        "feature_buffer": feature_bytes,
        "layer_scratch": scratch,
        "probability_buffer": probs_bytes,
        "smoother": smoother_bytes,
    }
    return BudgetReport(flash_bytes=flash, ram_bytes=ram,
                        fits=flash <= FLASH_BUDGET and ram <= RAM_BUDGET,
                        breakdown=breakdown)
