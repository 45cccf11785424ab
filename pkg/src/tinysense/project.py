"""Project configuration file and the float-model JSON artifact.

A project is one human-editable JSON file naming the dataset, the DSP
settings, the network shape and the training/runtime knobs. Every CLI
command takes the config plus a stage artifact, so a full pipeline run
is reproducible from the config and the seeds alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import SplitSpec
from .dsp import MfccConfig, SpectralConfig, default_sample_rate
from .model import ModelParams, Topology, TrainConfig
from .runtime import RuntimeConfig


@dataclass(frozen=True)
class ProjectConfig:
    kind: str
    dataset_root: Path
    out_dir: Path
    split: SplitSpec
    dsp: SpectralConfig | MfccConfig
    hidden: tuple
    train: TrainConfig
    runtime: RuntimeConfig

    @property
    def sample_rate(self) -> float:
        return default_sample_rate(self.kind)

    def layout_id(self) -> str:
        return self.dsp.layout_id(self.sample_rate)


def default_config(kind: str, dataset_root="data", out_dir="artifacts",
                   seed: int = 42) -> ProjectConfig:
    if kind == "gesture":
        dsp = SpectralConfig()
        hidden = (20, 10)
    elif kind == "keyword":
        dsp = MfccConfig()
        # MFCC rows are ~16x wider than spectral ones; a narrow first layer
        # is prone to whole-class relu die-off on some init seeds.
        hidden = (32, 16)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return ProjectConfig(kind=kind, dataset_root=Path(dataset_root),
                         out_dir=Path(out_dir),
                         split=SplitSpec(train_fraction=0.8, seed=seed),
                         dsp=dsp, hidden=hidden,
                         train=TrainConfig(seed=seed),
                         runtime=RuntimeConfig(kind=kind))


def _take(section: dict, name: str, allowed: set):
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown keys in config section {name!r}: {sorted(unknown)}")


def load_config(path) -> ProjectConfig:
    """Read a project config; relative paths resolve against the file."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    _take(raw, "top level", {"kind", "dataset_root", "out_dir", "split", "dsp",
                             "model", "train", "runtime"})
    kind = raw.get("kind")
    if kind not in ("gesture", "keyword"):
        raise ValueError(f"config kind must be gesture or keyword, got {kind!r}")
    base = path.parent

    def respath(p, default):
        p = raw.get(p, default)
        p = Path(p)
        return p if p.is_absolute() else base / p

    sp = dict(raw.get("split", {}))
    _take(sp, "split", {"train_fraction", "seed"})
    split = SplitSpec(train_fraction=sp.get("train_fraction", 0.8),
                      seed=int(sp.get("seed", 42)))

    d = dict(raw.get("dsp", {}))
    if kind == "gesture":
        _take(d, "dsp", {"scale", "filter_cutoff", "filter_order", "fft_len",
                         "power_bins"})
        dsp = SpectralConfig(**d)
    else:
        _take(d, "dsp", {"frame_len", "frame_stride", "mel_filters",
                         "coefficients", "fft_len"})
        dsp = MfccConfig(**d)

    m = dict(raw.get("model", {}))
    _take(m, "model", {"hidden"})
    default_hidden = (20, 10) if kind == "gesture" else (32, 16)
    hidden = tuple(int(h) for h in m.get("hidden", default_hidden))

    t = dict(raw.get("train", {}))
    _take(t, "train", {"epochs", "batch_size", "learning_rate", "seed",
                       "augment", "confidence_threshold"})
    train = TrainConfig(epochs=int(t.get("epochs", 100)),
                        batch_size=int(t.get("batch_size", 16)),
                        learning_rate=float(t.get("learning_rate", 0.005)),
                        seed=int(t.get("seed", 42)),
                        augment=bool(t.get("augment", True)),
                        confidence_threshold=float(t.get("confidence_threshold", 0.91)))

    r = dict(raw.get("runtime", {}))
    _take(r, "runtime", {"min_confidence", "smoother_k", "event_cooldown"})
    runtime = RuntimeConfig(kind=kind,
                            min_confidence=float(r.get("min_confidence", 0.6)),
                            smoother_k=int(r.get("smoother_k", 4)),
                            event_cooldown=int(r.get("event_cooldown", 2)))

    return ProjectConfig(kind=kind, dataset_root=respath("dataset_root", "data"),
                         out_dir=respath("out_dir", "artifacts"), split=split,
                         dsp=dsp, hidden=hidden, train=train, runtime=runtime)


def config_to_dict(cfg: ProjectConfig) -> dict:
    if cfg.kind == "gesture":
        dsp = {"scale": cfg.dsp.scale, "filter_cutoff": cfg.dsp.filter_cutoff,
               "filter_order": cfg.dsp.filter_order, "fft_len": cfg.dsp.fft_len,
               "power_bins": cfg.dsp.power_bins}
    else:
        dsp = {"frame_len": cfg.dsp.frame_len, "frame_stride": cfg.dsp.frame_stride,
               "mel_filters": cfg.dsp.mel_filters,
               "coefficients": cfg.dsp.coefficients, "fft_len": cfg.dsp.fft_len}
    return {
        "kind": cfg.kind,
        "dataset_root": str(cfg.dataset_root),
        "out_dir": str(cfg.out_dir),
        "split": {"train_fraction": cfg.split.train_fraction,
                  "seed": cfg.split.seed},
        "dsp": dsp,
        "model": {"hidden": list(cfg.hidden)},
        "train": {"epochs": cfg.train.epochs, "batch_size": cfg.train.batch_size,
                  "learning_rate": cfg.train.learning_rate,
                  "seed": cfg.train.seed, "augment": cfg.train.augment,
                  "confidence_threshold": cfg.train.confidence_threshold},
        "runtime": {"min_confidence": cfg.runtime.min_confidence,
                    "smoother_k": cfg.runtime.smoother_k,
                    "event_cooldown": cfg.runtime.event_cooldown},
    }


def save_config(cfg: ProjectConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2,
                                     sort_keys=True) + "\n", encoding="utf-8")


def save_model_json(params: ModelParams, layout_id: str, path) -> None:
    """Float model artifact: weights, normalization stats, label table."""
    doc = {
        "layout_id": layout_id,
        "labels": list(params.labels),
        "hidden": list(params.topology.hidden),
        "norm_mean": params.norm_mean.tolist(),
        "norm_std": params.norm_std.tolist(),
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_model_json(path):
    """Returns (ModelParams, layout_id)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    layers = doc["layers"]
    weights = [np.asarray(l["weights"], dtype=np.float64) for l in layers]
    biases = [np.asarray(l["bias"], dtype=np.float64) for l in layers]
    topology = Topology(input_dim=weights[0].shape[1],
                        hidden=tuple(doc["hidden"]),
                        output_dim=weights[-1].shape[0])
    params = ModelParams(topology=topology, weights=weights, biases=biases,
                         norm_mean=np.asarray(doc["norm_mean"], dtype=np.float64),
                         norm_std=np.asarray(doc["norm_std"], dtype=np.float64),
                         labels=list(doc["labels"]))
    return params, doc["layout_id"]
