"""Shared fixtures: the synthetic corpora and trained models are built
once per session because several suites (quant, runtime, cli,
acceptance) exercise the same pipeline artifacts."""

import pytest

from tinysense import (
    MfccConfig,
    RuntimeConfig,
    SpectralConfig,
    SplitSpec,
    TrainConfig,
    build_dataset,
    calibrate,
    featurize,
    quantize,
    split,
    synth_gesture,
    synth_keyword,
    train,
)

GESTURE_CLASSES = ("updown", "leftright", "circle", "idle")
KEYWORD_CLASSES = ("red", "green", "blue", "noise")


@pytest.fixture(scope="session")
def gesture_corpus():
    recs = []
    for cls in GESTURE_CLASSES:
        recs.extend(synth_gesture(cls, 42, 40))
    ds = build_dataset(recs, "gesture")
    train_ds, test_ds = split(ds, SplitSpec(train_fraction=0.8, seed=42))
    return ds, train_ds, test_ds


@pytest.fixture(scope="session")
def gesture_features(gesture_corpus):
    _, train_ds, test_ds = gesture_corpus
    cfg = SpectralConfig()
    return featurize(train_ds, cfg), featurize(test_ds, cfg)


@pytest.fixture(scope="session")
def gesture_model(gesture_features):
    fs_train, _ = gesture_features
    params, history = train(fs_train.X, fs_train.y, fs_train.labels,
                            TrainConfig(seed=42), hidden=(20, 10))
    return params, history


@pytest.fixture(scope="session")
def gesture_quantized(gesture_model, gesture_features):
    params, _ = gesture_model
    fs_train, _ = gesture_features
    return quantize(params, calibrate(params, fs_train.X))


@pytest.fixture(scope="session")
def gesture_runtime_cfg():
    return RuntimeConfig(kind="gesture")


@pytest.fixture(scope="session")
def keyword_corpus():
    recs = []
    for cls in KEYWORD_CLASSES:
        recs.extend(synth_keyword(cls, 42, 40))
    ds = build_dataset(recs, "keyword")
    train_ds, test_ds = split(ds, SplitSpec(train_fraction=0.8, seed=42))
    return ds, train_ds, test_ds


@pytest.fixture(scope="session")
def keyword_features(keyword_corpus):
    _, train_ds, test_ds = keyword_corpus
    cfg = MfccConfig()
    return featurize(train_ds, cfg), featurize(test_ds, cfg)


@pytest.fixture(scope="session")
def keyword_model(keyword_features):
    fs_train, _ = keyword_features
    params, history = train(fs_train.X, fs_train.y, fs_train.labels,
                            TrainConfig(seed=42), hidden=(32, 16))
    return params, history


@pytest.fixture(scope="session")
def keyword_quantized(keyword_model, keyword_features):
    params, _ = keyword_model
    fs_train, _ = keyword_features
    return quantize(params, calibrate(params, fs_train.X))


@pytest.fixture(scope="session")
def keyword_runtime_cfg():
    return RuntimeConfig(kind="keyword")


def fresh_feature_rows(kind: str, per_class: int, seed: int) -> tuple:
    """Feature rows from recordings the models never trained on."""
    if kind == "gesture":
        classes, cfg = GESTURE_CLASSES, SpectralConfig()
        synth = synth_gesture
    else:
        classes, cfg = KEYWORD_CLASSES, MfccConfig()
        synth = synth_keyword
    recs = []
    for cls in classes:
        recs.extend(synth(cls, seed, per_class))
    ds = build_dataset(recs, kind)
    fs = featurize(ds, cfg)
    return fs.X, fs.y, fs.labels
