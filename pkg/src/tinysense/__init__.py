"""tinysense: an offline TinyML pipeline for gesture and keyword models.

Synthesize or load labeled sensor recordings, extract spectral/MFCC
features, train a small dense classifier, quantize it to int8 against a
microcontroller memory budget, ship it as a checksummed blob and run it
over sample streams with confidence smoothing.
"""

from .dataset import (
    Dataset,
    LabeledWindow,
    Recording,
    SplitSpec,
    build_dataset,
    load_csv_recording,
    load_wav_recording,
    read_dataset_dir,
    split,
    synth_gesture,
    synth_keyword,
    window,
    write_dataset_dir,
)
from .dsp import (
    FeatureSet,
    FeatureVector,
    MfccConfig,
    MfccFeaturizer,
    SpectralConfig,
    SpectralFeaturizer,
    featurize,
    fft_real,
    lowpass,
    mfcc,
    spectral_features,
)
from .model import (
    EvalReport,
    ModelParams,
    TinyDenseClassifier,
    Topology,
    TrainConfig,
    augment,
    evaluate,
    forward,
    forward_batch,
    gradients,
    init_params,
    loss,
    train,
    train_step,
)
from .quant import (
    BudgetReport,
    QuantizedModel,
    QuantParams,
    budget_report,
    calibrate,
    q_forward,
    q_forward_batch,
    quantize,
)
from .runtime import (
    Action,
    ActionEvent,
    RuntimeConfig,
    StreamClassifier,
    action_map,
    export_blob,
    load_blob,
)

__version__ = "0.1.0"
