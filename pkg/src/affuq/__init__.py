"""Affordance classifier head with Bayesian uncertainty decomposition.

The package takes precomputed image/object feature vectors, trains a small
fusion head per action, samples its posterior predictions with MC dropout
or deep ensembles, splits the predictive covariance into aleatoric and
epistemic parts, and scores calibration (ECE, Brier, accuracy at three
label granularities).
"""

from .bayes import (
    EnsembleModel,
    PosteriorSampleSet,
    UncertaintyReport,
    aleatoric_cov,
    decompose,
    ensemble_sample,
    ensemble_train,
    epistemic_cov,
    mc_dropout_sample,
    predictive_mean,
)
from .data import (
    Action,
    BlobSpec,
    Dataset,
    DatasetHeader,
    FeatureRecord,
    class_distribution,
    load_dataset,
    make_dataset,
    save_dataset,
    split,
    synth_blobs,
    synth_ood,
)
from .errors import (
    AffuqError,
    ConsistencyError,
    FormatError,
    InvalidInputError,
    ShapeError,
    StateError,
    TrainingDivergedError,
)
from .metrics import (
    CalibrationBins,
    CalibrationReport,
    Granularity,
    brier,
    ece,
    evaluate_predictions,
    mean_accuracy,
    micro_accuracy,
    remap,
)
from .model import (
    DropoutMask,
    ForwardTrace,
    HeadConfig,
    HeadParams,
    MaskSampler,
    backward,
    deserialize,
    forward,
    init_params,
    load_model,
    loss_cross_entropy,
    save_model,
    serialize,
)
from .numeric import RngStream, hadamard, one_hot, outer, relu, softmax
from .train import AdamState, TrainConfig, adam_step, lr_at, train

__version__ = "0.1.0"
