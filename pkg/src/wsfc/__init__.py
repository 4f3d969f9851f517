"""Prosody decomposition into weighted function-specific contours."""

from .corpus import (
    BUILTIN_FUNCTIONS,
    Corpus,
    CorpusError,
    CorpusFormatError,
    CorpusValidationError,
    FunctionInstance,
    ProsodyFrame,
    RhythmicUnit,
    Utterance,
    hz_to_semitones,
    load_corpus,
    save_corpus,
    split_corpus,
    validate_corpus,
)
from .netcore import DenseNet, Gradients, SgdMomentum, apply_update, gradient_check
from .wcg import (
    CONTEXT_MODES,
    EMPHASIS_CATEGORIES,
    ModelSet,
    RampVector,
    WeightedContourGenerator,
    build_ramps,
    encode_context,
    init_model_set,
    load_model,
    ramp_matrix,
    save_model,
    set_identity_weights,
)
from .trainer import (
    TrainHistory,
    TrainingConfig,
    TrainingDivergenceError,
    analysis_by_synthesis,
    distribute_residuals,
    pretrain_freeze,
    retrain_weights_only,
    synthesize,
    train_function_epoch,
)
from .synthgen import (
    GroundTruth,
    PlantSpec,
    PrototypeSpec,
    SyntheticSpec,
    analytic_model_set,
    generate_corpus,
    load_genspec,
    load_ground_truth,
    oracle_reconstruction,
    save_genspec,
    save_ground_truth,
    score_recovery,
)
from .evaluate import (
    DegenerateDataError,
    RmseReport,
    export_decomposition,
    paired_t_test,
    regularized_incomplete_beta,
    rmse_vocalic,
    weight_table,
)

__version__ = "0.1.0"
