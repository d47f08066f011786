"""Dictionary-learning and sparse-representation classification of EEG
seizure epochs, with an evaluation harness for the nine standard Bonn
scenarios and SNR robustness sweeps."""

from .classifier import (
    ClassificationResult,
    SrcModel,
    classify,
    classify_batch,
    load_model,
    residual_profile,
    save_model,
    train_model,
)
from .dataset import (
    CASE_COMPOSITIONS,
    CASE_IDS,
    DatasetError,
    Epoch,
    EpochMatrix,
    FoldSplit,
    LabeledDataset,
    add_awgn,
    assemble_scenario,
    decimate,
    generate_synthetic_dataset,
    load_bonn_subset,
    stratified_kfold,
    write_bonn_subset,
)
from .dict_learning import (
    LearnConfig,
    LearnError,
    LearnerState,
    cbwrlsu_step,
    correction_weight,
    find_correlated,
    init_dictionary,
    train_cbwrlsu,
    train_mod,
)
from .evaluation import (
    CaseReport,
    ConfusionMatrix,
    MetricSet,
    NoiseSweepReport,
    metrics,
    noise_sweep,
    run_all_cases,
    run_case,
    summary_table,
)
from .kernels import backend, set_backend
from .sparse_coding import (
    CodingConfig,
    CodingError,
    Dictionary,
    SparseCode,
    batch_code,
    load_dictionary,
    normalized_error,
    omp,
    reconstruct,
    reconstruction_error,
    save_dictionary,
)

__version__ = "0.1.0"
