"""Training-loop simulator: data, models, configuration, experiments, timing."""

from .bench import BenchRow, bench_aggregators, format_bench
from .config import (
    CONFIG_KEYS,
    DESK_BATCH_SIZE,
    DESK_NOISE_SCALE,
    NOISE_SWEEP,
    ConfigFileError,
    ExperimentConfig,
    desk_config,
    load_config,
    parse_config_text,
)
from .data import (
    Dataset,
    DatasetKind,
    DatasetSpec,
    PartitionMode,
    PartitionSpec,
    load_idx_dataset,
    make_dataset,
    partition_dataset,
    read_idx,
    train_test_split,
    write_idx,
)
from .loop import (
    CSV_HEADER,
    RoundRecord,
    TrainingResult,
    final_accuracy,
    records_to_csv,
    run_experiment,
    run_omniscient_baseline,
    train_model,
)
from .models import LinearModel, MlpModel, Model, ModelKind, ModelSpec, SoftmaxModel, build_model, local_gradient

__all__ = [
    "BenchRow", "bench_aggregators", "format_bench",
    "CONFIG_KEYS", "DESK_BATCH_SIZE", "DESK_NOISE_SCALE", "NOISE_SWEEP", "ConfigFileError", "desk_config",
    "ExperimentConfig", "load_config", "parse_config_text",
    "Dataset", "DatasetKind", "DatasetSpec", "PartitionMode", "PartitionSpec", "load_idx_dataset",
    "make_dataset", "partition_dataset", "read_idx", "train_test_split", "write_idx",
    "CSV_HEADER", "RoundRecord", "final_accuracy", "records_to_csv", "run_experiment",
    "run_omniscient_baseline", "TrainingResult", "train_model",
    "LinearModel", "MlpModel", "Model", "ModelKind", "ModelSpec", "SoftmaxModel", "build_model",
    "local_gradient",
]
