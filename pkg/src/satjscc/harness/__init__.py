"""Datasets, training, evaluation and experiment sweeps."""

from .config import (ChannelSetup, Condition, Config, DatasetSpec, ExperimentPlan, PlanError,
                     config_from_dict, load_config)
from .data import (Dataset, DatasetError, adjacent_correlation, assign_splits,
                   generate_synthetic_dataset, load_raw_dataset, resample_bicubic,
                   write_raw_dataset)
from .experiments import (EvalResult, ModelStore, ReportOutcome, ResultError, ResultRow,
                          comparison_table, dataset_for, evaluate, mismatch_experiment, read_rows,
                          report, summarize, sweep, write_rows)
from .metrics import MAX_PIXEL, PSNR_EXACT, mse, psnr, psnr_from_mse
from .training import (DivergenceError, EpochRecord, TrainingJob, TrainingLog, adaptive_job,
                       baseline_job, train)
