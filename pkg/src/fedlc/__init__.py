"""Deterministic federated-learning simulator with calibrated local losses."""

from .config import (ConfigError, DatasetConfig, ExperimentConfig, LossConfig,
                     PartitionConfig, load_config, parse_config, serialize_config)
from .datasets import (ConfigurationError, Dataset, Example, IngestionError, SyntheticSpec,
                       class_counts, concat, generate_synthetic, load_csv, load_idx,
                       synthetic_models)
from .diagnostics import (ClassAggregates, DeviationReport, MarginReport, PerClassAccuracy,
                          SignProbeResult, class_aggregates, deviation_bound,
                          deviation_bound_calibrated, deviation_report, make_probe_client,
                          margin_report, per_class_accuracy, update_sign_probe)
from .fedcore import (ClientState, LocalUpdateResult, RoundReport, ServerState, SkipClient,
                      TrainConfig, aggregate_fedavg, aggregate_fednova, aggregate_fedopt,
                      aggregate_scaffold, build_loss_spec, local_update, run_round)
from .losses import CalibrationSpec, LossSpec, calibrate_logits, loss_and_grad, pairwise_margin
from .models import (Arch, ForwardTrace, ModelParams, axpy_params, backward, forward,
                     init_params, load_params, save_params)
from .partition import (ClassStats, InfeasiblePartitionError, Partition, class_stats,
                        partition_dirichlet, partition_quantity, skew_report)
from .runner import RunArtifact, run_experiment, run_single, run_sweep, summarize_metrics
from .svgplot import emit_plot

__version__ = "0.1.0"
