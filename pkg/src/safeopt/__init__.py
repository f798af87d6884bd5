"""Sparse training under an L0 constraint via augmented-Lagrangian
splitting with sharpness-aware inner minimization, plus the baselines,
diagnostics, and experiment harness needed to study it at desk scale.
"""

from .core import (DivergenceError, FloatArray, ObjectiveOracle, ParamVector,
                   QuadraticOracle, Schedule, Segment, SparsityTarget,
                   as_param_vector, as_schedule, schedule_eval,
                   single_segment_layout, sparsity_to_count)
from .projection import (SaliencyDiagonal, build_saliency, hard_threshold,
                         nm_projection, p_weighted_projection, project_to_target)
from .sharpness import (LandscapeGrid, PowerIterationResult, epsilon_star, hvp,
                        landscape_slice, max_hessian_eigenvalue, sam_gradient)
from .safe_optimizer import (DualState, SafeConfig, ScheduleCheckReport,
                             TrainResult, admm_config, corollary_delta_condition,
                             dual_update, lemma_schedule_check, run_safe,
                             stationarity_gap, x_step)
from .baselines import (BaselineConfig, cram_update, magnitude_prune_oneshot,
                        run_cram, run_imp_sam, sparsity_schedule)
from .rem_pruner import (ActivationBatch, LinearLayer, PruneReport,
                         RemOracle, RemPruneConfig, load_activations, load_layer,
                         prune_layer, rem_objective, save_activations, save_layer,
                         synth_activations)
from .models_data import (CorruptionRecord, Dataset, IdxFormatError, MlpOracle,
                          MlpSpec, batch_stream, batchnorm_tune, build_mlp_oracle,
                          corrupt_labels, load_dataset, load_mnist_idx,
                          save_dataset, subset, synth_blobs)
from .harness import (ConfigError, ExperimentConfig, TestProblem, VerifyReport,
                      brute_force_sparse_optimum, config_hash, diagnose_checkpoint,
                      export_report, model_data_hash, run_experiment, run_method,
                      verify_suite)
from .serialization import (load_checkpoint, read_container, read_trace_jsonl,
                            save_checkpoint, write_container, write_trace_jsonl)

__version__ = "0.1.0"
