"""Structured pruning of small transformer language models.

Attention heads and FFN hidden channels are ranked by a propagated
importance score (mean absolute activation times the downstream weight
mass the channel feeds, including the FFN path after the residual), then
the lowest-scoring groups are removed by real weight surgery. Baseline
rankings (wanda, magnitude, random, nisp) share the same pipeline, and
the block-output error bound behind the score can be verified numerically.
"""

from .calib import (ActivationStats, CalibSpec, Corpus, collect_stats,
                    detokenize, load_corpus, sample_calibration, tokenize)
from .container import (ContainerError, load_model, load_scores, load_stats,
                        read_container, save_model, save_scores, save_stats,
                        write_container)
from .evaluate import (BoundCheckResult, EvalReport, OracleResult,
                       block_recon_error, bound_check_trials, brute_force_mask,
                       count_macs, count_params, evaluate_pruning, kl_to_dense,
                       oracle_trials, perplexity, recon_errors_all_blocks,
                       verify_bound)
from .model import (BlockTrace, BlockWeights, Model, ModelConfig,
                    block_forward, copy_model, init_model, model_forward,
                    named_parameters)
from .prune import (PruneMask, SparsityTarget, apply_prune, count_prunable,
                    expand_head_mask, identity_mask, kept_count, select_masks,
                    top_k_mask)
from .pruner import BlockPruner, NotFittedError
from .rng import derive_seed, substream
from .score import (METHODS, ImportanceScores, ScoreConfig, aggregate_heads,
                    compute_scores, propagation_vector, score_ffn_channels,
                    score_msa_channels)
from .tensor import (ACTIVATION_KINDS, GELU_TANH_LIPSCHITZ, RELU_LIPSCHITZ,
                     SILU_LIPSCHITZ, abs_col_mean, activation,
                     lipschitz_constant, matmul, row_l1_sums, softmax_rows)
from .train import TrainConfig, loss_and_grads, train

__version__ = "0.1.0"

__all__ = [
    "ACTIVATION_KINDS", "ActivationStats", "BlockPruner", "BlockTrace",
    "BlockWeights", "BoundCheckResult", "CalibSpec", "ContainerError",
    "Corpus", "EvalReport", "GELU_TANH_LIPSCHITZ", "ImportanceScores",
    "METHODS", "Model", "ModelConfig", "NotFittedError", "OracleResult",
    "PruneMask", "RELU_LIPSCHITZ", "SILU_LIPSCHITZ", "ScoreConfig",
    "SparsityTarget", "TrainConfig", "abs_col_mean", "activation",
    "aggregate_heads", "apply_prune", "block_forward", "block_recon_error",
    "bound_check_trials", "brute_force_mask", "collect_stats",
    "compute_scores", "copy_model", "count_macs", "count_params",
    "count_prunable", "derive_seed", "detokenize", "evaluate_pruning",
    "expand_head_mask", "identity_mask", "init_model", "kept_count",
    "kl_to_dense", "lipschitz_constant", "load_corpus", "load_model",
    "load_scores", "load_stats", "loss_and_grads", "matmul",
    "model_forward", "named_parameters", "oracle_trials", "perplexity",
    "propagation_vector", "read_container", "recon_errors_all_blocks",
    "row_l1_sums", "sample_calibration", "save_model", "save_scores",
    "save_stats", "score_ffn_channels", "score_msa_channels",
    "select_masks", "softmax_rows", "substream", "top_k_mask", "train",
    "verify_bound", "write_container",
]
