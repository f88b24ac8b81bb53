from .finetune import FineTuneResult, conv_backward, cross_entropy, dataset_loss, fine_tune
from .problem import CalibrationError, PruningProblem, collect_calibration, sample_patches
from .solver import Selection, lasso_gram, norm_ranked, reconstruct_weights, solve_selection
from .surgery import (BlockReport, LayerReport, PruneReport, PruningSpec, kept_channels, prune_block,
                      prune_model)
