"""Channel-parameter estimators and their shared utilities."""

from ._common import (
    AlsDivergenceError,
    AugmentationConfig,
    EstimationError,
    EstimationResult,
    HeightPrior,
    PreconditionError,
    RankDeficiencyError,
    default_augmentation_2d,
    default_augmentation_3d,
    default_stacking,
    estimate_order,
    hankel,
    implied_heights,
    kruskal_feasible_3d,
    minimal_augmentation_2d,
    minimal_augmentation_3d,
    mdl_order,
    multichannel_hankel,
    rank_feasible_1d,
    rank_feasible_2d,
    select_los,
    selection_matrices,
)
from .esprit import augment_2d, esprit_1d, esprit_2d, esprit_2d_sa, stack_1d
from .mf import delay_profile, delay_step, mf_1d, mf_3d, mf_omega_at
from .tensor import (
    CpdFactors,
    augmented_steering,
    congruence,
    cpd,
    cpd_estimate,
    cpd_extract,
    cpd_sa,
    cpd_sa_extract,
    spatial_augment_3d,
)

ALGORITHMS = ("MF", "CPD", "CPD-SA", "ESPRIT2D", "ESPRIT2D-SA", "ESPRIT1D")

__all__ = [name for name in dir() if not name.startswith("_")]
