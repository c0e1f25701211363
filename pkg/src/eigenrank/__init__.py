"""Eigenrank: ensemble-disagreement subset selection and failure prediction
for segmentation models, scored by the top eigenvalue of pairwise Dice matrices."""

from .dicematrix import (
    DiceMatrix,
    EigenSolverError,
    NotPSDError,
    SpectralSummary,
    build_dice_matrix,
    dominance_ratio,
    eigenvalues,
    is_psd,
    jacobi_eigh,
    lambda_max,
    spectral_summary,
    trio_feasibility,
    von_neumann_entropy,
)
from .engine import (
    BackendFailure,
    Case,
    Pool,
    SegmenterBackend,
    SelectionError,
    SelectionReport,
    SelectionState,
    compare_to_random,
    evaluate_model,
    initialize,
    iterate,
    rank_failures_fixed,
    run_failure_elimination,
    run_selection,
    score_case,
)
from .masks import BinaryMask, MaskShapeError, dice, foreground_count, jaccard
from .synthetic import (
    SimulationConfig,
    SyntheticBackend,
    bimodal_difficulties,
    generate_dataset,
    run_conjecture_simulation,
    sample_feasible_dice_matrix,
)

__version__ = "0.1.0"
