"""Blind source extraction and separation for block-wise time-varying
mixtures with a constant separating vector, plus performance analysis and
an experiment harness.
"""

from .mixture import (
    REAL, COMPLEX,
    MixtureError, SingularDrawError,
    BlockedMixture, GroundTruth, SourceSpec, CsvParameterization,
    default_variance_profile, sample_gg, gg_scale,
    generate_csv_mixture, generate_c1_mixture, generate_c2_mixture,
    draw_c2_base_vectors, save_mixture, load_mixture,
)
from .scores import (
    ScoreError, DegenerateDataError,
    ScoreModel, RationalScore, GGScore, score_from_name,
    rational_score, score_wirtinger_derivatives,
    BlockStats, block_covariance, compute_block_stats, joint_block_stats,
)
from .solvers import (
    SolverError, SingularUpdateError, RankDeficiencyError,
    SeparatorState, HessianPieces, DeflationChain,
    orthogonal_constraint, block_covariances, make_state,
    normalized_gradient, hessian_pieces, one_unit_update, run_one_unit,
    symmetric_orthogonalize, run_symmetric, run_block_deflation,
    whiten, extract_signals, contrast_value,
)
from .analysis import (
    AnalysisError,
    PerformanceInputs, IsrReport,
    theoretical_isr, crlb_isr, gg_kappa,
    rational_moments_gg, true_score_moments_gg,
    performance_inputs_from_truth,
    empirical_isr, trimmed_mean, trimmed_mean_isr_db,
    fd_wirtinger_oracle, lcmp_crosscheck,
)
from .harness import (
    ConfigError, ExperimentConfig, ExperimentReport, run_experiment,
)

__version__ = "0.1.0"
