"""Metastable mean and covariance prediction for heterogeneous SIS epidemics.

Pipeline: factorize the infection-rate matrix into non-negative factors,
cluster nodes by their (infectiousness, susceptibility, curing) profiles,
solve the clustered balance equations for the metastable expectation, and
obtain the stationary covariance of the fluctuations from the linearized
diffusion model. Exact simulation and small-instance quasi-stationary
solvers provide the ground truth to validate against.
"""

from .network import (
    RateNetwork,
    load_network,
    save_network,
    generate_configuration_model,
    spectral_threshold,
    load_bundled_surrogate,
)
from .simulate import (
    SimulationSummary,
    Trajectory,
    simulate_sis,
    load_event_log,
    metastable_sample,
    metastable_sample_rank1,
    merge_summaries,
)
from .qsd import ExactDistribution, qsd_exact_chain, qsd_cluster_chain
from .nmf import (
    FactorPair,
    factorize,
    tune_lambda,
    identity_factorization,
    weighted_objective,
)
from .clusters import (
    NodeProfiles,
    Clustering,
    node_profiles,
    cluster_nodes,
    singleton_clustering,
    clustering_from_assignment,
)
from .metastable import (
    MetastablePrediction,
    CorrectedPrediction,
    nimfa_steady_state,
    solve_V,
    existence_check,
    corrected_mean_field,
)
from .fluctuation import (
    FluctuationModel,
    PredictedDistribution,
    SvdeTrajectory,
    build_fluctuation,
    sigma_infinity,
    simulate_svde,
    predicted_distribution,
)
from .pipeline import (
    PipelineConfig,
    artifact_path,
    run_factorize,
    run_cluster,
    run_predict,
    run_simulate,
    run_correct,
    run_compare,
)
from .report import ComparisonReport, build_report, ks_distance, render_text
from .errors import (
    SisclustError,
    ValidationError,
    ParseError,
    SubcriticalError,
    NumericalError,
    GenerationError,
    TuningError,
    CapacityError,
)

__version__ = "0.1.0"
