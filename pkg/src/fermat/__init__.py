"""Density-based (Fermat) distances and geodesics.

Shortest paths under a conformal metric that stretches Euclidean length by
``1 / p(x)^beta``: relaxation-based geodesic solving against exact scores,
density-weighted k-nearest-neighbor shortest-path graphs, the evaluation
datasets, and experiment runners with a CLI front end.
"""

from . import backend
from .datasets import DatasetSpec, gmm3_model, reference_model, sample
from .density import (
    DensityModel,
    GaussianMixture,
    GeneralizedGaussian,
    KdeModel,
    NnDensityField,
    StudentT,
    UniformDensity,
    generalized_gaussian_score,
    gmm_fit_em,
    standard_normal,
    student_t_score,
)
from .geometry import (
    GroundTruthQuality,
    GroundTruthUnconverged,
    MetricParams,
    Path,
    RelaxationConfig,
    RelaxationDiverged,
    RelaxationReport,
    geodesic_residual,
    ground_truth_distance,
    lpr,
    metric_speed_profile,
    path_length,
    relax,
    relax_step,
    resample_uniform,
    segment_lengths,
    solve_geodesic,
)
from .graph import (
    DensityQuadrature,
    Disconnected,
    GraphPath,
    KnnGraph,
    NnVariant,
    NodeDensityCombination,
    PowerWeighted,
    build_knn,
    default_k,
    densify,
    density_edge_log_weight,
    dijkstra,
    load_graph,
    nn_variant_edge_log_weight,
    power_edge_log_weight,
    save_graph,
    weight_edges,
)
from .numerics import Rng, finite_diff_gradient, log_add_exp, log_sum_exp, shuffle

__version__ = "0.1.0"
