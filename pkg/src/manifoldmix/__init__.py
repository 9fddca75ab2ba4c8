"""Gaussian mixture models on spheres and SPD matrices.

Three estimators are provided side by side: a Euclidean GMM on embedding
coordinates, a GMM in a single tangent space, and a mixture of Riemannian
Gaussians fitted by Riemannian EM.
"""

from .errors import (
    BasepointMismatchError,
    ConvergenceError,
    CutLocusError,
    ExperimentError,
    InvalidPointError,
    InvalidTangentError,
    ManifoldError,
    PathologicalCovarianceError,
    UnsupportedError,
)
from .manifolds import (
    Kind,
    ManifoldId,
    Point,
    PointFileError,
    Tangent,
    TangentBasis,
    distance,
    exp,
    from_coords,
    injectivity_radius,
    inner,
    log,
    norm,
    parallel_transport,
    project_to_manifold,
    read_points,
    tangent_basis,
    to_coords,
    write_points,
)
from .frechet import MeanConfig, frechet_mean, tangent_covariance
from .distributions import (
    Family,
    InverseWishartParams,
    RgdParams,
    TargetSpec,
    VmfParams,
    random_spd,
    rgd_logpdf,
    sample_inverse_wishart,
    sample_rgd,
    sample_target,
    sample_vmf,
    sample_wgd,
)
from .gmm import (
    Component,
    EmConfig,
    Mixture,
    Variant,
    density_grid,
    fit_euclidean,
    fit_riemannian,
    fit_tangent,
    init_shared,
    loglik,
    loglik_details,
    responsibilities,
)

__version__ = "0.1.0"
