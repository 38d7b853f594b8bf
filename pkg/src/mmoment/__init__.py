"""Empirical p-th moments of random vectors: uniform deviations over convex
bodies, norm parameters, Orlicz norms and Lewis decompositions."""

from .core import (Estimate, RngStream, cholesky_whiten, power_mean, project_sphere,
                   sym_eig, sym_eig_extreme)
from .deviation import (DeviationReport, PsiNormEstimate, deviation_at, deviation_sup,
                        empirical_pth_moment, kappa_pm, kappa_prime, kappa_upper,
                        max_psi_growth, psi_alpha_norm, sup_exact_moment, deviation_bounds)
from .errors import (ConfigError, ConvergenceError, DomainError, MomentError, NumericError,
                     PreconditionError, PropertyViolation)
from .geometry import (ConvexBody, QuasiMetricContext, check_body, check_quasimetric_properties,
                       check_scalar_inequalities, d_quasi, dtilde, dual_gauge, ellipsoid,
                       euclid_ball, eu_norm, gauge, h_ball, lq_ball, sup_norm_inf)
from .lewis import (EmbeddingReport, LewisDecomposition, Subspace, embed_sample, lewis_weights,
                    verify_double_embedding)
from .models import (RandomVectorModel, SampleMatrix, discrete_atoms, euclid_norm_moment,
                     exact_pth_moment, gaussian_iso, isotropize, laplace_iso, rademacher_cube,
                     sample, uniform_lq_ball)

__version__ = "0.1.0"
