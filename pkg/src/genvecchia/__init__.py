"""General Vecchia approximations of Gaussian processes.

Build a :class:`~genvecchia.plan.VecchiaPlan` (ordering, conditioning sets
and their split into latent and observed parts), assemble the sparse factor
U for a :class:`~genvecchia.kernels.CovarianceModel`, and evaluate the
integrated likelihood or the posterior of the latent field.

>>> import numpy as np
>>> from genvecchia import CovarianceModel, unit_grid, vecchia_plan, loglik
>>> locs = unit_grid(2, 10)
>>> plan = vecchia_plan(locs, m=5, partition="sgv")
>>> model = CovarianceModel.from_params(sigma2=1.0, nu=0.5, scale=0.3, tau2=0.1)
>>> z = np.zeros(locs.n)
>>> round(loglik(plan, model, z[plan.observed_points()]).loglik, 6) < 0
True
"""

__version__ = "0.1.0"

from .composite import fcl_loglik, pbl_loglik, rook_pairs, tile_blocks
from .dag import (Dag, SparsityPattern, d_separated, dag_from_parents, dag_from_plan,
                  predict_U_pattern, predict_V_pattern, predict_W_pattern)
from .errors import (ConditioningError, FitError, GeometryError, KernelError, ModelError,
                     NotPositiveDefiniteError, PlanError, SizeError, VecchiaError)
from .estimation import FitResult, mle_fit
from .geom import (LocationSet, block_partition, coord_order, grid_locations, maxmin_order,
                   nearest_previous, unit_grid)
from .inference import (FactorSet, LoglikResult, PosteriorSummary, assemble_U,
                        brute_force_precision, dense_loglik, factors_for, integrated_loglik,
                        joint_cov_x, kl_joint_x, kl_observed_z, loglik, posterior_summary)
from .kernels import CovarianceModel, MaternParams, cross_cov, effective_range_to_scale, matern
from .plan import (ConditioningRule, VecchiaPlan, apply_partition, build_q,
                   check_sgv_admissible, exact_plan, make_ar, make_blocked_plan, make_fsa,
                   make_independent_blocks, make_mpp, make_mra, partition_latent,
                   partition_sgv, partition_standard, toy_plan, vecchia_plan)
from .simulate import GaussianSampler, simulate
from .sparsela import SparseSym, SparseUpper, rchol, sparse_outer, tri_solve

__all__ = [name for name in dir() if not name.startswith("_")]
