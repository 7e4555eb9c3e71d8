"""Maximum-likelihood fitting by Nelder-Mead in log-parameter space, with
warm starts over an increasing conditioning budget."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import FitError, VecchiaError
from .inference import loglik
from .kernels import CovarianceModel
from .plan import VecchiaPlan

FREE_PARAMS = ("sigma2", "scale", "tau2", "nu")
MAX_EVALS = 500
XTOL = 1e-6
INITIAL_STEP = 0.1   # simplex edge in log units


@dataclass
class StageResult:
    m: object
    start: dict
    params: dict
    loglik: float
    n_evals: int
    converged: bool
    message: str


@dataclass
class FitResult:
    """Final estimate plus per-stage results and the evaluation trace.

    Trace rows are ``(stage, m, eval_count, *params, loglik)``.
    """

    params: dict
    model: CovarianceModel
    loglik: float
    stages: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    n_failed: int = 0

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.stages)


def _objective_factory(plan_family, z, m):
    target = plan_family(m)
    if isinstance(target, VecchiaPlan):
        return lambda model: loglik(target, model, z).loglik
    if callable(target):
        return lambda model: float(target(model, z))
    raise TypeError("plan_family(m) must return a VecchiaPlan or a callable (model, z) -> float")


def mle_fit(plan_family, model_template: CovarianceModel, z, free_params,
            m_schedule=(None,), bounds=None, start=None, max_evals: int = MAX_EVALS,
            xtol: float = XTOL) -> FitResult:
    """Maximize the likelihood over `free_params`, one Nelder-Mead stage per m.

    Parameters
    ----------
    plan_family : callable
        ``plan_family(m)`` returns a VecchiaPlan (evaluated with the
        integrated likelihood) or a callable ``f(model, z) -> loglik``.
    model_template : CovarianceModel
        Supplies the fixed parameters and, unless `start` is given, the start.
    free_params : sequence of str
        One to three of ``sigma2``, ``scale``, ``tau2``, ``nu``.
    m_schedule : sequence
        Each stage restarts from the previous optimum.
    bounds : dict name -> (lo, hi), optional
        Positive bounds, applied in log space.
    """
    free = tuple(free_params)
    if not 1 <= len(free) <= 3 or any(p not in FREE_PARAMS for p in free):
        raise ValueError(f"free_params must be 1-3 of {FREE_PARAMS}, got {free}")
    start = dict(start or {})
    x = np.log([float(start.get(p, getattr(model_template, p))) for p in free])
    lb = None
    if bounds:
        for p, (a, b) in bounds.items():
            if not 0 < a < b < np.inf:
                raise ValueError(f"bounds for {p} must satisfy 0 < lo < hi < inf")
        lo = [np.log(bounds[p][0]) if p in bounds else -np.inf for p in free]
        hi = [np.log(bounds[p][1]) if p in bounds else np.inf for p in free]
        lb = list(zip(lo, hi))
        x = np.clip(x, lo, hi)

    def to_model(v):
        return model_template.with_params(**dict(zip(free, np.exp(v).tolist())))

    result = FitResult({}, model_template, -np.inf)
    last_valid = None
    for stage, m in enumerate(m_schedule):
        obj = _objective_factory(plan_family, z, m)
        count = [0]
        best = [np.inf, None]

        def negll(v):
            nonlocal last_valid
            count[0] += 1
            try:
                val = -obj(to_model(v))
            except (VecchiaError, np.linalg.LinAlgError, ArithmeticError, ValueError):
                val = np.inf
            if not np.isfinite(val):
                result.n_failed += 1
                val = np.inf
            else:
                last_valid = dict(zip(free, np.exp(v).tolist()))
                if val < best[0]:
                    best[0], best[1] = val, v.copy()
            result.trace.append((stage, m, count[0], *np.exp(v).tolist(), -val))
            return val

        simplex = np.vstack([x] + [x + INITIAL_STEP * e for e in np.eye(len(free))])
        if lb is not None:
            simplex = np.clip(simplex, [b[0] for b in lb], [b[1] for b in lb])
        opt = minimize(negll, x, method="Nelder-Mead", bounds=lb,
                       options={"initial_simplex": simplex, "xatol": xtol, "fatol": 1e-9,
                                "maxfev": max_evals})
        if best[1] is None:
            raise FitError(f"every likelihood evaluation failed at stage {stage} (m={m})",
                           last_valid=last_valid)
        xs = best[1]
        result.stages.append(StageResult(m, dict(zip(free, np.exp(x).tolist())),
                                         dict(zip(free, np.exp(xs).tolist())), -best[0],
                                         count[0], bool(opt.success), str(opt.message)))
        x = xs
    result.params = dict(zip(free, np.exp(x).tolist()))
    result.model = to_model(x)
    result.loglik = result.stages[-1].loglik
    return result
