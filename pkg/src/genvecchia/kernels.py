"""Matérn covariance with a nugget, and cross-covariances between x-vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bessel import kv
from .errors import KernelError, ModelError
from .geom import pairwise_distances

CORRELATION_AT_EFFECTIVE_RANGE = 0.05
_HALF_INTEGER = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class MaternParams:
    """Matérn variance, smoothness and scale (range) parameter."""

    sigma2: float
    nu: float
    scale: float

    def __post_init__(self):
        for name in ("sigma2", "nu", "scale"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise KernelError(f"{name} must be positive and finite, got {v}")


def matern_correlation(dist, nu: float, scale: float):
    """Matérn correlation at distance(s) `dist`.

    Uses the closed forms for nu in {1/2, 3/2, 5/2} and the Bessel-K
    representation otherwise. With this convention the exponential
    covariance is ``exp(-d / scale)``.
    """
    d = np.asarray(dist, dtype=float)
    if not np.all(np.isfinite(d)):
        raise KernelError("distances must be finite")
    if np.any(d < 0):
        raise KernelError("distances must be non-negative")
    if nu == 0.5:
        out = np.exp(-d / scale)
    elif nu == 1.5:
        t = math.sqrt(3.0) * d / scale
        out = (1.0 + t) * np.exp(-t)
    elif nu == 2.5:
        t = math.sqrt(5.0) * d / scale
        out = (1.0 + t + t * t / 3.0) * np.exp(-t)
    else:
        out = matern_correlation_bessel(d, nu, scale)
    return out if d.ndim else float(out)


def matern_correlation_bessel(dist, nu: float, scale: float):
    """Matérn correlation through K_nu for any nu (no closed-form shortcut)."""
    d = np.asarray(dist, dtype=float)
    t = math.sqrt(2.0 * nu) * d / scale
    out = np.ones_like(t)
    pos = t > 0
    if np.any(pos):
        tp = t[pos]
        k = kv(nu, tp)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logv = (1.0 - nu) * math.log(2.0) - math.lgamma(nu) + nu * np.log(tp) + np.log(k)
            val = np.where(k > 0, np.exp(logv), 0.0)
        # K_nu overflow at tiny t: correlation is 1 to machine precision
        val = np.where(np.isfinite(k), val, 1.0)
        out[pos] = np.minimum(val, 1.0)
    return out


def matern(params: MaternParams, dist):
    """Matérn covariance ``sigma2 * correlation(dist)``."""
    return params.sigma2 * matern_correlation(dist, params.nu, params.scale)


def effective_range_to_scale(nu: float, eff_range: float, rtol: float = 1e-10) -> float:
    """Scale parameter at which the correlation equals 0.05 at `eff_range`.

    Closed form for nu = 1/2; bisection on [eff_range/100, 100 eff_range]
    otherwise (the correlation at a fixed distance increases with scale).
    """
    if not (nu > 0 and eff_range > 0):
        raise KernelError("nu and eff_range must be positive")
    target = CORRELATION_AT_EFFECTIVE_RANGE
    if nu == 0.5:
        return eff_range / math.log(1.0 / target)
    lo, hi = eff_range / 100.0, eff_range * 100.0

    def resid(rho):
        return matern_correlation(eff_range, nu, rho) - target

    rlo, rhi = resid(lo), resid(hi)
    if not (rlo < 0 < rhi):
        raise KernelError(
            f"bisection bracket [{lo}, {hi}] does not enclose the root "
            f"(residuals {rlo:.3g}, {rhi:.3g})")
    while (hi - lo) > rtol * hi:
        mid = 0.5 * (lo + hi)
        if resid(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CovarianceModel:
    """Matérn process plus i.i.d. Gaussian noise with variance `tau2`."""

    matern: MaternParams
    tau2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.tau2) and self.tau2 >= 0):
            raise ModelError(f"tau2 must be finite and >= 0, got {self.tau2}")

    @classmethod
    def from_params(cls, sigma2=1.0, nu=0.5, scale=1.0, tau2=0.0):
        return cls(MaternParams(sigma2, nu, scale), tau2)

    @classmethod
    def from_signal_proportion(cls, proportion: float, nu: float, *, scale=None,
                               eff_range=None):
        """Model with total variance 1 split as sigma2 = p, tau2 = 1 - p."""
        if not 0 < proportion <= 1:
            raise ModelError("signal proportion must lie in (0, 1]")
        if (scale is None) == (eff_range is None):
            raise ModelError("give exactly one of scale / eff_range")
        if scale is None:
            scale = effective_range_to_scale(nu, eff_range)
        return cls(MaternParams(proportion, nu, scale), 1.0 - proportion)

    @classmethod
    def from_config(cls, cfg: dict) -> "CovarianceModel":
        """Build from ``{sigma2, nu, range: {kind, value}, tau2}``."""
        nu = float(cfg["nu"])
        rng = cfg["range"]
        if isinstance(rng, dict):
            kind, value = rng.get("kind", "scale"), float(rng["value"])
        else:
            kind, value = "scale", float(rng)
        if kind == "effective":
            scale = effective_range_to_scale(nu, value)
        elif kind == "scale":
            scale = value
        else:
            raise ModelError(f"unknown range kind {kind!r}")
        return cls(MaternParams(float(cfg["sigma2"]), nu, scale), float(cfg.get("tau2", 0.0)))

    def to_config(self) -> dict:
        return {"sigma2": self.sigma2, "nu": self.nu,
                "range": {"kind": "scale", "value": self.scale}, "tau2": self.tau2}

    @property
    def sigma2(self):
        return self.matern.sigma2

    @property
    def nu(self):
        return self.matern.nu

    @property
    def scale(self):
        return self.matern.scale

    @property
    def signal_proportion(self):
        return self.sigma2 / (self.sigma2 + self.tau2)

    def with_params(self, **kw) -> "CovarianceModel":
        tau2 = kw.pop("tau2", self.tau2)
        return CovarianceModel(replace(self.matern, **kw), tau2)

    def kernel(self, a, b=None) -> np.ndarray:
        """Noise-free covariance K(a, b) between two coordinate arrays."""
        return matern(self.matern, pairwise_distances(a, b))


CROSS_KINDS = ("yy", "zy", "yz", "zz")


def cross_cov(model: CovarianceModel, a, b, kind: str = "yy") -> np.ndarray:
    """Cross-covariance block between location slices `a` and `b`.

    ``kind`` names the variable types of the row and column slices. The
    nugget is added only for ``zz`` and only where the two entries refer to
    the same location (hence the same observation).
    """
    if kind not in CROSS_KINDS:
        raise KernelError(f"kind must be one of {CROSS_KINDS}")
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise KernelError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise KernelError("empty location slice")
    dist = pairwise_distances(a, b)
    out = matern(model.matern, dist)
    if kind == "zz" and model.tau2 > 0:
        out = out + model.tau2 * (dist == 0)
    return out
