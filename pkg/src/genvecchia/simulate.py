"""Seeded simulation of z = y + noise with y ~ N(0, K(S, S)).

All randomness comes from numpy's Philox counter-based bit generator keyed
by a SeedSequence, so draws are reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import SizeError
from .geom import as_locations
from .kernels import CovarianceModel

SIM_CAP = 10_000
RNG_NAME = "numpy.random.Philox(SeedSequence)"


def make_rng(seed, *stream) -> np.random.Generator:
    """Philox generator for `seed`; extra integers select independent streams."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class SimulationDraw:
    """Latent field and observations at the locations, in location order."""

    y: np.ndarray
    z: np.ndarray
    seed: int
    model: CovarianceModel


class GaussianSampler:
    """Dense Cholesky sampler for a fixed model and location set.

    The factorization is computed once and reused across draws.
    """

    def __init__(self, model: CovarianceModel, locations, cap: int = SIM_CAP):
        s = as_locations(locations)
        if s.n > cap:
            raise SizeError(f"dense simulation of {s.n} points exceeds the cap of {cap}; "
                            "use a smaller grid")
        self.model = model
        self.locations = s
        K = model.kernel(s.coords)
        self._L = sla.cholesky(K, lower=True)

    def draw(self, seed, *stream) -> SimulationDraw:
        rng = make_rng(seed, *stream)
        n = self.locations.n
        u = rng.standard_normal(n)
        e = rng.standard_normal(n)
        y = self._L @ u
        z = y + np.sqrt(self.model.tau2) * e
        return SimulationDraw(y, z, int(seed), self.model)


def simulate(model: CovarianceModel, locations, seed, cap: int = SIM_CAP) -> SimulationDraw:
    """One draw of (y, z); z - y is i.i.d. N(0, tau2)."""
    return GaussianSampler(model, locations, cap).draw(seed)
