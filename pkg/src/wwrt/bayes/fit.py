"""MAP-initialized posterior sampling for one model variant."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .functionals import Functionals, posterior_functionals
from .model import Posterior
from .nuts import PosteriorDraws, sample
from .optimize import MapResult, map_estimate

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    posterior: Posterior
    map: MapResult
    draws: PosteriorDraws

    def functionals(self, data=None) -> Functionals:
        return posterior_functionals(self.draws, self.posterior, data)


def fit(
    posterior: Posterior,
    *,
    n_chains: int = 4,
    n_warmup: int = 500,
    n_iter: int = 500,
    seed: int = 0,
    init=None,
    map_max_iter: int = 2000,
    max_depth: int = 10,
    metric: str = "dense",
) -> FitResult:
    """Find the MAP, then run NUTS chains jittered around it (df is not jittered)."""
    start = posterior.prior_median_point() if init is None else np.asarray(init, dtype=float)
    mode = map_estimate(posterior.logp_and_grad, start, max_iter=map_max_iter)
    if not mode.converged:
        log.info("MAP not converged (|grad| = %.3g); sampling from the best point", mode.grad_norm)
    fixed = [posterior.layout.index("df")] if "df" in posterior.names else []
    draws = sample(
        posterior.logp_and_grad,
        mode.x,
        n_chains=n_chains,
        n_warmup=n_warmup,
        n_iter=n_iter,
        seed=seed,
        no_jitter=fixed,
        names=posterior.names,
        max_depth=max_depth,
        metric=metric,
    )
    return FitResult(posterior, mode, draws)
