"""Maximum a posteriori estimation by gradient ascent with backtracking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConvergenceError, NumericalFailure

log = logging.getLogger(__name__)


@dataclass
class MapResult:
    x: np.ndarray
    logp: float
    grad_norm: float
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)


def map_estimate(logp_and_grad, init, *, gtol: float = 1e-5, max_iter: int = 2000, max_backtracks: int = 60) -> MapResult:
    """Maximize ``logp_and_grad`` (returning value and gradient) from ``init``.

    Each iteration tries a Barzilai-Borwein step length along the gradient
    and halves it until the Armijo condition holds. Stops when the gradient
    sup-norm drops below ``gtol`` or after ``max_iter`` iterations; the
    result is flagged ``converged=False`` in the second case. If a line
    search fails before any progress has been made, ``ConvergenceError`` is
    raised with the trace attached; later failures return the best point.
    """
    x = np.array(init, dtype=float)
    f, g = logp_and_grad(x)
    if not np.isfinite(f):
        raise NumericalFailure("log posterior is not finite at the initial point")
    step = 1e-3 / max(1.0, float(np.max(np.abs(g))))
    trace = [(0, f, float(np.max(np.abs(g))))]
    improved = False
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            return MapResult(x, f, gnorm, it - 1, True, trace)
        gg = float(g @ g)
        t = step
        for _ in range(max_backtracks):
            x_new = x + t * g
            f_new, g_new = logp_and_grad(x_new)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * t * gg:
                break
            t *= 0.5
        else:
            if not improved:
                raise ConvergenceError("every line search failed at the initial point", params=x, trace=trace)
            log.warning("MAP line search failed at iteration %d; returning the best point", it)
            return MapResult(x, f, gnorm, it, False, trace)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        # BB1 step for ascent: s.s / -(s.y) when the curvature is negative
        step = float(s @ s) / -sy if sy < 0 else 2 * t
        step = float(np.clip(step, 1e-10, 1e3))
        x, f, g = x_new, f_new, g_new
        improved = True
        trace.append((it, f, float(np.max(np.abs(g)))))
    gnorm = float(np.max(np.abs(g)))
    converged = gnorm < gtol
    if not converged:
        log.info("MAP stopped at the iteration cap with gradient norm %.3g", gnorm)
    return MapResult(x, f, gnorm, max_iter, converged, trace)
