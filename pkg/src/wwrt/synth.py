"""Noisy wastewater and case observations generated from a simulated epidemic."""

from __future__ import annotations

import numpy as np

from .data import ObservationSet
from .errors import InvalidParameterError, ValidationError
from .sim import EventLog


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def synthesize_wastewater(true_conc, rho, tau, df, n_replicates, sample_times, seed=None) -> ObservationSet:
    """Replicate concentrations with generalized-t noise on the log scale.

    ``true_conc`` is either an array aligned with ``sample_times`` or a
    callable returning the true concentration at a time. Each replicate is
    ``log X = log(true_conc) + log(rho) + tau * T_df``, drawn independently.
    ``df = inf`` gives normal noise and ``tau = 0`` gives ``X = rho * true_conc``.
    """
    if not (rho > 0 and tau >= 0 and df > 0):
        raise InvalidParameterError("need rho > 0, tau >= 0 and df > 0")
    if n_replicates < 1:
        raise ValidationError("need at least one replicate")
    times = np.asarray(sample_times, dtype=float)
    conc = np.asarray(true_conc(times) if callable(true_conc) else true_conc, dtype=float)
    if conc.shape != times.shape:
        raise ValidationError("true concentrations must align with the sample times")
    bad = ~(conc > 0) | ~np.isfinite(conc)
    if np.any(bad):
        raise ValidationError(f"true concentration is not positive at time {times[np.argmax(bad)]}")
    rng = _rng(seed)
    shape = (len(times), n_replicates)
    noise = rng.standard_normal(shape) if np.isinf(df) else rng.standard_t(df, size=shape)
    log_x = np.log(conc)[:, None] + np.log(rho) + tau * noise
    return ObservationSet(
        ww_times=np.repeat(times, n_replicates),
        ww_replicate=np.tile(np.arange(1, n_replicates + 1), len(times)),
        ww_conc=np.exp(log_x).ravel(),
    )


def negbin_sample(mean, phi, rng) -> np.ndarray:
    """Negative binomial draws with variance ``mean + mean**2 / phi``; ``phi = inf`` is Poisson."""
    mean = np.asarray(mean, dtype=float)
    if np.isinf(phi):
        return rng.poisson(mean)
    out = np.zeros(mean.shape, dtype=np.int64)
    pos = mean > 0
    out[pos] = rng.negative_binomial(phi, phi / (phi + mean[pos]))
    return out


def weekly_onsets(log: EventLog, n_weeks: int, week_length: float = 7.0, origin: float = 0.0) -> np.ndarray:
    """E->I transitions in weeks ``(origin + 7(u-1), origin + 7u]`` for u = 1..n_weeks."""
    edges = origin + week_length * np.arange(n_weeks + 1)
    return log.onsets_in(edges)


def synthesize_cases(log: EventLog, psi, phi, week_bins, seed=None, week_length: float = 7.0) -> ObservationSet:
    """Weekly case counts ``O_u ~ NegBin(mean = psi * T_u, dispersion = phi)``.

    ``week_bins`` is the number of weeks starting at day 0, or an explicit
    array of onset counts ``T_u``.
    """
    if not (0 < psi <= 1) or not phi > 0:
        raise InvalidParameterError("need 0 < psi <= 1 and phi > 0")
    if np.ndim(week_bins) == 0:
        totals = weekly_onsets(log, int(week_bins), week_length)
    else:
        totals = np.asarray(week_bins)
    counts = negbin_sample(psi * totals, phi, _rng(seed))
    return ObservationSet(
        case_weeks=np.arange(1, len(totals) + 1),
        case_counts=counts,
        week_length=week_length,
    )
