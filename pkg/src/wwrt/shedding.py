"""Individual shedding-load profiles and population-level concentrations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ValidationError
from .sim import EventLog

DEFAULT_SD_LOG10 = 1.09

# Placeholder profile in mean log10 genomes against days since infectious
# onset: a rise to a peak around day 6 then a monotone decay that reaches 0
# at day 29. Replace with a calibrated table when one is available.
_DEFAULT_KNOTS = (
    (0.0, 3.0),
    (2.0, 4.5),
    (4.0, 5.2),
    (6.0, 5.5),
    (9.0, 5.0),
    (12.0, 4.3),
    (16.0, 3.3),
    (20.0, 2.3),
    (24.0, 1.2),
    (29.0, 0.0),
)


@dataclass(frozen=True)
class SheddingProfile:
    """Mean log10 shedding load as a function of days since infectious onset.

    The curve is a natural cubic spline through the knots (a straight line
    when there are only two) clipped below at 0. Outside ``[0, t_max]`` the
    profile is 0 and the individual is treated as not shedding.
    """

    days: tuple[float, ...]
    log10_load: tuple[float, ...]

    def __post_init__(self):
        d = np.asarray(self.days, dtype=float)
        v = np.asarray(self.log10_load, dtype=float)
        if d.ndim != 1 or d.shape != v.shape or len(d) < 2:
            raise ValidationError("a profile needs at least two (day, value) knots")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(v))):
            raise ValidationError("profile knots must be finite")
        if np.any(np.diff(d) <= 0):
            raise ValidationError("profile knot days must be strictly increasing")
        if d[0] != 0.0:
            raise ValidationError("the first profile knot must be at day 0")
        object.__setattr__(self, "days", tuple(d.tolist()))
        object.__setattr__(self, "log10_load", tuple(v.tolist()))
        object.__setattr__(self, "_spline", CubicSpline(d, v, bc_type="natural"))

    @property
    def t_max(self) -> float:
        return self.days[-1]

    @classmethod
    def from_pairs(cls, pairs) -> "SheddingProfile":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))


def default_profile() -> SheddingProfile:
    return SheddingProfile.from_pairs(_DEFAULT_KNOTS)


def eval_profile(profile: SheddingProfile, s):
    """Mean log10 load at ``s`` days since onset; 0 outside the support."""
    s_arr = np.asarray(s, dtype=float)
    inside = (s_arr >= 0) & (s_arr <= profile.t_max)
    vals = np.where(inside, np.maximum(profile._spline(np.clip(s_arr, 0, profile.t_max)), 0.0), 0.0)
    return float(vals) if np.ndim(s) == 0 else vals


def _shedders(log: EventLog, profile: SheddingProfile, t: float) -> np.ndarray:
    since = t - log.onset
    mask = log.shedding_mask(t) & (since >= 0) & (since <= profile.t_max)
    return since[mask]


def population_concentration(
    log: EventLog,
    profile: SheddingProfile,
    t: float,
    sd_log10: float = DEFAULT_SD_LOG10,
    seed=None,
) -> float:
    """Per-capita concentration at ``t``: each individual in I or R1 sheds
    ``10 ** Normal(mu(t - onset), sd_log10)`` and the sum is divided by N."""
    if sd_log10 < 0:
        raise ValidationError("sd_log10 must be nonnegative")
    if t < log.start or t > log.end:
        raise ValidationError(f"time {t} lies outside the simulated window")
    rng = np.random.default_rng(seed)
    since = _shedders(log, profile, t)
    if since.size == 0:
        return 0.0
    mu = eval_profile(profile, since)
    draws = mu + sd_log10 * rng.standard_normal(since.size)
    return float(np.sum(10.0**draws) / log.population)


def concentration_series(
    log: EventLog,
    profile: SheddingProfile,
    times,
    sd_log10: float = DEFAULT_SD_LOG10,
    seed=None,
) -> np.ndarray:
    """``population_concentration`` at each time, with independent draws per time."""
    times = np.asarray(times, dtype=float)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(len(times))
    return np.array(
        [population_concentration(log, profile, t, sd_log10, seed=c) for t, c in zip(times, children)]
    )


def expected_concentration(
    log: EventLog, profile: SheddingProfile, t: float, sd_log10: float = DEFAULT_SD_LOG10
) -> float:
    """Mean of ``population_concentration`` over the shedding noise."""
    since = _shedders(log, profile, t)
    shift = 0.5 * (sd_log10 * np.log(10.0)) ** 2
    return float(np.sum(np.exp(eval_profile(profile, since) * np.log(10.0) + shift)) / log.population)
