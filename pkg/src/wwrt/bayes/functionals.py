"""Derived posterior quantities and their credible-interval summaries.

For each draw the model is re-solved to give the R_t path on the grid,
the compartment trajectories, weekly incidence ``dC`` and, when weekly
case counts ``O_u`` are available, the case detection rate
``kappa_u = O_u / dC_u`` and its test-normalized version
``epsilon_u = kappa_u / D_u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import ObservationSet
from ..errors import ValidationError
from .model import STATE_NAMES, Posterior
from .nuts import PosteriorDraws

LEVELS = (0.5, 0.8, 0.95)


@dataclass(frozen=True)
class Summary:
    """Median and central credible intervals of one quantity over time."""

    times: np.ndarray
    median: np.ndarray
    lower: dict
    upper: dict
    n_missing: np.ndarray

    def interval(self, level: float) -> np.ndarray:
        """(len(times), 2) array of lower and upper bounds."""
        return np.stack([self.lower[level], self.upper[level]], axis=1)


def summarize(values, times, levels=LEVELS) -> Summary:
    """Summaries over the first axis of ``values`` (draws, time); NaNs count as missing."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValidationError("values must have shape (draws, time) with at least one draw")
    missing = np.isnan(values).sum(axis=0)
    probs = [0.5] + [p for lvl in levels for p in ((1 - lvl) / 2, (1 + lvl) / 2)]
    with np.errstate(all="ignore"):
        # all-NaN columns produce NaN summaries
        if np.all(missing < values.shape[0]):
            q = np.nanquantile(values, probs, axis=0)
        else:
            q = np.full((len(probs), values.shape[1]), np.nan)
            ok = missing < values.shape[0]
            q[:, ok] = np.nanquantile(values[:, ok], probs, axis=0)
    lower = {lvl: q[1 + 2 * i] for i, lvl in enumerate(levels)}
    upper = {lvl: q[2 + 2 * i] for i, lvl in enumerate(levels)}
    return Summary(np.asarray(times, dtype=float), q[0], lower, upper, missing)


@dataclass
class Functionals:
    """Per-draw derived quantities plus their summaries."""

    step_times: np.ndarray  # left ends of grid steps (R_t is constant on each)
    grid_times: np.ndarray
    weeks: np.ndarray
    rt: np.ndarray  # (draws, n_steps)
    R: np.ndarray  # (draws, n_segments)
    states: np.ndarray  # (draws, n_steps + 1, 6)
    incidence: np.ndarray  # (draws, weeks)
    kappa: np.ndarray | None = None
    epsilon: np.ndarray | None = None
    kappa_missing: int = 0
    summaries: dict = field(default_factory=dict)


def _flat_draws(draws) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return draws.flat()
    x = np.asarray(draws, dtype=float)
    if x.ndim == 3:
        x = x.reshape(-1, x.shape[2])
    return np.atleast_2d(x)


def posterior_functionals(draws, posterior: Posterior, data: ObservationSet | None = None, *, batch: int = 1000) -> Functionals:
    """Derived quantities for every draw.

    ``draws`` is a ``PosteriorDraws`` or an array of latent vectors. Case
    counts for the detection rate come from ``data`` (default: the data the
    posterior was built on); without case counts the weeks are the complete
    weeks of the modelled horizon and ``kappa`` is omitted.
    """
    xs = _flat_draws(draws)
    if xs.shape[0] < 1:
        raise ValidationError("need at least one draw")
    data = data if data is not None else posterior.data
    parts = [posterior.forward(xs[i : i + batch]) for i in range(0, len(xs), batch)]
    rt = np.concatenate([p["rt"] for p in parts])
    R = np.concatenate([p["R"] for p in parts])
    states = np.concatenate([p["states"] for p in parts])

    week = data.week_length
    if data.has_cases:
        weeks = data.case_weeks
        last = weeks[-1] * week
        if last > posterior.horizon + 1e-9:
            raise ValidationError("case weeks extend past the modelled horizon")
    else:
        weeks = np.arange(1, int(posterior.horizon // week + 1e-9) + 1)
    lo = np.round((weeks - 1) * week / posterior.resolution).astype(int)
    hi = np.round(weeks * week / posterior.resolution).astype(int)
    C = states[:, :, STATE_NAMES.index("C")]
    incidence = C[:, hi] - C[:, lo]

    out = Functionals(
        step_times=posterior.times[:-1],
        grid_times=posterior.times,
        weeks=weeks,
        rt=rt,
        R=R,
        states=states,
        incidence=incidence,
    )
    out.summaries["rt"] = summarize(rt, out.step_times)
    seg_times = posterior.cadence * np.arange(posterior.layout.n_segments)
    out.summaries["R"] = summarize(R, seg_times)
    used = (0, 1, 2, 3, 4, 5) if posterior.variant in ("EIRR-ww", "SEIRR-ww") else (0, 1, 2, 3, 5)
    s_model = posterior.variant in ("SEIRR-ww", "SEIR-cases")
    for j in used:
        if STATE_NAMES[j] == "S" and not s_model:
            continue
        out.summaries[STATE_NAMES[j]] = summarize(states[:, :, j], posterior.times)
    out.summaries["incidence"] = summarize(incidence, weeks * week)

    if data.has_cases:
        out.kappa, out.epsilon, out.kappa_missing = detection_rates(data.case_counts, incidence, data.case_tests)
        out.summaries["kappa"] = summarize(out.kappa, weeks * week)
        if out.epsilon is not None:
            out.summaries["epsilon"] = summarize(out.epsilon, weeks * week)
    return out


def detection_rates(observed, incidence, tests=None):
    """``kappa = O_u / dC_u`` per draw and week, and ``epsilon = kappa / D_u``.

    Entries with ``dC_u <= 0`` (or ``D_u <= 0`` for epsilon) are NaN; the
    number of missing kappa entries is returned alongside.
    """
    observed = np.asarray(observed, dtype=float)
    incidence = np.atleast_2d(np.asarray(incidence, dtype=float))
    if incidence.shape[1] != observed.shape[0]:
        raise ValidationError("incidence and observed counts cover different weeks")
    positive = incidence > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(positive, observed[None, :] / np.where(positive, incidence, 1.0), np.nan)
    epsilon = None
    if tests is not None:
        tests = np.asarray(tests, dtype=float)
        ok = tests > 0
        epsilon = np.where(ok[None, :], kappa / np.where(ok, tests, 1.0)[None, :], np.nan)
    return kappa, epsilon, int((~positive).sum())
