"""Simulation-based elicitation of the logit-normal prior on lambda.

Each simulated epidemic yields a population concentration series and the
I and R1 prevalence series on a daily grid. A two-coefficient nonnegative
linear model of concentration on prevalence gives
``lambda = beta1 / (beta1 + beta2)``, and a logit-normal distribution is
matched to the empirical 2.5% and 97.5% quantiles of the lambda sample.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats
from scipy.special import expit, logit

from .errors import ConvergenceError, ValidationError
from .shedding import DEFAULT_SD_LOG10, SheddingProfile, concentration_series, default_profile
from .sim import SimConfig, simulate_epidemic, spawn_seeds

log = logging.getLogger(__name__)

Z975 = stats.norm.ppf(0.975)


@dataclass(frozen=True)
class LogitNormalParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValidationError("logit-normal needs finite mu and sigma > 0")

    def quantile(self, p):
        return expit(self.mu + self.sigma * stats.norm.ppf(p))


@dataclass(frozen=True)
class NNLSFit:
    beta1: float
    beta2: float
    rss: float

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValidationError("NNLS coefficients must be nonnegative")


def fit_nonnegative_lm(conc, prev_I, prev_R1) -> NNLSFit:
    """Least squares ``conc ~ b1 * I + b2 * R1`` with ``b1, b2 >= 0``.

    The problem has two variables, so the global optimum is among the
    unconstrained solution (if feasible), the two one-variable fits and the
    origin. Ties are broken toward the smallest norm; for a rank-deficient
    design the unconstrained candidate is the minimum-norm least-squares
    solution.
    """
    y = np.asarray(conc, dtype=float)
    x1 = np.asarray(prev_I, dtype=float)
    x2 = np.asarray(prev_R1, dtype=float)
    if not (y.shape == x1.shape == x2.shape) or y.ndim != 1 or len(y) < 2:
        raise ValidationError("need equal-length series with at least two points")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise ValidationError("series must be finite")
    if np.any(x1 < 0) or np.any(x2 < 0):
        raise ValidationError("prevalences must be nonnegative")
    if not (np.any(x1 > 0) or np.any(x2 > 0)):
        raise ValidationError("degenerate design: both prevalence series are identically zero")

    X = np.column_stack([x1, x2])
    candidates = [np.zeros(2)]
    sol, *_ = np.linalg.lstsq(X, y, rcond=None)
    if np.all(sol >= 0):
        candidates.append(sol)
    for k, x in enumerate((x1, x2)):
        xx = x @ x
        if xx > 0:
            b = np.zeros(2)
            b[k] = max(0.0, (x @ y) / xx)
            candidates.append(b)

    def rss(b):
        r = y - X @ b
        return float(r @ r)

    scored = [(rss(b), float(b @ b), b) for b in candidates]
    best_rss = min(s[0] for s in scored)
    tol = 1e-12 * max(best_rss, float(y @ y), 1e-300)
    tied = [s for s in scored if s[0] <= best_rss + tol]
    _, _, b = min(tied, key=lambda s: s[1])
    return NNLSFit(float(b[0]), float(b[1]), rss(b))


def lambda_from_coeffs(fit: NNLSFit) -> float:
    total = fit.beta1 + fit.beta2
    if total <= 0:
        raise ValidationError("lambda is undefined when both coefficients are zero")
    return fit.beta1 / total


def closed_form_logitnormal(q_lo: float, q_hi: float) -> LogitNormalParams:
    a, b = logit(q_lo), logit(q_hi)
    return LogitNormalParams((a + b) / 2, (b - a) / (2 * Z975))


def match_logitnormal(q_lo: float, q_hi: float, maxiter: int = 500) -> LogitNormalParams:
    """Nelder-Mead fit of (mu, sigma) to the 2.5% and 97.5% quantiles.

    The search runs over ``(mu, log sigma)`` so sigma stays positive and
    starts from a simplex around the closed-form inversion.
    """
    if not (0 < q_lo < q_hi < 1):
        if 0 < q_lo == q_hi < 1:
            raise ValidationError("quantiles coincide")
        raise ValidationError("need 0 < q_lo < q_hi < 1")
    start = closed_form_logitnormal(q_lo, q_hi)
    z = np.array([-Z975, Z975])
    target = np.array([q_lo, q_hi])

    def loss(p):
        q = expit(p[0] + np.exp(p[1]) * z)
        return float(np.sum((q - target) ** 2))

    x0 = np.array([start.mu, np.log(start.sigma)])
    simplex = np.array([x0, x0 + [0.05, 0.0], x0 + [0.0, 0.05]])
    res = optimize.minimize(
        loss,
        x0,
        method="Nelder-Mead",
        options=dict(initial_simplex=simplex, xatol=1e-8, fatol=1e-8, maxiter=maxiter, maxfev=4 * maxiter),
    )
    best = (float(res.x[0]), float(np.exp(res.x[1])))
    if not res.success:
        raise ConvergenceError(f"Nelder-Mead did not converge: {res.message}", params=best)
    return LogitNormalParams(*best)


def lambda_prior_from_sample(lambdas) -> LogitNormalParams:
    """Match a logit-normal to the type-7 2.5%/97.5% quantiles of a lambda sample."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.size < 2:
        raise ValidationError("need at least two lambda values")
    q_lo, q_hi = np.quantile(lam, [0.025, 0.975])
    if q_hi - q_lo <= 0:
        raise ValidationError("quantiles coincide")
    # lambda of exactly 0 or 1 is possible under NNLS clamping; the
    # logit-normal quantiles must lie strictly inside (0, 1)
    eps = 1e-9
    return match_logitnormal(float(np.clip(q_lo, eps, 1 - eps)), float(np.clip(q_hi, eps, 1 - eps)))


def default_rate_priors() -> dict:
    """Lognormal rate priors for gamma, nu and eta (medians 1/4, 1/7, 1/18; sdlog 0.2)."""
    return {
        "gamma": stats.lognorm(s=0.2, scale=1 / 4),
        "nu": stats.lognorm(s=0.2, scale=1 / 7),
        "eta": stats.lognorm(s=0.2, scale=1 / 18),
    }


def default_elicit_base() -> SimConfig:
    return SimConfig(population=1000, initial_E=0, initial_I=5, r0_times=(0.0,), r0_values=(2.0,), horizon=1.0)


@dataclass(frozen=True)
class ElicitResult:
    params: LogitNormalParams
    lambdas: np.ndarray
    diagnostics: list = field(default_factory=list)


def simulate_lambda(config: SimConfig, profile: SheddingProfile, sd_log10: float, shed_seed=None) -> dict:
    """One replicate: run the epidemic to extinction and fit the NNLS model on a daily grid."""
    # a long horizon lets every chain of transmission finish
    ev = simulate_epidemic(replace(config, horizon=10_000.0))
    row = dict(n_infected=ev.n_infected, beta1=np.nan, beta2=np.nan, lam=np.nan, rss=np.nan, dropped=True)
    if ev.n_infected == 0:
        return row
    last = float(np.ceil(np.max(ev.stop)))
    days = np.arange(0.0, min(last, ev.end) + 1.0)
    counts = ev.counts_at(days)
    conc = concentration_series(ev, profile, days, sd_log10=sd_log10, seed=shed_seed)
    n = ev.population
    fit = fit_nonnegative_lm(conc, counts[:, 2] / n, counts[:, 3] / n)
    row.update(beta1=fit.beta1, beta2=fit.beta2, rss=fit.rss)
    if fit.beta1 + fit.beta2 > 0:
        row.update(lam=lambda_from_coeffs(fit), dropped=False)
    return row


def elicit_lambda(
    n_sims: int,
    rate_priors: dict | None = None,
    sim_base: SimConfig | None = None,
    profile: SheddingProfile | None = None,
    sd_log10: float = DEFAULT_SD_LOG10,
    seed: int = 0,
) -> ElicitResult:
    """Full elicitation pipeline.

    Replicate ``k`` uses child ``k`` of ``SeedSequence(seed)`` for its rate
    draws, epidemic and shedding noise. Replicates without any infection
    are dropped with a warning; more than half dropped is an error.
    """
    if n_sims < 2:
        raise ValidationError("need n_sims >= 2")
    priors = rate_priors or default_rate_priors()
    base = sim_base or default_elicit_base()
    profile = profile or default_profile()
    rows = []
    for k, child in enumerate(spawn_seeds(seed, n_sims)):
        rate_seed, sim_seed, shed_seed = child.spawn(3)
        rng = np.random.default_rng(rate_seed)
        rates = {name: float(priors[name].rvs(random_state=rng)) for name in ("gamma", "nu", "eta")}
        cfg = replace(base, seed=sim_seed, **rates)
        row = simulate_lambda(cfg, profile, sd_log10, shed_seed)
        row.update(replicate=k, **rates)
        rows.append(row)
    dropped = sum(r["dropped"] for r in rows)
    if dropped:
        warnings.warn(f"{dropped} of {n_sims} elicitation replicates were degenerate and dropped", stacklevel=2)
    if dropped > n_sims / 2:
        raise ValidationError(f"too many degenerate replicates ({dropped} of {n_sims})")
    lambdas = np.array([r["lam"] for r in rows if not r["dropped"]])
    params = lambda_prior_from_sample(lambdas)
    log.info("elicited lambda prior mu=%.4f sigma=%.4f from %d replicates", params.mu, params.sigma, len(lambdas))
    return ElicitResult(params, lambdas, rows)
