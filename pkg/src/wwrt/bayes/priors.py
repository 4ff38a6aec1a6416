"""Prior families, their latent transforms, and the default prior table.

Every family except ``Gamma`` is sampled non-centered: the latent
coordinate ``z`` has a standard normal prior and the parameter is
``g^-1(mu + sigma * z)``. That density is exactly the pushforward of the
stated prior, so no separate Jacobian term is needed for those blocks;
``log_jacobian`` is still provided for checking. ``Gamma`` (used for df) is
sampled as ``u = log(theta)`` with the gamma density plus the log-Jacobian
``u``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import jax.numpy as jnp
import numpy as np
from jax.scipy.special import gammaln as jgammaln
from scipy import stats
from scipy.special import expit, logit

from ..errors import InvalidParameterError, ValidationError

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _std_normal_logpdf(z):
    return -0.5 * z * z - HALF_LOG_2PI


def _check_scale(name, value):
    if not (np.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be finite and positive, got {value}")


@dataclass(frozen=True)
class LogNormal:
    mu: float
    sigma: float
    non_centered = True

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise InvalidParameterError("lognormal mu must be finite")
        _check_scale("lognormal sigma", self.sigma)

    def to_theta(self, z):
        return jnp.exp(self.mu + self.sigma * z)

    def from_theta(self, theta):
        return (np.log(theta) - self.mu) / self.sigma

    def latent_logprior(self, z):
        return _std_normal_logpdf(z)

    def log_jacobian(self, z):
        return math.log(self.sigma) + self.mu + self.sigma * z

    def logpdf(self, theta):
        return stats.lognorm.logpdf(theta, s=self.sigma, scale=math.exp(self.mu))

    def quantile(self, p):
        return np.exp(self.mu + self.sigma * stats.norm.ppf(p))

    def describe(self) -> str:
        return f"lognormal({self.mu!r}, {self.sigma!r})"


@dataclass(frozen=True)
class LogitNormal:
    mu: float
    sigma: float
    non_centered = True

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise InvalidParameterError("logit-normal mu must be finite")
        _check_scale("logit-normal sigma", self.sigma)

    def to_theta(self, z):
        return 1.0 / (1.0 + jnp.exp(-(self.mu + self.sigma * z)))

    def from_theta(self, theta):
        return (logit(theta) - self.mu) / self.sigma

    def latent_logprior(self, z):
        return _std_normal_logpdf(z)

    def log_jacobian(self, z):
        x = self.mu + self.sigma * z
        return math.log(self.sigma) - np.logaddexp(0, x) - np.logaddexp(0, -x)

    def logpdf(self, theta):
        x = logit(theta)
        return stats.norm.logpdf(x, self.mu, self.sigma) - np.log(theta) - np.log1p(-theta)

    def quantile(self, p):
        return expit(self.mu + self.sigma * stats.norm.ppf(p))

    def describe(self) -> str:
        return f"logitnormal({self.mu!r}, {self.sigma!r})"


@dataclass(frozen=True)
class Normal:
    """Normal prior truncated below at ``lower`` (initial compartment counts)."""

    mean: float
    sd: float
    lower: float = 0.0
    non_centered = True

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise InvalidParameterError("normal mean must be finite")
        _check_scale("normal sd", self.sd)
        if self.mean < self.lower:
            raise InvalidParameterError("normal mean lies below the truncation point")

    @property
    def _log_mass(self) -> float:
        return float(stats.norm.logsf((self.lower - self.mean) / self.sd))

    def to_theta(self, z):
        return self.mean + self.sd * z

    def from_theta(self, theta):
        return (np.asarray(theta, dtype=float) - self.mean) / self.sd

    def latent_logprior(self, z):
        inside = self.mean + self.sd * z >= self.lower
        return jnp.where(inside, _std_normal_logpdf(z) - self._log_mass, -jnp.inf)

    def log_jacobian(self, z):
        return math.log(self.sd) + 0.0 * z

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = stats.norm.logpdf(theta, self.mean, self.sd) - self._log_mass
        return np.where(theta >= self.lower, out, -np.inf)

    def quantile(self, p):
        a = stats.norm.cdf((self.lower - self.mean) / self.sd)
        return self.mean + self.sd * stats.norm.ppf(a + np.asarray(p) * (1 - a))

    def describe(self) -> str:
        return f"normal({self.mean!r}, {self.sd!r})"


@dataclass(frozen=True)
class Gamma:
    """Gamma prior with shape/scale; sampled on the log scale (centered)."""

    shape: float
    scale: float
    non_centered = False

    def __post_init__(self):
        _check_scale("gamma shape", self.shape)
        _check_scale("gamma scale", self.scale)

    def to_theta(self, u):
        return jnp.exp(u)

    def from_theta(self, theta):
        return np.log(theta)

    def latent_logprior(self, u):
        theta = jnp.exp(u)
        log_density = (
            (self.shape - 1) * u - theta / self.scale - jgammaln(self.shape) - self.shape * math.log(self.scale)
        )
        return log_density + u

    def log_jacobian(self, u):
        return u

    def logpdf(self, theta):
        return stats.gamma.logpdf(theta, a=self.shape, scale=self.scale)

    def quantile(self, p):
        return stats.gamma.ppf(p, a=self.shape, scale=self.scale)

    def describe(self) -> str:
        return f"gamma({self.shape!r}, {self.scale!r})"


Prior = LogNormal | LogitNormal | Normal | Gamma

_FAMILIES = {"lognormal": LogNormal, "logitnormal": LogitNormal, "normal": Normal, "gamma": Gamma}
_PATTERN = re.compile(r"^\s*([a-z_-]+)\s*\(\s*([^,]+?)\s*,\s*([^,]+?)\s*\)\s*$")


def parse_prior(text: str) -> Prior:
    """Parse ``family(a, b)``, e.g. ``lognormal(-1.386, 0.2)``."""
    m = _PATTERN.match(text.lower().replace("logit-normal", "logitnormal").replace("log-normal", "lognormal"))
    if not m or m.group(1) not in _FAMILIES:
        raise ValidationError(f"cannot parse prior {text!r}")
    try:
        a, b = float(m.group(2)), float(m.group(3))
    except ValueError as exc:
        raise ValidationError(f"cannot parse prior {text!r}") from exc
    return _FAMILIES[m.group(1)](a, b)


def _baseline() -> dict:
    return {
        "gamma": LogNormal(math.log(1 / 4), 0.2),
        "nu": LogNormal(math.log(1 / 7), 0.2),
        "eta": LogNormal(math.log(1 / 18), 0.2),
        "sigma_rw": LogNormal(math.log(0.1), 0.2),
        "R0": LogNormal(math.log(0.88), 0.1),
        "lambda": LogitNormal(5.69, 2.18),
        "tau": LogNormal(0.0, 1.0),
        "rho": LogNormal(0.0, 1.0),
        "df": Gamma(10.0, 2.0),
        "psi": LogitNormal(-1.39, 0.4),
        "phi": LogNormal(4.22, 0.29),
        "S_SEIR1": LogitNormal(3.47, 0.05),
        "I_EIR1": LogitNormal(-1.548302, 0.05),
        "R1_ER1": LogitNormal(2.22, 0.05),
        "S_EI": LogitNormal(4.83, 0.05),
        "I_EI": LogitNormal(0.78, 0.05),
        "E0": Normal(225.0, 0.05),
        "I0": Normal(489.0, 0.05),
        "R1_0": Normal(2075.0, 0.05),
    }


@dataclass(frozen=True)
class PriorSpec:
    """Named priors for every model parameter."""

    priors: dict = field(default_factory=_baseline)
    name: str = "paper-baseline"

    def __getitem__(self, key: str) -> Prior:
        try:
            return self.priors[key]
        except KeyError:
            raise ValidationError(f"no prior for parameter {key!r}") from None

    def __contains__(self, key: str) -> bool:
        return key in self.priors

    def with_overrides(self, name: str | None = None, **overrides) -> "PriorSpec":
        unknown = set(overrides) - set(self.priors)
        if unknown:
            raise ValidationError(f"unknown prior names {sorted(unknown)}")
        new = dict(self.priors)
        for key, value in overrides.items():
            new[key] = parse_prior(value) if isinstance(value, str) else value
        return replace(self, priors=new, name=name or f"{self.name}+overrides")

    def describe(self) -> dict:
        return {k: v.describe() for k, v in self.priors.items()}


def paper_baseline() -> PriorSpec:
    return PriorSpec()


NAMED_PROFILES = {"paper-baseline": paper_baseline}
