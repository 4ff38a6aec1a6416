"""Observation densities.

The ``*_jax`` versions are traced inside the posterior; the plain versions
validate their arguments and return numpy values.
"""

from __future__ import annotations

import math

import jax.numpy as jnp
import numpy as np
from jax.scipy.special import gammaln

from ..errors import InvalidParameterError

LOG_PI = math.log(math.pi)


def gen_t_logpdf_jax(x, loc, tau, df):
    z = (x - loc) / tau
    return (
        gammaln((df + 1) / 2)
        - gammaln(df / 2)
        - 0.5 * (jnp.log(df) + LOG_PI)
        - jnp.log(tau)
        - (df + 1) / 2 * jnp.log1p(z * z / df)
    )


def negbin_logpmf_jax(k, mean, phi):
    # log C(k + phi - 1, k) + phi log(phi / (phi + mean)) + k log(mean / (phi + mean))
    log_denom = jnp.log(phi + mean)
    return (
        gammaln(k + phi)
        - gammaln(phi)
        - gammaln(k + 1)
        + phi * (jnp.log(phi) - log_denom)
        + jnp.where(k > 0, k * (jnp.log(jnp.where(k > 0, mean, 1.0)) - log_denom), 0.0)
    )


def gen_t_logpdf(x, location, tau, df):
    """Log density of the location-scale Student-t with scale ``tau`` and ``df`` degrees of freedom."""
    if not (np.all(np.asarray(tau) > 0) and np.all(np.asarray(df) > 0)):
        raise InvalidParameterError("gen_t_logpdf needs tau > 0 and df > 0")
    out = np.asarray(gen_t_logpdf_jax(jnp.asarray(x, float), location, tau, df))
    return float(out) if out.ndim == 0 else out


def negbin_logpmf(k, mean, phi):
    """Negative binomial log pmf with mean ``mean`` and variance ``mean + mean**2 / phi``."""
    k_arr = np.asarray(k, dtype=float)
    if not (np.all(np.asarray(mean) > 0) and np.all(np.asarray(phi) > 0)):
        raise InvalidParameterError("negbin_logpmf needs mean > 0 and phi > 0")
    if np.any(k_arr < 0) or np.any(k_arr != np.round(k_arr)):
        raise InvalidParameterError("negbin_logpmf needs nonnegative integer counts")
    out = np.asarray(negbin_logpmf_jax(jnp.asarray(k_arr), mean, phi))
    return float(out) if out.ndim == 0 else out
