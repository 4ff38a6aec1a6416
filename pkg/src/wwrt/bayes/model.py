"""Posterior densities for the four model variants.

A ``Posterior`` fixes the variant, the data, the priors and the time grid,
and exposes the log density of an unconstrained latent vector together
with its gradient (JAX reverse mode).

Time grid: points ``0, h, 2h, ..., T`` with ``T = n_segments * cadence``.
Reproduction numbers are constant on ``[cadence * (k - 1), cadence * k)``.
Wastewater samples must fall on grid points, and case week ``u`` is the
change in cumulative incidence over ``(7(u - 1), 7u]``.

Linear variants are advanced one grid step at a time with the closed-form
propagator of the exposed/infectious block: with ``s = -(gamma + nu) / 2``
and ``q = sqrt(((gamma - nu) / 2) ** 2 + alpha * gamma)`` each of E and I is
a combination of ``exp((s + q) t)`` and ``exp((s - q) t)``, so R1 and the
cumulative count C follow from one-dimensional exponential integrals.
Models with a susceptible compartment use fixed-step RK4 (step <= 0.1 day).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import jax
import jax.numpy as jnp
import numpy as np

from ..data import ObservationSet
from ..errors import ValidationError
from .distributions import gen_t_logpdf_jax, negbin_logpmf_jax
from .priors import PriorSpec, _std_normal_logpdf, paper_baseline

MODEL_VARIANTS = ("EIRR-ww", "EIR-cases", "SEIRR-ww", "SEIR-cases")
WASTEWATER_VARIANTS = ("EIRR-ww", "SEIRR-ww")
CASE_VARIANTS = ("EIR-cases", "SEIR-cases")
S_VARIANTS = ("SEIRR-ww", "SEIR-cases")

# state layout used by every solver: S, E, I, R1, R2, C (R1 is the single
# R compartment for the case models, where R2 stays 0)
STATE_NAMES = ("S", "E", "I", "R1", "R2", "C")

_SCALARS = {
    "EIRR-ww": ("gamma", "nu", "eta", "sigma_rw", "R0", "lambda", "tau", "rho", "df", "E0", "I0", "R1_0"),
    "EIR-cases": ("gamma", "nu", "sigma_rw", "R0", "psi", "phi", "E0", "I0"),
    "SEIRR-ww": ("gamma", "nu", "eta", "sigma_rw", "R0", "lambda", "tau", "rho", "df", "S_SEIR1", "I_EIR1", "R1_ER1"),
    "SEIR-cases": ("gamma", "nu", "sigma_rw", "R0", "psi", "phi", "S_EI", "I_EI"),
}

RK4_MAX_STEP = 0.1


def _phi1(x):
    """(exp(x) - 1) / x, continuous at 0."""
    small = jnp.abs(x) < 1e-6
    safe = jnp.where(small, 1.0, x)
    return jnp.where(small, 1.0 + x / 2 + x * x / 6, jnp.expm1(safe) / safe)


def eirr_step(state, alpha, gamma, nu, eta, dt):
    """Advance (S, E, I, R1, R2, C) by ``dt`` under the linear model with constant ``alpha``."""
    S, E, I, R1, R2, C = state
    s = -(gamma + nu) / 2
    q = jnp.sqrt(((gamma - nu) / 2) ** 2 + alpha * gamma)
    q = jnp.maximum(q, 1e-8)
    vE = (nu - gamma) / 2 * E + alpha * I
    vI = gamma * E + (gamma - nu) / 2 * I
    lp, lm = s + q, s - q
    ep, em = jnp.exp(lp * dt), jnp.exp(lm * dt)
    cp, cm = I / 2 + vI / (2 * q), I / 2 - vI / (2 * q)
    dp, dm = E / 2 + vE / (2 * q), E / 2 - vE / (2 * q)
    E1 = dp * ep + dm * em
    I1 = cp * ep + cm * em
    int_p, int_m = dt * _phi1(lp * dt), dt * _phi1(lm * dt)
    decay = jnp.exp(-eta * dt)
    Kp = dt * decay * _phi1((lp + eta) * dt)
    Km = dt * decay * _phi1((lm + eta) * dt)
    R1n = decay * R1 + nu * (cp * Kp + cm * Km)
    int_I = cp * int_p + cm * int_m
    int_E = dp * int_p + dm * int_m
    total = E + I + R1 + R2 + alpha * int_I
    return jnp.stack(jnp.broadcast_arrays(S, E1, I1, R1n, total - E1 - I1 - R1n, C + gamma * int_E))


def _seirr_rhs(x, beta, gamma, nu, eta, N):
    S, E, I, R1, R2, C = x
    inf = beta * S * I / N
    return jnp.stack([-inf, inf - gamma * E, gamma * E - nu * I, nu * I - eta * R1, eta * R1, gamma * E])


def seirr_step(state, beta, gamma, nu, eta, N, dt, n_sub):
    h = dt / n_sub

    def body(_, x):
        k1 = _seirr_rhs(x, beta, gamma, nu, eta, N)
        k2 = _seirr_rhs(x + h / 2 * k1, beta, gamma, nu, eta, N)
        k3 = _seirr_rhs(x + h / 2 * k2, beta, gamma, nu, eta, N)
        k4 = _seirr_rhs(x + h * k3, beta, gamma, nu, eta, N)
        return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    return jax.lax.fori_loop(0, n_sub, body, state)


@dataclass(frozen=True)
class Layout:
    """Latent-vector layout for one variant and number of segments."""

    variant: str
    n_segments: int
    centered_rw: bool = False

    @property
    def scalar_names(self) -> tuple[str, ...]:
        return _SCALARS[self.variant]

    @property
    def rw_names(self) -> tuple[str, ...]:
        stem = "logR" if self.centered_rw else "z"
        return tuple(f"{stem}[{k}]" for k in range(2, self.n_segments + 1))

    @property
    def names(self) -> tuple[str, ...]:
        return self.scalar_names + self.rw_names

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


class Posterior:
    """Log posterior of one model variant given data, priors and grid.

    Parameters
    ----------
    variant : one of ``MODEL_VARIANTS``.
    data : observations; the wastewater variants use the wastewater rows and
        the case variants use the case rows. Other rows are carried along
        for functionals (e.g. case detection rates from a wastewater fit).
    n_segments : number of reproduction-number segments; by default enough
        to cover the last observation.
    population, nonshedding : N and N - P for the S variants.
    likelihood : False gives the prior alone.
    centered_rw : sample log R directly instead of the innovations.
    """

    def __init__(
        self,
        variant: str,
        data: ObservationSet,
        priors: PriorSpec | None = None,
        *,
        resolution: float = 1.0,
        cadence: float = 7.0,
        n_segments: int | None = None,
        population: float | None = None,
        nonshedding: float = 0.0,
        likelihood: bool = True,
        centered_rw: bool = False,
    ):
        if variant not in MODEL_VARIANTS:
            raise ValidationError(f"unknown model variant {variant!r}; expected one of {MODEL_VARIANTS}")
        if not resolution > 0 or not cadence > 0:
            raise ValidationError("resolution and cadence must be positive")
        steps_per_seg = cadence / resolution
        if abs(steps_per_seg - round(steps_per_seg)) > 1e-9:
            raise ValidationError("changepoint cadence must be a multiple of the grid resolution")
        self.variant = variant
        self.data = data
        self.priors = priors or paper_baseline()
        self.resolution = float(resolution)
        self.cadence = float(cadence)
        self.likelihood = likelihood
        self.steps_per_segment = int(round(steps_per_seg))

        uses_ww = variant in WASTEWATER_VARIANTS
        if likelihood and uses_ww and not data.has_wastewater:
            raise ValidationError(f"{variant} needs wastewater observations")
        if likelihood and not uses_ww and not data.has_cases:
            raise ValidationError(f"{variant} needs case observations")
        if variant in S_VARIANTS:
            if population is None or not population > 0:
                raise ValidationError(f"{variant} needs a positive population size")
            if not 0 <= nonshedding < population:
                raise ValidationError("nonshedding (N - P) must lie in [0, N)")
        self.population = None if population is None else float(population)
        self.nonshedding = float(nonshedding)

        last = 0.0
        if data.has_wastewater:
            last = max(last, float(data.ww_times.max()))
            if data.ww_times.min() < 0:
                raise ValidationError("wastewater times must be nonnegative")
        if data.has_cases:
            last = max(last, float(data.case_bin_edges()[-1, 1]))
        needed = max(1, math.ceil(last / self.cadence - 1e-12))
        if n_segments is None:
            n_segments = needed
        if n_segments < needed:
            raise ValidationError(f"{n_segments} segments do not cover the observations (need {needed})")
        self.layout = Layout(variant, int(n_segments), centered_rw)
        self.n_steps = self.layout.n_segments * self.steps_per_segment
        self.times = self.resolution * np.arange(self.n_steps + 1)
        self.horizon = float(self.times[-1])
        self.segment_of_step = np.arange(self.n_steps) // self.steps_per_segment
        self.n_sub = max(1, math.ceil(self.resolution / RK4_MAX_STEP - 1e-9))

        self._ww_idx = self._grid_index(data.ww_times, "wastewater time") if data.has_wastewater else None
        self._ww_log = np.log(data.ww_conc) if data.has_wastewater else None
        if data.has_cases:
            edges = data.case_bin_edges()
            self._case_lo = self._grid_index(edges[:, 0], "case week start")
            self._case_hi = self._grid_index(edges[:, 1], "case week end")
            self._case_counts = np.asarray(data.case_counts, dtype=float)
        else:
            self._case_lo = self._case_hi = self._case_counts = None

    # ------------------------------------------------------------------ setup

    def _grid_index(self, t, what) -> np.ndarray:
        pos = np.asarray(t, dtype=float) / self.resolution
        idx = np.round(pos).astype(int)
        if np.any(np.abs(pos - idx) > 1e-9):
            raise ValidationError(f"every {what} must lie on the solver grid (resolution {self.resolution})")
        if np.any(idx > self.n_steps):
            raise ValidationError(f"a {what} falls after the modelled horizon")
        return idx

    @property
    def names(self) -> tuple[str, ...]:
        return self.layout.names

    @property
    def dim(self) -> int:
        return self.layout.dim

    # ------------------------------------------------------------ transforms

    def _unpack(self, x):
        """Latent vector -> (constrained params, log R per segment, log prior)."""
        lay = self.layout
        params = {}
        lp = 0.0
        for i, name in enumerate(lay.scalar_names):
            prior = self.priors[name]
            params[name] = prior.to_theta(x[i])
            lp = lp + prior.latent_logprior(x[i])
        rw = x[len(lay.scalar_names) :]
        log_r1 = jnp.log(params["R0"])
        sigma = params["sigma_rw"]
        if lay.centered_rw:
            prev = jnp.concatenate([jnp.reshape(log_r1, (1,)), rw[:-1]]) if rw.shape[0] else rw
            lp = lp + jnp.sum(_std_normal_logpdf((rw - prev) / sigma) - jnp.log(sigma))
            log_r = jnp.concatenate([jnp.reshape(log_r1, (1,)), rw])
        else:
            lp = lp + jnp.sum(_std_normal_logpdf(rw))
            log_r = log_r1 + jnp.concatenate([jnp.zeros(1), jnp.cumsum(sigma * rw)])
        return params, log_r, lp

    def initial_state(self, p):
        zero = jnp.zeros(())
        if self.variant == "EIRR-ww":
            return jnp.stack([zero, p["E0"], p["I0"], p["R1_0"], zero, zero])
        if self.variant == "EIR-cases":
            return jnp.stack([zero, p["E0"], p["I0"], zero, zero, zero])
        P = self.population - self.nonshedding
        if self.variant == "SEIRR-ww":
            S = P * p["S_SEIR1"]
            I = (P - S) * p["I_EIR1"]
            R1 = (P - S - I) * p["R1_ER1"]
            E = P - S - I - R1
            return jnp.stack([S, E, I, R1, zero + self.nonshedding, zero])
        S = P * p["S_EI"]
        I = (P - S) * p["I_EI"]
        E = P - S - I
        return jnp.stack([S, E, I, zero + self.nonshedding, zero, zero])

    def _solve(self, p, log_r):
        """States at every grid point, shape (n_steps + 1, 6)."""
        x0 = self.initial_state(p)
        r_step = jnp.exp(log_r)[self.segment_of_step]
        gamma, nu = p["gamma"], p["nu"]
        eta = p.get("eta", 0.0)
        dt = self.resolution
        if self.variant in S_VARIANTS:
            N, n_sub = self.population, self.n_sub

            def body(x, r):
                nxt = seirr_step(x, r * nu, gamma, nu, eta, N, dt, n_sub)
                return nxt, nxt

            _, path = jax.lax.scan(body, x0, r_step)
            return jnp.concatenate([x0[None, :], path], axis=0)

        # The closed form holds for any elapsed time, so every grid point of
        # a segment is evaluated at once from the segment's starting state.
        elapsed = dt * jnp.arange(1, self.steps_per_segment + 1)

        def segment(x, r):
            block = eirr_step(x[:, None], r * nu, gamma, nu, eta, elapsed).T
            return block[-1], block

        _, blocks = jax.lax.scan(segment, x0, jnp.exp(log_r))
        return jnp.concatenate([x0[None, :], blocks.reshape(-1, x0.shape[0])], axis=0)

    def _loglik(self, p, states):
        ll = 0.0
        if self.variant in WASTEWATER_VARIANTS:
            I = states[self._ww_idx, 2]
            R1 = states[self._ww_idx, 3]
            lam = p["lambda"]
            mix = lam * I + (1 - lam) * R1
            ok = mix > 0
            loc = jnp.log(jnp.where(ok, mix, 1.0)) + jnp.log(p["rho"])
            terms = gen_t_logpdf_jax(self._ww_log, loc, p["tau"], p["df"])
            ll = ll + jnp.sum(jnp.where(ok, terms, -jnp.inf))
        else:
            C = states[:, 5]
            inc = C[self._case_hi] - C[self._case_lo]
            mean = inc * p["psi"]
            ok = mean > 0
            terms = negbin_logpmf_jax(self._case_counts, jnp.where(ok, mean, 1.0), p["phi"])
            ll = ll + jnp.sum(jnp.where(ok, terms, -jnp.inf))
        return ll

    def _logp(self, x):
        p, log_r, lp = self._unpack(x)
        if not self.likelihood:
            return lp
        return lp + self._loglik(p, self._solve(p, log_r))

    def _forward(self, x):
        p, log_r, _ = self._unpack(x)
        states = self._solve(p, log_r)
        r = jnp.exp(log_r)
        r_grid = r[self.segment_of_step]
        if self.variant in S_VARIANTS:
            # R_t = R0_t * S(t) / N at the left end of each step
            rt = r_grid * states[:-1, 0] / self.population
        else:
            rt = r_grid
        return {"params": p, "R": r, "states": states, "rt": rt}

    # -------------------------------------------------------------- compiled

    @cached_property
    def _value_and_grad(self):
        return jax.jit(jax.value_and_grad(self._logp))

    @cached_property
    def _value(self):
        return jax.jit(self._logp)

    @cached_property
    def _forward_batch(self):
        return jax.jit(jax.vmap(self._forward))

    def logp(self, x) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def logp_and_grad(self, x) -> tuple[float, np.ndarray]:
        """Log density and gradient; a non-finite value is reported as ``-inf`` with zero gradient."""
        v, g = self._value_and_grad(np.asarray(x, dtype=float))
        v = float(v)
        g = np.asarray(g)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return -math.inf, np.zeros(self.dim)
        return v, g

    __call__ = logp_and_grad

    def forward(self, xs) -> dict:
        """Parameters, segment R values, grid states and grid R_t for a batch of latent vectors."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        out = self._forward_batch(xs)
        return jax.tree_util.tree_map(np.asarray, out)

    # ------------------------------------------------------------ utilities

    def constrain(self, x) -> dict:
        out = self.forward(x)
        params = {k: float(v[0]) for k, v in out["params"].items()}
        params["R"] = out["R"][0]
        return params

    def unconstrain(self, params: dict) -> np.ndarray:
        """Inverse of ``constrain``; ``params['R']`` holds the segment values."""
        lay = self.layout
        x = np.empty(lay.dim)
        for i, name in enumerate(lay.scalar_names):
            x[i] = self.priors[name].from_theta(params[name])
        log_r = np.log(np.asarray(params["R"], dtype=float))
        if len(log_r) != lay.n_segments:
            raise ValidationError("R must hold one value per segment")
        if not np.isclose(np.exp(log_r[0]), params["R0"], rtol=1e-12):
            raise ValidationError("R[0] must equal the R0 parameter")
        tail = log_r[1:]
        if lay.centered_rw:
            x[len(lay.scalar_names) :] = tail
        else:
            x[len(lay.scalar_names) :] = np.diff(log_r) / params["sigma_rw"]
        return x

    def prior_median_point(self) -> np.ndarray:
        """Latent vector at every parameter's prior median and a flat R path."""
        x = np.zeros(self.dim)
        for i, name in enumerate(self.layout.scalar_names):
            prior = self.priors[name]
            if not prior.non_centered:
                x[i] = prior.from_theta(prior.quantile(0.5))
        if self.layout.centered_rw:
            x[len(self.layout.scalar_names) :] = math.log(self.priors["R0"].quantile(0.5))
        return x

    def wastewater_term_count(self) -> int:
        return 0 if self._ww_idx is None else len(self._ww_idx)


_CACHE: dict = {}


def log_posterior(variant, latent, data, priors=None, grid=None):
    """Functional form: ``(value, gradient)`` of the posterior at ``latent``.

    ``grid`` is an optional mapping of ``Posterior`` keyword arguments
    (resolution, cadence, n_segments, population, nonshedding). Compiled
    posteriors are cached by identity of the inputs.
    """
    grid = dict(grid or {})
    key = (variant, id(data), id(priors), tuple(sorted(grid.items())))
    post = _CACHE.get(key)
    if post is None or post.data is not data:
        post = Posterior(variant, data, priors, **grid)
        _CACHE.clear()
        _CACHE[key] = post
    return post.logp_and_grad(latent)
