"""No-U-turn sampler with multinomial trajectory sampling.

The trajectory is doubled in a random direction until the generalized
U-turn criterion fires (also checked across the two halves of each merged
subtree) or the maximum depth is reached. States inside a subtree are
chosen with probability proportional to exp(-H); the top-level merge is
biased toward the newer half. Warmup adapts the step size by dual
averaging and the inverse metric (diagonal variances or a dense
covariance) from the draws in doubling windows, after a fast initial
window and before a final fast window.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..errors import NumericalFailure, ValidationError
from .diagnostics import summarize_chains

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


@dataclass
class PosteriorDraws:
    """Post-warmup draws of the latent vector plus sampler diagnostics."""

    samples: np.ndarray  # (chains, draws, dim)
    names: tuple
    logp: np.ndarray
    divergent: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray  # (chains, dim) or (chains, dim, dim)
    inits: np.ndarray = field(default=None)  # (chains, dim) starting points
    rhat: np.ndarray = field(default=None)
    ess_bulk: np.ndarray = field(default=None)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.samples.ndim != 3 or self.samples.shape[0] < 1:
            raise ValidationError("draws need shape (chains, draws, dim) with at least one chain")
        if self.rhat is None or self.ess_bulk is None:
            if self.samples.shape[1] >= 4:
                self.rhat, self.ess_bulk = summarize_chains(self.samples)
            else:
                self.rhat = np.full(self.samples.shape[2], np.nan)
                self.ess_bulk = np.full(self.samples.shape[2], np.nan)

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_draws(self) -> int:
        return self.samples.shape[1]

    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[2])

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, :, list(self.names).index(name)]

    @property
    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent))


@dataclass
class _Tree:
    q_left: np.ndarray
    p_left: np.ndarray
    g_left: np.ndarray
    q_right: np.ndarray
    p_right: np.ndarray
    g_right: np.ndarray
    q_prop: np.ndarray
    logp_prop: float
    g_prop: np.ndarray
    log_weight: float
    rho: np.ndarray
    valid: bool
    divergent: bool
    n_leapfrog: int
    sum_accept: float


class _Sampler:
    def __init__(self, target, dim, rng, max_depth):
        self.target = target
        self.dim = dim
        self.rng = rng
        self.max_depth = max_depth
        self.set_metric(np.ones(dim))

    def set_metric(self, inv_metric):
        """Diagonal (vector) or dense (matrix) inverse metric."""
        self.inv_metric = inv_metric
        self.dense = inv_metric.ndim == 2
        if self.dense:
            self._chol = np.linalg.cholesky(inv_metric)
        else:
            self._sqrt = np.sqrt(inv_metric)

    def velocity(self, p):
        return self.inv_metric @ p if self.dense else self.inv_metric * p

    def draw_momentum(self):
        z = self.rng.standard_normal(self.dim)
        if self.dense:
            return scipy.linalg.solve_triangular(self._chol.T, z, lower=False)
        return z / self._sqrt

    def kinetic(self, p):
        # momenta blow up on divergent trajectories; the resulting inf/nan
        # energy is caught by the divergence check
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(p @ self.velocity(p))

    def leapfrog(self, q, p, g, eps):
        p_half = p + 0.5 * eps * g
        q_new = q + eps * self.velocity(p_half)
        logp, g_new = self.target(q_new)
        if not np.isfinite(logp):
            return q_new, p_half, g, -math.inf
        return q_new, p_half + 0.5 * eps * g_new, g_new, logp

    def _uturn(self, p_sharp_left, p_sharp_right, rho):
        return not (float(p_sharp_left @ rho) > 0 and float(p_sharp_right @ rho) > 0)

    def build(self, q, p, g, direction, depth, eps, h0):
        if depth == 0:
            q1, p1, g1, logp1 = self.leapfrog(q, p, g, direction * eps)
            h1 = -logp1 + self.kinetic(p1) if np.isfinite(logp1) else math.inf
            delta = h1 - h0
            if not np.isfinite(delta):
                delta = math.inf
            divergent = delta > MAX_DELTA_H
            accept = min(1.0, math.exp(-delta)) if np.isfinite(delta) else 0.0
            return _Tree(q1, p1, g1, q1, p1, g1, q1, logp1, g1, -delta, p1.copy(), not divergent, divergent, 1, accept)

        first = self.build(q, p, g, direction, depth - 1, eps, h0)
        if not first.valid:
            return first
        if direction > 0:
            second = self.build(first.q_right, first.p_right, first.g_right, direction, depth - 1, eps, h0)
        else:
            second = self.build(first.q_left, first.p_left, first.g_left, direction, depth - 1, eps, h0)
        n_leap = first.n_leapfrog + second.n_leapfrog
        sum_acc = first.sum_accept + second.sum_accept
        if not second.valid:
            second.n_leapfrog, second.sum_accept = n_leap, sum_acc
            return second
        left, right = (first, second) if direction > 0 else (second, first)
        merged = self._merge(left, right)
        # uniform (not biased) progressive sampling inside a subtree
        lw = np.logaddexp(first.log_weight, second.log_weight)
        if math.log(self.rng.uniform()) < second.log_weight - lw:
            merged.q_prop, merged.logp_prop, merged.g_prop = second.q_prop, second.logp_prop, second.g_prop
        else:
            merged.q_prop, merged.logp_prop, merged.g_prop = first.q_prop, first.logp_prop, first.g_prop
        merged.log_weight = lw
        merged.n_leapfrog, merged.sum_accept = n_leap, sum_acc
        return merged

    def _merge(self, left: _Tree, right: _Tree) -> _Tree:
        """Join two time-adjacent subtrees and evaluate the U-turn criteria."""
        v = self.velocity
        rho = left.rho + right.rho
        uturn = self._uturn(v(left.p_left), v(right.p_right), rho)
        # extra checks across the seam, guarding against missed U-turns
        uturn = uturn or self._uturn(v(left.p_left), v(right.p_left), left.rho + right.p_left)
        uturn = uturn or self._uturn(v(left.p_right), v(right.p_right), right.rho + left.p_right)
        return _Tree(
            left.q_left, left.p_left, left.g_left,
            right.q_right, right.p_right, right.g_right,
            None, None, None, 0.0, rho, not uturn, False, 0, 0.0,
        )

    def transition(self, q, logp, g, eps):
        p0 = self.draw_momentum()
        h0 = -logp + self.kinetic(p0)
        tree = _Tree(q, p0, g, q, p0, g, q, logp, g, 0.0, p0.copy(), True, False, 0, 0.0)
        depth = 0
        n_leap, sum_acc, divergent = 0, 0.0, False
        while depth < self.max_depth:
            direction = 1 if self.rng.uniform() < 0.5 else -1
            if direction > 0:
                new = self.build(tree.q_right, tree.p_right, tree.g_right, 1, depth, eps, h0)
            else:
                new = self.build(tree.q_left, tree.p_left, tree.g_left, -1, depth, eps, h0)
            depth += 1
            n_leap += new.n_leapfrog
            sum_acc += new.sum_accept
            if not new.valid:
                divergent = new.divergent
                break
            # biased progressive sampling at the top level
            if math.log(self.rng.uniform()) < new.log_weight - tree.log_weight:
                prop = (new.q_prop, new.logp_prop, new.g_prop)
            else:
                prop = (tree.q_prop, tree.logp_prop, tree.g_prop)
            left, right = (tree, new) if direction > 0 else (new, tree)
            merged = self._merge(left, right)
            merged.q_prop, merged.logp_prop, merged.g_prop = prop
            merged.log_weight = np.logaddexp(tree.log_weight, new.log_weight)
            tree = merged
            if not merged.valid:
                break
        accept = sum_acc / max(n_leap, 1)
        return tree.q_prop, tree.logp_prop, tree.g_prop, accept, divergent, depth, n_leap

    def find_reasonable_eps(self, q, logp, g, eps=1.0):
        """Double or halve ``eps`` until a single leapfrog's acceptance crosses 0.8."""
        p = self.draw_momentum()
        h0 = -logp + self.kinetic(p)

        def log_acc(e):
            _, p1, _, lp1 = self.leapfrog(q, p, g, e)
            if not np.isfinite(lp1):
                return -math.inf
            return h0 - (-lp1 + self.kinetic(p1))

        la = log_acc(eps)
        up = la > math.log(0.8)
        for _ in range(50):
            if up and not la > math.log(0.8):
                return eps / 2
            if not up and la > math.log(0.8):
                return eps
            eps = eps * 2 if up else eps / 2
            la = log_acc(eps)
        return eps


class _DualAveraging:
    def __init__(self, eps, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps):
        self.mu = math.log(10 * eps)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.count = 0

    def update(self, accept) -> float:
        self.count += 1
        eta = 1.0 / (self.count + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.target - accept)
        x = self.mu - self.s_bar * math.sqrt(self.count) / self.gamma
        w = self.count ** (-self.kappa)
        self.x_bar = (1 - w) * self.x_bar + w * x
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def _windows(n_warmup: int, init_buffer=75, term_buffer=50, base_window=25):
    """Ends (exclusive) of the slow metric-adaptation windows."""
    if n_warmup < 20:
        return [], n_warmup
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    ends = []
    start, size = init_buffer, base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return ends, init_buffer


def _run_chain(target, dim, x0, n_warmup, n_iter, rng, target_accept, max_depth, metric):
    s = _Sampler(target, dim, rng, max_depth)
    q = np.array(x0, dtype=float)
    logp, g = target(q)
    if not np.isfinite(logp):
        raise NumericalFailure("log density is not finite at the chain's initial point")
    eps = s.find_reasonable_eps(q, logp, g)
    da = _DualAveraging(eps, target_accept)
    ends, init_buffer = _windows(n_warmup)
    window_start = init_buffer
    window = []

    for it in range(n_warmup):
        q, logp, g, acc, _, _, _ = s.transition(q, logp, g, eps)
        eps = da.update(acc)
        if ends and window_start <= it < ends[-1]:
            window.append(q)
            if it + 1 in ends:
                w = np.array(window)
                n = len(w)
                shrink = 1e-3 * (5.0 / (n + 5.0))
                if metric == "dense":
                    cov = np.atleast_2d(np.cov(w, rowvar=False)) if n > 1 else np.eye(dim)
                    s.set_metric((n / (n + 5.0)) * cov + shrink * np.eye(dim))
                else:
                    var = w.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                    s.set_metric((n / (n + 5.0)) * var + shrink)
                window = []
                window_start = it + 1
                eps = s.find_reasonable_eps(q, logp, g, eps)
                da.restart(eps)
    if n_warmup > 0:
        eps = da.final

    out = dict(
        samples=np.empty((n_iter, dim)),
        logp=np.empty(n_iter),
        divergent=np.zeros(n_iter, dtype=bool),
        accept_stat=np.empty(n_iter),
        tree_depth=np.empty(n_iter, dtype=int),
        n_leapfrog=np.empty(n_iter, dtype=int),
    )
    for it in range(n_iter):
        q, logp, g, acc, div, depth, n_leap = s.transition(q, logp, g, eps)
        out["samples"][it] = q
        out["logp"][it] = logp
        out["divergent"][it] = div
        out["accept_stat"][it] = acc
        out["tree_depth"][it] = depth
        out["n_leapfrog"][it] = n_leap
    out["step_size"] = eps
    out["inv_metric"] = s.inv_metric.copy()
    out["inits"] = np.array(x0, dtype=float)
    return out


def sample(
    target,
    init,
    *,
    n_chains: int = 4,
    n_warmup: int = 1000,
    n_iter: int = 1000,
    seed: int = 0,
    jitter: float = 0.1,
    no_jitter=(),
    names=None,
    target_accept: float = 0.8,
    max_depth: int = 10,
    metric: str = "diag",
    max_divergence_rate: float = 0.2,
    rhat_warn: float = 1.05,
) -> PosteriorDraws:
    """Run ``n_chains`` NUTS chains on ``target`` (returns log density and gradient).

    Chain ``c`` uses child ``c`` of ``SeedSequence(seed)`` and starts at
    ``init + Normal(0, jitter**2)``, except coordinates listed in
    ``no_jitter`` which start exactly at ``init``.
    """
    if n_chains < 1:
        raise ValidationError("need at least one chain")
    if metric not in ("diag", "dense"):
        raise ValidationError("metric must be 'diag' or 'dense'")
    if n_iter < 1 or n_warmup < 0:
        raise ValidationError("need n_iter >= 1 and n_warmup >= 0")
    init = np.asarray(init, dtype=float)
    dim = init.size
    names = tuple(names) if names is not None else tuple(f"x[{k}]" for k in range(dim))
    keep = np.zeros(dim, dtype=bool)
    keep[list(no_jitter)] = True
    chains = []
    for c, child in enumerate(np.random.SeedSequence(seed).spawn(n_chains)):
        rng = np.random.default_rng(child)
        x0 = init + np.where(keep, 0.0, jitter * rng.standard_normal(dim))
        log.debug("chain %d starting", c)
        chains.append(_run_chain(target, dim, x0, n_warmup, n_iter, rng, target_accept, max_depth, metric))

    stack = {k: np.stack([ch[k] for ch in chains]) for k in chains[0]}
    draws = PosteriorDraws(names=names, **stack)
    rate = draws.divergence_rate
    if rate > max_divergence_rate:
        raise NumericalFailure(
            f"{rate:.1%} of post-warmup transitions diverged; "
            "consider a non-centered parameterization or a smaller step size"
        )
    bad = [n for n, r in zip(names, draws.rhat) if np.isfinite(r) and r > rhat_warn]
    if bad:
        msg = f"R-hat above {rhat_warn} for {', '.join(bad)}"
        draws.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    if rate > 0:
        draws.warnings.append(f"{int(draws.divergent.sum())} divergent transitions ({rate:.2%})")
    return draws
