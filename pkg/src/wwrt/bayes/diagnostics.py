"""Convergence diagnostics: rank-normalized split R-hat and bulk ESS.

Both follow the rank-normalization recipe: pool the split chains, replace
draws by normal scores of their ranks, and compute the classic statistics
on the scores. R-hat is the larger of the bulk and folded (|x - median|)
versions.
"""

from __future__ import annotations

import numpy as np
from scipy import stats


def _split(x: np.ndarray) -> np.ndarray:
    """(chains, draws) -> (2 * chains, draws // 2), dropping a middle draw if odd."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1] // 2
    if n < 2:
        return x
    return np.concatenate([x[:, :n], x[:, -n:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 3 / 8) / (x.size + 1 / 4))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 2:
        return np.nan
    w = np.mean(np.var(x, axis=1, ddof=1))
    b = n * np.var(np.mean(x, axis=1), ddof=1) if m > 1 else 0.0
    if w <= 0:
        return 1.0 if b == 0 else np.inf
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def rhat(x) -> float:
    """Rank-normalized split R-hat of one quantity; ``x`` has shape (chains, draws)."""
    s = _split(x)
    if np.all(s == s.flat[0]):
        return 1.0
    bulk = _rhat_basic(_rank_normalize(s))
    folded = np.abs(s - np.median(s))
    fold = _rhat_basic(_rank_normalize(folded)) if not np.all(folded == folded.flat[0]) else 1.0
    return float(max(bulk, fold))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    m, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, n=size, axis=1)
    ac = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return ac / n


def _ess_basic(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = (n - 1) / n * w
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if var_plus <= 0:
        return np.nan
    rho = 1 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer's initial positive sequence on pair sums, made monotone
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    positive = pairs > 0
    stop = n_pairs if positive.all() else int(np.argmin(positive))
    pairs = np.minimum.accumulate(pairs[:stop]) if stop else pairs[:0]
    tau = -1 + 2 * pairs.sum()
    tau = max(tau, 1 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(x) -> float:
    """Bulk effective sample size of one quantity; ``x`` has shape (chains, draws)."""
    s = _split(x)
    if np.all(s == s.flat[0]):
        return float(s.size)
    return _ess_basic(_rank_normalize(s))


def ess_mean(x) -> float:
    """ESS for the mean (no rank normalization), used for Monte-Carlo standard errors."""
    return _ess_basic(_split(x))


def summarize_chains(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate (R-hat, bulk ESS) for samples of shape (chains, draws, dim)."""
    dim = samples.shape[2]
    r = np.array([rhat(samples[:, :, k]) for k in range(dim)])
    e = np.array([ess_bulk(samples[:, :, k]) for k in range(dim)])
    return r, e
