import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from wwrt.bayes.diagnostics import ess_bulk, ess_mean, rhat
from wwrt.bayes.distributions import gen_t_logpdf, negbin_logpmf
from wwrt.bayes.fit import fit
from wwrt.bayes.functionals import detection_rates, posterior_functionals, summarize
from wwrt.bayes.model import MODEL_VARIANTS, S_VARIANTS, STATE_NAMES, Posterior, log_posterior
from wwrt.bayes.nuts import sample
from wwrt.bayes.optimize import map_estimate
from wwrt.bayes.priors import Gamma, LogitNormal, LogNormal, Normal, paper_baseline, parse_prior
from wwrt.data import ObservationSet
from wwrt.errors import ConvergenceError, InvalidParameterError, NumericalFailure, ValidationError
from wwrt.evaluate import FitSettings, ScenarioConfig, build_posterior, desk_datasets, desk_truth

# ------------------------------------------------------------ distributions


def test_gen_t_cauchy_mode():
    assert gen_t_logpdf(1.3, 1.3, 1.0, 1.0) == pytest.approx(math.log(1 / math.pi), abs=1e-12)
    assert gen_t_logpdf(1.3, 1.3, 1.0, 1.0) == pytest.approx(-1.14473, abs=1e-5)


@pytest.mark.parametrize("d", [0.0, 1.0, 2.0])
def test_gen_t_normal_limit(d):
    assert gen_t_logpdf(d, 0.0, 1.0, 1e6) == pytest.approx(stats.norm.logpdf(d), abs=1e-4)


def test_gen_t_normalization_and_value():
    f = lambda x: math.exp(gen_t_logpdf(x, 0.3, 0.7, 2.99))
    total, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    # (x - loc) / tau = 2 against the scipy t density
    x = 0.3 + 2 * 0.7
    assert gen_t_logpdf(x, 0.3, 0.7, 2.99) == pytest.approx(stats.t.logpdf(2.0, 2.99) - math.log(0.7), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 20), st.floats(0.1, 1e4)
)
def test_gen_t_matches_scipy(x, loc, tau, df):
    assert gen_t_logpdf(x, loc, tau, df) == pytest.approx(stats.t.logpdf(x, df, loc, tau), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e5), st.floats(1e-2, 1e4))
def test_negbin_matches_scipy(k, mean, phi):
    ref = stats.nbinom.logpmf(k, phi, phi / (phi + mean))
    assert negbin_logpmf(k, mean, phi) == pytest.approx(ref, rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("tau,df", [(0.0, 3.0), (-1.0, 3.0), (1.0, 0.0), (1.0, -2.0)])
def test_gen_t_invalid(tau, df):
    with pytest.raises(InvalidParameterError):
        gen_t_logpdf(0.0, 0.0, tau, df)


def test_negbin_normalization_and_zero():
    k = np.arange(0, 501)
    assert np.exp(negbin_logpmf(k, 5.0, 3.0)).sum() == pytest.approx(1.0, abs=1e-8)
    assert negbin_logpmf(0, 5.0, 3.0) == pytest.approx(3.0 * math.log(3.0 / 8.0), rel=1e-13)
    assert negbin_logpmf(k[:50], 5.0, 3.0) == pytest.approx(stats.nbinom.logpmf(k[:50], 3.0, 3.0 / 8.0), rel=1e-10)


def test_negbin_inverse_cdf_moments():
    mu, phi, n = 200.0, 57.55, 10**6
    k = np.arange(0, 2000)
    cdf = np.cumsum(np.exp(negbin_logpmf(k, mu, phi)))
    assert cdf[-1] == pytest.approx(1.0, abs=1e-12)
    u = np.random.default_rng(1).uniform(size=n)
    x = np.searchsorted(cdf, u).astype(float)
    var = mu + mu**2 / phi
    assert var == pytest.approx(895.0, abs=0.05)
    se_mean = math.sqrt(var / n)
    m4 = np.mean((x - x.mean()) ** 4)
    se_var = math.sqrt((m4 - var**2) / n)
    assert abs(x.mean() - mu) < 3 * se_mean
    assert abs(x.var(ddof=1) - var) < 3 * se_var


@pytest.mark.parametrize("k,mean,phi", [(-1, 5.0, 3.0), (1.5, 5.0, 3.0), (2, 0.0, 3.0), (2, 5.0, 0.0)])
def test_negbin_invalid(k, mean, phi):
    with pytest.raises(InvalidParameterError):
        negbin_logpmf(k, mean, phi)


# ------------------------------------------------------------------- priors

PRIORS = [LogNormal(-1.386, 0.2), LogitNormal(5.69, 2.18), LogitNormal(-1.39, 0.4), Normal(225.0, 0.05), Gamma(10.0, 2.0)]


@pytest.mark.parametrize("prior", PRIORS, ids=lambda p: p.describe())
def test_prior_roundtrip_and_jacobian(prior):
    rng = np.random.default_rng(3)
    theta = prior.quantile(rng.uniform(0.02, 0.98, 50))
    back = np.array([float(prior.to_theta(u)) for u in prior.from_theta(theta)])
    assert back == pytest.approx(theta, rel=1e-12)
    h = 1e-5
    for u in prior.from_theta(theta[:10]):
        fd = (float(prior.to_theta(u + h)) - float(prior.to_theta(u - h))) / (2 * h)
        assert float(prior.log_jacobian(u)) == pytest.approx(math.log(fd), abs=1e-6)


@pytest.mark.parametrize("prior", PRIORS, ids=lambda p: p.describe())
def test_latent_prior_is_pushforward(prior):
    """latent density = constrained density(theta(u)) * |d theta / d u|."""
    for p in (0.1, 0.4, 0.77):
        u = float(prior.from_theta(prior.quantile(p)))
        lhs = float(prior.latent_logprior(u))
        rhs = float(prior.logpdf(prior.quantile(p))) + float(prior.log_jacobian(u))
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_table_medians_and_intervals():
    pri = paper_baseline()
    expect = {"gamma": (0.25, 0.17, 0.37), "nu": (0.14, 0.10, 0.21), "eta": (0.06, 0.04, 0.08), "df": (19.33, 9.59, 34.17), "psi": (0.20, 0.10, 0.35)}
    for name, (med, lo, hi) in expect.items():
        q = pri[name].quantile([0.5, 0.025, 0.975])
        assert q == pytest.approx([med, lo, hi], abs=0.006 if name != "df" else 0.01)


def test_parse_prior():
    assert parse_prior("Log-normal(-1.386, 0.2)") == LogNormal(-1.386, 0.2)
    assert parse_prior("logitnormal(5.69,2.18)") == LogitNormal(5.69, 2.18)
    with pytest.raises(ValidationError):
        parse_prior("cauchy(0, 1)")
    with pytest.raises(InvalidParameterError):
        parse_prior("lognormal(0, -1)")
    with pytest.raises(ValidationError):
        paper_baseline().with_overrides(bogus="lognormal(0, 1)")


# -------------------------------------------------------------------- model


@pytest.fixture(scope="module")
def desk():
    truth = desk_truth()
    data = desk_datasets(truth, 2, seed=11)
    return truth, data


def _posterior(desk, variant, **kw):
    truth, data = desk
    return build_posterior(ScenarioConfig("t", variant, **kw), data[0], truth, FitSettings())


def _true_latent(post, truth):
    rt = truth.rt
    R = np.array([rt[7 * k] if post.variant not in S_VARIANTS else truth.setup.sim_config().r0_at(7 * k) for k in range(post.layout.n_segments)], dtype=float)
    params = {"gamma": 0.25, "nu": 1 / 7, "eta": 1 / 18, "sigma_rw": 0.1, "R0": R[0], "R": R, "lambda": 0.9, "tau": 0.5, "rho": 5.0, "df": 2.99, "psi": 0.2, "phi": 57.55}
    for name in post.layout.scalar_names:
        if name not in params:
            params[name] = float(post.priors[name].quantile(0.5))
    return post.unconstrain(params)


def _central_fd(f, x, h=1e-4):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _assert_grad_close(g, fd):
    scale = np.maximum(np.abs(fd), 1e-3)
    assert np.max(np.abs(g - fd) / scale) <= 1e-3


@pytest.mark.parametrize("variant", MODEL_VARIANTS)
def test_gradient_matches_central_differences(desk, variant):
    post = _posterior(desk, variant)
    rng = np.random.default_rng(17)
    base = _true_latent(post, desk[0])
    for _ in range(20):
        x = base + 0.5 * rng.standard_normal(post.dim)
        v, g = post.logp_and_grad(x)
        assert np.isfinite(v)
        _assert_grad_close(g, _central_fd(post.logp, x))


def test_true_values_finite_and_functional_form(desk):
    truth, data = desk
    post = _posterior(desk, "EIRR-ww")
    x = _true_latent(post, truth)
    v, g = log_posterior("EIRR-ww", x, post.data, post.priors, {"n_segments": 8})
    assert np.isfinite(v)
    assert v == pytest.approx(post.logp(x), rel=1e-12)
    _assert_grad_close(g, _central_fd(post.logp, x))


def test_constrain_unconstrain_bijective(desk):
    for variant in MODEL_VARIANTS:
        post = _posterior(desk, variant)
        x = _true_latent(post, desk[0]) + 0.3 * np.random.default_rng(2).standard_normal(post.dim)
        p = post.constrain(x)
        assert post.unconstrain(p) == pytest.approx(x, rel=1e-12, abs=1e-12)
        p2 = post.constrain(post.unconstrain(p))
        for k, v in p.items():
            assert np.asarray(p2[k]) == pytest.approx(np.asarray(v), rel=1e-12)


def test_single_segment_prior_has_only_r0_term(desk):
    truth, data = desk
    ww = data[0].without_cases()
    ww = ObservationSet(ww.ww_times[ww.ww_times <= 7], ww.ww_replicate[ww.ww_times <= 7], ww.ww_conc[ww.ww_times <= 7])
    post = Posterior("EIRR-ww", ww, n_segments=1, likelihood=False)
    assert post.names[-1] == "R1_0" and post.dim == 12
    x = np.random.default_rng(0).standard_normal(12) * 0.5
    expected = sum(float(post.priors[n].latent_logprior(x[i])) for i, n in enumerate(post.names))
    assert post.logp(x) == pytest.approx(expected, rel=1e-12)


def test_prior_density_matches_constrained_form(desk):
    """Non-centered latent density minus log-Jacobians equals the centered
    prior on (theta, log R) evaluated with scipy densities."""
    post = _posterior(desk, "EIRR-ww")
    post = Posterior("EIRR-ww", post.data, post.priors, n_segments=8, likelihood=False)
    x = _true_latent(post, desk[0]) + 0.4 * np.random.default_rng(5).standard_normal(post.dim)
    p = post.constrain(x)
    lay = post.layout
    log_jac = sum(float(post.priors[n].log_jacobian(x[i])) for i, n in enumerate(lay.scalar_names))
    log_jac += (lay.n_segments - 1) * math.log(p["sigma_rw"])  # d logR_k / d z_k
    ref = sum(float(post.priors[n].logpdf(p[n])) for n in lay.scalar_names)
    logR = np.log(p["R"])
    ref += stats.norm.logpdf(np.diff(logR), 0, p["sigma_rw"]).sum()
    # the R0 lognormal is on R_1 itself, whose log is the first RW value
    assert post.logp(x) - log_jac == pytest.approx(ref, rel=1e-10)


def test_lambda_one_collapses_location(desk):
    post = _posterior(desk, "EIRR-ww")
    x = _true_latent(post, desk[0])
    out = post.forward(x)
    p = {k: v[0] for k, v in out["params"].items()}
    p["lambda"] = 1.0
    states = out["states"][0]
    ll = float(post._loglik(p, states))
    idx = np.round(post.data.ww_times).astype(int)
    loc = np.log(states[idx, STATE_NAMES.index("I")]) + np.log(p["rho"])
    ref = stats.t.logpdf((np.log(post.data.ww_conc) - loc) / p["tau"], p["df"]).sum() - len(idx) * np.log(p["tau"])
    assert ll == pytest.approx(ref, rel=1e-10)


def test_likelihood_locality(desk):
    post = _posterior(desk, "EIRR-ww")
    d = post.data
    extra_t, extra_c = 20.0, 3.7
    bigger = ObservationSet(
        np.append(d.ww_times, extra_t), np.append(d.ww_replicate, 1), np.append(d.ww_conc, extra_c)
    )
    post2 = Posterior("EIRR-ww", bigger, post.priors, n_segments=8)
    assert post2.wastewater_term_count() == post.wastewater_term_count() + 1
    x = _true_latent(post, desk[0])
    p = post.constrain(x)
    states = post.forward(x)["states"][0]
    mix = p["lambda"] * states[20, 2] + (1 - p["lambda"]) * states[20, 3]
    term = gen_t_logpdf(math.log(extra_c), math.log(mix) + math.log(p["rho"]), p["tau"], p["df"])
    assert post2.logp(x) - post.logp(x) == pytest.approx(term, rel=1e-9, abs=1e-9)


def test_nonpositive_mix_gives_minus_inf():
    data = ObservationSet([1.0, 2.0], [1, 1], [1.0, 2.0])
    pri = paper_baseline().with_overrides(E0=Normal(0.0, 0.05), I0=Normal(0.0, 0.05), R1_0=Normal(0.0, 0.05))
    post = Posterior("EIRR-ww", data, pri)
    x = post.prior_median_point()
    i = post.layout.index
    x[[i("E0"), i("I0"), i("R1_0")]] = 0.0  # exactly zero counts, so lambda I + (1 - lambda) R1 = 0
    v, g = post.logp_and_grad(x)
    assert v == -math.inf and not np.any(g)


def test_posterior_validation(desk):
    truth, data = desk
    with pytest.raises(ValidationError):
        Posterior("EIRR-ww", data[0], cadence=7.0, resolution=2.0)
    with pytest.raises(ValidationError):
        Posterior("SEIRR-ww", data[0])
    with pytest.raises(ValidationError):
        Posterior("EIR-cases", data[0].without_cases())
    with pytest.raises(ValidationError):
        Posterior("bogus", data[0])
    with pytest.raises(ValidationError):
        Posterior("EIRR-ww", ObservationSet([1.5], [1], [2.0]))
    with pytest.raises(ValidationError):
        Posterior("EIRR-ww", data[0], n_segments=3)


# ---------------------------------------------------------------------- MAP


def test_map_quadratic():
    res = map_estimate(lambda x: (-float((x[0] - 3) ** 2), np.array([-2 * (x[0] - 3)])), [0.0])
    assert res.converged and res.x[0] == pytest.approx(3.0, abs=1e-6)


def test_map_lognormal_modes():
    mu, sigma = 0.7, 0.5
    prior = LogNormal(mu, sigma)

    def latent(u):  # transform-corrected log density of u = log(theta)
        return float(prior.logpdf(math.exp(u[0])) + u[0]), np.array([-(u[0] - mu) / sigma**2])

    def constrained(t):  # density of theta itself, no change of variables
        th = t[0]
        if th <= 0:
            return -math.inf, np.zeros(1)
        return float(prior.logpdf(th)), np.array([-1 / th - (math.log(th) - mu) / (sigma**2 * th)])

    assert map_estimate(latent, [0.0]).x[0] == pytest.approx(mu, abs=1e-6)
    assert map_estimate(constrained, [1.0]).x[0] == pytest.approx(math.exp(mu - sigma**2), abs=1e-5)


def test_map_cap_flag_and_failure():
    res = map_estimate(lambda x: (float(x[0]), np.ones(1)), [0.0], max_iter=50)
    assert not res.converged and res.n_iter == 50
    with pytest.raises(ConvergenceError) as info:
        map_estimate(lambda x: (0.0, np.ones(1)) if x[0] == 0 else (-math.inf, np.zeros(1)), [0.0])
    assert info.value.params is not None and info.value.trace
    with pytest.raises(NumericalFailure):
        map_estimate(lambda x: (-math.inf, np.zeros(1)), [0.0])


def test_map_on_model_prior(desk):
    post = _posterior(desk, "EIR-cases")
    pri = Posterior("EIR-cases", post.data, post.priors, n_segments=8, likelihood=False)
    res = map_estimate(pri.logp_and_grad, pri.prior_median_point() + 0.3)
    assert res.converged
    # every prior is non-centered, so the latent mode is the origin
    assert res.x == pytest.approx(np.zeros(pri.dim), abs=1e-5)


# ------------------------------------------------------------------ sampler


def _gauss_target(cov):
    prec = np.linalg.inv(cov)
    return lambda x: (-0.5 * float(x @ prec @ x), -prec @ x)


def _moment_checks(draws, cov):
    sd = np.sqrt(np.diag(cov))
    flat = draws.flat()
    ess = np.array([ess_mean(draws.samples[:, :, k]) for k in range(flat.shape[1])])
    assert np.all(np.abs(flat.mean(0)) < 3 * sd / np.sqrt(ess))
    assert np.all(np.abs(flat.std(0) / sd - 1) < 0.05)
    assert np.all(draws.rhat < 1.01)


def test_sampler_standard_normal():
    d = sample(_gauss_target(np.eye(10)), np.zeros(10), n_chains=4, n_warmup=1000, n_iter=1000, seed=1)
    _moment_checks(d, np.eye(10))
    assert d.divergence_rate == 0


@pytest.mark.parametrize("metric", ["diag", "dense"])
def test_sampler_correlated(metric):
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    d = sample(_gauss_target(cov), np.zeros(2), n_chains=4, n_warmup=1000, n_iter=1000, seed=2, metric=metric)
    _moment_checks(d, cov)
    assert np.corrcoef(d.flat().T)[0, 1] == pytest.approx(0.9, abs=0.02)


@pytest.mark.filterwarnings("ignore:R-hat")
def test_sampler_reproducible_and_jitter():
    tgt = _gauss_target(np.eye(3))
    a = sample(tgt, np.ones(3), n_chains=2, n_warmup=50, n_iter=30, seed=9, no_jitter=[1])
    b = sample(tgt, np.ones(3), n_chains=2, n_warmup=50, n_iter=30, seed=9, no_jitter=[1])
    assert np.array_equal(a.samples, b.samples)
    assert np.all(a.inits[:, 1] == 1.0)
    assert np.all(a.inits[:, [0, 2]] != 1.0)
    assert np.all(np.abs(a.inits - 1) < 0.5)


def test_sampler_divergence_error():
    def walled(x):
        if abs(x[0]) > 0.05:
            return -math.inf, np.zeros(1)
        return -0.5 * float(x[0] ** 2) * 1e-4, -1e-4 * x

    with pytest.raises(NumericalFailure, match="diverged"):
        sample(walled, np.zeros(1), n_chains=1, n_warmup=0, n_iter=200, seed=0, jitter=0.0)


def test_sampler_rhat_warning():
    with pytest.warns(UserWarning, match="R-hat"):
        d = sample(_gauss_target(np.eye(2)), np.zeros(2), n_chains=2, n_warmup=20, n_iter=20, seed=0, rhat_warn=0.5)
    assert any("R-hat" in w for w in d.warnings)


def test_sampler_validation():
    with pytest.raises(ValidationError):
        sample(_gauss_target(np.eye(2)), np.zeros(2), n_chains=0)
    with pytest.raises(ValidationError):
        sample(_gauss_target(np.eye(2)), np.zeros(2), metric="full")


@pytest.mark.slow
def test_non_centered_rw_funnel_few_divergences(desk):
    post = _posterior(desk, "EIR-cases")
    pri = Posterior("EIR-cases", post.data, post.priors.with_overrides(sigma_rw="lognormal(-1.0, 1.0)"), n_segments=8, likelihood=False)
    d = sample(pri.logp_and_grad, pri.prior_median_point(), n_chains=4, n_warmup=500, n_iter=500, seed=3)
    assert d.divergence_rate < 0.02


@pytest.mark.slow
def test_centered_and_non_centered_rw_agree(desk):
    """The two random-walk parameterizations give the same prior on log R_k."""
    post = _posterior(desk, "EIR-cases")
    kw = dict(n_segments=4, likelihood=False)
    four = ObservationSet(case_weeks=[1, 2, 3, 4], case_counts=[5, 5, 5, 5])
    nc = Posterior("EIR-cases", four, post.priors, **kw)
    ce = Posterior("EIR-cases", four, post.priors, centered_rw=True, **kw)
    d_nc = sample(nc.logp_and_grad, nc.prior_median_point(), n_chains=4, n_warmup=1000, n_iter=1000, seed=4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        d_ce = sample(ce.logp_and_grad, ce.prior_median_point(), n_chains=4, n_warmup=1000, n_iter=1000, seed=4, max_divergence_rate=1.0)
    r_nc = np.log(nc.forward(d_nc.flat())["R"][:, -1])
    r_ce = d_ce.flat()[:, -1]
    # direct Monte Carlo of the non-centered construction as a third route
    rng = np.random.default_rng(0)
    pr = post.priors
    n = 200_000
    sig = np.exp(pr["sigma_rw"].mu + pr["sigma_rw"].sigma * rng.standard_normal(n))
    direct = pr["R0"].mu + pr["R0"].sigma * rng.standard_normal(n) + sig * rng.standard_normal((3, n)).sum(0)
    for draws, samples in ((d_nc, r_nc), (d_ce, r_ce)):
        ess = ess_bulk(samples.reshape(4, -1))
        for p in (0.05, 0.5, 0.95):
            q = np.quantile(direct, p)
            dens = stats.gaussian_kde(direct[:20000])(q)[0]
            se = math.sqrt(p * (1 - p) / ess) / dens
            assert abs(np.quantile(samples, p) - q) < 4 * se


# -------------------------------------------------------------- diagnostics


def test_rhat_and_ess_iid():
    x = np.random.default_rng(0).standard_normal((4, 1000))
    assert rhat(x) < 1.01
    assert ess_bulk(x) == pytest.approx(4000, rel=0.15)


def test_rhat_detects_shift():
    x = np.random.default_rng(1).standard_normal((4, 500))
    x[0] += 2
    assert rhat(x) > 1.1


def test_ess_ar1():
    phi, n = 0.9, 20000
    rng = np.random.default_rng(2)
    x = np.empty((4, n))
    x[:, 0] = rng.standard_normal(4) / math.sqrt(1 - phi**2)
    e = rng.standard_normal((4, n))
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    expected = 4 * n * (1 - phi) / (1 + phi)
    assert ess_mean(x) == pytest.approx(expected, rel=0.2)
    assert ess_bulk(x) == pytest.approx(expected, rel=0.2)


def test_diagnostics_constant():
    assert rhat(np.ones((2, 10))) == 1.0


# -------------------------------------------------------------- functionals


def test_summary_single_draw():
    v = np.array([[1.0, 2.0, 3.0]])
    s = summarize(v, [0, 1, 2])
    assert np.array_equal(s.median, v[0])
    for lvl in (0.5, 0.8, 0.95):
        assert np.array_equal(s.lower[lvl], v[0]) and np.array_equal(s.upper[lvl], v[0])


def test_summary_known_quantiles():
    v = np.arange(1001.0)[:, None]
    s = summarize(v, [0])
    assert (s.median[0], s.lower[0.8][0], s.upper[0.95][0]) == pytest.approx((500, 100, 975), abs=1e-9)


def test_detection_rates_missing_and_identity():
    obs = np.array([10.0, 20.0, 30.0])
    inc = np.array([[10.0, 20.0, 30.0], [5.0, 0.0, -1.0]])
    kappa, eps, missing = detection_rates(obs, inc, tests=np.array([100.0, 0.0, 50.0]))
    assert np.array_equal(kappa[0], np.ones(3))
    assert kappa[1, 0] == 2.0 and np.isnan(kappa[1, 1]) and np.isnan(kappa[1, 2])
    assert missing == 2
    assert eps[0, 0] == pytest.approx(0.01) and np.isnan(eps[0, 1])
    with pytest.raises(ValidationError):
        detection_rates(obs, inc[:, :2])


def test_functionals_single_draw_identity(desk):
    truth, data = desk
    post = _posterior(desk, "EIR-cases")
    x = _true_latent(post, truth)
    f = posterior_functionals(x[None, :], post)
    cases = ObservationSet(case_weeks=data[0].case_weeks, case_counts=f.incidence[0])
    g = posterior_functionals(x[None, :], post, cases)
    assert g.kappa == pytest.approx(np.ones((1, 8)), rel=1e-12)
    assert g.kappa_missing == 0
    s = g.summaries["rt"]
    assert np.array_equal(s.median, f.rt[0])
    assert np.array_equal(s.lower[0.95], s.upper[0.95])
    # weekly incidence is the change in C over (7(u-1), 7u]
    C = f.states[0, :, STATE_NAMES.index("C")]
    assert f.incidence[0] == pytest.approx(C[7::7] - C[:-7:7], rel=1e-12)


@pytest.mark.filterwarnings("ignore:R-hat")
def test_fit_end_to_end_small(desk):
    post = _posterior(desk, "EIRR-ww")
    res = fit(post, n_chains=2, n_warmup=100, n_iter=50, seed=3)
    assert res.draws.samples.shape == (2, 50, post.dim)
    df = post.layout.index("df")
    assert np.all(res.draws.inits[:, df] == res.map.x[df])
    f = res.functionals()
    assert f.rt.shape == (100, post.n_steps)
    assert set(f.summaries) >= {"rt", "R", "E", "I", "R1", "R2", "C", "incidence"}
