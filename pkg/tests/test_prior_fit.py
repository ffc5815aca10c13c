import json
import math
import warnings

import numpy as np
import pytest
from scipy import integrate as sp_integrate
from scipy import stats

from abdt import (
    ConstantSigma,
    ConvergenceWarning,
    DomainError,
    EmpiricalSigma,
    HyperPriors,
    LogNormalSigma,
    LogUniformSigma,
    McmcConfig,
    PosteriorSummary,
    PriorSpec,
    fit_prior,
    marginal_loglik,
    parse_sigma_model,
    qq_data,
    sample_synthetic,
)
from abdt.prior_fit import marginal_logpdf


def marginal_oracle(x, s, nu, mu, tau):
    f = lambda d: stats.t.pdf(d, nu, mu, tau) * stats.norm.pdf(x, d, s)  # noqa: E731
    pts = sorted([mu - 5 * tau, mu, mu + 5 * tau, x - 5 * s, x, x + 5 * s])
    core, _ = sp_integrate.quad(f, pts[0], pts[-1], points=pts[1:-1], epsabs=0, epsrel=1e-12, limit=400)
    left, _ = sp_integrate.quad(f, -np.inf, pts[0], epsabs=0, epsrel=1e-12)
    right, _ = sp_integrate.quad(f, pts[-1], np.inf, epsabs=0, epsrel=1e-12)
    return math.log(core + left + right)


@pytest.mark.parametrize(
    "x,s,nu,mu,tau",
    [(0.1, 0.3, 2.31, -0.02, 0.18), (3.0, 0.1, 1.5, 0.0, 0.2), (-0.5, 2.0, 3.9, 0.3, 0.05), (0.0, 0.01, 2.0, 0.0, 1.0)],
)
def test_marginal_logpdf_matches_scipy(x, s, nu, mu, tau):
    got = marginal_logpdf(np.array([x]), np.array([s]), nu, mu, tau)[0]
    assert got == pytest.approx(marginal_oracle(x, s, nu, mu, tau), abs=1e-7)


def test_large_nu_approaches_gaussian_marginal():
    # the t-vs-normal gap in log density is O(1 / nu): it shrinks tenfold per decade of nu
    x = np.array([-0.4, 0.0, 0.25, 1.0])
    s = np.array([0.3, 0.2, 0.5, 0.4])
    ref = stats.norm.logpdf(x, 0.1, np.sqrt(0.04 + s**2))
    gaps = [marginal_logpdf(x, s, nu, 0.1, 0.2) - ref for nu in (200.0, 2000.0, 20000.0)]
    assert np.max(np.abs(gaps[0])) < 5e-3
    np.testing.assert_allclose(gaps[0] / gaps[1], 10.0, rtol=0.02)
    np.testing.assert_allclose(gaps[1] / gaps[2], 10.0, rtol=0.02)


def test_narrow_prior_limit():
    # as tau -> 0 the marginal tends to N(x; mu, s^2)
    x = np.array([-0.3, 0.1, 0.9])
    s = np.array([0.2, 0.3, 0.25])
    got = marginal_logpdf(x, s, 2.0, 0.05, 1e-12)
    np.testing.assert_allclose(got, stats.norm.logpdf(x, 0.05, s), atol=1e-8)


@pytest.mark.parametrize("param", [0, 1, 2])
def test_marginal_loglik_smooth(param):
    data = sample_synthetic(PriorSpec.student_t(2.3, 0.0, 0.2), LogNormalSigma(), 50, seed=2)
    theta = np.array([2.3, 0.0, 0.2])

    def ll(t):
        return marginal_loglik(*t, data)

    def deriv(h):
        e = np.zeros(3)
        e[param] = h
        return (ll(theta + e) - ll(theta - e)) / (2 * h)

    d1, d2 = deriv(1e-3), deriv(5e-4)
    assert d2 / d1 == pytest.approx(1.0, abs=0.05)


def test_sigma_models():
    rng = np.random.default_rng(0)
    ln = LogNormalSigma(0.3, 2.0)
    draws = ln.sample(rng, 400_000)
    assert np.median(draws) == pytest.approx(0.3, rel=0.01)
    assert np.quantile(draws, 0.99) == pytest.approx(2.0, rel=0.03)
    lu = LogUniformSigma(0.1, 0.6).sample(rng, 10_000)
    assert lu.min() >= 0.1 and lu.max() <= 0.6
    assert np.all(ConstantSigma(0.3).sample(rng, 5) == 0.3)
    assert set(EmpiricalSigma((0.1, 0.2)).sample(rng, 100)) <= {0.1, 0.2}


@pytest.mark.parametrize(
    "text,expected",
    [
        ("0.3", ConstantSigma(0.3)),
        ("constant:0.5", ConstantSigma(0.5)),
        ("lognormal", LogNormalSigma()),
        ("lognormal:0.2:1.5", LogNormalSigma(0.2, 1.5)),
        ("loguniform:0.1:0.6", LogUniformSigma(0.1, 0.6)),
    ],
)
def test_parse_sigma_model(text, expected):
    assert parse_sigma_model(text) == expected


@pytest.mark.parametrize("text", ["", "-1", "lognormal:3:2", "foo:1"])
def test_parse_sigma_model_rejects(text):
    with pytest.raises(DomainError):
        parse_sigma_model(text)


def test_fit_needs_ten_records():
    with pytest.raises(DomainError):
        fit_prior(([0.1] * 5, [0.2] * 5))


def test_config_validation():
    with pytest.raises(DomainError):
        McmcConfig(iterations=100, burn_in=100)
    with pytest.raises(DomainError):
        HyperPriors(nu_low=0.5)


def test_mcmc_matches_quadrature_posterior():
    # nu and tau pinned: the posterior of mu on two records is one-dimensional
    x = np.array([0.2, -0.4])
    s = np.array([0.3, 0.5])
    hyper = HyperPriors(fixed_nu=3.0, fixed_tau=0.3)
    summary = fit_prior((x, s), hyper, McmcConfig(iterations=32_000, burn_in=2000, seed=11))
    mu_draws = summary.draws[:, 1]

    def log_post(m):
        return hyper.log_density(m, 3.0, 0.3) + marginal_logpdf(x, s, 3.0, m, 0.3).sum()

    edges = np.linspace(-2.0, 1.6, 37)
    fine = np.linspace(edges[0], edges[-1], 36 * 40 + 1)
    dens = np.exp([log_post(m) for m in fine])
    cum = sp_integrate.cumulative_trapezoid(dens, fine, initial=0)
    probs = np.diff(np.interp(edges, fine, cum)) / cum[-1]
    hist = np.histogram(mu_draws, edges)[0] / mu_draws.size
    tv = 0.5 * np.abs(hist - probs).sum() + 0.5 * np.mean((mu_draws < edges[0]) | (mu_draws > edges[-1]))
    assert tv <= 0.05


def test_draws_respect_support():
    data = sample_synthetic(PriorSpec.student_t(2.3, 0.0, 0.2), LogUniformSigma(0.1, 0.6), 60, seed=1)
    s = fit_prior(data, cfg=McmcConfig(iterations=800, burn_in=400, seed=3))
    assert np.all((s.draws[:, 0] > 1.1) & (s.draws[:, 0] < 4.0))
    assert np.all(s.draws[:, 2] > 0)
    assert s.n_kept == 400
    assert s.plug_in.nu == pytest.approx(s.nu.mean)


def test_fit_is_deterministic_per_seed():
    data = sample_synthetic(PriorSpec.student_t(2.3, 0.0, 0.2), LogUniformSigma(0.1, 0.6), 40, seed=1)
    cfg = McmcConfig(iterations=300, burn_in=150, seed=9)
    a = fit_prior(data, cfg=cfg).to_dict()
    b = fit_prior(data, cfg=cfg).to_dict()
    assert json.dumps(a) == json.dumps(b)


def test_non_convergence_is_flagged():
    data = sample_synthetic(PriorSpec.student_t(2.3, 0.0, 0.2), LogUniformSigma(0.1, 0.6), 40, seed=1)
    cfg = McmcConfig(iterations=300, burn_in=100, seed=0, proposal_scales=(50.0, 50.0, 50.0), adapt_window=0)
    with pytest.warns(ConvergenceWarning):
        s = fit_prior(data, cfg=cfg)
    assert not s.converged
    assert s.acceptance_rate < 0.1


def test_summary_roundtrip():
    data = sample_synthetic(PriorSpec.student_t(2.3, 0.0, 0.2), LogUniformSigma(0.1, 0.6), 30, seed=5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        s = fit_prior(data, cfg=McmcConfig(iterations=200, burn_in=100))
    d = s.to_dict()
    assert set(d) == {"nu", "mu", "tau", "acceptance_rate", "n_kept", "converged", "plug_in"}
    assert PosteriorSummary.from_dict(json.loads(json.dumps(d))).to_dict() == d


def test_qq_data_shape_and_calibration():
    prior = PriorSpec.student_t(2.3, 0.0, 0.2)
    data = sample_synthetic(prior, LogUniformSigma(0.1, 0.6), 400, seed=3)
    q = qq_data(data, prior, n_ref=20_000, seed=1)
    assert q.shape == (400, 2)
    assert np.all(np.diff(q, axis=0) >= 0)
    # central quantiles of data drawn from the prior line up with the fitted ones
    mid = slice(40, 360)
    assert np.max(np.abs(q[mid, 0] - q[mid, 1])) < 0.15
