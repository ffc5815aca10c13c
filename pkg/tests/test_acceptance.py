"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N [PASS|FAIL] ...`` line; the lines are
also collected and repeated in pytest's terminal summary. Run standalone with
``python3 tests/test_acceptance.py``.
"""

import math
import time
import warnings

import numpy as np
import pytest

from abdt import (
    BayesOptimal,
    BetaGrid,
    ConstantSigma,
    FeatureHistory,
    FixedBeta,
    FixedCount,
    FixedPValue,
    LogNormalSigma,
    LogUniformSigma,
    McmcConfig,
    NeverShip,
    Oracle,
    PosteriorLift,
    PriorSpec,
    ReplicateSpec,
    bayes_risk,
    bayes_risk_mc,
    bonferroni_threshold,
    equivalence_check,
    fit_prior,
    mu_sweep,
    optimal_threshold,
    optimal_threshold_weighted,
    posterior_lift,
    sample_synthetic,
    simulate,
)

REF_PRIOR = PriorSpec.student_t(2.31, -0.02, 0.18)
RESULTS = []
pytestmark = pytest.mark.slow


def verdict(num, title, ok, detail, elapsed=None, budget=None):
    in_time = budget is None or elapsed <= budget
    passed = bool(ok and in_time)
    timing = "" if elapsed is None else f" ({elapsed:.1f}s" + (f" / {budget:.0f}s budget)" if budget else ")")
    line = f"criterion {num:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}{timing}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def test_c01_gaussian_closed_form():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    grid = BetaGrid(-250.0, 250.0, 0.01)  # covers |mu| sigma^2 / tau^2 <= 200 over the whole box
    errors = []
    for _ in range(20):
        mu, tau, sigma = rng.uniform(-0.5, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 1.0)
        _, curve = optimal_threshold(PriorSpec.gaussian(mu, tau), sigma, grid)
        errors.append(abs(curve.beta_opt_refined + mu * sigma**2 / tau**2))
    worst = max(errors)
    verdict(1, "Gaussian optimum = -mu sigma^2/tau^2", worst <= 0.002,
            f"20 triples, max |error| {worst:.2e} (tol 2e-3)", time.perf_counter() - t0, 60)


def test_c02_symmetric_prior_critical_at_zero():
    h = 1e-3
    derivs = []
    for prior in (
        PriorSpec.gaussian(0.0, 0.2),
        PriorSpec.gaussian(0.0, 1.0),
        PriorSpec.student_t(2.31, 0.0, 0.18),
        PriorSpec.student_t(1.5, 0.0, 0.5),
    ):
        for sigma in (0.1, 0.3, 1.0):
            derivs.append((bayes_risk(prior, sigma, h) - bayes_risk(prior, sigma, -h)) / (2 * h))
    worst = max(abs(d) for d in derivs)
    verdict(2, "mu=0 priors have dR/dbeta(0)=0", worst <= 1e-5,
            f"{len(derivs)} (prior, sigma) pairs, max |dR/dbeta| {worst:.1e} (tol 1e-5)")


def test_c03_reference_prior_optimum():
    t0 = time.perf_counter()
    rule, curve = optimal_threshold(REF_PRIOR, 0.30)
    ok = abs(rule.beta - 0.04) <= 0.01 and abs(rule.p_cutoff - 0.45) <= 0.02
    verdict(3, "reference prior at sigma=0.3", ok,
            f"beta_opt {rule.beta:.3f} (refined {curve.beta_opt_refined:.5f}), p-cutoff {rule.p_cutoff:.4f}",
            time.perf_counter() - t0, 30)


def test_c04_mu_sweep_shape():
    sigma, tau = 0.30, 0.18
    mus = np.round(np.arange(-2.0, 2.0001, 0.05), 10)
    rows = {round(m, 10): (b, r) for m, b, r in mu_sweep(2.31, tau, sigma, mus, BetaGrid(-1, 1, 0.005))}
    centre = [rows[round(m, 10)][0] for m in np.round(np.arange(-0.3, 0.3001, 0.05), 10)]
    decreasing = all(b2 < b1 for b1, b2 in zip(centre, centre[1:]))
    inner = np.round(np.arange(-0.2, 0.2001, 0.05), 10)
    slope = np.polyfit(inner, [rows[round(m, 10)][1] for m in inner], 1)[0]
    linear = sigma**2 / tau**2
    b2 = rows[2.0][0]
    ok = decreasing and abs(slope) < linear and abs(b2) < abs(-2.0 * linear)
    verdict(4, "mu-sweep shape", ok,
            f"decreasing on [-0.3,0.3]={decreasing}, |slope| {abs(slope):.3f} < {linear:.3f}, "
            f"|beta(2)| {abs(b2):.3f} < {2 * linear:.3f}")


def test_c05_weighted_threshold_ignores_variances():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    grid = BetaGrid(-6.0, 6.0, 0.005)  # |mu| / tau^2 <= 5.6 over the sampled box
    specs = (ReplicateSpec(), ReplicateSpec(FixedCount(2), LogUniformSigma(0.1, 1.5)))
    worst = 0.0
    for _ in range(10):
        mu, tau = rng.uniform(-0.5, 0.5), rng.uniform(0.3, 1.0)
        for k, spec in enumerate(specs):
            beta, _ = optimal_threshold_weighted(PriorSpec.gaussian(mu, tau), spec, grid, n_mc=30, seed=k, refine=False)
            worst = max(worst, abs(beta + mu / tau**2))
    verdict(5, "weighted-sum cutoff = -mu/tau^2 for any replicate law", worst <= 0.005,
            f"10 (mu, tau) x 2 replicate specs, max |error| {worst:.4f} (tol 5e-3)", time.perf_counter() - t0)


def test_c06_sequential_identities():
    rng = np.random.default_rng(99)
    disagree = 0
    worst = 0.0
    for _ in range(10_000):
        mu, tau = rng.uniform(-1, 1), rng.uniform(0.05, 1)
        n = int(rng.integers(0, 8))
        hist = FeatureHistory("f", tuple(zip(rng.normal(0, 1, n), rng.uniform(0.05, 2, n))))
        a, b = equivalence_check(mu, tau, hist, rng.normal(0, 1), rng.uniform(0.05, 2))
        disagree += a != b
        seq = PosteriorLift.prior(mu, tau)
        for x, s in hist.observations:
            seq = seq.update(x, s)
        batch = posterior_lift(mu, tau, hist)
        worst = max(worst, abs(batch.mean - seq.mean) / max(1, abs(seq.mean)),
                    abs(batch.variance - seq.variance) / seq.variance)
    verdict(6, "sequential equivalence and batch=sequential", disagree == 0 and worst <= 1e-10,
            f"{disagree} disagreements in 10^4, max batch/sequential gap {worst:.1e} (tol 1e-10)")


def test_c07_bonferroni():
    value = bonferroni_threshold(0.45, 9)
    verdict(7, "Bonferroni 0.45/9", value == 0.05, f"{value!r} == 0.05")


def test_c08_quadrature_vs_monte_carlo():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for k in range(25):
        mu, tau = rng.uniform(-0.3, 0.3), rng.uniform(0.05, 0.5)
        # t priors with nu > 2 so that the loss has a finite variance and a standard error exists
        prior = PriorSpec.gaussian(mu, tau) if k % 3 == 0 else PriorSpec.student_t(rng.uniform(2.2, 8.0), mu, tau)
        sigma, beta = rng.uniform(0.05, 1.0), rng.uniform(-0.5, 0.5)
        mc, se = bayes_risk_mc(prior, sigma, beta, 1_000_000, seed=k)
        worst = max(worst, abs(bayes_risk(prior, sigma, beta) - mc) / se)
    stein = abs(bayes_risk(PriorSpec.gaussian(0, 1), 1.0, 0.0) + 1 / (2 * math.sqrt(math.pi)))
    verdict(8, "quadrature vs 10^6-draw Monte Carlo", worst <= 3 and stein <= 1e-6,
            f"25 tuples, max |gap| {worst:.2f} SE (tol 3); Gaussian(0,1) check error {stein:.1e}",
            time.perf_counter() - t0)


def test_c09_parameter_recovery():
    t0 = time.perf_counter()
    data = sample_synthetic(PriorSpec.student_t(2.3, 0.0, 0.2), LogNormalSigma(), 500, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = fit_prior(data, cfg=McmcConfig(iterations=5000, burn_in=2500, seed=0))
    nu, mu, tau = s.nu.mean, s.mu.mean, s.tau.mean
    ok = abs(mu) <= 0.05 and abs(tau - 0.2) <= 0.05 and abs(nu - 2.3) <= 0.7
    verdict(9, "recover (nu, mu, tau) = (2.3, 0, 0.2) from 500 records", ok,
            f"nu {nu:.3f}, mu {mu:+.4f}, tau {tau:.4f}, acceptance {s.acceptance_rate:.2f}",
            time.perf_counter() - t0, 300)


def test_c10_policy_ordering():
    t0 = time.perf_counter()
    bayes = BayesOptimal(REF_PRIOR)
    report = simulate(REF_PRIOR, ConstantSigma(0.3),
                      [NeverShip(), Oracle(), FixedPValue(0.05), bayes, FixedBeta(0.04)], 1_000_000, seed=2024)
    b, p, f = report["bayes"], report["p:0.05"], report["beta:0.04"]
    beta = float(bayes.prepare(ConstantSigma(0.3)).threshold(0.3))
    gap = abs(b.mean_loss - bayes_risk(REF_PRIOR, 0.3, beta)) / b.std_error
    gap_grid = abs(f.mean_loss - bayes_risk(REF_PRIOR, 0.3, 0.04)) / f.std_error
    ok = b.mean_loss <= p.mean_loss and f.mean_loss <= p.mean_loss and gap <= 3 and gap_grid <= 3
    verdict(10, "Bayes cutoff beats p<0.05 in simulation", ok,
            f"mean loss bayes {b.mean_loss:.5f} (beta {beta:.4f}, {gap:.2f} SE from quadrature), "
            f"beta=0.04 {f.mean_loss:.5f} ({gap_grid:.2f} SE), p<0.05 {p.mean_loss:.5f}",
            time.perf_counter() - t0)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
