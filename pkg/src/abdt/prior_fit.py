"""Empirical-Bayes fit of a Student-t lift prior from historical experiments.

Model::

    x_i | delta_i ~ N(delta_i, sigma_i^2)
    delta_i       ~ t_nu(mu, tau)
    mu ~ N(0, 10^2),  nu ~ U(1.1, 4),  tau ~ half-Cauchy(0, 1)

The latent lifts are integrated out record by record with panel quadrature,
so the Metropolis chain only moves over ``(mu, log tau, logit nu)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import special

from .core import DomainError, ExperimentRecord, PriorSpec, norm_ppf
from .quadrature import GAUSS_WINDOW, gaussian_marks, integrate, panel_edges, prior_rings

__all__ = [
    "ConvergenceWarning",
    "HyperPriors",
    "McmcConfig",
    "ParamSummary",
    "PosteriorSummary",
    "ConstantSigma",
    "LogUniformSigma",
    "LogNormalSigma",
    "EmpiricalSigma",
    "parse_sigma_model",
    "as_arrays",
    "marginal_loglik",
    "marginal_logpdf",
    "fit_prior",
    "sample_synthetic",
    "qq_data",
]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class ConvergenceWarning(UserWarning):
    """Post burn-in acceptance rate fell outside [0.1, 0.6]."""


# ---------------------------------------------------------------------------
# standard-error models for synthetic data


@dataclass(frozen=True)
class ConstantSigma:
    value: float = 0.3

    def __post_init__(self):
        if not self.value > 0:
            raise DomainError("sigma must be positive")

    def sample(self, rng, size):
        return np.full(size, float(self.value))

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class LogUniformSigma:
    low: float = 0.1
    high: float = 0.6

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise DomainError("log-uniform sigma needs 0 < low < high")

    def sample(self, rng, size):
        return np.exp(rng.uniform(math.log(self.low), math.log(self.high), size))

    def to_dict(self):
        return {"kind": "loguniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class LogNormalSigma:
    """Log-normal standard errors pinned by their median and 99th percentile."""

    median: float = 0.3
    p99: float = 2.0

    def __post_init__(self):
        if not 0 < self.median < self.p99:
            raise DomainError("log-normal sigma needs 0 < median < p99")

    @property
    def log_sd(self):
        return math.log(self.p99 / self.median) / float(norm_ppf(0.99))

    def sample(self, rng, size):
        return self.median * np.exp(self.log_sd * rng.standard_normal(size))

    def to_dict(self):
        return {"kind": "lognormal", "median": self.median, "p99": self.p99}


@dataclass(frozen=True)
class EmpiricalSigma:
    """Resample observed standard errors with replacement."""

    values: Tuple[float, ...]

    def __post_init__(self):
        if len(self.values) == 0 or min(self.values) <= 0:
            raise DomainError("empirical sigma needs positive values")

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values, dtype=float), size=size, replace=True)

    def to_dict(self):
        return {"kind": "empirical", "n": len(self.values)}


def parse_sigma_model(text):
    """``0.3`` | ``lognormal[:median:p99]`` | ``loguniform:low:high``."""
    parts = text.strip().split(":")
    try:
        if parts[0] == "lognormal":
            return LogNormalSigma(*(float(p) for p in parts[1:]))
        if parts[0] == "loguniform":
            return LogUniformSigma(*(float(p) for p in parts[1:]))
        if parts[0] == "constant":
            return ConstantSigma(float(parts[1]))
        if len(parts) == 1:
            return ConstantSigma(float(parts[0]))
    except (TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"bad sigma model {text!r}") from exc
    raise DomainError(f"bad sigma model {text!r}")


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class HyperPriors:
    """Hyperpriors on ``(mu, nu, tau)``.

    ``fixed_nu`` / ``fixed_tau`` pin a parameter (degenerate prior), leaving
    the chain to move over the rest.
    """

    mu_mean: float = 0.0
    mu_sd: float = 10.0
    nu_low: float = 1.1
    nu_high: float = 4.0
    tau_scale: float = 1.0
    fixed_nu: Optional[float] = None
    fixed_tau: Optional[float] = None

    def __post_init__(self):
        if not 1.0 < self.nu_low < self.nu_high:
            raise DomainError("nu support must satisfy 1 < nu_low < nu_high")
        if not (self.mu_sd > 0 and self.tau_scale > 0):
            raise DomainError("hyperprior scales must be positive")
        if self.fixed_nu is not None and not self.fixed_nu > 1:
            raise DomainError("fixed_nu must exceed 1")
        if self.fixed_tau is not None and not self.fixed_tau > 0:
            raise DomainError("fixed_tau must be positive")

    def log_density(self, mu, nu, tau):
        lp = -0.5 * ((mu - self.mu_mean) / self.mu_sd) ** 2
        if self.fixed_tau is None:
            # half-Cauchy(0, s): 2 / (pi s (1 + (tau/s)^2))
            lp -= math.log1p((tau / self.tau_scale) ** 2)
        return lp


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 5000
    burn_in: int = 2500
    seed: int = 0
    proposal_scales: Tuple[float, float, float] = (0.02, 0.1, 0.5)
    adapt_window: int = 100

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 1:
            raise DomainError("iterations and burn_in must be positive")
        if self.burn_in >= self.iterations:
            raise DomainError("burn_in must be smaller than iterations")
        if len(self.proposal_scales) != 3 or min(self.proposal_scales) <= 0:
            raise DomainError("need three positive proposal scales (mu, log tau, logit nu)")
        if self.adapt_window < 0:
            raise DomainError("adapt_window must be non-negative")


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float

    @classmethod
    def from_draws(cls, draws):
        q = np.quantile(draws, [0.025, 0.5, 0.975])
        return cls(float(np.mean(draws)), float(np.std(draws, ddof=1)), *map(float, q))

    def to_dict(self):
        return {"mean": self.mean, "sd": self.sd, "q025": self.q025, "q50": self.q50, "q975": self.q975}


@dataclass
class PosteriorSummary:
    nu: ParamSummary
    mu: ParamSummary
    tau: ParamSummary
    acceptance_rate: float
    n_kept: int
    converged: bool
    plug_in: PriorSpec
    draws: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {
            "nu": self.nu.to_dict(),
            "mu": self.mu.to_dict(),
            "tau": self.tau.to_dict(),
            "acceptance_rate": self.acceptance_rate,
            "n_kept": self.n_kept,
            "converged": self.converged,
            "plug_in": self.plug_in.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ParamSummary(**d["nu"]),
            ParamSummary(**d["mu"]),
            ParamSummary(**d["tau"]),
            float(d["acceptance_rate"]),
            int(d["n_kept"]),
            bool(d.get("converged", True)),
            PriorSpec.from_dict(d["plug_in"]),
        )


# ---------------------------------------------------------------------------
# likelihood


def as_arrays(data):
    """Return ``(lifts, std_errors)`` from records or a ``(lifts, std_errors)`` pair."""
    if isinstance(data, tuple) and len(data) == 2 and not isinstance(data[0], ExperimentRecord):
        x, s = (np.asarray(a, dtype=float) for a in data)
    else:
        data = list(data)
        x = np.array([r.lift_estimate for r in data], dtype=float)
        s = np.array([r.std_error for r in data], dtype=float)
    if x.shape != s.shape or x.ndim != 1:
        raise DomainError("lifts and standard errors must be 1-d arrays of equal length")
    if x.size == 0:
        raise DomainError("data is empty")
    if not np.all(np.isfinite(x)):
        raise DomainError("lift estimates must be finite")
    if not np.all((s > 0) & np.isfinite(s)):
        raise DomainError("standard errors must be positive and finite")
    return x, s


def marginal_logpdf(x, s, nu, mu, tau, rtol=1e-8):
    """Per-record log of ``int N(x; delta, s^2) t_nu(delta; mu, tau) d delta``.

    The integral runs over ``u = delta - mu`` so that a very narrow prior
    (tiny ``tau``) keeps full relative resolution near its peak.
    """
    centred = PriorSpec.student_t(nu, 0.0, tau)
    c = x - mu
    lo = c - GAUSS_WINDOW * s
    hi = c + GAUSS_WINDOW * s
    edges = panel_edges(lo, hi, gaussian_marks(c, s, lo, hi), prior_rings(0.0, tau, lo, hi, heavy=True))

    def f(u, cc, ss):
        z = (cc - u) / ss
        return np.exp(centred.logpdf(u) - 0.5 * z * z - np.log(ss) - _LOG_SQRT_2PI)

    dens, _ = integrate(f, edges, c, s, atol=0.0, rtol=rtol)
    with np.errstate(divide="ignore"):
        return np.log(dens)


def marginal_loglik(nu, mu, tau, data):
    """Log marginal likelihood of the data with the latent lifts integrated out."""
    if not (np.isfinite(nu) and nu > 1):
        raise DomainError(f"nu must exceed 1, got {nu!r}")
    if not (np.isfinite(tau) and tau > 0):
        raise DomainError(f"tau must be positive, got {tau!r}")
    x, s = as_arrays(data)
    return math.fsum(marginal_logpdf(x, s, nu, mu, tau))


# ---------------------------------------------------------------------------
# sampler


def _initial_state(x, s, hyper):
    mu0 = float(np.median(x))
    mad = 1.4826 * float(np.median(np.abs(x - mu0)))
    excess = mad**2 - float(np.median(s)) ** 2
    tau0 = math.sqrt(excess) if excess > 0 else max(0.1 * mad, 1e-3)
    return mu0, tau0, 0.5 * (hyper.nu_low + hyper.nu_high)


def fit_prior(data, hyper=None, cfg=None):
    """Random-walk Metropolis fit of ``(nu, mu, tau)``; posterior means give the plug-in prior.

    The chain runs on ``(mu, log tau, logit((nu - a) / (b - a)))`` with the
    Jacobian of that map in the target. Proposal scales adapt during burn-in
    (every ``adapt_window`` iterations, toward 35% acceptance, then to the
    burn-in covariance diagonal) and are frozen for the kept draws.
    """
    hyper = hyper or HyperPriors()
    cfg = cfg or McmcConfig()
    x, s = as_arrays(data)
    if x.size < 10 and hyper.fixed_nu is None and hyper.fixed_tau is None:
        raise DomainError("fit_prior needs at least 10 records")
    rng = np.random.default_rng(cfg.seed)
    a, b = hyper.nu_low, hyper.nu_high
    free = np.array([True, hyper.fixed_tau is None, hyper.fixed_nu is None])

    def unpack(theta):
        mu = theta[0]
        tau = hyper.fixed_tau if hyper.fixed_tau is not None else math.exp(theta[1])
        nu = hyper.fixed_nu if hyper.fixed_nu is not None else a + (b - a) * special.expit(theta[2])
        return mu, tau, nu

    def log_target(theta):
        mu, tau, nu = unpack(theta)
        lp = hyper.log_density(mu, nu, tau)
        if free[1]:
            lp += theta[1]
        if free[2]:
            lp += math.log(b - a) - math.log1p(math.exp(-theta[2])) - math.log1p(math.exp(theta[2]))
        if not math.isfinite(lp):
            return -math.inf
        return lp + math.fsum(marginal_logpdf(x, s, nu, mu, tau))

    mu0, tau0, nu0 = _initial_state(x, s, hyper)
    theta = np.array([mu0, math.log(tau0), special.logit((nu0 - a) / (b - a))])
    current = log_target(theta)
    scales = np.asarray(cfg.proposal_scales, dtype=float) * free
    log_mult = 0.0

    chain = np.empty((cfg.iterations, 3))
    accepted = np.zeros(cfg.iterations, dtype=bool)
    for it in range(cfg.iterations):
        proposal = theta + math.exp(log_mult) * scales * rng.standard_normal(3)
        cand = log_target(proposal)
        if math.log(rng.uniform()) < cand - current:
            theta, current = proposal, cand
            accepted[it] = True
        chain[it] = theta
        done = it + 1
        if cfg.adapt_window and done < cfg.burn_in and done % cfg.adapt_window == 0:
            rate = accepted[done - cfg.adapt_window : done].mean()
            log_mult += 2.0 * (rate - 0.35)
            if done >= cfg.burn_in // 2 and done % (4 * cfg.adapt_window) == 0:
                sd = chain[done // 2 : done].std(axis=0)
                if np.all(sd[free] > 0):
                    scales = np.where(free, 2.38 / math.sqrt(free.sum()) * sd, 0.0)
                    log_mult = 0.0

    kept = chain[cfg.burn_in :]
    draws = np.empty_like(kept)
    for i, th in enumerate(kept):
        mu, tau, nu = unpack(th)
        draws[i] = (nu, mu, tau)
    rate = float(accepted[cfg.burn_in :].mean())
    converged = 0.1 <= rate <= 0.6
    if not converged:
        warnings.warn(
            f"post burn-in acceptance rate {rate:.3f} is outside [0.1, 0.6]",
            ConvergenceWarning,
            stacklevel=2,
        )
    nu_s, mu_s, tau_s = (ParamSummary.from_draws(draws[:, k]) for k in range(3))
    return PosteriorSummary(
        nu=nu_s,
        mu=mu_s,
        tau=tau_s,
        acceptance_rate=rate,
        n_kept=len(kept),
        converged=converged,
        plug_in=PriorSpec.student_t(nu_s.mean, mu_s.mean, tau_s.mean),
        draws=draws,
    )


# ---------------------------------------------------------------------------
# synthetic data and diagnostics


def sample_synthetic(prior, sigma_model, n, seed=0, feature_prefix="f"):
    """Simulate ``n`` experiment records from the hierarchical model."""
    if not isinstance(prior, PriorSpec):
        raise DomainError("prior must be a PriorSpec")
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    delta = prior.rvs(rng, n)
    sigma = sigma_model.sample(rng, n)
    if np.any(~(sigma > 0)):
        raise DomainError("sigma model produced non-positive values")
    x = delta + sigma * rng.standard_normal(n)
    return [
        ExperimentRecord(float(xi), float(si), f"{feature_prefix}{i}")
        for i, (xi, si) in enumerate(zip(x, sigma))
    ]


def qq_data(data, prior, n_ref=10_000, seed=0):
    """Empirical vs fitted quantiles of the observed lifts.

    Fitted quantiles come from ``n_ref`` draws of the marginal of ``x`` under
    ``prior`` with standard errors resampled from the data. Both sides are
    read at plotting positions ``k / (m + 1)``, ``k = 1..m``, with
    ``m = min(len(data), n_ref)``. Returns an ``(m, 2)`` array.
    """
    x, s = as_arrays(data)
    if n_ref < 1:
        raise DomainError("n_ref must be positive")
    rng = np.random.default_rng(seed)
    delta = prior.rvs(rng, n_ref)
    sig = rng.choice(s, size=n_ref, replace=True)
    sim = delta + sig * rng.standard_normal(n_ref)
    m = min(x.size, n_ref)
    probs = np.arange(1, m + 1) / (m + 1)
    return np.column_stack([np.quantile(x, probs), np.quantile(sim, probs)])
