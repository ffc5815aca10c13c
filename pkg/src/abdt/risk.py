"""Bayes risk of thresholding rules and grid-searched optimal thresholds."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize, special

from .core import DomainError, PriorSpec, ThresholdRule
from .quadrature import GAUSS_WINDOW, gaussian_marks, integrate, panel_edges, prior_rings

__all__ = [
    "BetaGrid",
    "RiskCurve",
    "CurvePoint",
    "bayes_risk",
    "bayes_risk_grid",
    "bayes_risk_mc",
    "posterior_at",
    "golden_section",
    "optimal_threshold",
    "beta_opt_curve",
    "mu_sweep",
    "n_workers",
]

MC_CHUNK = 1 << 17


def n_workers(n_jobs=None):
    """Worker count: explicit ``n_jobs``, else ``ABDT_THREADS``, else 1."""
    if n_jobs is None:
        try:
            n_jobs = int(os.environ.get("ABDT_THREADS", "1"))
        except ValueError:
            n_jobs = 1
    cap = os.environ.get("ABDT_THREADS")
    if cap is not None and cap.isdigit() and int(cap) > 0:
        n_jobs = min(n_jobs, int(cap))
    return max(1, int(n_jobs))


@dataclass(frozen=True)
class BetaGrid:
    min: float = -1.0
    max: float = 1.0
    step: float = 0.005

    def __post_init__(self):
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise DomainError("grid bounds must be finite")
        if not self.min < self.max:
            raise DomainError(f"grid needs min < max, got {self.min} >= {self.max}")
        if not self.step > 0:
            raise DomainError("grid step must be positive")
        if self.size < 3:
            raise DomainError("grid must contain at least 3 points")

    @property
    def size(self):
        return int(math.floor((self.max - self.min) / self.step + 1e-9)) + 1

    def points(self):
        return np.round(self.min + self.step * np.arange(self.size), 12)

    @classmethod
    def parse(cls, text):
        """Parse ``"min:max:step"``."""
        try:
            lo, hi, step = (float(t) for t in text.split(":"))
        except ValueError as exc:
            raise DomainError(f"grid must look like min:max:step, got {text!r}") from exc
        return cls(lo, hi, step)


@dataclass
class RiskCurve:
    """Bayes risk sampled on a grid, with the grid argmin and a refined optimum."""

    betas: np.ndarray
    risks: np.ndarray
    argmin_beta: float
    argmin_risk: float
    beta_opt_refined: Optional[float] = None
    risk_refined: Optional[float] = None

    @property
    def points(self):
        return list(zip(self.betas.tolist(), self.risks.tolist()))

    def to_dict(self):
        return {
            "argmin_beta": self.argmin_beta,
            "argmin_risk": self.argmin_risk,
            "beta_opt_refined": self.beta_opt_refined,
            "risk_refined": self.risk_refined,
            "points": [{"beta": b, "risk": r} for b, r in self.points],
        }


class CurvePoint(NamedTuple):
    sigma: float
    beta_opt: float
    risk_at_opt: float
    beta_opt_refined: float


def _validate(prior, sigma):
    if not isinstance(prior, PriorSpec):
        raise DomainError("prior must be a PriorSpec")
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)) or np.any(~np.isfinite(sigma)):
        raise DomainError("sigma must be positive and finite")
    return sigma


def bayes_risk_grid(prior, sigma, betas, atol=1e-11, rtol=1e-10):
    """Bayes risk for an array of cutoffs (``sigma`` broadcasts against it).

    The integral of ``-delta Phi((delta - beta)/sigma) pi(delta)`` is split at
    ``beta + 10 sigma``: below it, panel quadrature over
    ``[beta - 10 sigma, beta + 10 sigma]``; above it ``Phi`` is 1 to within
    1e-23 and the remaining ``-int delta pi`` has a closed form. Below the
    window the integrand is bounded by ``Phi(-10) E|delta|``.
    """
    sigma = _validate(prior, sigma)
    betas = np.asarray(betas, dtype=float)
    betas, sigma = np.broadcast_arrays(betas, sigma)
    if not np.all(np.isfinite(betas)):
        out = np.zeros(betas.shape)
        fin = np.isfinite(betas)
        neg = betas == -np.inf
        if np.any(fin):
            out[fin] = bayes_risk_grid(prior, sigma[fin], betas[fin], atol, rtol)
        # beta = -inf ships everything: risk = -E[delta]
        out[neg] = -prior.mu
        return out
    lo = betas - GAUSS_WINDOW * sigma
    hi = betas + GAUSS_WINDOW * sigma
    edges = panel_edges(
        lo,
        hi,
        gaussian_marks(betas, sigma, lo, hi),
        prior_rings(prior.mu, prior.tau, lo, hi, heavy=not prior.is_gaussian),
    )

    def f(d, b, s):
        return -d * special.ndtr((d - b) / s) * prior.pdf(d)

    core, _ = integrate(f, edges, betas, sigma, atol=atol, rtol=rtol)
    return core - prior.upper_partial_mean(hi)


def bayes_risk(prior, sigma, beta):
    """Bayes risk of ``1{x > beta}`` when ``x ~ N(delta, sigma^2)``, ``delta ~ prior``.

    Absolute accuracy is about 1e-11 for either prior family.
    """
    return float(bayes_risk_grid(prior, sigma, beta))


def bayes_risk_mc(prior, sigma, beta, n_draws=1_000_000, seed=0):
    """Monte-Carlo estimate of the Bayes risk and its standard error.

    Draws are made in chunks of ``2**17``; chunk ``k`` uses the ``k``-th child of
    ``np.random.SeedSequence(seed)``, so results do not depend on how chunks
    are scheduled.
    """
    _validate(prior, sigma)
    if n_draws < 1000:
        raise DomainError("n_draws must be at least 1000")
    n_chunks = -(-n_draws // MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    total = 0.0
    total_sq = 0.0
    for k, child in enumerate(children):
        size = min(MC_CHUNK, n_draws - k * MC_CHUNK)
        rng = np.random.default_rng(child)
        delta = prior.rvs(rng, size)
        x = delta + sigma * rng.standard_normal(size)
        losses = np.where(x > beta, -delta, 0.0)
        total += math.fsum(losses)
        total_sq += math.fsum(losses * losses)
    mean = total / n_draws
    var = max(total_sq / n_draws - mean * mean, 0.0) * n_draws / (n_draws - 1)
    return mean, math.sqrt(var / n_draws)


def golden_section(f, a, b, tol=1e-7, max_iter=200):
    """Minimise a unimodal scalar function on ``[a, b]``; return ``(x, f(x))``."""
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    fx = f(x)
    for cand, fcand in ((c, fc), (d, fd)):
        if fcand < fx:
            x, fx = cand, fcand
    return x, fx


def curve_from_risks(betas, risks, risk_fn=None, step=None):
    """Build a :class:`RiskCurve`; refine with golden section if ``risk_fn`` given."""
    i = int(np.argmin(risks))  # first index on ties -> smallest beta
    curve = RiskCurve(betas, risks, float(betas[i]), float(risks[i]))
    if risk_fn is not None:
        lo = betas[max(i - 1, 0)]
        hi = betas[min(i + 1, len(betas) - 1)]
        x, fx = golden_section(risk_fn, lo, hi, tol=1e-6 * max(step or 1.0, 1e-12))
        if fx > curve.argmin_risk:
            x, fx = curve.argmin_beta, curve.argmin_risk
        curve.beta_opt_refined = float(x)
        curve.risk_refined = float(fx)
    return curve


def posterior_at(prior, sigma, x):
    """``(log p(x), E[delta | x])`` for ``x ~ N(delta, sigma^2)``, ``delta ~ prior``.

    The posterior ``pi(delta) N(x; delta, sigma^2)`` is integrated after
    subtracting its log-maximum over the panel edges, so both outputs keep
    full relative accuracy where ``p(x)`` itself would underflow. Both factors
    decay away from ``[min(x, mu), max(x, mu)]``; the window extends that
    interval by ``10 sigma`` plus a prior-scale margin.
    """
    sigma = _validate(prior, sigma)
    x, sigma = np.broadcast_arrays(np.asarray(x, dtype=float), sigma)
    mu, tau = prior.mu, prior.tau
    heavy = not prior.is_gaussian
    margin = (1e3 if heavy else 12.0) * tau
    lo = np.minimum(x, mu) - GAUSS_WINDOW * sigma - margin
    hi = np.maximum(x, mu) + GAUSS_WINDOW * sigma + margin
    # mode and spread of the Gaussian approximation to the posterior
    shrink = tau**2 / (tau**2 + sigma**2)
    mode = mu + shrink * (x - mu)
    post_sd = np.sqrt(shrink) * sigma
    edges = panel_edges(
        lo,
        hi,
        gaussian_marks(x, sigma, lo, hi),
        gaussian_marks(mode, post_sd, lo, hi),
        prior_rings(mu, tau, lo, hi, heavy=heavy),
    )

    def log_kernel(d, xx, ss):
        z = (xx - d) / ss
        return prior.logpdf(d) - 0.5 * z * z

    shift = np.max(log_kernel(edges, x[..., None], sigma[..., None]), axis=-1)
    z0, _ = integrate(
        lambda d, xx, ss, c: np.exp(log_kernel(d, xx, ss) - c), edges, x, sigma, shift, atol=0.0, rtol=1e-12
    )
    scale = np.abs(x) + abs(mu) + sigma + tau
    z1, _ = integrate(
        lambda d, xx, ss, c: d * np.exp(log_kernel(d, xx, ss) - c),
        edges,
        x,
        sigma,
        shift,
        atol=1e-13 * z0 * scale,
        rtol=1e-12,
    )
    log_px = np.log(z0) + shift - np.log(sigma) - 0.5 * math.log(2 * math.pi)
    return log_px, z1 / z0


def _posterior_mean(prior, sigma, x):
    return float(posterior_at(prior, sigma, x)[1])


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _grid_argmin(prior, sigma, betas):
    """Index of the smallest Bayes risk on a sorted grid.

    ``dR/dbeta = p(beta) E[delta | x = beta]`` and the posterior mean is
    nondecreasing in ``x`` (its derivative is ``Var(delta | x) / sigma^2``),
    so the risk is unimodal: binary-search the sign change of the posterior
    mean, then compare the two neighbours through
    ``R(b1) - R(b0) = int_b0^b1 p m``, scaled by ``p(b0)``. This stays exact
    where risk values differ by less than their rounding error.
    """
    n = betas.size
    if _posterior_mean(prior, sigma, betas[0]) >= 0:
        return 0
    if _posterior_mean(prior, sigma, betas[-1]) < 0:
        return n - 1
    lo, hi = 0, n - 1  # m(betas[lo]) < 0 <= m(betas[hi])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _posterior_mean(prior, sigma, betas[mid]) < 0:
            lo = mid
        else:
            hi = mid
    b0, b1 = betas[lo], betas[hi]
    nodes = np.concatenate([[b0], 0.5 * (b0 + b1) + 0.5 * (b1 - b0) * _GL_X])
    log_p, m = posterior_at(prior, sigma, nodes)
    diff = float(np.sum(_GL_W * np.exp(log_p[1:] - log_p[0]) * m[1:]))
    return hi if diff < 0 else lo  # exact tie keeps the smaller beta


def optimal_threshold(prior, sigma, grid=None, refine=True):
    """Grid-search the Bayes-optimal cutoff; return ``(ThresholdRule, RiskCurve)``.

    The rule carries the grid argmin (located through the sign of the
    posterior mean, see :func:`_grid_argmin`). With ``refine`` the curve also
    holds the continuous optimum within one grid step of the argmin: the root
    of ``E[delta | x = beta] = 0``, the first-order condition of the risk.
    """
    grid = grid or BetaGrid()
    _validate(prior, sigma)
    sigma = float(sigma)
    betas = grid.points()
    risks = bayes_risk_grid(prior, sigma, betas)
    i = _grid_argmin(prior, sigma, betas)
    curve = RiskCurve(betas, risks, float(betas[i]), float(risks[i]))
    if refine:
        lo = betas[max(i - 1, 0)]
        hi = betas[min(i + 1, betas.size - 1)]
        m_lo, m_hi = _posterior_mean(prior, sigma, lo), _posterior_mean(prior, sigma, hi)
        if m_lo < 0 <= m_hi:
            x = optimize.brentq(lambda b: _posterior_mean(prior, sigma, b), lo, hi, xtol=1e-12, rtol=1e-14)
        else:  # optimum at a grid end
            x = curve.argmin_beta
        curve.beta_opt_refined = float(x)
        curve.risk_refined = bayes_risk(prior, sigma, x)
    return ThresholdRule(curve.argmin_beta, sigma), curve


def _map(fn, items, n_jobs):
    workers = n_workers(n_jobs)
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def beta_opt_curve(
    prior: PriorSpec,
    sigma_values: Sequence[float],
    grid: Optional[BetaGrid] = None,
    n_jobs: Optional[int] = None,
) -> List[CurvePoint]:
    """Optimal cutoff and its risk for each noise level, ordered by sigma."""
    sigmas = sorted(float(s) for s in sigma_values)
    if not sigmas:
        raise DomainError("sigma_values is empty")
    _validate(prior, np.asarray(sigmas))

    def solve(s):
        rule, curve = optimal_threshold(prior, s, grid)
        return CurvePoint(s, rule.beta, curve.argmin_risk, curve.beta_opt_refined)

    return _map(solve, sigmas, n_jobs)


def mu_sweep(nu, tau, sigma, mu_values, grid=None, n_jobs=None):
    """Optimal cutoff as the Student-t prior location varies.

    Returns ``(mu, beta_opt, beta_opt_refined)`` tuples in input order.
    """

    def solve(mu):
        rule, curve = optimal_threshold(PriorSpec.student_t(nu, mu, tau), sigma, grid)
        return float(mu), rule.beta, curve.beta_opt_refined

    return _map(solve, list(mu_values), n_jobs)
