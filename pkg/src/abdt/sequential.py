"""Decisions for features that are tested more than once.

Re-tests are assumed not to change the true lift, so every observation of a
feature measures the same ``delta``. Replicates are summarised by the
inverse-variance weighted sum ``y = sum x_j / sigma_j^2`` with
``S = (sum 1 / sigma_j^2)^-1``, so that ``y | delta ~ N(delta / S, 1 / S)``.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import special

from .core import DomainError, optimal_beta_gaussian
from .prior_fit import LogNormalSigma
from .quadrature import GAUSS_WINDOW, gaussian_marks, integrate, panel_edges, prior_rings
from .risk import BetaGrid, bayes_risk, bayes_risk_grid, curve_from_risks

__all__ = [
    "FeatureHistory",
    "WeightedStat",
    "PosteriorLift",
    "GeometricCount",
    "FixedCount",
    "ReplicateSpec",
    "weighted_stat",
    "posterior_lift",
    "nth_experiment_threshold",
    "equivalence_check",
    "posterior_optimal_threshold",
    "posterior_summary",
    "optimal_threshold_weighted",
    "bonferroni_threshold",
]

_TIE_EPS = 8 * sys.float_info.epsilon


@dataclass(frozen=True)
class FeatureHistory:
    """Observations ``(x_j, sigma_j)`` of one feature in test order."""

    feature_id: str = "anon"
    observations: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        obs = tuple((float(x), float(s)) for x, s in self.observations)
        for x, s in obs:
            if not math.isfinite(x):
                raise DomainError("observed lifts must be finite")
            if not (s > 0 and math.isfinite(s)):
                raise DomainError(f"standard errors must be positive, got {s!r}")
        object.__setattr__(self, "observations", obs)

    def __len__(self):
        return len(self.observations)

    def append(self, x, sigma):
        return FeatureHistory(self.feature_id, self.observations + ((x, sigma),))

    @property
    def lifts(self):
        return np.array([o[0] for o in self.observations], dtype=float)

    @property
    def sigmas(self):
        return np.array([o[1] for o in self.observations], dtype=float)

    @classmethod
    def from_records(cls, records):
        """Build from :class:`~abdt.core.ExperimentRecord` of a single feature,
        ordered by ``replicate_index``."""
        records = list(records)
        ids = {r.feature_id for r in records}
        if len(ids) > 1:
            raise DomainError(f"history mixes features: {sorted(ids)}")
        records.sort(key=lambda r: r.replicate_index or 0)
        fid = ids.pop() if ids else "anon"
        return cls(fid, tuple((r.lift_estimate, r.std_error) for r in records))


@dataclass(frozen=True)
class WeightedStat:
    y: float
    s: float


@dataclass(frozen=True)
class PosteriorLift:
    """Gaussian posterior of the lift in natural parameters."""

    precision_sum: float
    weighted_sum: float
    mean: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        if not self.precision_sum > 0:
            raise DomainError("precision must be positive")
        object.__setattr__(self, "mean", self.weighted_sum / self.precision_sum)
        object.__setattr__(self, "variance", 1.0 / self.precision_sum)

    @classmethod
    def prior(cls, mu, tau):
        if not tau > 0:
            raise DomainError("tau must be positive")
        return cls(1.0 / tau**2, mu / tau**2)

    def update(self, x, sigma):
        if not sigma > 0:
            raise DomainError("sigma must be positive")
        w = 1.0 / sigma**2
        return PosteriorLift(self.precision_sum + w, self.weighted_sum + x * w)

    def to_dict(self):
        return {
            "precision_sum": self.precision_sum,
            "weighted_sum": self.weighted_sum,
            "mean": self.mean,
            "variance": self.variance,
        }


def weighted_stat(history):
    if len(history) == 0:
        raise DomainError("history is empty")
    w = 1.0 / history.sigmas**2
    return WeightedStat(math.fsum(history.lifts * w), 1.0 / math.fsum(w))


def posterior_lift(mu, tau, history):
    """Conjugate update of ``N(mu, tau^2)`` with every observation in ``history``."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    if len(history) == 0:
        return PosteriorLift.prior(mu, tau)
    w = 1.0 / history.sigmas**2
    return PosteriorLift(
        math.fsum(np.append(w, 1.0 / tau**2)),
        math.fsum(np.append(history.lifts * w, mu / tau**2)),
    )


def nth_experiment_threshold(mu, tau, history, sigma_n):
    """Optimal cutoff for the next observation given the earlier ones.

    ``-sigma_n^2 (mu / tau^2 + sum_j x_j / sigma_j^2)``; with no history this
    is the single-experiment Gaussian cutoff.
    """
    if len(history) == 0:
        return optimal_beta_gaussian(mu, tau, sigma_n)
    if not (tau > 0 and sigma_n > 0):
        raise DomainError("tau and sigma_n must be positive")
    return -(sigma_n**2) * (mu / tau**2 + weighted_stat(history).y)


def _above(value, threshold, scale):
    return value - threshold > _TIE_EPS * scale


def equivalence_check(mu, tau, history, candidate_xn, sigma_n):
    """Ship decisions for ``x_n`` from the two equivalent rules.

    Returns ``(via_y, via_x)``: thresholding the weighted sum of all ``n``
    observations at ``-mu / tau^2``, and thresholding ``x_n`` at
    :func:`nth_experiment_threshold`. Both treat differences within a few
    ulps of the operand scale as ties, which do not ship.
    """
    if not (tau > 0 and sigma_n > 0):
        raise DomainError("tau and sigma_n must be positive")
    full = history.append(candidate_xn, sigma_n)
    w = 1.0 / full.sigmas**2
    terms = full.lifts * w
    scale = math.fsum(np.abs(terms)) + abs(mu) / tau**2
    via_y = _above(math.fsum(terms), -mu / tau**2, scale)
    thr = nth_experiment_threshold(mu, tau, history, sigma_n)
    via_x = _above(candidate_xn, thr, sigma_n**2 * scale)
    return bool(via_y), bool(via_x)


def posterior_optimal_threshold(prior, history, sigma_n, grid=None, refine=True):
    """Cutoff for the next observation under the posterior given ``history``.

    Gaussian priors use the closed form. For a Student-t prior the posterior
    ``pi(delta) N(delta; ybar, S)`` is handled by panel quadrature and the
    cutoff is grid-searched; returns ``(beta, RiskCurve or None)``.
    """
    if not sigma_n > 0:
        raise DomainError("sigma_n must be positive")
    if prior.is_gaussian:
        return nth_experiment_threshold(prior.mu, prior.tau, history, sigma_n), None
    grid = grid or BetaGrid(-5.0, 5.0, 0.005)
    if len(history) == 0:
        betas = grid.points()
        fn = (lambda b: bayes_risk(prior, sigma_n, b)) if refine else None
        curve = curve_from_risks(betas, bayes_risk_grid(prior, sigma_n, betas), fn, grid.step)
        return curve.argmin_beta, curve
    lo, hi, base, post, norm = _posterior_parts(prior, history)

    def risks(betas):
        betas = np.atleast_1d(np.asarray(betas, dtype=float))
        edges = panel_edges(
            np.full(betas.shape, lo), hi, *base, gaussian_marks(betas, sigma_n, lo, hi)
        )
        val, _ = integrate(
            lambda d, b: -d * special.ndtr((d - b) / sigma_n) * post(d),
            edges,
            betas,
            atol=1e-12 * norm,
            rtol=1e-10,
        )
        return val / norm

    betas = grid.points()
    fn = (lambda b: float(risks(b)[0])) if refine else None
    curve = curve_from_risks(betas, risks(betas), fn, grid.step)
    return curve.argmin_beta, curve


def _posterior_parts(prior, history):
    """Window, breakpoints and unnormalised density of the lift posterior."""
    stat = weighted_stat(history)
    center, spread = stat.y * stat.s, math.sqrt(stat.s)
    lo, hi = center - GAUSS_WINDOW * spread, center + GAUSS_WINDOW * spread
    base = [gaussian_marks(center, spread, lo, hi), prior_rings(prior.mu, prior.tau, lo, hi, True)]

    def post(d):
        z = (d - center) / spread
        return np.exp(prior.logpdf(d) - 0.5 * z * z)

    norm, _ = integrate(post, panel_edges(lo, hi, *base), rtol=1e-12, atol=0.0)
    return lo, hi, base, post, float(norm)


def posterior_summary(prior, history):
    """Posterior of the lift as a :class:`PosteriorLift` (moment-matched for t priors).

    Returns ``None`` when the posterior variance is infinite (Student-t prior
    with ``nu <= 2`` and no observations).
    """
    if prior.is_gaussian:
        return posterior_lift(prior.mu, prior.tau, history)
    if len(history) == 0:
        if prior.nu <= 2:
            return None
        var = prior.tau**2 * prior.nu / (prior.nu - 2)
        return PosteriorLift(1.0 / var, prior.mu / var)
    lo, hi, base, post, norm = _posterior_parts(prior, history)
    edges = panel_edges(lo, hi, *base)
    m1, _ = integrate(lambda d: d * post(d), edges, rtol=1e-12, atol=1e-13 * norm)
    mean = float(m1) / norm
    m2, _ = integrate(lambda d: (d - mean) ** 2 * post(d), edges, rtol=1e-12, atol=0.0)
    var = float(m2) / norm
    return PosteriorLift(1.0 / var, mean / var)


# ---------------------------------------------------------------------------
# replicate structure


@dataclass(frozen=True)
class FixedCount:
    n: int = 1

    def sample(self, rng, size):
        return np.full(size, int(self.n))


@dataclass(frozen=True)
class GeometricCount:
    """Replicate counts ``n >= 1`` with ``P(n > k) = q^k``."""

    q: float

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise DomainError("q must lie in [0, 1)")

    @classmethod
    def calibrated(cls, quantiles=((6, 0.95), (9, 0.99))):
        """Least-squares fit of ``log q`` to ``k log q = log(1 - p)`` for each ``(k, p)``."""
        ks = np.array([k for k, _ in quantiles], dtype=float)
        logs = np.log1p(-np.array([p for _, p in quantiles], dtype=float))
        return cls(float(np.exp(ks @ logs / (ks @ ks))))

    def sample(self, rng, size):
        if self.q == 0:
            return np.ones(size, dtype=int)
        return rng.geometric(1.0 - self.q, size)


@dataclass(frozen=True)
class ReplicateSpec:
    """Joint law of the replicate count and per-replicate standard errors."""

    counts: object = field(default_factory=GeometricCount.calibrated)
    sigma_model: object = field(default_factory=LogNormalSigma)

    def sample_s(self, rng, size):
        """Draw ``S = (sum_j sigma_j^-2)^-1`` for ``size`` features."""
        n = self.counts.sample(rng, size)
        sig = self.sigma_model.sample(rng, int(n.sum()))
        starts = np.concatenate([[0], np.cumsum(n)[:-1]])
        return 1.0 / np.add.reduceat(sig**-2.0, starts)


def optimal_threshold_weighted(prior, replicate_spec=None, grid=None, n_mc=200, seed=0, refine=True):
    """Grid-optimal cutoff for ``1{y > beta}`` on the weighted sum.

    Since ``P(y > beta | delta) = Phi((delta - beta S) / sqrt(S))``, the risk
    for one replicate set is the single-experiment risk at cutoff ``beta S``
    and noise ``sqrt(S)``. ``n_mc`` replicate sets are drawn once (common to
    every grid point) and the risk is averaged over them; the integral over
    the lift is done by quadrature. Returns ``(beta_y, RiskCurve)``.
    """
    replicate_spec = replicate_spec or ReplicateSpec()
    grid = grid or BetaGrid(-1.0, 1.0, 0.005)
    if n_mc < 1:
        raise DomainError("n_mc must be positive")
    s = replicate_spec.sample_s(np.random.default_rng(seed), n_mc)
    root = np.sqrt(s)

    def risks(betas):
        betas = np.atleast_1d(np.asarray(betas, dtype=float))
        out = np.empty(betas.size)
        step = max(1, 4096 // n_mc)
        for i in range(0, betas.size, step):
            b = betas[i : i + step, None]
            out[i : i + step] = bayes_risk_grid(prior, root, b * s).mean(axis=1)
        return out

    betas = grid.points()
    fn = (lambda b: float(risks(b)[0])) if refine else None
    curve = curve_from_risks(betas, risks(betas), fn, grid.step)
    return curve.argmin_beta, curve


def bonferroni_threshold(p_single, n):
    """Per-test p-value cutoff ``p_single / n``."""
    if not 0 < p_single < 1:
        raise DomainError("p_single must lie in (0, 1)")
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    return p_single / n
