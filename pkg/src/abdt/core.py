"""Loss, frequentist risk and closed-form thresholds for ship/no-ship rules.

Lifts are in percent units throughout. A thresholding rule ships when the
observed lift ``x`` is strictly greater than the cutoff ``beta``; ties do not
ship.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "ExperimentRecord",
    "PriorSpec",
    "ThresholdRule",
    "norm_cdf",
    "norm_sf",
    "norm_ppf",
    "loss",
    "ship",
    "frequentist_risk",
    "p_of_beta",
    "beta_of_p",
    "p_value",
    "optimal_beta_gaussian",
    "optimal_beta_weighted_gaussian",
]

GAUSSIAN = "gaussian"
STUDENT_T = "student_t"


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


# Phi and its inverse come from the Cephes routines in scipy.special
# (ndtr via erf/erfc, absolute error well under 1e-15 on the real line).
def norm_cdf(z):
    return special.ndtr(z)


def norm_sf(z):
    return special.ndtr(-np.asarray(z, dtype=float))


def norm_ppf(p):
    return special.ndtri(p)


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class ExperimentRecord:
    """One observed lift estimate and its standard error."""

    lift_estimate: float
    std_error: float
    feature_id: str = "anon"
    replicate_index: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.lift_estimate):
            raise DomainError(f"lift_estimate must be finite, got {self.lift_estimate!r}")
        _check_positive("std_error", self.std_error)
        if self.replicate_index is not None and self.replicate_index < 0:
            raise DomainError("replicate_index must be non-negative")


@dataclass(frozen=True)
class PriorSpec:
    """Prior over true lifts: Gaussian(mu, tau) or location-scale Student-t.

    Use :meth:`gaussian` or :meth:`student_t` to build one. ``tau`` is the
    scale (standard deviation for the Gaussian).
    """

    kind: str
    mu: float
    tau: float
    nu: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, STUDENT_T):
            raise DomainError(f"unknown prior kind {self.kind!r}")
        if not math.isfinite(self.mu):
            raise DomainError("mu must be finite")
        _check_positive("tau", self.tau)
        if self.kind == STUDENT_T:
            if self.nu is None or not math.isfinite(self.nu) or self.nu <= 1:
                raise DomainError(
                    f"Student-t prior needs nu > 1 for a finite mean, got {self.nu!r}"
                )
        elif self.nu is not None:
            raise DomainError("Gaussian prior takes no degrees of freedom")

    @classmethod
    def gaussian(cls, mu, tau):
        return cls(GAUSSIAN, float(mu), float(tau))

    @classmethod
    def student_t(cls, nu, mu, tau):
        return cls(STUDENT_T, float(mu), float(tau), float(nu))

    @property
    def is_gaussian(self):
        return self.kind == GAUSSIAN

    def logpdf(self, delta):
        z = (np.asarray(delta, dtype=float) - self.mu) / self.tau
        if self.is_gaussian:
            return -0.5 * z * z - 0.5 * math.log(2 * math.pi) - math.log(self.tau)
        nu = self.nu
        const = (
            special.gammaln(0.5 * (nu + 1))
            - special.gammaln(0.5 * nu)
            - 0.5 * math.log(math.pi * nu)
            - math.log(self.tau)
        )
        return const - 0.5 * (nu + 1) * np.log1p(z * z / nu)

    def pdf(self, delta):
        return np.exp(self.logpdf(delta))

    def sf(self, delta):
        z = (np.asarray(delta, dtype=float) - self.mu) / self.tau
        if self.is_gaussian:
            return special.ndtr(-z)
        return special.stdtr(self.nu, -z)

    def upper_partial_mean(self, b):
        """Return the integral of ``delta * pdf(delta)`` over ``(b, inf)``."""
        z = (np.asarray(b, dtype=float) - self.mu) / self.tau
        if self.is_gaussian:
            dens = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
            return self.mu * special.ndtr(-z) + self.tau * dens
        nu = self.nu
        # int_z^inf u t_nu(u) du = (nu + z^2) / (nu - 1) * t_nu(z)
        std = np.exp(self.logpdf(b) + math.log(self.tau))
        return self.mu * special.stdtr(nu, -z) + self.tau * (nu + z * z) / (nu - 1) * std

    def rvs(self, rng, size):
        """Draw lifts. Student-t uses normal / sqrt(chi2 / nu)."""
        eps = rng.standard_normal(size)
        if self.is_gaussian:
            return self.mu + self.tau * eps
        chi2 = rng.chisquare(self.nu, size)
        return self.mu + self.tau * eps / np.sqrt(chi2 / self.nu)

    def to_dict(self):
        d = {"kind": self.kind, "mu": self.mu, "tau": self.tau}
        if self.nu is not None:
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            kind = d.get("kind", STUDENT_T if "nu" in d else GAUSSIAN)
            kind = {"t": STUDENT_T, "studentt": STUDENT_T, "normal": GAUSSIAN}.get(
                kind.lower(), kind.lower()
            )
            nu = d.get("nu")
            return cls(
                kind,
                float(d["mu"]),
                float(d["tau"]),
                None if nu is None else float(nu),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DomainError(f"malformed prior specification: {d!r}") from exc


@dataclass(frozen=True)
class ThresholdRule:
    """Raw-lift cutoff together with its one-tailed p-value cutoff."""

    beta: float
    sigma: float
    p_cutoff: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "p_cutoff", float(p_of_beta(self.beta, self.sigma)))

    def decide(self, x):
        return ship(x, self.beta)

    def to_dict(self):
        return {"beta": self.beta, "sigma": self.sigma, "p_cutoff": self.p_cutoff}


def loss(delta_true, ship):
    """Loss ``-a * delta`` of action ``a`` (1 ship, 0 keep)."""
    return -float(delta_true) if ship else 0.0


def ship(x, beta):
    """Thresholding decision ``x > beta``; ties keep the current platform."""
    return np.asarray(x) > beta


def frequentist_risk(delta_true, beta, sigma):
    """Expected loss of ``1{x > beta}`` given the true lift, Gaussian noise."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise DomainError("sigma must be positive")
    delta_true = np.asarray(delta_true, dtype=float)
    out = -delta_true * special.ndtr((delta_true - beta) / sigma)
    return out[()] if out.ndim == 0 else out


def p_value(x, sigma):
    """One-tailed p-value ``1 - Phi(x / sigma)``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise DomainError("sigma must be positive")
    out = special.ndtr(-np.asarray(x, dtype=float) / sigma)
    return out[()] if np.ndim(out) == 0 else out


def p_of_beta(beta, sigma):
    return p_value(beta, sigma)


def beta_of_p(p, sigma):
    sigma = np.asarray(sigma, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(~(sigma > 0)):
        raise DomainError("sigma must be positive")
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("p must lie strictly between 0 and 1")
    out = -special.ndtri(p) * sigma
    return out[()] if np.ndim(out) == 0 else out


def optimal_beta_gaussian(mu, tau, sigma):
    """Bayes-optimal cutoff ``-mu sigma^2 / tau^2`` for Gaussian noise and prior."""
    _check_positive("tau", tau)
    _check_positive("sigma", sigma)
    return -mu * sigma**2 / tau**2


def optimal_beta_weighted_gaussian(mu, tau):
    """Optimal cutoff ``-mu / tau^2`` for the inverse-variance weighted sum.

    It does not depend on the observation variances.
    """
    _check_positive("tau", tau)
    return -mu / tau**2
