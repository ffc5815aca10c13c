"""scikit-learn style wrappers around prior fitting and threshold rules.

Feature matrices have two columns: observed lift and its standard error.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import DomainError, PriorSpec
from .prior_fit import ConvergenceWarning, HyperPriors, McmcConfig, fit_prior, marginal_logpdf
from .risk import BetaGrid, optimal_threshold

__all__ = ["StudentTPriorEstimator", "BayesThresholdRule"]


def _lift_matrix(X, min_samples=1):
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    if X.shape[1] != 2:
        raise ValueError(f"expected 2 columns (lift, stderr), got {X.shape[1]}")
    if np.any(X[:, 1] <= 0):
        raise DomainError("standard errors must be positive")
    return X


class StudentTPriorEstimator(BaseEstimator):
    """Empirical-Bayes fit of a three-parameter Student-t prior on true lifts.

    ``fit`` runs the Metropolis sampler; ``prior_`` is the plug-in prior built
    from posterior means. ``score`` is the mean log marginal density of the
    observed lifts under ``prior_``.
    """

    def __init__(
        self,
        iterations=5000,
        burn_in=2500,
        random_state=0,
        nu_bounds=(1.1, 4.0),
        mu_sd=10.0,
        tau_scale=1.0,
    ):
        self.iterations = iterations
        self.burn_in = burn_in
        self.random_state = random_state
        self.nu_bounds = nu_bounds
        self.mu_sd = mu_sd
        self.tau_scale = tau_scale

    def fit(self, X, y=None):
        X = _lift_matrix(X, min_samples=10)
        hyper = HyperPriors(
            mu_sd=self.mu_sd,
            nu_low=self.nu_bounds[0],
            nu_high=self.nu_bounds[1],
            tau_scale=self.tau_scale,
        )
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = McmcConfig(iterations=self.iterations, burn_in=self.burn_in, seed=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.summary_ = fit_prior((X[:, 0], X[:, 1]), hyper, cfg)
        if not self.summary_.converged:
            warnings.warn(
                f"acceptance rate {self.summary_.acceptance_rate:.3f} outside [0.1, 0.6]",
                ConvergenceWarning,
                stacklevel=2,
            )
        self.prior_ = self.summary_.plug_in
        self.n_features_in_ = 2
        return self

    def score(self, X, y=None):
        check_is_fitted(self, "prior_")
        X = _lift_matrix(X)
        p = self.prior_
        return float(np.mean(marginal_logpdf(X[:, 0], X[:, 1], p.nu, p.mu, p.tau)))


class BayesThresholdRule(ClassifierMixin, BaseEstimator):
    """Ship/no-ship classifier using the Bayes-optimal cutoff for each row's noise level.

    With ``prior=None`` a :class:`StudentTPriorEstimator` is fitted on the
    training rows. Otherwise ``prior`` is used as given (a ``PriorSpec`` or
    its dict form) and ``fit`` only records the input width. Cutoffs are
    solved once per distinct standard error and cached.
    """

    def __init__(self, prior=None, grid=None, refine=True, iterations=5000, burn_in=2500, random_state=0):
        self.prior = prior
        self.grid = grid
        self.refine = refine
        self.iterations = iterations
        self.burn_in = burn_in
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.prior is None:
            est = StudentTPriorEstimator(self.iterations, self.burn_in, self.random_state).fit(X)
            self.prior_ = est.prior_
        else:
            _lift_matrix(X)
            self.prior_ = self.prior if isinstance(self.prior, PriorSpec) else PriorSpec.from_dict(self.prior)
        self.grid_ = self.grid if self.grid is not None else BetaGrid()
        self.classes_ = np.array([False, True])
        self.n_features_in_ = 2
        self._cache = {}
        return self

    def threshold(self, sigma):
        check_is_fitted(self, "prior_")
        sigma = float(sigma)
        if not (math.isfinite(sigma) and sigma > 0):
            raise DomainError("sigma must be positive")
        if sigma not in self._cache:
            rule, curve = optimal_threshold(self.prior_, sigma, self.grid_, refine=self.refine)
            self._cache[sigma] = curve.beta_opt_refined if self.refine else rule.beta
        return self._cache[sigma]

    def thresholds(self, sigmas):
        sigmas = np.asarray(sigmas, dtype=float)
        uniq, inv = np.unique(sigmas, return_inverse=True)
        return np.array([self.threshold(s) for s in uniq])[inv.reshape(sigmas.shape)]

    def decision_function(self, X):
        """Observed lift minus the row's cutoff; positive means ship."""
        check_is_fitted(self, "prior_")
        X = _lift_matrix(X)
        return X[:, 0] - self.thresholds(X[:, 1])

    def predict(self, X):
        return self.decision_function(X) > 0
