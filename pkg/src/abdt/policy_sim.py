"""Monte-Carlo simulation of an experimentation programme under competing policies.

Every policy sees the same simulated features (common random numbers): true
lift ``delta``, standard error ``sigma`` and observed lift ``x``. A policy that
ships a feature realises ``delta``; its Monte-Carlo Bayes risk is the mean of
``-delta`` over shipped features (zero for the rest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import DomainError, PriorSpec, beta_of_p
from .risk import BetaGrid, beta_opt_curve, optimal_threshold

__all__ = [
    "FixedPValue",
    "FixedBeta",
    "BayesOptimal",
    "Oracle",
    "NeverShip",
    "PolicyResult",
    "SimReport",
    "parse_policies",
    "simulate",
]

BATCH = 1 << 16


@dataclass(frozen=True)
class FixedPValue:
    p: float = 0.05

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise DomainError("p must lie in (0, 1)")

    @property
    def name(self):
        return f"p:{self.p:g}"

    def prepare(self, sigma_model):
        return self

    def ships(self, x, sigma, delta):
        return x > beta_of_p(self.p, sigma)


@dataclass(frozen=True)
class FixedBeta:
    beta: float = 0.0

    @property
    def name(self):
        return f"beta:{self.beta:g}"

    def prepare(self, sigma_model):
        return self

    def ships(self, x, sigma, delta):
        return x > self.beta


@dataclass(frozen=True)
class BayesOptimal:
    """Ship when ``x`` exceeds the Bayes-optimal cutoff for its ``sigma``.

    With a constant noise level the cutoff is solved exactly (grid plus
    continuous refinement). Otherwise it is interpolated in ``log sigma``
    from exact solves on ``n_sigma`` points spanning the 0.1% to 99.9% quantiles of the noise
    model; sigmas outside that range use the nearest end value.
    """

    prior: PriorSpec
    grid: BetaGrid = field(default_factory=lambda: BetaGrid(-2.0, 2.0, 0.005))
    n_sigma: int = 48
    _table: Optional[tuple] = field(default=None, compare=False, repr=False)

    @property
    def name(self):
        return "bayes"

    def prepare(self, sigma_model):
        value = getattr(sigma_model, "value", None)
        if value is not None:
            _, curve = optimal_threshold(self.prior, value, self.grid)
            table = (np.array([value]), np.array([curve.beta_opt_refined]))
        else:
            probe = sigma_model.sample(np.random.default_rng(12345), 20000)
            lo, hi = np.quantile(probe, [0.001, 0.999])
            sig = np.exp(np.linspace(np.log(lo), np.log(hi), self.n_sigma))
            pts = beta_opt_curve(self.prior, sig, self.grid)
            table = (sig, np.array([p.beta_opt_refined for p in pts]))
        return BayesOptimal(self.prior, self.grid, self.n_sigma, table)

    def threshold(self, sigma):
        sig, beta = self._table
        if sig.size == 1:
            return np.full(np.shape(sigma), beta[0])
        return np.interp(np.log(sigma), np.log(sig), beta)

    def ships(self, x, sigma, delta):
        return x > self.threshold(sigma)


@dataclass(frozen=True)
class Oracle:
    name = "oracle"

    def prepare(self, sigma_model):
        return self

    def ships(self, x, sigma, delta):
        return delta > 0


@dataclass(frozen=True)
class NeverShip:
    name = "never"

    def prepare(self, sigma_model):
        return self

    def ships(self, x, sigma, delta):
        return np.zeros(np.shape(x), dtype=bool)


def parse_policies(text, prior=None):
    """Parse ``"never,oracle,p:0.05,beta:0.04,bayes"``."""
    out = []
    for tok in filter(None, (t.strip() for t in text.split(","))):
        kind, _, arg = tok.partition(":")
        try:
            if kind == "never" and not arg:
                out.append(NeverShip())
            elif kind == "oracle" and not arg:
                out.append(Oracle())
            elif kind == "p":
                out.append(FixedPValue(float(arg)))
            elif kind == "beta":
                out.append(FixedBeta(float(arg)))
            elif kind == "bayes" and not arg:
                if prior is None:
                    raise ValueError("bayes policy needs a prior")
                out.append(BayesOptimal(prior))
            else:
                raise ValueError(f"unknown policy {tok!r}")
        except ValueError as exc:
            raise ValueError(f"bad policy spec {tok!r}: {exc}") from exc
    if not out:
        raise ValueError("empty policy list")
    return out


@dataclass
class PolicyResult:
    name: str
    total_realized_lift: float
    ship_rate: float
    mean_loss: float
    std_error: float
    n_features: int
    seed: int

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SimReport:
    policies: Dict[str, PolicyResult]
    n_features: int
    seed: int

    def __getitem__(self, name):
        return self.policies[name]

    def to_dict(self):
        return {
            "n_features": self.n_features,
            "seed": self.seed,
            "policies": {k: v.to_dict() for k, v in self.policies.items()},
        }


def simulate(prior, sigma_model, policies, n_features, seed=0, trace=None):
    """Run every policy over the same ``n_features`` simulated features.

    Features are drawn in batches of ``2**16``; batch ``k`` uses the ``k``-th
    child of ``np.random.SeedSequence(seed)``. Sums are exact (``math.fsum``)
    so the report does not depend on policy order. If ``trace`` is a list,
    per-feature rows ``(delta, sigma, x, *ship flags)`` are appended to it.
    """
    if n_features < 1:
        raise DomainError("n_features must be at least 1")
    policies = list(policies)
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise DomainError(f"duplicate policies in {names}")
    ready = [p.prepare(sigma_model) for p in policies]
    sums = {n: [] for n in names}
    sq = {n: [] for n in names}
    shipped = {n: 0 for n in names}
    n_batches = -(-n_features // BATCH)
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n_batches)):
        size = min(BATCH, n_features - k * BATCH)
        rng = np.random.default_rng(child)
        delta = prior.rvs(rng, size)
        sigma = sigma_model.sample(rng, size)
        x = delta + sigma * rng.standard_normal(size)
        flags = []
        for name, pol in zip(names, ready):
            s = np.asarray(pol.ships(x, sigma, delta), dtype=bool)
            gain = np.where(s, delta, 0.0)
            sums[name].append(math.fsum(gain))
            sq[name].append(math.fsum(gain * gain))
            shipped[name] += int(s.sum())
            flags.append(s)
        if trace is not None:
            trace.extend(zip(delta.tolist(), sigma.tolist(), x.tolist(), *(f.tolist() for f in flags)))
    results = {}
    for name in names:
        total = math.fsum(sums[name])
        mean_gain = total / n_features
        if n_features > 1:
            var = max(math.fsum(sq[name]) / n_features - mean_gain**2, 0.0) * n_features / (n_features - 1)
        else:
            var = 0.0
        results[name] = PolicyResult(
            name=name,
            total_realized_lift=total,
            ship_rate=shipped[name] / n_features,
            mean_loss=-total / n_features if total else 0.0,
            std_error=math.sqrt(var / n_features),
            n_features=n_features,
            seed=seed,
        )
    return SimReport(results, n_features, seed)
