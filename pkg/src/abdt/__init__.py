"""Bayes-optimal ship/no-ship thresholds for A/B tests under a heavy-tailed lift prior."""

__version__ = "0.1.0"

from .core import *  # noqa: E402,F401,F403
from .core import __all__ as _core_all  # noqa: E402
from .prior_fit import *  # noqa: E402,F401,F403
from .prior_fit import __all__ as _fit_all  # noqa: E402
from .risk import *  # noqa: E402,F401,F403
from .risk import __all__ as _risk_all  # noqa: E402
from .sequential import *  # noqa: E402,F401,F403
from .sequential import __all__ as _seq_all  # noqa: E402
from .policy_sim import *  # noqa: E402,F401,F403
from .policy_sim import __all__ as _sim_all  # noqa: E402
from .estimators import BayesThresholdRule, StudentTPriorEstimator  # noqa: E402

__all__ = [
    *_core_all,
    *_fit_all,
    *_risk_all,
    *_seq_all,
    *_sim_all,
    "BayesThresholdRule",
    "StudentTPriorEstimator",
]
