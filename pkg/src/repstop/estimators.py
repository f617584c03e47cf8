"""scikit-learn style wrappers around the learned and single-sample stopping rules.

Rows of ``X`` are rounds, columns are arrival steps.  ``predict`` returns
the 1-based stop index (``n + 1`` means nothing was accepted) and ``score``
the mean profit, so the usual ``fit`` / ``predict`` / ``score`` and
``get_params`` / ``set_params`` plumbing works.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .baselines import baseline_policy, check_family
from .model import (
    Adversarial,
    BestChoice,
    ContractViolation,
    LastSuccess,
    RandomOrder,
    Reward,
    SampleSet,
    SkiRental,
)
from .optimal import ProblemShape, empirical_optimal_policy
from .policies import policy_profits


def _profit_kind(name, b):
    if name == "reward":
        return Reward()
    if name == "best_choice":
        return BestChoice()
    if name == "last_success":
        return LastSuccess()
    if name == "ski_rental":
        if b is None:
            raise ContractViolation("ski_rental needs b")
        return SkiRental(b)
    raise ContractViolation(f"unknown profit {name!r}")


def check_rounds(X, tau=None, n=None):
    """Validate a batch of rounds: finite values in [0, 1] and permutation rows."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if n is not None and X.shape[1] != n:
        raise ValueError(f"X has {X.shape[1]} steps, expected {n}")
    if X.min() < 0 or X.max() > 1:
        raise ValueError("values must lie in [0, 1]")
    if tau is None:
        tau = np.tile(np.arange(X.shape[1]), (X.shape[0], 1))
    else:
        tau = check_array(tau, dtype=np.int64)
        if tau.shape != X.shape:
            raise ValueError("tau must have the same shape as X")
        if not (np.sort(tau, axis=1) == np.arange(X.shape[1])).all():
            raise ValueError("each row of tau must be a permutation of 0..n-1")
    return X, tau


class _StoppingEstimator(BaseEstimator):
    profit = "reward"
    b = None

    def _kind(self):
        return _profit_kind(self.profit, self.b)

    def predict(self, X, tau=None, u=None):
        check_is_fitted(self, "policy_")
        X, tau = check_rounds(X, tau, self.n_steps_)
        if self.policy_.randomized:
            if u is None:
                u = np.random.default_rng(self.random_state).random(len(X))
            return self.policy_.stop_indices(X, tau, u=u)
        return self.policy_.stop_indices(X, tau)

    def score(self, X, tau=None, y=None):
        """Mean profit on the given rounds (mean cost for ski rental)."""
        check_is_fitted(self, "policy_")
        X, tau = check_rounds(X, tau, self.n_steps_)
        stops = self.predict(X, tau)
        return float(self._kind().profits(X, stops).mean())


class EmpiricalStoppingRule(_StoppingEstimator):
    """Stopping rule that is optimal for the empirical distribution of the training rounds."""

    def __init__(self, profit="reward", b=None, order="adversarial", iid=False,
                 mode="marginal-dp", random_state=None):
        self.profit = profit
        self.b = b
        self.order = order
        self.iid = iid
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, tau=None, y=None):
        X, tau = check_rounds(X, tau)
        if self.order == "adversarial":
            order = Adversarial()
        elif self.order == "random":
            order = RandomOrder()
        else:
            raise ContractViolation("order must be 'adversarial' or 'random'")
        kind = self._kind()
        shape = ProblemShape(X.shape[1], order, kind, bool(self.iid))
        self.policy_ = empirical_optimal_policy(SampleSet(X, tau), shape, self.mode)
        self.n_steps_ = X.shape[1]
        return self


class SingleSampleRule(_StoppingEstimator):
    """Baseline rule built from the first training round only."""

    def __init__(self, family="prophet_ss", profit="reward", b=None, random_state=None):
        self.family = family
        self.profit = profit
        self.b = b
        self.random_state = random_state

    def fit(self, X, tau=None, y=None):
        check_family(self.family)
        X, tau = check_rounds(X, tau)
        samples = SampleSet(X, tau)
        self.policy_ = baseline_policy(self.family, 2, samples, X.shape[1], self._kind())
        self.n_steps_ = X.shape[1]
        return self


def mean_profit(estimator, X, tau=None, u=None) -> float:
    """Profit averaged over rounds, using explicit internal randomness ``u`` if given."""
    check_is_fitted(estimator, "policy_")
    X, tau = check_rounds(X, tau, estimator.n_steps_)
    return float(policy_profits(estimator.policy_, X, tau, estimator._kind(), u=u).mean())
