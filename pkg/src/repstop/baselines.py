"""Sample-based competitive algorithms used as the safe fallback in each round."""

from __future__ import annotations

import math

import numpy as np

from .model import ContractViolation, ProfitKind, RoundRealization, SampleSet, SkiRental
from .policies import (
    CumulativeCostPolicy,
    IndexGatePolicy,
    ObservationRankPolicy,
    RandomLevelSkiPolicy,
    StoppingPolicy,
    ThresholdPolicy,
    UniformRandomPick,
)

FAMILIES = ("prophet_ss", "secretary_ss", "prophet_secretary", "last_success_ss", "ski_rental_rand")


def prophet_single_sample(first_round: RoundRealization) -> ThresholdPolicy:
    """Accept the first value reaching the largest value of one sample round."""
    level = max(first_round.x)
    return ThresholdPolicy([level] * len(first_round.x), accept_equal=True)


def adversarial_secretary_single_sample(first_round: RoundRealization) -> ThresholdPolicy:
    return prophet_single_sample(first_round)


def classical_secretary(n: int) -> ObservationRankPolicy:
    if n < 1:
        raise ContractViolation("n must be positive")
    return ObservationRankPolicy(int(math.floor(n / math.e)), n)


def last_success_one_sample(first_round: RoundRealization) -> IndexGatePolicy:
    """Accept the first success after the second-to-last success of the sample."""
    x = first_round.x
    n = len(x)
    succ = [i + 1 for i, v in enumerate(x) if v == 1.0]
    gate = succ[-2] + 1 if len(succ) >= 2 else 1
    return IndexGatePolicy(gate, n)


def ski_rental_randomized(b: float, rng: np.random.Generator, n: int) -> CumulativeCostPolicy:
    if not b > 0:
        raise ContractViolation("ski rental needs b > 0")
    return RandomLevelSkiPolicy(b, n).realize(rng.random())


def check_family(family: str) -> str:
    if family not in FAMILIES:
        raise ContractViolation(f"unknown baseline family {family!r}; expected one of {FAMILIES}")
    return family


def baseline_policy(family: str, t: int, history: SampleSet, n: int,
                    profit: ProfitKind = None) -> StoppingPolicy:
    """The round-``t`` baseline before its internal randomness is drawn.

    May return a randomized policy (uniform pick in round 1, ski rental in
    every round).  Only ``history[0]`` is ever read.
    """
    check_family(family)
    if t < 1:
        raise ContractViolation("rounds are numbered from 1")
    if family == "ski_rental_rand":
        if not isinstance(profit, SkiRental):
            raise ContractViolation("ski_rental_rand needs a ski-rental profit")
        return RandomLevelSkiPolicy(profit.b, n)
    if t == 1:
        if family == "prophet_secretary":
            return classical_secretary(n)
        return UniformRandomPick(n)
    if len(history) < 1:
        raise ContractViolation(f"round {t} baseline needs one sample round")
    first = history[0]
    if family == "last_success_ss":
        return last_success_one_sample(first)
    return prophet_single_sample(first)


def baseline_for_round(family: str, t: int, history: SampleSet, rng: np.random.Generator,
                       n: int, profit: ProfitKind = None) -> StoppingPolicy:
    """Round-``t`` baseline with any internal randomness drawn from ``rng``."""
    policy = baseline_policy(family, t, history, n, profit)
    if policy.randomized:
        return policy.realize(rng.random())
    return policy


def monte_carlo_baseline(family: str, instance, rng: np.random.Generator, trials: int):
    """``(mean profit, stderr)`` of the round-2 baseline over fresh (sample, live) pairs.

    Every trial draws its own sample round, so the estimate averages over
    the randomness of the training sample as well as the live round.
    """
    from .model import sample_rounds

    check_family(family)
    n = instance.n
    kind = instance.profit
    S, _ = sample_rounds(instance, rng, trials)
    X, tau = sample_rounds(instance, rng, trials)
    if family in ("prophet_ss", "secretary_ss", "prophet_secretary"):
        accept = X >= S.max(axis=1)[:, None]
    elif family == "last_success_ss":
        succ = S == 1.0
        count = succ.sum(axis=1)
        # 1-based index of the second-to-last success in each sample row
        rev_rank = np.cumsum(succ[:, ::-1], axis=1)[:, ::-1]
        second = np.where(succ & (rev_rank == 2), np.arange(1, n + 1), 0).max(axis=1)
        gate = np.where(count >= 2, second + 1, 1)
        accept = (X == 1.0) & (np.arange(1, n + 1)[None, :] >= gate[:, None])
    else:
        if not isinstance(kind, SkiRental):
            raise ContractViolation("ski_rental_rand needs a ski-rental profit")
        z = RandomLevelSkiPolicy(kind.b, n).level(rng.random(trials))
        accept = np.cumsum(X, axis=1) > z[:, None]
    hit = accept.any(axis=1)
    stops = np.where(hit, np.argmax(accept, axis=1) + 1, n + 1)
    vals = kind.profits(X, stops)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials))
