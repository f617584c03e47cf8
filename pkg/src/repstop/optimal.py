"""Exact optimal online and offline values for discrete instances.

``optimal_policy`` runs backward induction over arrival-order prefixes with
a per-profit sufficient statistic (none for reward, last success and ski
rental; the running maximum for best choice) and reads off threshold levels
from the accept-vs-continue comparison.  ``brute_force_online`` is an
independent oracle that runs backward induction over the complete history
tree of every outcome and knows nothing about thresholds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import (
    Adversarial,
    BestChoice,
    CapExceeded,
    ContractViolation,
    DiscreteDist,
    Explicit,
    Instance,
    LastSuccess,
    OrderModel,
    ProfitKind,
    RandomOrder,
    Reward,
    SampleSet,
    SkiRental,
    offline_values,
    sample_rounds,
)
from .policies import (
    INF,
    EssentiallyThresholdPolicy,
    StoppingPolicy,
    ThresholdPolicy,
    exact_policy_value,
)

log = logging.getLogger(__name__)

DEFAULT_CAP = 10**6


@dataclass(frozen=True)
class ProblemShape:
    """What is known before any sample: size, order family and profit."""

    n: int
    order: OrderModel
    profit: ProfitKind
    iid: bool = False

    @classmethod
    def of(cls, instance: Instance) -> "ProblemShape":
        return cls(instance.n, instance.order, instance.profit, instance.iid)

    @property
    def bound(self) -> float:
        return self.profit.bound(self.n)

    @property
    def kappa(self) -> int:
        return min(self.n * self.order.support_size(self.n), 2 * math.factorial(self.n))


class ValueEstimate(NamedTuple):
    value: float
    stderr: float
    exact: bool
    samples: int = 0


# ---------------------------------------------------------------------------
# Backward induction over order prefixes
# ---------------------------------------------------------------------------


def _key_mode(order: OrderModel) -> str:
    if isinstance(order, Adversarial):
        return "flat"
    if isinstance(order, RandomOrder):
        return "set"
    return "prefix"


class _PrefixSolver:
    """Continuation values keyed by the arrival prefix seen so far."""

    def __init__(self, instance: Instance, max_nodes: int):
        self.inst = instance
        self.n = instance.n
        self.kind = instance.profit
        self.order = instance.order
        self.mode = _key_mode(self.order)
        self.max_nodes = max_nodes
        self.memo: dict = {}
        self.levels: dict = {}
        self.atoms = [[(v, p) for v, p in zip(d.values, d.probs) if p > 0] for d in instance.dists]
        if isinstance(self.kind, BestChoice):
            grid = sorted({v for d in instance.dists for v in d.values})
            self.grid = [-1.0] + grid
            self.pos = {v: j for j, v in enumerate(self.grid)}
        if isinstance(self.kind, LastSuccess):
            self.p_one = [d.prob_of(1.0) for d in instance.dists]

    def memo_key(self, prefix):
        if self.mode == "flat":
            return len(prefix)
        if self.mode == "set":
            return frozenset(prefix)
        return prefix

    def threshold_key(self, prefix):
        if self.mode == "flat":
            return len(prefix) - 1
        if self.mode == "set":
            return (tuple(sorted(prefix[:-1])), prefix[-1])
        return prefix

    # -- per-kind pieces ------------------------------------------------

    def terminal(self):
        if isinstance(self.kind, BestChoice):
            return np.array([1.0 if m == 0.0 else 0.0 for m in self.grid])
        return 0.0

    def stop_value(self, rest: tuple, x: float) -> float:
        """Expected utility of accepting ``x`` when ``rest`` are still to come.

        For ski rental this is the cost ``b`` of buying now.
        """
        kind = self.kind
        if isinstance(kind, Reward):
            return x
        if isinstance(kind, LastSuccess):
            if x != 1.0:
                return 0.0
            return math.prod(1.0 - self.p_one[j] for j in rest)
        if isinstance(kind, BestChoice):
            return math.prod(self.inst.dists[j].cdf(x) for j in rest)
        if isinstance(kind, SkiRental):
            return kind.b
        raise ContractViolation(f"unsupported profit {kind!r}")

    def continuation(self, prefix: tuple):
        key = self.memo_key(prefix)
        if key in self.memo:
            return self.memo[key]
        if len(self.memo) >= self.max_nodes:
            raise CapExceeded(f"more than {self.max_nodes} prefix nodes")
        if len(prefix) == self.n:
            val = self.terminal()
        else:
            val = self._expand(prefix)
        self.memo[key] = val
        return val

    def _expand(self, prefix):
        kind = self.kind
        seen = set(prefix)
        nxt = self.order.next_probs(prefix, self.n)
        total = np.zeros(len(self.grid)) if isinstance(kind, BestChoice) else 0.0
        for k, q in sorted(nxt.items()):
            if q <= 0:
                continue
            child = prefix + (k,)
            rest = tuple(j for j in range(self.n) if j not in seen and j != k)
            cont = self.continuation(child)
            atoms = self.atoms[k]
            if isinstance(kind, BestChoice):
                acc = np.zeros(len(self.grid))
                level = INF
                for x, p in atoms:
                    a = self.stop_value(rest, x)
                    c = cont[self.pos[x]]
                    if a >= c and level == INF:
                        level = x
                    best_new = max(a, c)
                    # running max below x: x becomes the new maximum
                    gm = np.asarray(self.grid)
                    acc += p * np.where(x >= gm, best_new, cont)
                total = total + q * acc
            elif isinstance(kind, SkiRental):
                level = INF
                exp_cost = 0.0
                for x, p in atoms:
                    if kind.b <= x + cont and level == INF:
                        level = x
                    exp_cost += p * min(kind.b, x + cont)
                total += q * exp_cost
            elif isinstance(kind, Reward):
                level = cont
                total += q * math.fsum(p * max(x, cont) for x, p in atoms)
            else:
                level = INF
                ev = 0.0
                for x, p in atoms:
                    a = self.stop_value(rest, x)
                    if a >= cont and level == INF:
                        level = x
                    ev += p * max(a, cont)
                total += q * ev
            self.levels[self.threshold_key(child)] = level
        return total

    def root_value(self) -> float:
        """Optimal expected profit (cost, for ski rental)."""
        root = self.continuation(())
        if isinstance(self.kind, BestChoice):
            return float(root[0])
        return float(root)

    def policy(self) -> StoppingPolicy:
        self.continuation(())
        if self.mode == "flat":
            inner = ThresholdPolicy([self.levels[i] for i in range(self.n)], accept_equal=True)
        else:
            inner = ThresholdPolicy(self.levels, True, self.mode, n=self.n)
        if isinstance(self.kind, BestChoice):
            return EssentiallyThresholdPolicy(inner)
        return inner


def optimal_policy(instance: Instance, max_nodes: int = DEFAULT_CAP) -> StoppingPolicy:
    """An optimal online policy in (essentially) threshold form."""
    return _PrefixSolver(instance, max_nodes).policy()


def dp_value(instance: Instance, max_nodes: int = DEFAULT_CAP) -> float:
    """Optimal online value read directly off the backward induction."""
    return _PrefixSolver(instance, max_nodes).root_value()


def opt_online_value(instance: Instance, cap: int = DEFAULT_CAP) -> float:
    return exact_policy_value(optimal_policy(instance), instance, cap)


# ---------------------------------------------------------------------------
# Offline optimum
# ---------------------------------------------------------------------------


def offline_estimate(instance: Instance, cap: int = DEFAULT_CAP, mc_samples: int = 200_000,
                     seed: int = 0) -> ValueEstimate:
    try:
        X, _, w = instance.enumerate_outcomes(cap)
        return ValueEstimate(float(np.dot(w, offline_values(instance.profit, X))), 0.0, True)
    except CapExceeded:
        log.warning("offline value not enumerable; using %d Monte Carlo samples", mc_samples)
        X, _ = sample_rounds(instance, np.random.default_rng(seed), mc_samples)
        vals = offline_values(instance.profit, X)
        return ValueEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_samples)),
                             False, mc_samples)


def opt_offline_value(instance: Instance, cap: int = DEFAULT_CAP, mc_samples: int = 200_000,
                      seed: int = 0) -> float:
    return offline_estimate(instance, cap, mc_samples, seed).value


# ---------------------------------------------------------------------------
# Brute-force oracle over the full history tree
# ---------------------------------------------------------------------------


def brute_force_online(instance: Instance, max_nodes: int = 10**5):
    """Optimal online value by backward induction over every observation history.

    Returns ``(value, decisions)`` where ``decisions`` maps a history
    ``(tau_prefix, x_prefix)`` to True when accepting there is optimal.
    """
    X, tau, w = instance.enumerate_outcomes(cap=max_nodes)
    keep = w > 0
    X, tau, w = X[keep], tau[keep], w[keep]
    m, n = X.shape
    kind = instance.profit
    U = np.column_stack([kind.utilities(X, np.full(m, i)) for i in range(1, n + 2)])

    groups = []
    nodes = 0
    for i in range(1, n + 1):
        key = np.hstack([tau[:, :i].astype(float), X[:, :i]])
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        groups.append((uniq, np.ravel(inv)))
        nodes += len(uniq)
    if nodes > max_nodes:
        raise CapExceeded(f"history tree has {nodes} nodes, cap is {max_nodes}")

    decisions = {}
    W = U[:, n]
    for i in range(n, 0, -1):
        uniq, inv = groups[i - 1]
        mass = np.bincount(inv, weights=w)
        accept = np.bincount(inv, weights=w * U[:, i - 1]) / mass
        reject = np.bincount(inv, weights=w * W) / mass
        best = np.maximum(accept, reject)
        for g, row in enumerate(uniq):
            hist = (tuple(int(k) for k in row[:i]), tuple(float(v) for v in row[i:]))
            decisions[hist] = bool(accept[g] >= reject[g])
        W = best[inv]
    value = float(np.dot(w, W))
    return float(kind.from_utility(value, n)), decisions


# ---------------------------------------------------------------------------
# Empirically optimal policies
# ---------------------------------------------------------------------------


def empirical_instance(samples: SampleSet, shape: ProblemShape) -> Instance:
    """Product of per-distribution empirical marginals, with a matching order model."""
    n = shape.n
    if shape.iid:
        pooled = DiscreteDist.from_samples(samples.X.ravel())
        dists = (pooled,) * n
    else:
        dists = tuple(DiscreteDist.from_samples(samples.values_of(k)) for k in range(n))
    order = shape.order
    if isinstance(order, Explicit):
        perms, counts = np.unique(samples.tau, axis=0, return_counts=True)
        order = Explicit([tuple(p) for p in perms], counts / counts.sum())
    return Instance(dists, order, shape.profit)


def empirical_optimal_policy(samples: SampleSet, shape, mode: str = "marginal-dp",
                             cap: int = DEFAULT_CAP) -> StoppingPolicy:
    """The learned policy built from past rounds.

    ``marginal-dp`` solves the product of empirical marginals exactly;
    ``joint-exhaustive`` maximizes the empirical value over every threshold
    policy distinguishable on the samples.
    """
    if isinstance(shape, Instance):
        shape = ProblemShape.of(shape)
    if len(samples) == 0:
        raise ContractViolation("cannot learn a policy from zero samples")
    if mode == "marginal-dp":
        inst = empirical_instance(samples, shape)
        policy = optimal_policy(inst, cap)
        if isinstance(shape.order, Explicit):
            # unseen arrival prefixes fall back to accepting
            inner = policy.inner if isinstance(policy, EssentiallyThresholdPolicy) else policy
            inner.default_level = 0.0
        return policy
    if mode == "joint-exhaustive":
        return _joint_exhaustive(samples, shape, cap)
    raise ContractViolation(f"unknown mode {mode!r}")


def _joint_exhaustive(samples: SampleSet, shape: ProblemShape, cap: int) -> StoppingPolicy:
    if not isinstance(shape.order, Adversarial):
        raise ContractViolation("joint-exhaustive search supports adversarial order only")
    X = samples.X
    m, n = X.shape
    kind = shape.profit
    U = np.column_stack([kind.utilities(X, np.full(m, i)) for i in range(1, n + 2)])
    cands = [list(np.unique(X[:, i])) + [INF] for i in range(n)]
    count = math.prod(len(c) for c in cands)
    if count > cap:
        raise CapExceeded(f"{count} candidate threshold vectors exceed the cap of {cap}")

    essential = isinstance(kind, BestChoice)
    if essential:
        prev = np.hstack([np.full((m, 1), -INF), np.maximum.accumulate(X, axis=1)[:, :-1]])
        eligible = X >= prev
    else:
        eligible = np.ones_like(X, dtype=bool)
    # accept[i][c, s]: sample s accepted at step i under candidate level c
    accept = [(X[None, :, i] >= np.asarray(cands[i])[:, None]) & eligible[None, :, i]
              for i in range(n)]

    best = [-INF, None]

    def search(i, alive, acc, chosen):
        if i == n - 1:
            A = accept[i] & alive[None, :]
            R = ~accept[i] & alive[None, :]
            vals = acc + A @ U[:, i] + R @ U[:, n]
            c = int(np.argmax(vals))
            if vals[c] > best[0]:
                best[0] = float(vals[c])
                best[1] = chosen + [cands[i][c]]
            return
        for c, level in enumerate(cands[i]):
            hit = accept[i][c] & alive
            search(i + 1, alive & ~hit, acc + U[hit, i].sum(), chosen + [level])

    search(0, np.ones(m, dtype=bool), 0.0, [])
    policy = ThresholdPolicy(best[1], accept_equal=True)
    return EssentiallyThresholdPolicy(policy) if essential else policy
