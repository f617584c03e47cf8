"""Online stopping rules and their exact / empirical evaluation.

Every deterministic policy exposes ``stop_indices(X, tau)``, vectorized over
the rows of a batch of realizations.  Randomized policies are distributions
over deterministic ones, indexed by a uniform draw ``u`` in [0, 1).
"""

from __future__ import annotations

import math

import numpy as np

from .model import (
    CapExceeded,
    ContractViolation,
    Instance,
    ProfitKind,
    RoundRealization,
    SampleSet,
)

INF = math.inf


def _first_accept(accept: np.ndarray) -> np.ndarray:
    n = accept.shape[1]
    hit = accept.any(axis=1)
    return np.where(hit, np.argmax(accept, axis=1) + 1, n + 1)


def _prefix_key(prefix: tuple, mode: str):
    if mode == "set":
        return (tuple(sorted(prefix[:-1])), prefix[-1])
    return tuple(prefix)


class StoppingPolicy:
    randomized = False

    def accept_matrix(self, X: np.ndarray, tau: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stop_indices(self, X, tau=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if tau is None:
            tau = np.tile(np.arange(X.shape[1]), (X.shape[0], 1))
        return _first_accept(self.accept_matrix(X, np.atleast_2d(tau)))

    def stop_probabilities(self, X, tau=None) -> np.ndarray:
        stops = self.stop_indices(X, tau)
        probs = np.zeros((len(stops), np.shape(X)[-1] + 1))
        probs[np.arange(len(stops)), stops - 1] = 1.0
        return probs

    def to_dict(self) -> dict:
        raise NotImplementedError


class ThresholdPolicy(StoppingPolicy):
    """Accept step i iff ``x_i`` crosses a level chosen by the arrival prefix.

    ``levels`` is either a flat sequence of n levels (order-independent) or a
    mapping from prefix keys to levels.  With ``key_mode="prefix"`` the key is
    the tuple ``(tau(1), ..., tau(i))``; with ``key_mode="set"`` it is
    ``(sorted earlier arrivals, tau(i))``, which suffices under uniformly
    random order.  ``default_level`` covers prefixes absent from the table;
    when it is None an unseen prefix is an error.
    """

    def __init__(self, levels, accept_equal=True, key_mode="flat", n=None, default_level=None):
        if key_mode == "flat":
            self.levels = tuple(float(v) for v in levels)
            self.table = None
            n = len(self.levels)
            for v in self.levels:
                if not (0.0 <= v <= 1.0 or v == INF):
                    raise ContractViolation(f"threshold {v} outside [0, 1] or infinity")
        elif key_mode in ("prefix", "set"):
            if n is None:
                raise ContractViolation("keyed thresholds need n")
            self.levels = None
            self.table = {_normalize_key(k): float(v) for k, v in dict(levels).items()}
        else:
            raise ContractViolation(f"unknown key mode {key_mode!r}")
        self.n = n
        self.key_mode = key_mode
        if isinstance(accept_equal, (bool, np.bool_)):
            accept_equal = (bool(accept_equal),) * n
        self.accept_equal = tuple(bool(a) for a in accept_equal)
        if len(self.accept_equal) != n:
            raise ContractViolation("one tie rule per step is required")
        self.default_level = default_level

    def level_for(self, prefix: tuple) -> float:
        if self.levels is not None:
            return self.levels[len(prefix) - 1]
        key = _prefix_key(tuple(int(k) for k in prefix), self.key_mode)
        if key in self.table:
            return self.table[key]
        if self.default_level is None:
            raise ContractViolation(f"no threshold stored for arrival prefix {prefix}")
        return self.default_level

    def level_matrix(self, tau: np.ndarray) -> np.ndarray:
        m, n = tau.shape
        if self.levels is not None:
            return np.broadcast_to(np.asarray(self.levels), (m, n))
        perms, inverse = np.unique(tau, axis=0, return_inverse=True)
        rows = np.array([[self.level_for(tuple(perm[: i + 1])) for i in range(n)] for perm in perms])
        return rows[np.ravel(inverse)]

    def accept_matrix(self, X, tau):
        if X.shape[1] != self.n:
            raise ContractViolation(f"policy built for n={self.n}, got n={X.shape[1]}")
        L = self.level_matrix(tau)
        eq = np.asarray(self.accept_equal)
        return np.where(eq, X >= L, X > L)

    def to_dict(self):
        out = {"type": "threshold", "key_mode": self.key_mode,
               "accept_equal": list(self.accept_equal)}
        if self.levels is not None:
            out["levels"] = [_enc(v) for v in self.levels]
        else:
            out["n"] = self.n
            out["table"] = [{"key": _key_to_json(k), "level": _enc(v)} for k, v in self.table.items()]
            out["default_level"] = None if self.default_level is None else _enc(self.default_level)
        return out

    def __repr__(self):
        if self.levels is not None:
            return f"ThresholdPolicy({list(self.levels)})"
        return f"ThresholdPolicy(<{len(self.table)} {self.key_mode} keys>)"


class EssentiallyThresholdPolicy(StoppingPolicy):
    """Rejects any value below the running maximum, else defers to ``inner``."""

    def __init__(self, inner: ThresholdPolicy):
        self.inner = inner
        self.n = inner.n

    def accept_matrix(self, X, tau):
        prev_max = np.maximum.accumulate(X, axis=1)
        prev_max = np.hstack([np.full((X.shape[0], 1), -INF), prev_max[:, :-1]])
        return self.inner.accept_matrix(X, tau) & (X >= prev_max)

    def to_dict(self):
        return {"type": "essentially_threshold", "inner": self.inner.to_dict()}

    def __repr__(self):
        return f"EssentiallyThresholdPolicy({self.inner!r})"


class ObservationRankPolicy(StoppingPolicy):
    """Observe the first ``cutoff`` values, then take the first one at least as large."""

    def __init__(self, cutoff: int, n: int):
        if not 0 <= cutoff <= n:
            raise ContractViolation(f"cutoff {cutoff} outside [0, {n}]")
        self.cutoff = int(cutoff)
        self.n = n

    def accept_matrix(self, X, tau):
        k = self.cutoff
        ref = X[:, :k].max(axis=1) if k > 0 else np.full(X.shape[0], -INF)
        accept = X >= ref[:, None]
        accept[:, :k] = False
        return accept

    def to_dict(self):
        return {"type": "observation_rank", "cutoff": self.cutoff, "n": self.n}

    def __repr__(self):
        return f"ObservationRankPolicy(cutoff={self.cutoff})"


class IndexGatePolicy(StoppingPolicy):
    """Accept the first success (value 1) at an index >= ``gate``."""

    def __init__(self, gate: int, n: int):
        if not 1 <= gate <= n + 1:
            raise ContractViolation(f"gate {gate} outside [1, {n + 1}]")
        self.gate = int(gate)
        self.n = n

    def accept_matrix(self, X, tau):
        accept = X == 1.0
        accept[:, : self.gate - 1] = False
        return accept

    def to_dict(self):
        return {"type": "index_gate", "gate": self.gate, "n": self.n}

    def __repr__(self):
        return f"IndexGatePolicy(gate={self.gate})"


class CumulativeCostPolicy(StoppingPolicy):
    """Stop (buy) at the first step whose cumulative cost exceeds ``level``."""

    def __init__(self, level: float, n: int):
        if level < 0:
            raise ContractViolation("cumulative-cost level must be nonnegative")
        self.level = float(level)
        self.n = n

    def accept_matrix(self, X, tau):
        return np.cumsum(X, axis=1) > self.level

    def to_dict(self):
        return {"type": "cumulative_cost", "level": self.level, "n": self.n}

    def __repr__(self):
        return f"CumulativeCostPolicy(level={self.level:.6g})"


class UniformPickPolicy(StoppingPolicy):
    """Stop at a fixed index ``chosen`` regardless of the values."""

    def __init__(self, chosen: int, n: int):
        if not 1 <= chosen <= n:
            raise ContractViolation(f"chosen index {chosen} outside [1, {n}]")
        self.chosen = int(chosen)
        self.n = n

    def accept_matrix(self, X, tau):
        accept = np.zeros(X.shape, dtype=bool)
        accept[:, self.chosen - 1] = True
        return accept

    def to_dict(self):
        return {"type": "uniform_pick", "chosen": self.chosen, "n": self.n}

    def __repr__(self):
        return f"UniformPickPolicy(chosen={self.chosen})"


# ---------------------------------------------------------------------------
# Randomized policies
# ---------------------------------------------------------------------------


class RandomizedPolicy(StoppingPolicy):
    """A distribution over deterministic policies indexed by ``u ~ U[0, 1)``."""

    randomized = True

    def realize(self, u: float) -> StoppingPolicy:
        raise NotImplementedError

    def stop_indices(self, X, tau=None, u=None):
        if u is None:
            raise ContractViolation("a randomized policy needs internal randomness u")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u = np.broadcast_to(np.asarray(u, dtype=float), (X.shape[0],))
        return self._stops_from_uniform(X, u)

    def _stops_from_uniform(self, X, u):
        raise NotImplementedError


class UniformRandomPick(RandomizedPolicy):
    """Stop at an index drawn uniformly from ``1..n``."""

    def __init__(self, n: int):
        self.n = n

    def realize(self, u):
        return UniformPickPolicy(min(int(u * self.n), self.n - 1) + 1, self.n)

    def _stops_from_uniform(self, X, u):
        return np.minimum((u * self.n).astype(int), self.n - 1) + 1

    def stop_probabilities(self, X, tau=None):
        m = np.atleast_2d(X).shape[0]
        probs = np.zeros((m, self.n + 1))
        probs[:, : self.n] = 1.0 / self.n
        return probs

    def to_dict(self):
        return {"type": "uniform_random_pick", "n": self.n}

    def __repr__(self):
        return f"UniformRandomPick(n={self.n})"


class RandomLevelSkiPolicy(RandomizedPolicy):
    """Cumulative-cost rule with level density ``e^{z/b} / (b (e - 1))`` on [0, b)."""

    def __init__(self, b: float, n: int):
        self.b = float(b)
        self.n = n

    def level(self, u):
        return self.b * np.log1p(np.asarray(u) * (math.e - 1.0))

    def level_cdf(self, z):
        z = np.clip(np.asarray(z, dtype=float), 0.0, self.b)
        return np.expm1(z / self.b) / (math.e - 1.0)

    def realize(self, u):
        return CumulativeCostPolicy(float(self.level(u)), self.n)

    def _stops_from_uniform(self, X, u):
        z = self.level(u)
        return _first_accept(np.cumsum(X, axis=1) > z[:, None])

    def stop_probabilities(self, X, tau=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = np.hstack([np.zeros((X.shape[0], 1)), np.cumsum(X, axis=1)])
        F = self.level_cdf(c)
        # stop at i iff c_{i-1} <= z < c_i; reject all iff z >= c_n
        return np.hstack([np.diff(F, axis=1), 1.0 - F[:, -1:]])

    def to_dict(self):
        return {"type": "random_level_ski", "b": self.b, "n": self.n}

    def __repr__(self):
        return f"RandomLevelSkiPolicy(b={self.b})"


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def run_policy(policy: StoppingPolicy, rnd: RoundRealization, kind: ProfitKind, rng=None):
    """Play one round; returns ``(stop_index, profit)``."""
    X = np.asarray(rnd.x, dtype=float).reshape(1, -1)
    tau = np.asarray(rnd.tau, dtype=int).reshape(1, -1)
    if policy.randomized:
        if rng is None:
            raise ContractViolation("randomized policy played without an rng")
        stops = policy.stop_indices(X, tau, u=rng.random(1))
    else:
        stops = policy.stop_indices(X, tau)
    return int(stops[0]), float(kind.profits(X, stops)[0])


def policy_profits(policy, X, tau, kind: ProfitKind, u=None) -> np.ndarray:
    """Per-round profits of ``policy`` on a batch of realizations."""
    stops = policy.stop_indices(X, tau, u=u) if policy.randomized else policy.stop_indices(X, tau)
    return kind.profits(X, stops)


def exact_policy_value(policy: StoppingPolicy, instance: Instance, cap: int = 10**6) -> float:
    """Expected profit by full enumeration of values and arrival orders."""
    X, tau, w = instance.enumerate_outcomes(cap)
    kind = instance.profit
    if policy.randomized:
        P = policy.stop_probabilities(X, tau)
        n = instance.n
        total = np.zeros(len(w))
        for i in range(1, n + 2):
            total += P[:, i - 1] * kind.profits(X, np.full(len(w), i))
        return float(np.dot(w, total))
    return float(np.dot(w, policy_profits(policy, X, tau, kind)))


def monte_carlo_policy_value(policy, instance, rng, samples: int = 100_000):
    """``(mean, standard error)`` of the profit over fresh draws."""
    from .model import sample_rounds

    X, tau = sample_rounds(instance, rng, samples)
    u = rng.random(samples) if policy.randomized else None
    vals = policy_profits(policy, X, tau, instance.profit, u=u)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def policy_value(policy, instance, cap=10**6, rng=None, mc_samples=100_000) -> float:
    """Exact value when enumerable, Monte Carlo otherwise."""
    try:
        return exact_policy_value(policy, instance, cap)
    except CapExceeded:
        if rng is None:
            rng = np.random.default_rng(0)
        return monte_carlo_policy_value(policy, instance, rng, mc_samples)[0]


def empirical_value(policy, samples: SampleSet, kind: ProfitKind, rng=None) -> float:
    """Mean profit over the sample rounds (fresh randomness per round if randomized)."""
    if len(samples) == 0:
        raise ContractViolation("empirical value of an empty sample set")
    u = None
    if policy.randomized:
        if rng is None:
            raise ContractViolation("randomized policy evaluated without an rng")
        u = rng.random(len(samples))
    return float(policy_profits(policy, samples.X, samples.tau, kind, u=u).mean())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _enc(v):
    return "inf" if v == INF else v


def _dec(v):
    return INF if v == "inf" else float(v)


def _normalize_key(key):
    if len(key) == 2 and isinstance(key[0], (tuple, list)):
        return (tuple(int(k) for k in key[0]), int(key[1]))
    return tuple(int(k) for k in key)


def _key_to_json(key):
    if len(key) == 2 and isinstance(key[0], tuple):
        return [list(key[0]), key[1]]
    return list(key)


def _key_from_json(key):
    if len(key) == 2 and isinstance(key[0], list):
        return (tuple(key[0]), key[1])
    return tuple(key)


def policy_from_dict(d: dict) -> StoppingPolicy:
    kind = d["type"]
    if kind == "threshold":
        if d["key_mode"] == "flat":
            return ThresholdPolicy([_dec(v) for v in d["levels"]], d["accept_equal"])
        table = {_key_from_json(e["key"]): _dec(e["level"]) for e in d["table"]}
        default = d.get("default_level")
        return ThresholdPolicy(table, d["accept_equal"], d["key_mode"], n=d["n"],
                               default_level=None if default is None else _dec(default))
    if kind == "essentially_threshold":
        return EssentiallyThresholdPolicy(policy_from_dict(d["inner"]))
    if kind == "observation_rank":
        return ObservationRankPolicy(d["cutoff"], d["n"])
    if kind == "index_gate":
        return IndexGatePolicy(d["gate"], d["n"])
    if kind == "cumulative_cost":
        return CumulativeCostPolicy(d["level"], d["n"])
    if kind == "uniform_pick":
        return UniformPickPolicy(d["chosen"], d["n"])
    if kind == "uniform_random_pick":
        return UniformRandomPick(d["n"])
    if kind == "random_level_ski":
        return RandomLevelSkiPolicy(d["b"], d["n"])
    raise ContractViolation(f"unknown policy type {kind!r}")
