"""Instances, realizations and profit functions for repeated optimal stopping.

Indices follow the usual 1-based convention for stop indices: accepting
step ``i`` (``1 <= i <= n``) or rejecting everything (``i = n + 1``).
Permutations are stored 0-based, ``tau[i]`` being the index of the
distribution that produced the ``i``-th arrival.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PROB_TOL = 1e-12


class ContractViolation(ValueError):
    """Raised when an operation is called outside its documented domain."""


class CapExceeded(RuntimeError):
    """Raised when an exact computation would exceed its enumeration cap."""


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteDist:
    """Finite distribution on [0, 1] given by strictly increasing atoms."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(values) == 0 or len(values) != len(probs):
            raise ContractViolation("values and probs must be non-empty and of equal length")
        if any(p < 0 for p in probs):
            raise ContractViolation("probabilities must be nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ContractViolation(f"probabilities sum to {total!r}, not 1")
        if total != 1.0:
            probs = tuple(p / total for p in probs)
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ContractViolation("values must lie in [0, 1]")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ContractViolation("values must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point(cls, value: float) -> "DiscreteDist":
        return cls((value,), (1.0,))

    @classmethod
    def from_samples(cls, samples) -> "DiscreteDist":
        """Empirical distribution of a 1-d sample."""
        vals, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        return cls(tuple(vals), tuple(counts / counts.sum()))

    @property
    def atoms(self):
        return list(zip(self.values, self.probs))

    def cdf(self, x: float) -> float:
        """P(X <= x)."""
        return math.fsum(p for v, p in zip(self.values, self.probs) if v <= x)

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def prob_of(self, x: float) -> float:
        return math.fsum(p for v, p in zip(self.values, self.probs) if v == x)

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return self._from_uniform(u)

    def _from_uniform(self, u):
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, u, side="right")
        idx = np.minimum(idx, len(self.values) - 1)
        return np.asarray(self.values)[idx]

    def to_dict(self) -> dict:
        return {"values": list(self.values), "probs": list(self.probs)}


# ---------------------------------------------------------------------------
# Arrival-order models
# ---------------------------------------------------------------------------


class OrderModel:
    """Distribution over arrival permutations of ``range(n)``."""

    name = "order"

    def support(self, n: int) -> list:
        """List of ``(perm, prob)`` with perms as 0-based tuples."""
        raise NotImplementedError

    def support_size(self, n: int) -> int:
        raise NotImplementedError

    def next_probs(self, prefix: tuple, n: int) -> dict:
        """Conditional distribution of the next arrival given a prefix."""
        weights: dict = {}
        i = len(prefix)
        for perm, p in self.support(n):
            if p > 0 and perm[:i] == prefix:
                weights[perm[i]] = weights.get(perm[i], 0.0) + p
        total = math.fsum(weights.values())
        return {k: w / total for k, w in weights.items()}

    def sample(self, rng: np.random.Generator, n: int, size: int) -> np.ndarray:
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


class Adversarial(OrderModel):
    name = "adversarial"

    def support(self, n):
        return [(tuple(range(n)), 1.0)]

    def support_size(self, n):
        return 1

    def next_probs(self, prefix, n):
        return {len(prefix): 1.0}

    def sample(self, rng, n, size):
        return np.tile(np.arange(n), (size, 1))

    def to_json(self):
        return "adversarial"

    def __eq__(self, other):
        return isinstance(other, Adversarial)

    def __hash__(self):
        return hash("adversarial")

    def __repr__(self):
        return "Adversarial()"


class RandomOrder(OrderModel):
    name = "random"

    def support(self, n):
        p = 1.0 / math.factorial(n)
        return [(perm, p) for perm in itertools.permutations(range(n))]

    def support_size(self, n):
        return math.factorial(n)

    def next_probs(self, prefix, n):
        rest = [k for k in range(n) if k not in prefix]
        return {k: 1.0 / len(rest) for k in rest}

    def sample(self, rng, n, size):
        return rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)

    def to_json(self):
        return "random"

    def __eq__(self, other):
        return isinstance(other, RandomOrder)

    def __hash__(self):
        return hash("random")

    def __repr__(self):
        return "RandomOrder()"


class Explicit(OrderModel):
    """Arbitrary finite distribution over permutations."""

    name = "explicit"

    def __init__(self, perms: Sequence[Sequence[int]], probs: Sequence[float]):
        perms = [tuple(int(v) for v in perm) for perm in perms]
        probs = [float(p) for p in probs]
        if not perms or len(perms) != len(probs):
            raise ContractViolation("explicit order needs matching perms and probs")
        n = len(perms[0])
        for perm in perms:
            if sorted(perm) != list(range(n)):
                raise ContractViolation(f"{perm} is not a permutation of range({n})")
        if any(p < 0 for p in probs):
            raise ContractViolation("permutation probabilities must be nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ContractViolation(f"permutation probabilities sum to {total!r}, not 1")
        merged: dict = {}
        for perm, p in zip(perms, probs):
            merged[perm] = merged.get(perm, 0.0) + p / total
        self.perms = tuple(merged)
        self.probs = tuple(merged.values())
        self.n = n

    @classmethod
    def forward_backward(cls, n: int) -> "Explicit":
        return cls([tuple(range(n)), tuple(reversed(range(n)))], [0.5, 0.5])

    def support(self, n):
        if n != self.n:
            raise ContractViolation(f"order defined for n={self.n}, asked for n={n}")
        return list(zip(self.perms, self.probs))

    def support_size(self, n):
        return sum(1 for p in self.probs if p > 0)

    def sample(self, rng, n, size):
        idx = rng.choice(len(self.perms), size=size, p=np.asarray(self.probs))
        return np.asarray(self.perms, dtype=int)[idx]

    def to_json(self):
        return {"explicit": [{"perm": [k + 1 for k in perm], "prob": p}
                             for perm, p in zip(self.perms, self.probs)]}

    def __eq__(self, other):
        return isinstance(other, Explicit) and dict(zip(self.perms, self.probs)) == dict(
            zip(other.perms, other.probs))

    def __hash__(self):
        return hash(("explicit", self.perms, self.probs))

    def __repr__(self):
        return f"Explicit({list(self.perms)}, {list(self.probs)})"


# ---------------------------------------------------------------------------
# Profit functions
# ---------------------------------------------------------------------------


class ProfitKind:
    """A profit function ``p(x, i)`` with bound ``B`` and an orientation.

    ``utilities`` maps profits to ``[0, B]`` with larger always better, which
    for cost minimization means ``B - cost``.
    """

    name = "profit"
    maximize = True

    def bound(self, n: int) -> float:
        return 1.0

    def profits(self, X: np.ndarray, stops: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def utilities(self, X: np.ndarray, stops: np.ndarray) -> np.ndarray:
        return self.to_utility(self.profits(X, stops), X.shape[1])

    def to_utility(self, profit, n: int):
        return profit if self.maximize else self.bound(n) - profit

    def from_utility(self, utility, n: int):
        return utility if self.maximize else self.bound(n) - utility

    def to_json(self):
        return self.name

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return f"{type(self).__name__}()"


def _rows(X):
    return np.arange(X.shape[0])


def _padded(X):
    return np.hstack([X, np.zeros((X.shape[0], 1))])


class Reward(ProfitKind):
    name = "reward"

    def profits(self, X, stops):
        return _padded(X)[_rows(X), stops - 1]


class BestChoice(ProfitKind):
    name = "best_choice"

    def profits(self, X, stops):
        picked = _padded(X)[_rows(X), stops - 1]
        return (picked >= X.max(axis=1)).astype(float)


class LastSuccess(ProfitKind):
    name = "last_success"

    def profits(self, X, stops):
        n = X.shape[1]
        succ = X == 1.0
        # 1-based index of the last success, 0 when there is none
        last = np.where(succ.any(axis=1), n - np.argmax(succ[:, ::-1], axis=1), 0)
        return ((stops == last) & (last > 0)).astype(float)


class SkiRental(ProfitKind):
    """Rent ``x_i`` per step, or buy once for ``b``; a cost to minimize."""

    name = "ski_rental"
    maximize = False

    def __init__(self, b: float):
        b = float(b)
        if not b > 0:
            raise ContractViolation("ski rental needs b > 0")
        self.b = b

    def bound(self, n):
        return n + self.b

    def profits(self, X, stops):
        n = X.shape[1]
        prefix = np.hstack([np.zeros((X.shape[0], 1)), np.cumsum(X, axis=1)])
        paid = prefix[_rows(X), stops - 1]
        return np.where(stops <= n, paid + self.b, paid)

    def to_json(self):
        return {"ski_rental": {"b": self.b}}

    def __eq__(self, other):
        return isinstance(other, SkiRental) and other.b == self.b

    def __hash__(self):
        return hash(("ski", self.b))

    def __repr__(self):
        return f"SkiRental(b={self.b})"


def profit(kind: ProfitKind, x: Sequence[float], i: int) -> float:
    """Profit of stopping at (1-based) index ``i``; ``i = n + 1`` rejects all."""
    n = len(x)
    if not 1 <= i <= n + 1:
        raise ContractViolation(f"stop index {i} outside [1, {n + 1}]")
    X = np.asarray(x, dtype=float).reshape(1, n)
    return float(kind.profits(X, np.array([i]))[0])


def offline_best(kind: ProfitKind, x: Sequence[float]) -> tuple:
    """Best index in hindsight (argmin for costs), smallest index on ties."""
    n = len(x)
    X = np.tile(np.asarray(x, dtype=float), (n + 1, 1))
    vals = kind.profits(X, np.arange(1, n + 2))
    best = int(np.argmax(vals) if kind.maximize else np.argmin(vals))
    return best + 1, float(vals[best])


def offline_values(kind: ProfitKind, X: np.ndarray) -> np.ndarray:
    """Row-wise hindsight optimum of ``kind`` over a batch of realizations."""
    m, n = X.shape
    cols = [kind.profits(X, np.full(m, i)) for i in range(1, n + 2)]
    stacked = np.column_stack(cols)
    return stacked.max(axis=1) if kind.maximize else stacked.min(axis=1)


# ---------------------------------------------------------------------------
# Instances and realizations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundRealization:
    x: tuple
    tau: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "tau", tuple(int(k) for k in self.tau))
        if sorted(self.tau) != list(range(len(self.x))):
            raise ContractViolation("tau must be a permutation of the arrival indices")


@dataclass(frozen=True)
class Instance:
    dists: tuple
    order: OrderModel = field(default_factory=Adversarial)
    profit: ProfitKind = field(default_factory=Reward)

    def __post_init__(self):
        object.__setattr__(self, "dists", tuple(self.dists))
        if len(self.dists) < 1:
            raise ContractViolation("an instance needs n >= 1 distributions")
        if isinstance(self.order, Explicit) and self.order.n != self.n:
            raise ContractViolation("explicit order size does not match n")
        if isinstance(self.profit, LastSuccess):
            for d in self.dists:
                if any(v not in (0.0, 1.0) for v in d.values):
                    raise ContractViolation("last-success instances need values in {0, 1}")

    @property
    def n(self) -> int:
        return len(self.dists)

    @property
    def iid(self) -> bool:
        return isinstance(self.order, Adversarial) and all(d == self.dists[0] for d in self.dists)

    @property
    def bound(self) -> float:
        return self.profit.bound(self.n)

    @property
    def order_support_size(self) -> int:
        return self.order.support_size(self.n)

    @property
    def kappa(self) -> int:
        """``min(n |Pi|, 2 n!)``, the exponent of the pattern-count bound."""
        n = self.n
        return min(n * self.order_support_size, 2 * math.factorial(n))

    def outcome_count(self) -> int:
        count = self.order_support_size
        for d in self.dists:
            count *= len(d.values)
        return count

    def enumerate_outcomes(self, cap: int = 10**6):
        """All realizations as arrays ``(X, tau, weights)``."""
        count = self.outcome_count()
        if count > cap:
            raise CapExceeded(f"{count} outcomes exceed the cap of {cap}")
        n = self.n
        grids = np.meshgrid(*[np.arange(len(d.values)) for d in self.dists], indexing="ij")
        idx = np.column_stack([g.ravel() for g in grids])
        Y = np.column_stack([np.asarray(d.values)[idx[:, k]] for k, d in enumerate(self.dists)])
        w = np.ones(len(Y))
        for k, d in enumerate(self.dists):
            w = w * np.asarray(d.probs)[idx[:, k]]
        Xs, taus, ws = [], [], []
        for perm, p in self.order.support(n):
            if p <= 0:
                continue
            perm_arr = np.asarray(perm, dtype=int)
            Xs.append(Y[:, perm_arr])
            taus.append(np.tile(perm_arr, (len(Y), 1)))
            ws.append(w * p)
        return np.vstack(Xs), np.vstack(taus), np.concatenate(ws)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "profit": self.profit.to_json(),
            "order": self.order.to_json(),
            "dists": [d.to_dict() for d in self.dists],
        }


def sample_rounds(instance: Instance, rng: np.random.Generator, size: int):
    """Draw ``size`` independent rounds; returns ``(X, tau)`` arrays of shape (size, n)."""
    n = instance.n
    U = rng.random((size, n))
    Y = np.empty((size, n))
    for k, d in enumerate(instance.dists):
        Y[:, k] = d._from_uniform(U[:, k])
    tau = instance.order.sample(rng, n, size)
    X = np.take_along_axis(Y, tau, axis=1)
    return X, tau


def sample_round(instance: Instance, rng: np.random.Generator) -> RoundRealization:
    X, tau = sample_rounds(instance, rng, 1)
    return RoundRealization(tuple(X[0]), tuple(tau[0]))


# ---------------------------------------------------------------------------
# Sample sets
# ---------------------------------------------------------------------------


class SampleSet:
    """Ordered history of realized rounds, stored as two ``(m, n)`` arrays."""

    def __init__(self, X, tau=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if tau is None:
            tau = np.tile(np.arange(X.shape[1]), (X.shape[0], 1))
        tau = np.atleast_2d(np.asarray(tau, dtype=int))
        if X.shape != tau.shape:
            raise ContractViolation("X and tau must have the same shape")
        self.X = X
        self.tau = tau

    @classmethod
    def from_rounds(cls, rounds: Sequence[RoundRealization], n: int = None) -> "SampleSet":
        rounds = list(rounds)
        if not rounds:
            if n is None:
                raise ContractViolation("empty sample set needs an explicit n")
            return cls(np.empty((0, n)), np.empty((0, n), dtype=int))
        if len({len(r.x) for r in rounds}) != 1:
            raise ContractViolation("all rounds must share one n")
        return cls([r.x for r in rounds], [r.tau for r in rounds])

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, item):
        if isinstance(item, slice):
            return SampleSet(self.X[item], self.tau[item])
        return RoundRealization(tuple(self.X[item]), tuple(self.tau[item]))

    def __iter__(self) -> Iterator[RoundRealization]:
        for s in range(len(self)):
            yield self[s]

    def values_of(self, k: int) -> np.ndarray:
        """All observed values produced by distribution ``k``."""
        return self.X[self.tau == k]


# ---------------------------------------------------------------------------
# JSON instance files
# ---------------------------------------------------------------------------


def _parse_profit(spec):
    if spec == "reward":
        return Reward()
    if spec == "best_choice":
        return BestChoice()
    if spec == "last_success":
        return LastSuccess()
    if isinstance(spec, dict) and "ski_rental" in spec:
        return SkiRental(spec["ski_rental"]["b"])
    raise ContractViolation(f"unknown profit entry {spec!r}")


def _parse_order(spec, n):
    if spec == "adversarial":
        return Adversarial()
    if spec == "random":
        return RandomOrder()
    if isinstance(spec, dict) and "explicit" in spec:
        perms = [list(entry["perm"]) for entry in spec["explicit"]]
        probs = [entry["prob"] for entry in spec["explicit"]]
        # accept both 1-based (as written by to_json) and 0-based permutations
        if all(sorted(p) == list(range(1, n + 1)) for p in perms):
            perms = [[k - 1 for k in p] for p in perms]
        return Explicit(perms, probs)
    raise ContractViolation(f"unknown order entry {spec!r}")


def instance_from_json(obj) -> Instance:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        n = int(obj["n"])
        dists = tuple(DiscreteDist(d["values"], d["probs"]) for d in obj["dists"])
        if len(dists) != n:
            raise ContractViolation(f"n={n} but {len(dists)} distributions given")
        return Instance(dists, _parse_order(obj.get("order", "adversarial"), n),
                        _parse_profit(obj.get("profit", "reward")))
    except (KeyError, TypeError) as exc:
        raise ContractViolation(f"malformed instance: {exc}") from exc


def load_instance(path) -> Instance:
    with open(path) as fh:
        return instance_from_json(json.load(fh))


def random_instance(rng: np.random.Generator, n_max: int = 3, atoms_max: int = 3,
                    profit: ProfitKind = None, order: OrderModel = None,
                    grid: int = 10) -> Instance:
    """Small random instance with atoms on ``{0, 1/grid, ..., 1}``."""
    n = int(rng.integers(1, n_max + 1))
    if profit is None:
        kinds = [Reward(), BestChoice(), LastSuccess(), SkiRental(float(rng.integers(1, 7)) / 2)]
        profit = kinds[int(rng.integers(len(kinds)))]
    dists = []
    for _ in range(n):
        if isinstance(profit, LastSuccess):
            p = float(rng.integers(0, grid + 1)) / grid
            values, probs = (0.0, 1.0), (1.0 - p, p)
        else:
            k = int(rng.integers(1, atoms_max + 1))
            values = tuple(np.sort(rng.choice(grid + 1, size=k, replace=False)) / grid)
            probs = tuple(rng.dirichlet(np.ones(k)))
        keep = [(v, p) for v, p in zip(values, probs) if p > 0] or [(values[0], 1.0)]
        dists.append(DiscreteDist(*zip(*keep)))
    return Instance(tuple(dists), order or Adversarial(), profit)
