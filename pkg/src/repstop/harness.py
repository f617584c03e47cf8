"""Repeated-game simulation, regret accounting and the lower-bound experiments."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baselines import baseline_policy, check_family
from .model import (
    Adversarial,
    CapExceeded,
    ContractViolation,
    DiscreteDist,
    Instance,
    ProfitKind,
    Reward,
    SampleSet,
    sample_rounds,
)
from .optimal import ProblemShape, empirical_optimal_policy, offline_estimate, optimal_policy
from .policies import exact_policy_value, monte_carlo_policy_value, policy_profits
from .switching import (
    ScheduleConfig,
    adaptive_select,
    c_event,
    c_event_feasible,
    holdout_mean,
    schedule,
)

log = logging.getLogger(__name__)

SELECTORS = ("adaptive", "baseline-only", "learned-only", "ftl")
CSV_HEADER = ["t", "mean_profit", "stderr", "comp_ratio", "cum_regret", "switch_rate"]
FTL_CAP = 5000


@dataclass
class ExperimentConfig:
    instance: Instance
    T: int
    trials: int = 1
    seed: int = 0
    selector: str = "adaptive"
    family: str = "prophet_ss"
    schedule: Optional[ScheduleConfig] = None
    learner: str = "marginal-dp"
    output: Optional[str] = None
    lazy: bool = True
    profit_mode: str = "realized"

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ContractViolation("T must be an integer >= 1")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ContractViolation("trials must be an integer >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ContractViolation("seed must fit in 64 unsigned bits")
        if self.selector not in SELECTORS:
            raise ContractViolation(f"selector must be one of {SELECTORS}")
        check_family(self.family)
        if self.learner not in ("marginal-dp", "joint-exhaustive"):
            raise ContractViolation(f"unknown learner {self.learner!r}")
        if self.profit_mode not in ("realized", "expected"):
            raise ContractViolation("profit_mode must be 'realized' or 'expected'")
        if self.schedule is None:
            self.schedule = ScheduleConfig.for_shape(ProblemShape.of(self.instance))

    def echo(self) -> dict:
        return {"T": self.T, "trials": self.trials, "seed": self.seed, "selector": self.selector,
                "family": self.family, "learner": self.learner, "profit_mode": self.profit_mode,
                "schedule": self.schedule.to_dict(), "instance": self.instance.to_json()}


@dataclass
class Report:
    mean_profit: np.ndarray
    stderr: np.ndarray
    switch_rate: np.ndarray
    opt_online: float
    opt_offline: float
    maximize: bool
    config: dict
    exact_values: bool = True
    opt_offline_stderr: float = 0.0

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, len(self.mean_profit) + 1)

    @property
    def regret_per_round(self) -> np.ndarray:
        diff = self.opt_online - self.mean_profit
        return diff if self.maximize else -diff

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret_per_round)

    @property
    def comp_ratio(self) -> np.ndarray:
        if self.opt_offline == 0:
            return np.full(len(self.mean_profit), math.nan)
        return self.mean_profit / self.opt_offline

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1])

    def summary(self, fitted_exponent: Optional[float] = None) -> dict:
        out = {
            "opt_online": self.opt_online,
            "opt_offline": self.opt_offline,
            "T": self.config["T"],
            "trials": self.config["trials"],
            "seed": self.config["seed"],
            "selector": self.config["selector"],
            "scale": self.config["schedule"]["scale"],
            "final_regret": self.final_regret,
        }
        if fitted_exponent is not None:
            out["fitted_exponent"] = fitted_exponent
        if not self.exact_values:
            out["exact_values"] = False
            out["opt_offline_stderr"] = self.opt_offline_stderr
        return out

    def rows(self):
        cols = [self.t, self.mean_profit, self.stderr, self.comp_ratio, self.cum_regret,
                self.switch_rate]
        for vals in zip(*cols):
            yield [int(vals[0])] + [repr(float(v)) for v in vals[1:]]


def write_csv(report: Report, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(report.rows())


def write_summary(report: Report, path, fitted_exponent=None) -> None:
    with open(path, "w") as fh:
        json.dump(report.summary(fitted_exponent), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    cfg: ExperimentConfig
    shape: ProblemShape
    zetas: np.ndarray
    eps: np.ndarray
    delta: np.ndarray
    feasible: np.ndarray


def _context(cfg: ExperimentConfig) -> _Context:
    shape = ProblemShape.of(cfg.instance)
    rows = [schedule(t, cfg.schedule) for t in range(1, cfg.T + 1)]
    zetas = np.array([r.zeta for r in rows])
    eps = np.array([r.eps_t for r in rows])
    delta = np.array([r.delta_t for r in rows])
    B = cfg.schedule.B
    if cfg.selector == "ftl":
        eps = np.zeros_like(eps)
        delta = np.zeros_like(delta)
    feasible = np.array([c_event_feasible(e, d, B) for e, d in zip(eps, delta)])
    feasible &= zetas < np.arange(1, cfg.T + 1)
    return _Context(cfg, shape, zetas, eps, delta, feasible)


def _trial_streams(seed: int, trial: int):
    env, play, _ = np.random.SeedSequence(entropy=seed, spawn_key=(trial,)).spawn(3)
    return np.random.default_rng(env), np.random.default_rng(play)


def _estimation_rng(seed: int, trial: int, t: int) -> np.random.Generator:
    # one stream per round keeps estimates independent of which rounds were skipped
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial, 2, t)))


def _groups(choices) -> list:
    groups: dict = {}
    for r, pol in enumerate(choices):
        groups.setdefault(id(pol), (pol, []))[1].append(r)
    return [(pol, np.asarray(idx)) for pol, idx in groups.values()]


def _play(choices, X, tau, play_u, kind: ProfitKind) -> np.ndarray:
    """Realized profits, evaluating each distinct policy once on its rounds."""
    profits = np.empty(len(choices))
    for pol, idx in _groups(choices):
        u = play_u[idx] if pol.randomized else None
        profits[idx] = policy_profits(pol, X[idx], tau[idx], kind, u=u)
    return profits


def _expected(choices, instance: Instance) -> np.ndarray:
    """Exact expected profit of each round's chosen policy."""
    profits = np.empty(len(choices))
    for pol, idx in _groups(choices):
        profits[idx] = exact_policy_value(pol, instance)
    return profits


def _select_reference(ctx: _Context, hist: SampleSet, trial: int):
    """Round-by-round selection straight through ``adaptive_select``."""
    cfg = ctx.cfg
    choices, fired = [], np.zeros(cfg.T, dtype=bool)
    for t in range(1, cfg.T + 1):
        pol, row = adaptive_select(t, hist[: t - 1], cfg.family, cfg.schedule,
                                   _estimation_rng(cfg.seed, trial, t), ctx.shape,
                                   cfg.learner, margin=cfg.selector != "ftl")
        choices.append(pol)
        fired[t - 1] = row.c_fired
    return choices, fired


def _select_fast(ctx: _Context, hist: SampleSet, trial: int):
    """Same decisions as ``_select_reference`` with caching and skipped dead tests."""
    cfg, shape = ctx.cfg, ctx.shape
    T, B = cfg.T, cfg.schedule.B
    kind = shape.profit
    g_first = baseline_policy(cfg.family, 1, hist[:0], shape.n, shape.profit)
    g_later = None
    g_util = None
    h_cache = (None, None)
    choices, fired = [], np.zeros(T, dtype=bool)
    for t in range(1, T + 1):
        z = int(ctx.zetas[t - 1])
        if z == 1:
            g = g_first
        else:
            if g_later is None:
                g_later = baseline_policy(cfg.family, 2, hist[:1], shape.n, shape.profit)
            g = g_later
        if not ctx.feasible[t - 1]:
            choices.append(g)
            continue
        if h_cache[0] != z:
            h_cache = (z, empirical_optimal_policy(hist[: z - 1], shape, cfg.learner))
        h = h_cache[1]
        holdout = hist[z - 1: t - 1]
        est = _estimation_rng(cfg.seed, trial, t) if g.randomized or h.randomized else None
        if g.randomized:
            g_hat = holdout_mean(g, holdout, shape, est)
        else:
            if g_util is None:
                g_util = kind.to_utility(policy_profits(g, hist.X, hist.tau, kind), shape.n)
            g_hat = float(np.mean(g_util[z - 1: t - 1]))
        h_hat = holdout_mean(h, holdout, shape, est)
        if c_event(g_hat, h_hat, ctx.eps[t - 1], ctx.delta[t - 1], B):
            choices.append(h)
            fired[t - 1] = True
        else:
            choices.append(g)
    return choices, fired


def _select_simple(ctx: _Context, hist: SampleSet):
    cfg, shape = ctx.cfg, ctx.shape
    choices = []
    g_later = None
    for t in range(1, cfg.T + 1):
        if t == 1:
            choices.append(baseline_policy(cfg.family, 1, hist[:0], shape.n, shape.profit))
        elif cfg.selector == "baseline-only":
            if g_later is None:
                g_later = baseline_policy(cfg.family, t, hist[: t - 1], shape.n, shape.profit)
            choices.append(g_later)
        else:
            choices.append(empirical_optimal_policy(hist[: t - 1], shape, cfg.learner))
    return choices, np.zeros(cfg.T, dtype=bool)


def run_trial(cfg: ExperimentConfig, trial: int, ctx: Optional[_Context] = None):
    """Profits and switch flags of one independent repetition of the ``T``-round game.

    With ``profit_mode="expected"`` each round records the exact expected
    profit of the policy it chose instead of the realized one; the regret
    estimate stays unbiased while the in-round noise disappears.
    """
    ctx = ctx or _context(cfg)
    env_rng, play_rng = _trial_streams(cfg.seed, trial)
    X, tau = sample_rounds(cfg.instance, env_rng, cfg.T)
    play_u = play_rng.random(cfg.T)
    hist = SampleSet(X, tau)
    if cfg.selector in ("baseline-only", "learned-only"):
        choices, fired = _select_simple(ctx, hist)
    elif cfg.lazy:
        choices, fired = _select_fast(ctx, hist, trial)
    else:
        choices, fired = _select_reference(ctx, hist, trial)
    if cfg.profit_mode == "expected":
        return _expected(choices, cfg.instance), fired
    return _play(choices, X, tau, play_u, cfg.instance.profit), fired


def reference_values(instance: Instance, seed: int = 0, mc_samples: int = 200_000):
    """``(opt_online, opt_offline, offline_stderr, exact)`` for regret accounting."""
    exact = True
    pol = optimal_policy(instance)
    try:
        online = exact_policy_value(pol, instance)
    except CapExceeded:
        log.warning("online value not enumerable; using %d Monte Carlo samples", mc_samples)
        online = monte_carlo_policy_value(pol, instance, np.random.default_rng(seed), mc_samples)[0]
        exact = False
    off = offline_estimate(instance, mc_samples=mc_samples, seed=seed)
    return online, off.value, off.stderr, exact and off.exact


def run_experiment(cfg: ExperimentConfig, values=None) -> Report:
    """Simulate ``cfg.trials`` independent games and aggregate per-round statistics."""
    ctx = _context(cfg)
    if values is None:
        values = reference_values(cfg.instance, cfg.seed)
    online, offline, off_se, exact = values
    s1 = np.zeros(cfg.T)
    s2 = np.zeros(cfg.T)
    fires = np.zeros(cfg.T)
    for trial in range(cfg.trials):
        prof, fired = run_trial(cfg, trial, ctx)
        s1 += prof
        s2 += prof * prof
        fires += fired
    n = cfg.trials
    mean = s1 / n
    if n > 1:
        var = np.maximum(s2 - n * mean * mean, 0.0) / (n - 1)
        se = np.sqrt(var / n)
    else:
        se = np.zeros(cfg.T)
    return Report(mean, se, fires / n, online, offline, cfg.instance.profit.maximize,
                  cfg.echo(), exact, off_se)


# ---------------------------------------------------------------------------
# Lower-bound and counterexample instances
# ---------------------------------------------------------------------------


def lower_bound_instances(eps: float, profit: ProfitKind = None):
    """``(D0, D+, D-)``: i.i.d. pairs on ``{0, 1/2, 1}`` tilted by ``eps``."""
    if not 0 < eps < 1.0 / 6.0:
        raise ContractViolation("eps must lie in (0, 1/6)")
    profit = profit or Reward()
    third = 1.0 / 3.0
    values = (0.0, 0.5, 1.0)

    def pair(p_half, p_one):
        d = DiscreteDist(values, (third, p_half, p_one))
        return Instance((d, d), Adversarial(), profit)

    return pair(third, third), pair(third - eps, third + eps), pair(third + eps, third - eps)


def lower_bound_gap_closed_form(eps: float, profit: ProfitKind, sign: int) -> float:
    """Per-round loss of the policy tuned for the opposite tilt."""
    base = (1.0 / 3.0 - sign * eps) * eps
    return base / 2.0 if isinstance(profit, Reward) else base


def lower_bound_table(eps: float, profit: ProfitKind = None) -> dict:
    """Exact values of both tuned policies on both tilted instances."""
    _, dp, dm = lower_bound_instances(eps, profit)
    hp, hm = optimal_policy(dp), optimal_policy(dm)
    out = {
        "eps": eps,
        "profit": dp.profit.name,
        "h_plus_on_plus": exact_policy_value(hp, dp),
        "h_minus_on_plus": exact_policy_value(hm, dp),
        "h_minus_on_minus": exact_policy_value(hm, dm),
        "h_plus_on_minus": exact_policy_value(hp, dm),
    }
    out["gap_plus"] = out["h_plus_on_plus"] - out["h_minus_on_plus"]
    out["gap_minus"] = out["h_minus_on_minus"] - out["h_plus_on_minus"]
    out["gap_plus_closed_form"] = lower_bound_gap_closed_form(eps, dp.profit, +1)
    out["gap_minus_closed_form"] = lower_bound_gap_closed_form(eps, dp.profit, -1)
    return out


def ftl_exact_regret(T: int, profit: ProfitKind = None, tie: str = "plus") -> float:
    """Expected regret of follow-the-empirical-leader in the two-point environment.

    Nature picks the upward or downward tilt with probability 1/2 each and
    ``eps = 1/(8 sqrt(T))``.  In round ``t`` the leader compares the counts
    ``a`` (value 1) and ``b`` (value 1/2) among the ``t-1`` past second
    coordinates and plays the upward-tuned policy iff ``a >= b``.  With
    ``tie="split"`` a tie costs half the gap in either environment.
    """
    if int(T) != T or T < 1:
        raise ContractViolation("T must be a positive integer")
    if T > FTL_CAP:
        raise CapExceeded(f"T={T} exceeds the cap of {FTL_CAP}")
    if tie not in ("plus", "split"):
        raise ContractViolation("tie must be 'plus' or 'split'")
    profit = profit or Reward()
    eps = 1.0 / (8.0 * math.sqrt(T))
    gap_p = lower_bound_gap_closed_form(eps, profit, +1)
    gap_m = lower_bound_gap_closed_form(eps, profit, -1)
    p_up, p_dn = 1.0 / 3.0 + eps, 1.0 / 3.0 - eps
    p_flat = 1.0 / 3.0
    # pmf of D = a - b under the upward tilt; the downward tilt mirrors it
    pmf = np.zeros(2 * T + 1)
    mid = T
    pmf[mid] = 1.0
    total = 0.0
    for t in range(1, T + 1):
        below = pmf[:mid].sum()
        tie_p = pmf[mid]
        if tie == "plus":
            wrong_p, wrong_m = below, below + tie_p
        else:
            wrong_p = wrong_m = below + 0.5 * tie_p
        total += 0.5 * (wrong_p * gap_p + wrong_m * gap_m)
        nxt = p_flat * pmf
        nxt[1:] += p_up * pmf[:-1]
        nxt[:-1] += p_dn * pmf[1:]
        pmf = nxt
    return total


def fit_regret_exponent(points) -> float:
    """Least-squares slope of ``log regret`` against ``log T``."""
    points = list(points)
    if len(points) < 3:
        raise ContractViolation("need at least three (T, regret) points")
    keep = []
    for T, r in points:
        if r > 0 and T > 0:
            keep.append((T, r))
        else:
            log.warning("dropping point (%s, %s): regret must be positive", T, r)
    if len(keep) < 2:
        raise ContractViolation("fewer than two usable points")
    lt = np.log([T for T, _ in keep])
    lr = np.log([r for _, r in keep])
    return float(np.polyfit(lt, lr, 1)[0])


def counterexample_instance(eps: float) -> Instance:
    """First value fixed at 1/2, second value 1 with probability ``1/2 + eps`` else 0."""
    if not 0 < eps < 0.5:
        raise ContractViolation("eps must lie in (0, 1/2)")
    return Instance((DiscreteDist.point(0.5), DiscreteDist((0.0, 1.0), (0.5 - eps, 0.5 + eps))))


def counterexample_regret(eps: float, T: int) -> float:
    """Cumulative regret of the single-sample rule over rounds ``2..T``."""
    return (T - 1) * (eps / 2.0 - eps * eps)


__all__ = [
    "SELECTORS",
    "CSV_HEADER",
    "ExperimentConfig",
    "Report",
    "run_experiment",
    "run_trial",
    "reference_values",
    "write_csv",
    "write_summary",
    "lower_bound_instances",
    "lower_bound_gap_closed_form",
    "lower_bound_table",
    "ftl_exact_regret",
    "fit_regret_exponent",
    "counterexample_instance",
    "counterexample_regret",
]
