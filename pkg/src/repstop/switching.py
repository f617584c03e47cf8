"""Adaptive per-round choice between a safe baseline and the learned policy.

Round ``t`` splits the history at ``zeta(t)``: rounds ``1..zeta-1`` build both
candidates, rounds ``zeta..t-1`` are a hold-out on which their mean profits
are estimated.  The learned policy is played only when its hold-out estimate
beats the baseline's by a margin set by ``eps(t)`` and ``delta(t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .baselines import baseline_policy
from .model import ContractViolation, SampleSet
from .optimal import ProblemShape, empirical_optimal_policy
from .policies import StoppingPolicy, policy_profits

VARIANTS = ("general", "pi-refined")
DELTA1_FORMS = ("half", "doubled")


@dataclass(frozen=True)
class ScheduleConfig:
    """Constants of the switching schedule.

    ``scale`` multiplies the accuracy ``eps``; 1.0 keeps the constants for
    which the guarantees are proven.  ``delta1_form`` picks between
    ``1/(2 t^kappa)`` ("half") and ``1/(2t)^kappa`` ("doubled").
    """

    t0: int = 1
    variant: str = "general"
    B: float = 1.0
    kappa: int = 1
    scale: float = 1.0
    delta1_form: str = "half"

    def __post_init__(self):
        if int(self.t0) != self.t0 or self.t0 < 1:
            raise ContractViolation("t0 must be an integer >= 1")
        if self.variant not in VARIANTS:
            raise ContractViolation(f"variant must be one of {VARIANTS}")
        if not self.B > 0:
            raise ContractViolation("B must be positive")
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ContractViolation("kappa must be an integer >= 1")
        if not self.scale > 0:
            raise ContractViolation("scale must be positive")
        if self.delta1_form not in DELTA1_FORMS:
            raise ContractViolation(f"delta1_form must be one of {DELTA1_FORMS}")

    @classmethod
    def for_shape(cls, shape: ProblemShape, **kw) -> "ScheduleConfig":
        return cls(B=shape.bound, kappa=shape.kappa, **kw)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "variant": self.variant, "B": self.B, "kappa": self.kappa,
                "scale": self.scale, "delta1_form": self.delta1_form}


class ScheduleValues(NamedTuple):
    zeta: int
    eps1_at_zeta: float
    delta1_at_zeta: float
    eps_t: float
    delta_t: float


def zeta(t: int, t0: int = 1) -> int:
    if t < 1 or t0 < 1:
        raise ContractViolation("zeta needs t >= 1 and t0 >= 1")
    return min(t, max(t0 + 1, (t + 1) // 2))


def eps1(t: int, cfg: ScheduleConfig) -> float:
    if t < 2:
        raise ContractViolation("eps1 is defined for t >= 2")
    if cfg.variant == "pi-refined":
        return 5.0 * cfg.B * math.log(4.0 * math.e * t) / math.sqrt(t - 1)
    return 6.0 * cfg.B * math.sqrt(2.0 * cfg.kappa * math.log(4.0 * t) / (t - 1))


def delta1(t: int, cfg: ScheduleConfig) -> float:
    if t < 1:
        raise ContractViolation("delta1 is defined for t >= 1")
    if cfg.variant == "pi-refined":
        return 1.0 / (2.0 * t)
    if cfg.delta1_form == "doubled":
        return (2.0 * t) ** (-cfg.kappa)
    return 0.5 * float(t) ** (-cfg.kappa)


def delta0(m: int, eta: float, B: float = 1.0) -> float:
    """Hoeffding failure probability for a mean of ``m`` terms in ``[0, B]``."""
    return 2.0 * math.exp(-2.0 * m * eta * eta / (B * B))


def schedule(t: int, cfg: ScheduleConfig) -> ScheduleValues:
    """Schedule values used in round ``t``.

    The Hoeffding term is evaluated at the unscaled accuracy so that
    ``scale`` only moves the switching margin.  Without hold-out rounds
    (``zeta == t``) the Hoeffding terms are dropped; round 1 has no
    accuracy at all and reports ``inf``.
    """
    z = zeta(t, cfg.t0)
    if z < 2:
        return ScheduleValues(z, math.inf, 1.0, math.inf, 1.0)
    e1 = eps1(z, cfg)
    d1 = delta1(z, cfg)
    d = d1 if z == t else 2.0 * delta0(t - z, e1, cfg.B) + d1
    return ScheduleValues(z, cfg.scale * e1, d1, cfg.scale * e1, d)


def schedule_table(t_max: int, cfg: ScheduleConfig, t_min: int = 2) -> dict:
    """Columns ``t, zeta, eps1, delta1, eps, delta`` for ``t_min..t_max``.

    ``eps1``/``delta1`` are evaluated at ``t`` itself; ``eps``/``delta`` are
    the values the switching test uses in round ``t``.
    """
    if t_max < t_min:
        raise ContractViolation("t_max must be at least t_min")
    ts = list(range(max(t_min, 2), t_max + 1))
    rows = [schedule(t, cfg) for t in ts]
    return {
        "t": ts,
        "zeta": [r.zeta for r in rows],
        "eps1": [eps1(t, cfg) for t in ts],
        "delta1": [delta1(t, cfg) for t in ts],
        "eps": [r.eps_t for r in rows],
        "delta": [r.delta_t for r in rows],
    }


def c_event(g_hat: float, h_hat: float, eps_t: float, delta_t: float, B: float) -> bool:
    return g_hat + eps_t + B * delta_t <= (1.0 - delta_t) * (h_hat - eps_t)


def c_event_feasible(eps_t: float, delta_t: float, B: float) -> bool:
    """Whether the switching test can fire for any estimates in ``[0, B]``."""
    if not (math.isfinite(eps_t) and math.isfinite(delta_t)):
        return False
    return c_event(0.0, B, eps_t, delta_t, B)


@dataclass
class SwitchRow:
    t: int
    zeta: int
    g_hat: float
    h_hat: float
    eps_t: float
    delta_t: float
    c_fired: bool
    chosen: str


@dataclass
class SwitchTrace:
    rows: list = field(default_factory=list)

    def append(self, row: SwitchRow):
        if row.c_fired and row.chosen != "learned":
            raise ContractViolation("a fired test must select the learned policy")
        if row.zeta == row.t and row.c_fired:
            raise ContractViolation("the test cannot fire without hold-out rounds")
        self.rows.append(row)

    def fired(self) -> np.ndarray:
        return np.array([r.c_fired for r in self.rows], dtype=bool)

    def __len__(self):
        return len(self.rows)


def holdout_mean(policy: StoppingPolicy, holdout: SampleSet, shape: ProblemShape,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Mean utility of ``policy`` on hold-out rounds, costs mapped to ``B - cost``."""
    u = None
    if policy.randomized:
        if rng is None:
            raise ContractViolation("randomized policy estimated without an rng")
        u = rng.random(len(holdout))
    prof = policy_profits(policy, holdout.X, holdout.tau, shape.profit, u=u)
    return float(np.mean(shape.profit.to_utility(prof, shape.n)))


def adaptive_select(t: int, history: SampleSet, family: str, cfg: ScheduleConfig,
                    rng: Optional[np.random.Generator], shape: ProblemShape,
                    mode: str = "marginal-dp", margin: bool = True):
    """Policy for round ``t`` and the matching trace row.

    The returned policy may still be randomized (round-1 uniform pick, ski
    rental); the caller draws its internal randomness when playing.
    ``rng`` feeds only the hold-out estimates of randomized candidates.
    With ``margin=False`` the test compares the raw estimates, which turns
    the rule into follow-the-leader on the hold-out.
    """
    if len(history) != t - 1:
        raise ContractViolation(f"round {t} needs {t - 1} past rounds, got {len(history)}")
    sv = schedule(t, cfg)
    if not margin:
        sv = sv._replace(eps_t=0.0, delta_t=0.0)
    z = sv.zeta
    train = history[: z - 1]
    g = baseline_policy(family, z, train, shape.n, shape.profit)
    g_hat = h_hat = math.nan
    fired = False
    h = None
    if z < t:
        holdout = history[z - 1: t - 1]
        h = empirical_optimal_policy(train, shape, mode)
        g_hat = holdout_mean(g, holdout, shape, rng)
        h_hat = holdout_mean(h, holdout, shape, rng)
        fired = c_event(g_hat, h_hat, sv.eps_t, sv.delta_t, cfg.B)
    row = SwitchRow(t, z, g_hat, h_hat, sv.eps_t, sv.delta_t, fired,
                    "learned" if fired else "baseline")
    return (h if fired else g), row

