import csv
import json
import math

import numpy as np
import pytest

from repstop.harness import (
    CSV_HEADER,
    ExperimentConfig,
    counterexample_instance,
    counterexample_regret,
    fit_regret_exponent,
    ftl_exact_regret,
    lower_bound_gap_closed_form,
    lower_bound_instances,
    lower_bound_table,
    reference_values,
    run_experiment,
    run_trial,
    write_csv,
    write_summary,
)
from repstop.model import (
    BestChoice,
    CapExceeded,
    ContractViolation,
    DiscreteDist,
    Instance,
    LastSuccess,
    RandomOrder,
    Reward,
    SkiRental,
)
from repstop.optimal import optimal_policy
from repstop.policies import exact_policy_value
from repstop.switching import ScheduleConfig

COIN = DiscreteDist((0.0, 1.0), (0.5, 0.5))


def _cfg(inst, **kw):
    kw.setdefault("T", 30)
    kw.setdefault("trials", 3)
    return ExperimentConfig(inst, **kw)


def test_config_validation():
    inst = Instance((COIN, COIN))
    for bad in ({"T": 0}, {"trials": 0}, {"selector": "x"}, {"family": "x"}, {"learner": "x"},
                {"profit_mode": "x"}, {"seed": -1}):
        with pytest.raises(ContractViolation):
            _cfg(inst, **bad)


def test_runs_are_deterministic():
    inst = counterexample_instance(0.1)
    a = run_experiment(_cfg(inst, seed=7, schedule=ScheduleConfig(scale=0.01)))
    b = run_experiment(_cfg(inst, seed=7, schedule=ScheduleConfig(scale=0.01)))
    assert np.array_equal(a.mean_profit, b.mean_profit)
    c = run_experiment(_cfg(inst, seed=8, schedule=ScheduleConfig(scale=0.01)))
    assert not np.array_equal(a.mean_profit, c.mean_profit)


CASES = [
    (counterexample_instance(0.1), "prophet_ss", "adaptive"),
    (counterexample_instance(0.1), "prophet_ss", "ftl"),
    (Instance((COIN, DiscreteDist((0.2, 0.7), (0.5, 0.5))), RandomOrder(), BestChoice()),
     "prophet_secretary", "adaptive"),
    (Instance((DiscreteDist((0.0, 1.0), (0.4, 0.6)),) * 3, profit=LastSuccess()),
     "last_success_ss", "adaptive"),
    (Instance((DiscreteDist((0.0, 0.5, 1.0), (0.3, 0.3, 0.4)),) * 2, profit=SkiRental(1.0)),
     "ski_rental_rand", "adaptive"),
    (Instance((DiscreteDist((0.0, 0.5, 1.0), (0.3, 0.3, 0.4)),) * 2, profit=SkiRental(1.0)),
     "ski_rental_rand", "ftl"),
]


@pytest.mark.parametrize("inst, family, selector", CASES)
def test_fast_path_matches_reference(inst, family, selector):
    kw = dict(T=40, trials=2, seed=3, family=family, selector=selector)
    shape_sched = ScheduleConfig(B=inst.bound, kappa=inst.kappa, scale=0.001)
    fast = run_experiment(_cfg(inst, schedule=shape_sched, lazy=True, **kw))
    ref = run_experiment(_cfg(inst, schedule=shape_sched, lazy=False, **kw))
    assert np.array_equal(fast.mean_profit, ref.mean_profit)
    assert np.array_equal(fast.switch_rate, ref.switch_rate)


def test_learned_only_on_point_masses_has_no_regret_after_round_one():
    inst = Instance((DiscreteDist.point(0.3), DiscreteDist.point(0.8)))
    rep = run_experiment(_cfg(inst, selector="learned-only", T=10, trials=2))
    assert rep.opt_online == pytest.approx(0.8)
    assert np.allclose(rep.regret_per_round[1:], 0.0)
    assert rep.regret_per_round[0] == pytest.approx(0.8 - 0.55)


def test_adaptive_with_proven_constants_equals_baseline_only():
    inst = counterexample_instance(0.1)
    a = run_experiment(_cfg(inst, T=200, trials=4))
    b = run_experiment(_cfg(inst, T=200, trials=4, selector="baseline-only"))
    assert np.array_equal(a.mean_profit, b.mean_profit)
    assert a.switch_rate.sum() == 0


def test_expected_mode_is_unbiased():
    inst = counterexample_instance(0.1)
    sched = ScheduleConfig(scale=0.01)
    real = run_experiment(_cfg(inst, T=60, trials=400, schedule=sched))
    expd = run_experiment(_cfg(inst, T=60, trials=400, schedule=sched, profit_mode="expected"))
    # the same policies are chosen, only the recorded profit differs
    assert np.array_equal(real.switch_rate, expd.switch_rate)
    diff = real.mean_profit.sum() - expd.mean_profit.sum()
    assert abs(diff) <= 4 * math.sqrt(np.sum(real.stderr ** 2))


def test_costs_flip_regret_sign():
    inst = Instance((DiscreteDist((0.0, 1.0), (0.5, 0.5)),) * 2, profit=SkiRental(1.0))
    rep = run_experiment(_cfg(inst, family="ski_rental_rand", selector="baseline-only", trials=50))
    assert rep.final_regret > 0
    assert rep.comp_ratio[0] == pytest.approx(rep.mean_profit[0] / rep.opt_offline)


def test_reference_values():
    inst = Instance((COIN, COIN))
    online, offline, se, exact = reference_values(inst)
    assert (online, offline, se, exact) == (pytest.approx(0.75), pytest.approx(0.75), 0.0, True)


def test_csv_and_summary(tmp_path):
    inst = counterexample_instance(0.1)
    rep = run_experiment(_cfg(inst, T=5, trials=2))
    write_csv(rep, tmp_path / "out.csv")
    write_summary(rep, tmp_path / "out.json", fitted_exponent=0.5)
    with open(tmp_path / "out.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
    assert float(rows[-1][4]) == pytest.approx(rep.final_regret)
    summary = json.loads((tmp_path / "out.json").read_text())
    assert set(summary) == {"opt_online", "opt_offline", "T", "trials", "seed", "selector", "scale",
                            "final_regret", "fitted_exponent"}


def test_run_trial_shapes():
    cfg = _cfg(counterexample_instance(0.1), T=12)
    prof, fired = run_trial(cfg, 0)
    assert prof.shape == (12,) and fired.dtype == bool


# -- lower bound ---------------------------------------------------------------


def test_lower_bound_instances():
    d0, dp, dm = lower_bound_instances(0.05)
    assert dp.dists[0].probs == pytest.approx((1 / 3, 1 / 3 - 0.05, 1 / 3 + 0.05))
    assert exact_policy_value(optimal_policy(dp), dp) == pytest.approx(
        (1 / 3 + 0.05) + (2 / 3 - 0.05) * (0.5 + 0.05 / 2))
    _, dp, _ = lower_bound_instances(0.1)
    assert exact_policy_value(optimal_policy(dp), dp) == pytest.approx(0.745)
    with pytest.raises(ContractViolation):
        lower_bound_instances(0.2)


@pytest.mark.parametrize("profit", [Reward(), BestChoice()])
@pytest.mark.parametrize("eps", [0.01, 0.05, 0.1])
def test_lower_bound_gaps_match_closed_form(profit, eps):
    tab = lower_bound_table(eps, profit)
    assert tab["gap_plus"] == pytest.approx(tab["gap_plus_closed_form"], abs=1e-12)
    assert tab["gap_minus"] == pytest.approx(tab["gap_minus_closed_form"], abs=1e-12)
    assert min(tab["gap_plus"], tab["gap_minus"]) >= eps / 12 - 1e-12


def _ftl_direct(T, tie="plus"):
    """Direct multinomial sum over past counts, for small horizons."""
    eps = 1 / (8 * math.sqrt(T))
    gp = lower_bound_gap_closed_form(eps, Reward(), +1)
    gm = lower_bound_gap_closed_form(eps, Reward(), -1)
    pu, pd = 1 / 3 + eps, 1 / 3 - eps
    total = 0.0
    for t in range(1, T + 1):
        m = t - 1
        for a in range(m + 1):
            for b in range(m - a + 1):
                c = m - a - b
                coef = math.factorial(m) / (math.factorial(a) * math.factorial(b) * math.factorial(c))
                p_plus = coef * pu**a * pd**b * (1 / 3) ** c
                p_minus = coef * pd**a * pu**b * (1 / 3) ** c
                if a > b:
                    w_plus, w_minus = 0.0, 1.0
                elif a < b:
                    w_plus, w_minus = 1.0, 0.0
                elif tie == "plus":
                    w_plus, w_minus = 0.0, 1.0
                else:
                    w_plus = w_minus = 0.5
                total += 0.5 * (p_plus * w_plus * gp + p_minus * w_minus * gm)
    return total


@pytest.mark.parametrize("T", [1, 2, 5, 12])
@pytest.mark.parametrize("tie", ["plus", "split"])
def test_ftl_matches_direct_sum(T, tie):
    assert ftl_exact_regret(T, tie=tie) == pytest.approx(_ftl_direct(T, tie), rel=1e-12)


def test_ftl_first_round_and_growth():
    eps = 1 / 8
    assert ftl_exact_regret(1) == pytest.approx(0.5 * lower_bound_gap_closed_form(eps, Reward(), -1))
    r = {T: ftl_exact_regret(T) for T in (100, 400, 1600)}
    assert 1.8 <= r[400] / r[100] <= 2.2
    assert 1.8 <= r[1600] / r[400] <= 2.2
    for T, v in r.items():
        assert 1 / 500 <= v / math.sqrt(T) <= 1 / 5
    with pytest.raises(CapExceeded):
        ftl_exact_regret(5001)


def test_fit_regret_exponent():
    pts = [(T, 3.0 * T**0.5) for T in (100, 400, 1600, 6400)]
    assert fit_regret_exponent(pts) == pytest.approx(0.5)
    with pytest.raises(ContractViolation):
        fit_regret_exponent(pts[:2])
    assert fit_regret_exponent(pts[:2] + [(9, 0.0)]) == pytest.approx(0.5)
    with pytest.raises(ContractViolation):
        fit_regret_exponent([(1, 0.0), (2, -1.0), (3, 1.0)])


def test_counterexample():
    inst = counterexample_instance(0.1)
    assert exact_policy_value(optimal_policy(inst), inst) == pytest.approx(0.6)
    assert counterexample_regret(0.1, 101) == pytest.approx(100 * (0.05 - 0.01))
    with pytest.raises(ContractViolation):
        counterexample_instance(0.5)
