import itertools

import numpy as np
import pytest

from repstop.model import (
    Adversarial,
    BestChoice,
    CapExceeded,
    ContractViolation,
    DiscreteDist,
    Explicit,
    Instance,
    LastSuccess,
    RandomOrder,
    Reward,
    SampleSet,
    SkiRental,
    random_instance,
    sample_rounds,
)
from repstop.optimal import (
    ProblemShape,
    brute_force_online,
    dp_value,
    empirical_instance,
    empirical_optimal_policy,
    offline_estimate,
    opt_offline_value,
    opt_online_value,
    optimal_policy,
)
from repstop.policies import (
    INF,
    EssentiallyThresholdPolicy,
    ThresholdPolicy,
    empirical_value,
    exact_policy_value,
)
from repstop.switching import ScheduleConfig, eps1

COIN = DiscreteDist((0.0, 1.0), (0.5, 0.5))


def reward_values_by_hand(dists):
    """V_{n+1} = 0, V_i = E[max(X_i, V_{i+1})]."""
    V = [0.0]
    for d in reversed(dists):
        V.append(sum(p * max(v, V[-1]) for v, p in zip(d.values, d.probs)))
    return list(reversed(V))


# -- optimal policies ----------------------------------------------------------


def test_coin_pair_reward():
    inst = Instance((COIN, COIN))
    pol = optimal_policy(inst)
    assert pol.levels == (0.5, 0.0)
    assert opt_online_value(inst) == pytest.approx(0.75)


def test_coin_pair_last_success():
    inst = Instance((COIN, COIN), profit=LastSuccess())
    assert opt_online_value(inst) == pytest.approx(0.5)
    assert exact_policy_value(ThresholdPolicy([INF, 1.0]), inst) == pytest.approx(0.5)


def test_single_step_accepts_everything():
    d = DiscreteDist((0.1, 0.4, 0.9), (0.2, 0.5, 0.3))
    inst = Instance((d,))
    assert optimal_policy(inst).levels == (0.0,)
    assert opt_online_value(inst) == pytest.approx(d.mean())


def test_reward_levels_match_hand_recursion():
    rng = np.random.default_rng(5)
    for _ in range(30):
        inst = random_instance(rng, n_max=4, profit=Reward())
        V = reward_values_by_hand(inst.dists)
        assert optimal_policy(inst).levels == pytest.approx(V[1:])
        assert opt_online_value(inst) == pytest.approx(V[0], abs=1e-12)


def test_best_choice_returns_essentially_threshold():
    inst = Instance((COIN, COIN, COIN), profit=BestChoice())
    assert isinstance(optimal_policy(inst), EssentiallyThresholdPolicy)


def test_lower_bound_plus_instance_value():
    third = 1 / 3
    d = DiscreteDist((0.0, 0.5, 1.0), (third, third - 0.1, third + 0.1))
    assert opt_online_value(Instance((d, d))) == pytest.approx(0.745, abs=1e-12)


def test_point_mass_online_equals_offline():
    inst = Instance((DiscreteDist.point(0.3), DiscreteDist.point(0.7), DiscreteDist.point(0.5)))
    assert opt_online_value(inst) == pytest.approx(opt_offline_value(inst))


def test_offline_examples():
    assert opt_offline_value(Instance((COIN, COIN))) == pytest.approx(0.75)
    assert opt_offline_value(Instance((COIN, COIN), profit=LastSuccess())) == pytest.approx(0.75)
    d = DiscreteDist((0.2, 0.6), (0.5, 0.5))
    assert opt_offline_value(Instance((d, d), profit=BestChoice())) == pytest.approx(1.0)


def test_offline_monte_carlo_fallback():
    d = DiscreteDist(tuple(np.linspace(0, 1, 5)), (0.2,) * 5)
    inst = Instance((d,) * 4)
    exact = offline_estimate(inst)
    approx = offline_estimate(inst, cap=100, mc_samples=50_000, seed=1)
    assert exact.exact and not approx.exact
    assert approx.stderr > 0
    assert abs(approx.value - exact.value) <= 4 * approx.stderr


# -- brute-force oracle -------------------------------------------------------


def test_brute_force_examples():
    v, tree = brute_force_online(Instance((COIN, COIN)))
    assert v == pytest.approx(0.75)
    assert tree[((0,), (1.0,))] is True
    assert tree[((0,), (0.0,))] is False
    fb = Instance((DiscreteDist.point(0.3), DiscreteDist.point(0.6)), Explicit.forward_backward(2))
    v, tree = brute_force_online(fb)
    assert v == pytest.approx(0.6)
    assert tree[((1,), (0.6,))] is True
    assert tree[((0,), (0.3,))] is False


def test_brute_force_cap():
    d = DiscreteDist((0.0, 0.5, 1.0), (0.3, 0.3, 0.4))
    with pytest.raises(CapExceeded):
        brute_force_online(Instance((d,) * 4, RandomOrder()), max_nodes=500)


def test_brute_force_dominates_enumerated_thresholds():
    rng = np.random.default_rng(11)
    for _ in range(20):
        inst = random_instance(rng, n_max=3, atoms_max=3)
        ref, _ = brute_force_online(inst)
        grids = [sorted(set(d.values)) + [INF] for d in inst.dists]
        for levels in itertools.product(*grids):
            for eq in (True, False):
                val = exact_policy_value(ThresholdPolicy(list(levels), accept_equal=eq), inst)
                if inst.profit.maximize:
                    assert ref >= val - 1e-10
                else:
                    assert ref <= val + 1e-10


@pytest.mark.parametrize("order_name", ["adversarial", "random", "explicit"])
def test_dp_matches_brute_force_every_order(order_name):
    rng = np.random.default_rng({"adversarial": 1, "random": 2, "explicit": 3}[order_name])
    for _ in range(60):
        inst = random_instance(rng, n_max=3, atoms_max=3)
        if order_name == "random":
            inst = Instance(inst.dists, RandomOrder(), inst.profit)
        elif order_name == "explicit":
            perms = list(itertools.permutations(range(inst.n)))
            chosen = rng.choice(len(perms), size=min(len(perms), 2), replace=False)
            inst = Instance(inst.dists, Explicit([perms[i] for i in chosen], [0.5, 0.5]
                                                 if len(chosen) == 2 else [1.0]), inst.profit)
        ref, _ = brute_force_online(inst)
        assert abs(opt_online_value(inst) - ref) <= 1e-10
        assert abs(dp_value(inst) - ref) <= 1e-10


def test_threshold_dominance_over_support_grid():
    rng = np.random.default_rng(21)
    for _ in range(30):
        inst = random_instance(rng, n_max=3, atoms_max=3)
        best = opt_online_value(inst)
        grids = [sorted(set(d.values)) + [INF] for d in inst.dists]
        for levels in itertools.product(*grids):
            for eq in (True, False):
                val = exact_policy_value(ThresholdPolicy(list(levels), accept_equal=eq), inst)
                if inst.profit.maximize:
                    assert best >= val - 1e-10
                else:
                    assert best <= val + 1e-10


def test_online_never_beats_offline():
    rng = np.random.default_rng(31)
    for _ in range(100):
        inst = random_instance(rng)
        on, off = opt_online_value(inst), opt_offline_value(inst)
        if inst.profit.maximize:
            assert on <= off + 1e-10
        else:
            assert on >= off - 1e-10


# -- empirical policies ------------------------------------------------------


def test_marginal_dp_example():
    S = SampleSet([[0.4, 0.9], [0.4, 0.1]])
    shape = ProblemShape(2, Adversarial(), Reward())
    pol = empirical_optimal_policy(S, shape)
    assert pol.levels == (0.5, 0.0)
    assert empirical_value(pol, S, Reward()) == pytest.approx(0.5)
    assert empirical_value(ThresholdPolicy([0.0, 0.0]), S, Reward()) == pytest.approx(0.4)
    joint = empirical_optimal_policy(S, shape, "joint-exhaustive")
    assert empirical_value(joint, S, Reward()) == pytest.approx(0.5)


def test_single_sample_marginal_dp_is_point_mass_dp():
    S = SampleSet([[0.3, 0.8, 0.5]])
    shape = ProblemShape(3, Adversarial(), Reward())
    point = Instance(tuple(DiscreteDist.point(v) for v in (0.3, 0.8, 0.5)))
    assert empirical_optimal_policy(S, shape).levels == optimal_policy(point).levels


def test_identical_samples_modes_agree():
    S = SampleSet([[0.3, 0.6]] * 5)
    for kind in (Reward(), BestChoice(), SkiRental(1.0)):
        shape = ProblemShape(2, Adversarial(), kind)
        a = empirical_optimal_policy(S, shape)
        b = empirical_optimal_policy(S, shape, "joint-exhaustive")
        assert empirical_value(a, S, kind) == pytest.approx(empirical_value(b, S, kind))


def test_iid_pooling():
    S = SampleSet([[0.0, 1.0], [0.0, 1.0]])
    inst = empirical_instance(S, ProblemShape(2, Adversarial(), Reward(), iid=True))
    assert inst.dists[0] == inst.dists[1] == DiscreteDist((0.0, 1.0), (0.5, 0.5))
    inst = empirical_instance(S, ProblemShape(2, Adversarial(), Reward()))
    assert inst.dists[0] == DiscreteDist.point(0.0)


def test_explicit_order_learning_uses_observed_perms():
    S = SampleSet([[0.2, 0.7], [0.7, 0.2]], [[0, 1], [1, 0]])
    shape = ProblemShape(2, Explicit.forward_backward(2), Reward())
    inst = empirical_instance(S, shape)
    assert set(inst.order.perms) == {(0, 1), (1, 0)}
    pol = empirical_optimal_policy(S, shape)
    assert pol.default_level == 0.0


def test_joint_exhaustive_refusals():
    shape = ProblemShape(2, RandomOrder(), Reward())
    with pytest.raises(ContractViolation):
        empirical_optimal_policy(SampleSet([[0.1, 0.2]]), shape, "joint-exhaustive")
    big = SampleSet(np.random.default_rng(0).random((30, 5)))
    with pytest.raises(CapExceeded):
        empirical_optimal_policy(big, ProblemShape(5, Adversarial(), Reward()), "joint-exhaustive")
    with pytest.raises(ContractViolation):
        empirical_optimal_policy(SampleSet(np.empty((0, 2))), ProblemShape(2, Adversarial(), Reward()))
    with pytest.raises(ContractViolation):
        empirical_optimal_policy(SampleSet([[0.1, 0.2]]), ProblemShape(2, Adversarial(), Reward()), "nope")


def test_joint_exhaustive_is_the_empirical_argmax():
    rng = np.random.default_rng(41)
    for case in range(40):
        kind = [Reward(), BestChoice(), SkiRental(1.5)][case % 3]
        inst = random_instance(rng, n_max=2, atoms_max=3, profit=kind)
        X, tau = sample_rounds(inst, rng, int(rng.integers(1, 12)))
        S = SampleSet(X, tau)
        shape = ProblemShape(inst.n, Adversarial(), kind)
        joint = empirical_optimal_policy(S, shape, "joint-exhaustive")
        marg = empirical_optimal_policy(S, shape)
        uj = kind.to_utility(empirical_value(joint, S, kind), inst.n)
        um = kind.to_utility(empirical_value(marg, S, kind), inst.n)
        assert uj >= um - 1e-12
        # brute-force check over the candidate grid
        grids = [sorted(set(X[:, i])) + [INF] for i in range(inst.n)]
        for levels in itertools.product(*grids):
            p = ThresholdPolicy(list(levels))
            if isinstance(kind, BestChoice):
                p = EssentiallyThresholdPolicy(p)
            assert uj >= kind.to_utility(empirical_value(p, S, kind), inst.n) - 1e-12


def test_marginal_dp_consistency():
    # near-tie between stopping on 0.5 and waiting for a mean of 0.52
    d = (DiscreteDist((0.1, 0.5), (0.3, 0.7)), DiscreteDist((0.0, 1.0), (0.48, 0.52)))
    inst = Instance(d)
    best = opt_online_value(inst)
    shape = ProblemShape.of(inst)
    rng = np.random.default_rng(7)
    shortfall = {}
    for t in (50, 500):
        gaps = []
        for _ in range(100):
            X, tau = sample_rounds(inst, rng, t)
            pol = empirical_optimal_policy(SampleSet(X, tau), shape)
            gaps.append(best - exact_policy_value(pol, inst))
        shortfall[t] = float(np.mean(gaps))
    assert shortfall[500] < shortfall[50]
    assert shortfall[500] <= eps1(500, ScheduleConfig(B=1.0, kappa=inst.kappa))
