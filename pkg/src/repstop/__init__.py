"""Repeated optimal stopping: threshold policies, exact optimal values, single-sample
baselines and an adaptive rule that switches to the learned policy once it is
provably better."""

from .baselines import (
    FAMILIES,
    adversarial_secretary_single_sample,
    baseline_for_round,
    baseline_policy,
    classical_secretary,
    last_success_one_sample,
    prophet_single_sample,
    ski_rental_randomized,
)
from .harness import (
    ExperimentConfig,
    Report,
    counterexample_instance,
    counterexample_regret,
    fit_regret_exponent,
    ftl_exact_regret,
    lower_bound_instances,
    lower_bound_table,
    run_experiment,
)
from .model import (
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
    RoundRealization,
    SampleSet,
    SkiRental,
    instance_from_json,
    load_instance,
    offline_best,
    profit,
    sample_round,
    sample_rounds,
)
from .optimal import (
    ProblemShape,
    brute_force_online,
    dp_value,
    empirical_optimal_policy,
    opt_offline_value,
    opt_online_value,
    optimal_policy,
)
from .policies import (
    CumulativeCostPolicy,
    EssentiallyThresholdPolicy,
    IndexGatePolicy,
    ObservationRankPolicy,
    RandomLevelSkiPolicy,
    ThresholdPolicy,
    UniformPickPolicy,
    UniformRandomPick,
    empirical_value,
    exact_policy_value,
    run_policy,
)
from .switching import ScheduleConfig, adaptive_select, c_event, schedule, zeta

__version__ = "0.1.0"
