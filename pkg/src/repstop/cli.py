"""Command-line entry point: ``repstop <subcommand> ...``.

Exit status is 0 on success, 2 for a bad configuration and 3 when an
oracle cross-check fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from .harness import (
    ExperimentConfig,
    counterexample_instance,
    counterexample_regret,
    fit_regret_exponent,
    ftl_exact_regret,
    lower_bound_table,
    run_experiment,
    write_csv,
    write_summary,
)
from .model import (
    BestChoice,
    CapExceeded,
    ContractViolation,
    Reward,
    instance_from_json,
    load_instance,
    random_instance,
)
from .optimal import ProblemShape, brute_force_online, dp_value, opt_online_value
from .switching import ScheduleConfig, schedule_table

EXIT_OK, EXIT_CONFIG, EXIT_ORACLE = 0, 2, 3

log = logging.getLogger("repstop")


def fmt12(x: float) -> str:
    """Fixed-point decimal with exactly 12 significant digits."""
    if math.isinf(x) or math.isnan(x):
        return str(x)
    if x == 0:
        return "0." + "0" * 11
    decimals = max(0, 11 - math.floor(math.log10(abs(x))))
    s = f"{x:.{decimals}f}"
    # rounding may carry into a new leading digit
    if len(s.lstrip("-").replace(".", "").lstrip("0")) > 12 and decimals > 0:
        s = f"{x:.{decimals - 1}f}"
    return s


def _schedule_from(obj: dict, shape: ProblemShape) -> ScheduleConfig:
    obj = dict(obj or {})
    obj.setdefault("B", shape.bound)
    obj.setdefault("kappa", shape.kappa)
    return ScheduleConfig(**obj)


def _suffixed(path: str, suffix: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}{suffix}{ext or '.csv'}"


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        conf = json.load(fh)
    if "instance" in conf:
        inst = instance_from_json(conf["instance"])
    else:
        base = os.path.dirname(os.path.abspath(args.config))
        inst = load_instance(os.path.join(base, conf["instance_path"]))
    shape = ProblemShape.of(inst)
    sched = _schedule_from(conf.get("schedule"), shape)
    horizons = conf["T"] if isinstance(conf["T"], list) else [conf["T"]]
    output = args.output or conf.get("output")
    reports = []
    for T in horizons:
        cfg = ExperimentConfig(
            inst, int(T), int(conf.get("trials", 1)), int(conf.get("seed", 0)),
            conf.get("selector", "adaptive"), conf.get("family", "prophet_ss"), sched,
            conf.get("learner", "marginal-dp"), output,
        )
        reports.append(run_experiment(cfg))
    exponent = None
    if len(reports) >= 3:
        exponent = fit_regret_exponent([(r.config["T"], r.final_regret) for r in reports])
    if output:
        for T, rep in zip(horizons, reports):
            path = output if len(reports) == 1 else _suffixed(output, f"_T{T}")
            write_csv(rep, path)
        write_summary(reports[-1], os.path.splitext(output)[0] + ".json", exponent)
    print(json.dumps(reports[-1].summary(exponent), indent=2))
    return EXIT_OK


def cmd_lower_bound(args) -> int:
    eps = args.eps if args.eps is not None else 1.0 / (8.0 * math.sqrt(args.T))
    profit = BestChoice() if args.profit == "best_choice" else Reward()
    out = lower_bound_table(eps, profit)
    out["T"] = args.T
    out["eps_over_12"] = eps / 12.0
    regret = ftl_exact_regret(args.T, profit, args.tie)
    out["ftl_regret"] = regret
    out["ftl_regret_over_sqrt_T"] = regret / math.sqrt(args.T)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_counterexample(args) -> int:
    inst = counterexample_instance(args.eps)
    sched = ScheduleConfig.for_shape(ProblemShape.of(inst), scale=args.scale)
    cfg = ExperimentConfig(inst, args.T, args.trials, args.seed, args.selector, "prophet_ss",
                           sched, output=args.output)
    rep = run_experiment(cfg)
    out = rep.summary()
    out["predicted_baseline_regret"] = counterexample_regret(args.eps, args.T)
    if args.output:
        write_csv(rep, args.output)
        write_summary(rep, os.path.splitext(args.output)[0] + ".json")
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = ScheduleConfig(t0=args.t0, variant=args.variant, B=args.B, kappa=args.kappa,
                         scale=args.scale, delta1_form=args.delta1_form)
    table = schedule_table(args.t_max, cfg)
    cols = ["t", "zeta", "eps1", "delta1", "eps", "delta"]
    print(",".join(cols))
    for i in range(len(table["t"])):
        cells = [str(table["t"][i]), str(table["zeta"][i])]
        cells += [fmt12(table[c][i]) for c in cols[2:]]
        print(",".join(cells))
    return EXIT_OK


def verify_oracle(seed: int = 0, cases: int = 200, tol: float = 1e-10):
    """Compare the threshold DP with brute-force backward induction on random instances.

    Returns ``(worst_error, failures)``.
    """
    rng = np.random.default_rng(seed)
    worst, failures = 0.0, []
    for case in range(cases):
        inst = random_instance(rng)
        ref, _ = brute_force_online(inst)
        for name, val in (("policy", opt_online_value(inst)), ("dp", dp_value(inst))):
            err = abs(val - ref)
            worst = max(worst, err)
            if err > tol:
                failures.append((case, name, val, ref))
    return worst, failures


def cmd_verify_oracle(args) -> int:
    worst, failures = verify_oracle(args.seed, args.cases)
    for case, name, val, ref in failures:
        print(f"case {case}: {name} value {val!r} != brute force {ref!r}")
    status = "FAIL" if failures else "PASS"
    print(f"{status}: {args.cases} instances, worst |error| = {worst:.3e}")
    return EXIT_ORACLE if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repstop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a repeated-stopping experiment from a JSON config")
    s.add_argument("config")
    s.add_argument("--output", help="CSV path (overrides the config)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("lower-bound", help="exact lower-bound instance values and FTL regret")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--profit", choices=["reward", "best_choice"], default="reward")
    s.add_argument("--tie", choices=["plus", "split"], default="plus")
    s.set_defaults(func=cmd_lower_bound)

    s = sub.add_parser("counterexample", help="single-sample rule on the linear-regret instance")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--selector", default="baseline-only")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_counterexample)

    s = sub.add_parser("schedule", help="print the switching schedule")
    s.add_argument("--t-max", type=int, required=True)
    s.add_argument("--variant", choices=["general", "pi-refined"], default="general")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--kappa", type=int, default=1)
    s.add_argument("--B", type=float, default=1.0)
    s.add_argument("--t0", type=int, default=1)
    s.add_argument("--delta1-form", choices=["half", "doubled"], default="half")
    s.set_defaults(func=cmd_schedule)

    s = sub.add_parser("verify-oracle", help="cross-check the DP against brute force")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cases", type=int, default=200)
    s.set_defaults(func=cmd_verify_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractViolation, CapExceeded, KeyError, TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
