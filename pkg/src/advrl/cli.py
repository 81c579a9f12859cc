"""Command-line front end.

Every command prints a JSON report ``{command, inputs, values, tolerances,
wall_time}`` and optionally writes it to ``--output``. Exit status is 0 on
success, 1 on a model or validation error and 2 on a scope refusal.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings

import numpy as np

from .constraints import SURFACES, build_constraints, load_objective
from .defense import defense_backward_induction, solve_zero_sum_tbsg
from .errors import AdvRLError, ModelError, ObservationSurfaceEnabled, ScopeRefusal
from .gridworld import SURFACE_OF, GridLayout, GridScenario, reference_layout, render_trajectory, run_scenario
from .linear import LinearComponents, build_meta_features, verify_linear_consistency
from .mdp import evaluate_policy, validate_policy, validate_pomdp
from .meta import build_meta_game, build_meta_mdp
from .planner import AttackEnvironment, learn_attack_qlearning, plan_attack
from .policy import AttackPolicy
from .sim import exact_values, monte_carlo_values, run_episode

COMMANDS = ("validate", "plan-attack", "plan-defense", "simulate", "gridworld-demo", "verify-linear")

REQUIRED = {
    "validate": ("env",),
    "plan-attack": ("env", "policy", "constraints"),
    "plan-defense": ("env", "constraints"),
    "simulate": ("env", "policy"),
    "gridworld-demo": (),
    "verify-linear": ("linear",),
}


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ModelError(f"{path}: {exc.strerror}") from exc


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _objective(args):
    if args.objective is None:
        return load_objective(None)
    if args.objective == "negate_reward":
        return load_objective("negate_reward")
    return load_objective(_load_json(args.objective))


def _model(args):
    return validate_pomdp(_load_json(args.env))


def _victim(args, M):
    return validate_policy(_load_json(args.policy), M)


def _constraints(args, M):
    return build_constraints(_load_json(args.constraints) if args.constraints else {}, M)


def _write_trace(path, trajs, support):
    with open(path, "w") as fh:
        for label, traj in trajs:
            for line in traj.to_jsonl(support).splitlines():
                rec = json.loads(line)
                fh.write(json.dumps({"run": label, **rec}) + "\n")


# ---------------------------------------------------------------- commands


def cmd_validate(args):
    M = _model(args)
    values = {
        "n_states": M.n_states,
        "n_observations": M.n_obs,
        "n_actions": M.n_actions,
        "n_rewards": M.n_rewards,
        "mode": "finite" if M.finite else "discounted",
        "fully_observable": M.fully_observable,
    }
    if args.policy:
        pi = _victim(args, M)
        values["policy_kind"] = pi.kind
        values["policy_value"] = evaluate_policy(M, pi).start_value(M.mu)
    if args.constraints:
        values["active_surfaces"] = _constraints(args, M).active_surfaces
    if args.objective:
        values["objective"] = _objective(args).kind
    return values, {}


def cmd_plan_attack(args):
    M = _model(args)
    pi = _victim(args, M)
    B = _constraints(args, M)
    g = _objective(args)
    clean = exact_values(M, pi, AttackPolicy.identity(B, g))
    if args.learn:
        env = AttackEnvironment(M, pi, B, g)
        sol = learn_attack_qlearning(env, args.episodes, args.seed)
        tolerances = {"episodes": args.episodes}
    else:
        sol = plan_attack(build_meta_mdp(M, pi, B, g), args.epsilon)
        tolerances = {"epsilon": args.epsilon}
    attacked = exact_values(M, pi, sol.policy)
    if args.policy_out:
        _write_json(args.policy_out, sol.to_dict())
    values = {
        "mode": sol.mode,
        "provenance": sol.policy.provenance,
        "meta_value": sol.meta_value,
        "objective_value": sol.objective_value,
        "clean_victim_value": clean.victim,
        "clean_attacker_value": clean.attacker,
        "attacked_victim_value": attacked.victim,
        "attacked_attacker_value": attacked.attacker,
        "policy_entries": len(sol.policy.table),
    }
    if args.trace:
        _write_trace(args.trace, [("attacked", run_episode(M, pi, sol.policy, seed=args.seed))], M.reward_support)
    return values, tolerances


def cmd_plan_defense(args):
    M = _model(args)
    B = _constraints(args, M)
    g = _objective(args)
    if B.enabled("observation"):
        raise ObservationSurfaceEnabled(
            "observation attacks make the defense problem partially observable and NP-hard; refusing"
        )
    if M.finite:
        sol = defense_backward_induction(M, B, g, zero_sum=args.zero_sum)
    else:
        sol = solve_zero_sum_tbsg(build_meta_game(M, B, g), args.epsilon)
    if args.policy_out:
        _write_json(args.policy_out, sol.to_dict())
    values = {
        "mode": sol.mode,
        "zero_sum": sol.zero_sum,
        "victim_value": sol.victim_value,
        "attacker_value": sol.attacker_value,
        "victim_policy": sol.victim_policy.to_dict(),
    }
    if args.trace:
        traj = run_episode(M, sol.victim_policy, sol.attacker_response, seed=args.seed)
        _write_trace(args.trace, [("defense", traj)], M.reward_support)
    return values, {"epsilon": args.epsilon, "best_response": sol.tolerance}


def cmd_simulate(args):
    M = _model(args)
    pi = _victim(args, M)
    B = _constraints(args, M)
    g = _objective(args)
    nu = AttackPolicy.from_dict(_load_json(args.attack), B, g) if args.attack else AttackPolicy.identity(B, g)
    mc = monte_carlo_values(M, pi, nu, args.episodes, args.seed)
    ex = exact_values(M, pi, nu)
    values = {
        "episodes": mc.n_episodes,
        "steps": mc.steps,
        "victim_mean": mc.victim_mean,
        "victim_stderr": mc.victim_stderr,
        "attacker_mean": mc.attacker_mean,
        "attacker_stderr": mc.attacker_stderr,
        "victim_exact": ex.victim,
        "attacker_exact": ex.attacker,
    }
    if args.trace:
        _write_trace(args.trace, [("episode", run_episode(M, pi, nu, seed=args.seed))], M.reward_support)
    return values, {"tail_bound": mc.tail_bound}


def cmd_gridworld_demo(args):
    layout = GridLayout.load(args.layout) if args.layout else reference_layout()
    surfaces = list(SURFACE_OF) if args.surface == "all" else [args.surface]
    g = _objective(args)
    out = {}
    trace = []
    for surface in surfaces:
        res = run_scenario(GridScenario(layout, surface, g), args.epsilon)
        entry = {
            "clean_value": res.clean_value,
            "attacked_value": res.attacked_value,
            "defense_value": res.defense_value,
            "attacked_reaches_goal": layout.index(*layout.goal) in res.trajectories["attacked"].states(),
            "attacked_ends_at_goal": res.trajectories["attacked"].final_state == layout.index(*layout.goal),
            "notice": res.notice,
            "render": {k: render_trajectory(layout, t).split("\n") for k, t in res.trajectories.items()},
        }
        out[surface] = entry
        trace.extend((f"{surface}/{k}", t) for k, t in res.trajectories.items())
    if args.trace:
        _write_trace(args.trace, trace, np.array([-float(layout.horizon), 0.0, 1.0]))
    if len(surfaces) == 1:
        values = out[surfaces[0]]
        values = {"surface": surfaces[0], **values}
    else:
        values = {"clean_value": out[surfaces[0]]["clean_value"], "surfaces": out}
    return values, {"epsilon": args.epsilon}


def cmd_verify_linear(args):
    lc = LinearComponents.from_dict(_load_json(args.linear)).validate()
    g = _objective(args)
    M = lc.induced_model(horizon=args.horizon)
    pi = lc.induced_policy()
    rules = _load_json(args.constraints) if args.constraints else dict.fromkeys(SURFACES, "all")
    B = build_constraints(rules, M)
    mf = build_meta_features(lc, g)
    meta = build_meta_mdp(M, pi, B, g, prune=False)
    errs = verify_linear_consistency(mf, meta)
    values = {"d_M": lc.d_M, "d_pi": lc.d_pi, "d_bar": mf.d_bar, **errs, "meta_states": meta.n_states}
    return values, {"consistency": 1e-12}


HANDLERS = {
    "validate": cmd_validate,
    "plan-attack": cmd_plan_attack,
    "plan-defense": cmd_plan_defense,
    "simulate": cmd_simulate,
    "gridworld-demo": cmd_gridworld_demo,
    "verify-linear": cmd_verify_linear,
}


# ---------------------------------------------------------------- plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advrl", description="Optimal attacks and defenses for tabular RL.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--env", help="environment JSON file")
        p.add_argument("--policy", help="victim policy JSON file")
        p.add_argument("--constraints", help="attack constraints JSON file")
        p.add_argument("--objective", help="objective JSON file or 'negate_reward'")
        p.add_argument("--epsilon", type=float, default=1e-8)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output", help="also write the report here")
        p.add_argument("--trace", help="write sampled trajectories as JSON lines")
        p.add_argument("--policy-out", help="write the computed policy file")
        p.add_argument("--no-timing", action="store_true", help="report wall_time as null")
        if name == "plan-attack":
            p.add_argument("--learn", action="store_true", help="Q-learning instead of exact planning")
            p.add_argument("--episodes", type=int, default=5000)
        if name == "plan-defense":
            p.add_argument("--zero-sum", action="store_true", help="worst case over the raw feasibility sets")
        if name == "simulate":
            p.add_argument("--attack", help="attack policy JSON file (identity if omitted)")
            p.add_argument("--episodes", type=int, default=10000)
        if name == "gridworld-demo":
            p.add_argument("--layout", help="layout JSON file (reference layout if omitted)")
            p.add_argument("--surface", default="action", choices=sorted(SURFACE_OF) + ["all"])
        if name == "verify-linear":
            p.add_argument("--linear", help="linear components JSON file")
            p.add_argument("--horizon", type=int, default=2)
    return parser


def _inputs(args) -> dict:
    skip = {"command", "no_timing", "output"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def dispatch(args) -> tuple[int, dict]:
    env_seed = os.environ.get("ADVRL_SEED")
    if env_seed is not None:
        args.seed = int(env_seed)
    start = time.perf_counter()
    report = {"command": args.command, "inputs": _inputs(args), "values": None, "tolerances": None}
    status = 0
    try:
        if args.epsilon <= 0:
            raise ModelError("--epsilon must be positive")
        missing = [f"--{name}" for name in REQUIRED[args.command] if getattr(args, name, None) is None]
        if missing:
            raise ModelError(f"{args.command} needs {', '.join(missing)}")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            values, tolerances = HANDLERS[args.command](args)
        report["values"] = values
        report["tolerances"] = tolerances
        if caught:
            report["warnings"] = [f"{w.category.__name__}: {w.message}" for w in caught]
    except ScopeRefusal as exc:
        status = 2
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "scope_refusal": True}
    except AdvRLError as exc:
        status = 1
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    report["wall_time"] = None if args.no_timing else time.perf_counter() - start
    return status, report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    status, report = dispatch(args)
    text = json.dumps(report, indent=2)
    print(text)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    if status:
        print(f"advrl {args.command}: {report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
