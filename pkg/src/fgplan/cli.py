"""``fgplan`` command line: plan, compare, sweep, decode.

Exit codes: 0 success, 2 bad input or parameters, 3 divergence or no
convergence within ``--max-iter``, 4 infeasible constraints.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import numpy as np

from .backups import BackupRule, Family
from .engine import (Boundary, DivergenceError, InfeasibleError, posteriors,
                     solve_horizon, steady_state)
from .model import ACTION_NAMES, MapFormatError, build_grid_model, load_map
from .policy import (greedy_rollout, parallel_decode, policy_scale,
                     progressive_decode, rule_policy)

EXIT_INPUT, EXIT_DIVERGED, EXIT_INFEASIBLE = 2, 3, 4

# the nine parameterisations of the published comparison
REFERENCE_RULES = ("max-product", "sum-max:3", "sum-product", "dp", "softdp:0.2",
               "softdp:0.6", "max-rew-ent:0.2", "max-rew-ent:1", "max-rew-ent:6")

ARROWS = "↖↑↗←o→↙↓↘"
DIGITS = 12


class CliError(Exception):
    def __init__(self, code, stage, msg):
        super().__init__(msg)
        self.code, self.stage = code, stage


# -- formatting ----------------------------------------------------------------

def fmt(x) -> str:
    return format(float(x), f".{DIGITS}g")


def _round(obj):
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [_round(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round(obj), fh, indent=1, ensure_ascii=False)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


# -- inputs --------------------------------------------------------------------

def _cell(text):
    try:
        r, c = (int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROW,COL, got {text!r}") from None
    return r, c


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def bundled_maps() -> list[str]:
    root = resources.files("fgplan") / "maps"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".map"))


def read_grid(name):
    """A path, or the stem of a bundled map such as ``grid6x6``."""
    path = Path(name)
    try:
        if path.exists():
            return load_map(path.read_text(encoding="utf-8"))
        bundled = resources.files("fgplan") / "maps" / f"{name}.map"
        if bundled.is_file():
            return load_map(bundled.read_text(encoding="utf-8"))
    except MapFormatError as e:
        raise CliError(EXIT_INPUT, "map", f"{name}: {e}") from None
    raise CliError(EXIT_INPUT, "map",
                   f"{name}: no such file or bundled map ({', '.join(bundled_maps())})")


def make_rule(text, alpha=None, beta=None):
    try:
        return BackupRule.parse(text, alpha=alpha, beta=beta)
    except ValueError as e:
        raise CliError(EXIT_INPUT, "rule", f"{text}: {e}") from None


def make_model(args, grid):
    if not 0 < args.gamma <= 1:
        raise CliError(EXIT_INPUT, "model", f"gamma must be in (0, 1], got {args.gamma}")
    if not 0 <= args.intent_prob <= 1:
        raise CliError(EXIT_INPUT, "model", f"intent-prob must be in [0, 1], got {args.intent_prob}")
    return build_grid_model(grid, intent_prob=args.intent_prob, discount=args.gamma)


def check_cell(grid, cell, what):
    r, c = cell
    if not (0 <= r < grid.height and 0 <= c < grid.width):
        raise CliError(EXIT_INPUT, "input", f"{what} {r},{c} is outside the {grid.height}x{grid.width} map")
    return cell


def _limit_threads():
    n = os.environ.get("FGPLAN_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


# -- solving -------------------------------------------------------------------

def solve(model, rule, args):
    try:
        q, v, rep = steady_state(model, rule, tol=args.tol, max_iter=args.max_iter)
    except DivergenceError as e:
        raise CliError(EXIT_DIVERGED, "steady-state", str(e)) from None
    return q, v, rep


# -- outputs -------------------------------------------------------------------

def arrows(grid, policy):
    """One glyph per cell: arrow, ``o`` still, ``*`` goal, ``#`` obstacle, ``+`` tie."""
    lines = []
    ties = policy.tie_counts()
    for r in range(grid.height):
        row = []
        for c in range(grid.width):
            s = r * grid.width + c
            if (r, c) in grid.goals:
                row.append("*")
            elif grid.cells[r][c] == "#":
                row.append("#")
            elif ties[s] > 1:
                row.append("+")
            else:
                row.append(ARROWS[policy.best(s)])
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def grid_rows(values, grid):
    return np.asarray(values).reshape(grid.height, grid.width, *np.shape(values)[1:])


def policy_doc(rule, grid, policy):
    rows = []
    for s in range(policy.n_states):
        r, c = divmod(s, grid.width)
        tied = policy.tied(s)
        rows.append({"cell": [r, c], "pi": policy.probs[s],
                     "best": [ACTION_NAMES[a] for a in tied], "ties": len(tied)})
    return {"rule": rule.spec, "scale": policy_scale(rule), "width": grid.width,
            "height": grid.height, "actions": list(ACTION_NAMES), "rows": rows}


def rollouts(model, grid, policy, starts, max_steps, seed):
    rng = np.random.default_rng(seed) if seed is not None else None
    out = []
    for cell in starts:
        path = greedy_rollout(model, policy, model.state(*cell), max_steps, rng=rng)
        end = model.cell(path.states[-1])
        out.append([cell[0], cell[1], path.steps, int(path.goal_reached), end[0], end[1]])
    return out


def _figures(args):
    if args.no_figures:
        return None
    from . import plotting
    return plotting


# -- commands ------------------------------------------------------------------

def cmd_plan(args):
    grid = read_grid(args.map)
    rule = make_rule(args.rule, args.alpha, args.beta)
    model = make_model(args, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.start is not None:
        check_cell(grid, args.start, "start")
    rep = None
    if args.horizon is not None:
        start = model.state(*args.start) if args.start is not None else None
        try:
            sol = solve_horizon(model, rule, args.horizon, Boundary.from_states(model, start=start))
        except ValueError as e:
            raise CliError(EXIT_INPUT, "horizon", str(e)) from None
        except InfeasibleError as e:
            raise CliError(EXIT_INFEASIBLE, "horizon", str(e)) from None
        q, v = sol.q[0], sol.v[0]
    else:
        q, v, rep = solve(model, rule, args)
    try:
        policy = rule_policy(rule, q, v, floor=model.floor)
    except InfeasibleError as e:
        raise CliError(EXIT_INFEASIBLE, "policy", str(e)) from None

    meta = {"rule": rule.spec, "width": grid.width, "height": grid.height,
            "gamma": model.discount, "intent_prob": args.intent_prob}
    write_json(out / "value.json", {**meta, "values": grid_rows(v, grid)})
    write_json(out / "q.json", {**meta, "actions": list(ACTION_NAMES), "q": grid_rows(q, grid)})
    write_json(out / "policy.json", policy_doc(rule, grid, policy))
    (out / "arrows.txt").write_text(arrows(grid, policy), encoding="utf-8")
    starts = [args.start] if args.start is not None else grid.free_cells()
    max_steps = args.max_steps or grid.width * grid.height
    write_csv(out / "rollouts.csv",
              ["start_row", "start_col", "steps", "goal_reached", "end_row", "end_col"],
              rollouts(model, grid, policy, starts, max_steps, args.seed))
    if rep is not None:
        write_csv(out / "convergence.csv", ["iteration", "increment"],
                  [[k + 1, inc] for k, inc in enumerate(rep.increments)])
    plotting = _figures(args)
    if plotting:
        goals = [model.state(*g) for g in grid.goals]
        plotting.value_map(out / "value.png", v, (grid.height, grid.width), policy, goals,
                           rule.label)
        if rep is not None:
            plotting.increments(out / "increments.png", {rule.label: rep.increments})
    if rep is not None and not rep.converged:
        raise CliError(EXIT_DIVERGED, "steady-state",
                       f"{rule.label}: no convergence in {rep.iterations} iterations "
                       f"(last increment {rep.final_increment:.3g})")
    print(f"{rule.label}: " + (f"{rep.iterations} iterations" if rep else f"horizon {args.horizon}")
          + f", outputs in {out}")
    return 0


def default_point(grid):
    """The free cell nearest the map centre (row-major on ties)."""
    cells = grid.free_cells()
    if not cells:
        raise CliError(EXIT_INPUT, "input", "map has no free cells")
    cr, cc = (grid.height - 1) / 2, (grid.width - 1) / 2
    return min(cells, key=lambda rc: ((rc[0] - cr) ** 2 + (rc[1] - cc) ** 2, rc))


def cmd_compare(args):
    grid = read_grid(args.map)
    specs = args.rules or list(REFERENCE_RULES)
    if len(specs) < 2:
        raise CliError(EXIT_INPUT, "rule", "compare needs at least two rules")
    rules = [make_rule(s) for s in specs]
    model = make_model(args, grid)
    point = check_cell(grid, args.start, "point") if args.start else default_point(grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    header = ["rule", "iterations", "terminated_by", "final_increment", "mean_entropy"]
    if args.timing:
        header.append("wall_time_s")
    rows, inc_rows, series, point_rows, failed = [], [], {}, {}, []
    for rule in rules:
        t0 = time.perf_counter()
        q, v, rep = solve(model, rule, args)
        dt = time.perf_counter() - t0
        policy = rule_policy(rule, q, v, floor=model.floor)
        row = [rule.spec, rep.iterations, rep.terminated_by, rep.final_increment,
               policy.mean_entropy()]
        if args.timing:
            row.append(dt)
        rows.append(row)
        inc_rows.extend([rule.spec, k + 1, x] for k, x in enumerate(rep.increments))
        series[rule.label] = rep.increments
        point_rows[rule.spec] = policy.probs[model.state(*point)]
        if not rep.converged:
            failed.append(rule.label)

    write_csv(out / "comparison.csv", header, rows)
    write_csv(out / "increments.csv", ["rule", "iteration", "increment"], inc_rows)
    write_json(out / "point_policy.json",
               {"cell": list(point), "actions": list(ACTION_NAMES),
                "policies": [{"rule": k, "pi": p} for k, p in point_rows.items()]})
    plotting = _figures(args)
    if plotting:
        plotting.increments(out / "increments.png", series)
        plotting.point_policy(out / "point_policy.png", point_rows, point)
    for row in rows:
        print(f"{row[0]:18s} {row[1]:6d} iterations  entropy {row[4]:.4f}")
    if failed:
        raise CliError(EXIT_DIVERGED, "steady-state", "no convergence: " + ", ".join(failed))
    return 0


def _swept_rule(args, value):
    name = args.rule.partition(":")[0]
    if args.param == "alpha":
        rule = make_rule(name, alpha=value)
        if rule.alpha is None:
            raise CliError(EXIT_INPUT, "rule", f"{name} has no alpha parameter")
    else:
        rule = make_rule(name, beta=value)
        if rule.beta is None:
            raise CliError(EXIT_INPUT, "rule", f"{name} has no beta parameter")
    return rule


def cmd_sweep(args):
    grid = read_grid(args.map)
    if not args.values:
        raise CliError(EXIT_INPUT, "input", "--values is empty")
    base = make_rule(args.rule, args.alpha, args.beta) if args.param == "gamma" else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    dp_argmax = {}
    rows, ent, its = [], [], []
    for value in args.values:
        if args.param == "gamma":
            args_g = argparse.Namespace(**{**vars(args), "gamma": value})
            model, rule = make_model(args_g, grid), base
        else:
            model = make_model(args, grid)
            rule = _swept_rule(args, value)
        q, v, rep = solve(model, rule, args)
        if model.discount not in dp_argmax:
            dq, _, _ = solve(model, BackupRule(Family.DP), args)
            dp_argmax[model.discount] = np.argmax(dq, axis=1)
        policy = rule_policy(rule, q, v, floor=model.floor)
        agree = float(np.mean(np.argmax(q, axis=1) == dp_argmax[model.discount]))
        rows.append([args.param, value, rule.spec, rep.iterations, rep.terminated_by,
                     rep.final_increment, policy.mean_entropy(), agree])
        ent.append(policy.mean_entropy())
        its.append(rep.iterations)
    write_csv(out / "sweep.csv", ["param", "value", "rule", "iterations", "terminated_by",
                                  "final_increment", "mean_entropy", "dp_argmax_agreement"],
              rows)
    plotting = _figures(args)
    if plotting:
        plotting.sweep(out / "sweep.png", args.param, args.values, ent, its)
    for row in rows:
        print(f"{args.param}={fmt(row[1]):8s} {row[3]:6d} iterations  entropy {row[6]:.4f}")
    if any(r[4] != "tolerance" for r in rows):
        raise CliError(EXIT_DIVERGED, "steady-state", "a swept value did not converge")
    return 0


def cmd_decode(args):
    grid = read_grid(args.map)
    rule = make_rule(args.rule, args.alpha, args.beta)
    model = make_model(args, grid)
    start = model.state(*check_cell(grid, args.start, "start")) if args.start else None
    final = model.state(*check_cell(grid, args.final, "final")) if args.final else None
    try:
        sol = solve_horizon(model, rule, args.horizon,
                            Boundary.from_states(model, start=start, final=final))
        prog = progressive_decode(model, sol)
        post = posteriors(sol, model.floor)
    except InfeasibleError as e:
        raise CliError(EXIT_INFEASIBLE, "decode", str(e)) from None
    except ValueError as e:
        raise CliError(EXIT_INPUT, "decode", str(e)) from None
    par = parallel_decode(post, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = lambda states: [list(model.cell(s)) for s in states]
    write_json(out / "decode.json", {
        "rule": rule.spec, "horizon": args.horizon,
        "progressive": {"cells": cells(prog.states),
                        "actions": [ACTION_NAMES[a] for a in prog.actions]},
        "parallel": {"cells": cells(par.states), "connected": par.connected},
        "posteriors": post.reshape(args.horizon, grid.height, grid.width),
    })
    print(f"progressive: {' '.join('%d,%d' % model.cell(s) for s in prog.states)}")
    print(f"parallel:    {' '.join('%d,%d' % model.cell(s) for s in par.states)}"
          f"  (connected={par.connected})")
    return 0


def cmd_oracle(args):
    """Engine against exhaustive enumeration on one random tiny model."""
    from . import oracle
    from .engine import backward_sweep
    from .model import random_model
    rng = np.random.default_rng(args.seed or 0)
    rule = make_rule(args.rule, args.alpha, args.beta)
    T = args.horizon or 2
    model = random_model(rng, 2, 2, discount=args.gamma)
    fam = rule.family
    if fam is Family.DP:
        got = backward_sweep(model, rule, T).v[0]
        want = oracle.brute_dp_value(model, T)
    elif fam is Family.MAX_REW_ENT:
        got = float(np.mean(backward_sweep(model, rule, T).v[0]))
        want = oracle.brute_rew_ent(model, T, rule.alpha).value
    elif fam in (Family.SUM_PRODUCT, Family.SUM_MAX_PRODUCT):
        got = posteriors(solve_horizon(model, rule, T), model.floor)
        want = oracle.brute_marginals(model, T, power=rule.alpha or 1.0)
    elif fam is Family.MAX_PRODUCT:
        sol = solve_horizon(model, rule, T)
        path = progressive_decode(model, sol)
        got = oracle.sequence_score(model, path.states, path.actions)
        want = oracle.brute_map(model, T).score
    else:
        raise CliError(EXIT_INPUT, "oracle", f"no oracle for {rule.label}")
    err = float(np.max(np.abs(np.asarray(got) - np.asarray(want))))
    print(json.dumps({"rule": rule.spec, "horizon": T, "max_abs_error": float(fmt(err))}))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--map", required=True,
                        help="map file, or a bundled map name (grid6x6, semantic17x23)")
    common.add_argument("--gamma", type=float, default=1.0, help="discount (default 1)")
    common.add_argument("--intent-prob", type=float, default=0.5,
                        help="probability of the intended move (default 0.5)")
    common.add_argument("--tol", type=float, default=1e-5)
    common.add_argument("--max-iter", type=int, default=10_000)
    common.add_argument("--out", default="fgplan-out", help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="sample rollouts with this seed instead of following argmaxes")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument("--rule", default="sum-product",
                        help="backup rule, optionally name:param (e.g. softdp:0.2)")
    single.add_argument("--alpha", type=float, default=None)
    single.add_argument("--beta", type=float, default=None)

    p = argparse.ArgumentParser(prog="fgplan", description="Planning as inference on grid maps.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    plan = sub.add_parser("plan", parents=[common, single],
                          help="solve one rule and write value/policy reports")
    plan.add_argument("--horizon", type=int, default=None,
                      help="finite horizon instead of steady state")
    plan.add_argument("--start", type=_cell, default=None, metavar="R,C")
    plan.add_argument("--max-steps", type=int, default=None, help="rollout step cap")
    plan.set_defaults(func=cmd_plan)

    cmp_ = sub.add_parser("compare", parents=[common],
                          help="run several rules and tabulate convergence and entropy")
    cmp_.add_argument("--rules", type=lambda s: [t for t in s.split(",") if t], default=None,
                      help="comma-separated rules (default: the nine reference settings)")
    cmp_.add_argument("--start", type=_cell, default=None, metavar="R,C",
                      help="cell for point_policy.json (default: free cell nearest the centre)")
    cmp_.add_argument("--timing", action="store_true",
                      help="add wall times to comparison.csv (breaks byte-identical reruns)")
    cmp_.set_defaults(func=cmd_compare)

    sw = sub.add_parser("sweep", parents=[common, single], help="sweep alpha, beta or gamma")
    sw.add_argument("--param", choices=("alpha", "beta", "gamma"), required=True)
    sw.add_argument("--values", type=_floats, required=True)
    sw.set_defaults(func=cmd_sweep)

    dec = sub.add_parser("decode", parents=[common, single],
                         help="finite-horizon progressive and parallel decoding")
    dec.add_argument("--horizon", type=int, required=True)
    dec.add_argument("--start", type=_cell, default=None, metavar="R,C")
    dec.add_argument("--final", type=_cell, default=None, metavar="R,C")
    dec.set_defaults(func=cmd_decode)

    orc = sub.add_parser("oracle", parents=[single], help=argparse.SUPPRESS)
    orc.add_argument("--horizon", type=int, default=2)
    orc.add_argument("--gamma", type=float, default=1.0)
    orc.add_argument("--seed", type=int, default=0)
    orc.set_defaults(func=cmd_oracle)
    # keep the hidden command out of the usage line
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "oracle"]
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "tol", 1) <= 0 or getattr(args, "max_iter", 1) < 1:
        print("fgplan: error [input]: --tol must be > 0 and --max-iter >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        with _limit_threads():
            return args.func(args)
    except CliError as e:
        print(f"fgplan: error [{e.stage}]: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
