"""Command-line front end: ``riskmon <command> [options]``.

Exit codes: 0 success, 2 validation failure, 3 budget exceeded,
4 tolerance failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import math
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from riskmon import duality, snell
from riskmon.errors import BudgetExceeded, ValidationError
from riskmon.filtration import ScenarioTree, TreeMeasure, node_masses
from riskmon.generators import BinomialGenSpec, generate_binomial
from riskmon.io import dump_json, fmt, json_number, load_json, load_measure, load_payoff, load_risk, load_tree
from riskmon.riskcore import check_axioms

EXIT_OK, EXIT_INVALID, EXIT_BUDGET, EXIT_TOLERANCE = 0, 2, 3, 4


def _budget(args, default: int) -> int:
    if args.budget is not None:
        return args.budget
    env = os.environ.get("RISKMON_BUDGET")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"RISKMON_BUDGET is not an integer: {env!r}") from None
    return default


def _require(args, *names: str) -> None:
    for name in names:
        if getattr(args, name) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required for '{args.command}'")


def _check_config(args, tree: ScenarioTree | None = None) -> None:
    if args.tol <= 0:
        raise ValidationError("--tol must be > 0")
    if args.budget is not None and args.budget < 1:
        raise ValidationError("--budget must be >= 1")
    if tree is not None and not 0 <= args.start_depth <= tree.horizon:
        raise ValidationError(f"--start-depth must lie in 0..{tree.horizon}")


def _csv(rows: Sequence[Sequence[object]], comments: Sequence[str] = ()) -> str:
    buf = _io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _inputs(args):
    _require(args, "tree", "payoff", "risk")
    tree = load_tree(args.tree)
    _check_config(args, tree)
    return tree, load_payoff(tree, args.payoff), load_risk(tree, args.risk)


def cmd_validate(args) -> int:
    _require(args, "tree")
    _check_config(args)
    tree = load_tree(args.tree)
    parts = [f"tree ok: horizon={tree.horizon} nodes={len(tree)} leaves={len(tree.leaves)}"]
    if args.payoff:
        load_payoff(tree, args.payoff)
        parts.append("payoff ok")
    for flag in ("risk", "risk2"):
        if getattr(args, flag):
            phi = load_risk(tree, getattr(args, flag))
            parts.append(f"{flag} ok ({', '.join(sorted({s.kind for s in phi.steps}))})")
    if args.measure:
        load_measure(tree, args.measure)
        parts.append("measure ok")
    _emit(args, "\n".join(parts) + "\n")
    return EXIT_OK


def cmd_envelope(args) -> int:
    tree, H, phi = _inputs(args)
    res = snell.snell(phi, H, args.start_depth, workers=args.workers, rel_tol=args.tol)
    stops = res.tau.stop_nodes
    if args.format == "json":
        doc = {
            "start_depth": args.start_depth,
            "risk_at_start": {a: json_number(v) for a, v in res.risk_at_start.items()},
            "nodes": [
                {"id": n, "H": json_number(H[n]), "U": json_number(res.envelope[n]), "stop": n in stops}
                for n in tree.ids
            ],
            "tau": [n for n in tree.ids if n in stops],
            "tau_depths": res.tau.stop_depths(tree),
        }
        _emit(args, dump_json(doc))
    else:
        rows = [("node_id", "H", "U", "stop_flag")]
        rows += [(n, fmt(H[n]), fmt(res.envelope[n]), str(n in stops).lower()) for n in tree.ids]
        _emit(args, _csv(rows))
    return EXIT_OK


def cmd_oracle(args) -> int:
    tree, H, phi = _inputs(args)
    budget = _budget(args, snell.DEFAULT_ENUM_BUDGET)
    res = snell.snell(phi, H, args.start_depth, workers=args.workers, rel_tol=args.tol)
    brute = snell.brute_force_max_risk(phi, H, args.start_depth, budget=budget, workers=args.workers)
    attained = snell.risk_of_stopping(phi, H, res.tau)
    gaps = {
        a: max(abs(res.risk_at_start[a] - brute.values[a]), abs(attained[a] - brute.values[a]))
        for a in tree.level(args.start_depth)
    }
    worst = max(gaps.values())
    if args.format == "json":
        doc = {
            "start_depth": args.start_depth,
            "stopping_times_enumerated": brute.count,
            "max_gap": json_number(worst),
            "atoms": [
                {
                    "id": a,
                    "envelope": json_number(res.risk_at_start[a]),
                    "brute_force": json_number(brute.values[a]),
                    "tau_risk": json_number(attained[a]),
                    "gap": json_number(gaps[a]),
                    "argmax": [n for n in tree.ids if n in brute.argmax[a].stop_nodes],
                }
                for a in tree.level(args.start_depth)
            ],
        }
        _emit(args, dump_json(doc))
    else:
        rows = [("atom_id", "envelope", "brute_force", "tau_risk", "gap")]
        rows += [
            (a, fmt(res.risk_at_start[a]), fmt(brute.values[a]), fmt(attained[a]), fmt(gaps[a]))
            for a in tree.level(args.start_depth)
        ]
        _emit(args, _csv(rows, [f"max_gap: {fmt(worst)}", f"stopping_times_enumerated: {brute.count}"]))
    return EXIT_OK if worst <= args.tol else EXIT_TOLERANCE


def cmd_compare(args) -> int:
    tree, H, phi_a = _inputs(args)
    _require(args, "risk2")
    phi_b = load_risk(tree, args.risk2)
    rep = snell.compare_monitors(
        phi_a, phi_b, H, args.start_depth, seed=args.seed, tol=args.tol, workers=args.workers
    )
    if args.format == "json":
        doc = {
            "direction": rep.direction,
            "verdict": rep.verdict,
            "max_one_step_diff": json_number(rep.max_one_step_diff),
            "min_one_step_diff": json_number(rep.min_one_step_diff),
            "nodes": [
                {"id": n, "H": json_number(H[n]), "U_a": json_number(rep.U_a[n]), "U_b": json_number(rep.U_b[n])}
                for n in tree.ids
            ],
            "paths": [{"leaf": l, "tau_a": rep.tau_a[l], "tau_b": rep.tau_b[l]} for l in tree.leaves],
            "notes": rep.notes,
        }
        _emit(args, dump_json(doc))
    else:
        rows = [("kind", "id", "H", "a", "b")]
        rows += [("node", n, fmt(H[n]), fmt(rep.U_a[n]), fmt(rep.U_b[n])) for n in tree.ids]
        rows += [("path", l, "", rep.tau_a[l], rep.tau_b[l]) for l in tree.leaves]
        _emit(args, _csv(rows, [f"direction: {rep.direction}", f"verdict: {rep.verdict}"]))
    if rep.no_order:
        return EXIT_OK
    return EXIT_OK if rep.envelope_ok and rep.stopping_ok else EXIT_TOLERANCE


def cmd_gen(args) -> int:
    table = load_json(args.table) if args.table else None
    spec = BinomialGenSpec(
        horizon=args.horizon,
        s0=args.s0,
        up=args.up,
        down=args.down,
        strike=args.strike,
        kind=args.kind,
        p_up=args.p_up,
        table=table,
    )
    tree, H = generate_binomial(spec)
    tree_doc = tree.to_spec()
    payoff_doc = {n: json_number(H[n]) for n in tree.ids}
    if args.tree and args.payoff:
        Path(args.tree).write_text(dump_json(tree_doc), encoding="utf-8")
        Path(args.payoff).write_text(dump_json(payoff_doc), encoding="utf-8")
    else:
        _emit(args, dump_json({"tree": tree_doc, "payoff": payoff_doc}))
    return EXIT_OK


def cmd_penalty(args) -> int:
    _require(args, "tree", "risk", "measure")
    tree = load_tree(args.tree)
    _check_config(args, tree)
    phi = load_risk(tree, args.risk)
    Q = load_measure(tree, args.measure)
    rows_out = []
    for t in range(args.start_depth, tree.horizon):
        closed = duality.minimal_penalty(phi, Q, t).values
        oracle = _oracle_penalty(phi, Q, t, args.workers) if args.oracle else None
        for a in tree.level(t):
            rows_out.append((a, closed[a], None if oracle is None else oracle[a]))
    if args.format == "json":
        doc = [
            {"atom_id": a, "value": json_number(v), **({} if o is None else {"oracle": json_number(o)})}
            for a, v, o in rows_out
        ]
        _emit(args, dump_json(doc))
    else:
        header = ("atom_id", "value", "oracle") if args.oracle else ("atom_id", "value")
        rows = [header] + [(a, fmt(v)) + (() if o is None else (fmt(o),)) for a, v, o in rows_out]
        _emit(args, _csv(rows))
    return EXIT_OK


def _oracle_penalty(phi, Q: TreeMeasure, t: int, workers: int) -> dict[str, float]:
    """Accumulated penalty with every node-local term taken from the grid oracle."""
    tree = phi.tree
    masses = node_masses(tree, Q)
    out = {}
    for atom in tree.level(t):
        if masses[atom] == 0.0:
            out[atom] = math.inf
            continue
        total = 0.0
        for d in range(t, tree.horizon):
            for n in tree.descendants_at(atom, d):
                if masses[n] > 0.0:
                    local = duality.minimal_penalty_oracle(
                        phi.step_at(n), n, Q.transition[n], detect_divergence=True, workers=workers
                    )
                    total += masses[n] / masses[atom] * local
        out[atom] = total
    return out


def cmd_axioms(args) -> int:
    _require(args, "tree", "risk")
    tree = load_tree(args.tree)
    _check_config(args, tree)
    phi = load_risk(tree, args.risk)
    rep = check_axioms(phi, tree, args.samples, args.seed, tol=args.tol)
    _emit(args, "\n".join(rep.lines()) + "\n")
    return EXIT_OK if rep.passed else EXIT_TOLERANCE


COMMANDS = {
    "validate": cmd_validate,
    "envelope": cmd_envelope,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
    "gen": cmd_gen,
    "penalty": cmd_penalty,
    "axioms": cmd_axioms,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tree", help="tree JSON file (output path for 'gen')")
    common.add_argument("--payoff", help="payoff JSON file (output path for 'gen')")
    common.add_argument("--risk", help="risk-measure JSON file")
    common.add_argument("--risk2", help="second risk-measure JSON file (compare)")
    common.add_argument("--measure", help="measure JSON file (penalty)")
    common.add_argument("--start-depth", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-9)
    common.add_argument("--budget", type=int, default=None)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1, help="worker threads for library calls")

    parser = argparse.ArgumentParser(prog="riskmon", description="Monitoring dates of maximal risk on scenario trees.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("validate", "envelope", "oracle", "compare"):
        sub.add_parser(name, parents=[common])
    gen = sub.add_parser("gen", parents=[common], help="binomial tree with intrinsic payoff")
    gen.add_argument("--horizon", "-T", type=int, default=2)
    gen.add_argument("--s0", type=float, default=100.0)
    gen.add_argument("--up", type=float, default=1.2)
    gen.add_argument("--down", type=float, default=0.8)
    gen.add_argument("--strike", type=float, default=100.0)
    gen.add_argument("--kind", choices=("put", "call", "custom"), default="put")
    gen.add_argument("--p-up", type=float, default=0.5)
    gen.add_argument("--table", help="custom payoff table JSON: table[t][number of ups]")
    pen = sub.add_parser("penalty", parents=[common])
    pen.add_argument("--oracle", action="store_true", help="add a grid-oracle cross-check column")
    ax = sub.add_parser("axioms", parents=[common])
    ax.add_argument("--samples", type=int, default=1000)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetExceeded as exc:
        print(f"error: BudgetExceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
