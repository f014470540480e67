"""JSON file formats and report formatting.

Tree file::

    {"horizon": 2, "nodes": [{"id": "root", "parent": null, "p": null},
                             {"id": "u", "parent": "root", "p": 0.5}, ...]}

Payoff file: a JSON object mapping every node id to a real number.

Measure file: ``{"transitions": {node_id: [q_1, ..., q_k], ...}}``; internal
nodes that are not listed keep their reference transition.

Risk file: one step specification used at every depth, or
``{"steps": [spec_0, ..., spec_{T-1}]}`` with ``spec_t`` used on depth-``t``
nodes.  A step specification is one of::

    {"kind": "expectation", "measure": TABLE}          # measure optional (reference)
    {"kind": "entropic", "gamma": 2.0, "base": TABLE}  # base optional (reference)
    {"kind": "worstcase", "priors": TABLE}             # TABLE entries: list of vectors
    {"kind": "penalized", "entries": TABLE}            # entries: [{"q": [...], "beta": b}, ...]

where ``TABLE`` is either a single value used at every node, or an object
keyed by node id (the key ``"*"`` supplies a fallback).
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any

from riskmon.errors import ValidationError
from riskmon.filtration import ScenarioTree, TreeMeasure, build_tree, check_process
from riskmon.riskcore import DynamicRiskMeasure, Entropic, Expectation, OneStepRiskSpec, Penalized, WorstCase

SIG_DIGITS = 12


def fmt(x: float) -> str:
    """Number with 12 significant digits; ``inf`` for +infinity."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = f"{x:.{SIG_DIGITS}g}"
    return "0" if s == "-0" else s


def json_number(x: float) -> float | str:
    return fmt(x) if math.isinf(x) else float(fmt(x))


def load_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read file: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line.strip()}") from None


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def load_tree(path: str | Path) -> ScenarioTree:
    return build_tree(load_json(path))


def load_payoff(tree: ScenarioTree, path: str | Path) -> dict[str, float]:
    data = load_json(path)
    if not isinstance(data, Mapping):
        raise ValidationError(f"{path}: payoff file must be a JSON object")
    return check_process(tree, data, name="payoff", nonnegative=True)


def load_measure(tree: ScenarioTree, path: str | Path) -> TreeMeasure:
    data = load_json(path)
    if not isinstance(data, Mapping):
        raise ValidationError(f"{path}: measure file must be a JSON object")
    table = data.get("transitions", data)
    return TreeMeasure.from_transitions(tree, table, fill_reference=True)


def _table(obj: Any, nodes: Sequence[str], what: str) -> dict[str, Any]:
    """Resolve a broadcast value or node-keyed object into one entry per node."""
    if isinstance(obj, Mapping):
        out = {}
        for n in nodes:
            if n in obj:
                out[n] = obj[n]
            elif "*" in obj:
                out[n] = obj["*"]
            else:
                raise ValidationError(f"{what} has no entry for node {n!r}")
        return out
    return {n: obj for n in nodes}


def parse_step(tree: ScenarioTree, obj: Mapping[str, Any], nodes: Sequence[str]) -> OneStepRiskSpec:
    kind = obj.get("kind")
    if kind in ("expectation", "entropic"):
        key = "measure" if kind == "expectation" else "base"
        if obj.get(key) is None:
            table = {n: tree.ref_transition(n) for n in nodes}
        else:
            table = _table(obj[key], nodes, key)
        measure = TreeMeasure.from_transitions(tree, table, fill_reference=True)
        if kind == "expectation":
            return Expectation(measure)
        if "gamma" not in obj:
            raise ValidationError("entropic spec needs 'gamma'")
        return Entropic(float(obj["gamma"]), measure)
    if kind == "worstcase":
        return WorstCase.build(_table(obj.get("priors"), nodes, "priors"))
    if kind == "penalized":
        raw = _table(obj.get("entries"), nodes, "entries")
        try:
            entries = {n: [(e["q"], float(e["beta"])) for e in lst] for n, lst in raw.items()}
        except (KeyError, TypeError):
            raise ValidationError("penalized entries need the form {'q': [...], 'beta': b}") from None
        return Penalized.build(entries)
    raise ValidationError(f"unknown risk kind {kind!r}")


def parse_risk(tree: ScenarioTree, obj: Any) -> DynamicRiskMeasure:
    if not isinstance(obj, Mapping):
        raise ValidationError("risk specification must be a JSON object")
    if "steps" in obj:
        steps = obj["steps"]
        if not isinstance(steps, list) or len(steps) != tree.horizon:
            raise ValidationError(f"'steps' must list exactly {tree.horizon} specifications")
        return DynamicRiskMeasure(tree, tuple(parse_step(tree, s, tree.level(t)) for t, s in enumerate(steps)))
    return DynamicRiskMeasure.replicate(tree, parse_step(tree, obj, tree.internal_nodes))


def load_risk(tree: ScenarioTree, path: str | Path) -> DynamicRiskMeasure:
    return parse_risk(tree, load_json(path))
