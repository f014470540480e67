"""Test-corpus generators: binomial trees with intrinsic payoffs and random
instances for the oracle suites."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from riskmon.errors import ValidationError
from riskmon.filtration import ScenarioTree, TreeMeasure, build_tree
from riskmon.riskcore import Entropic, Expectation, OneStepRiskSpec, Penalized, WorstCase
from riskmon.snell import count_stopping_times


@dataclass(frozen=True)
class BinomialGenSpec:
    horizon: int
    s0: float = 100.0
    up: float = 1.2
    down: float = 0.8
    strike: float = 100.0
    kind: str = "put"  # put, call or custom
    p_up: float = 0.5
    table: Sequence[Sequence[float]] | None = None  # custom: table[t][number of ups]

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("binomial horizon must be >= 1")
        if self.up <= 0 or self.down <= 0 or self.s0 <= 0:
            raise ValidationError("initial value and factors must be > 0")
        if not 0 < self.p_up < 1:
            raise ValidationError("up-probability must lie in (0, 1)")
        if self.kind not in ("put", "call", "custom"):
            raise ValidationError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "custom" and self.table is None:
            raise ValidationError("custom payoff needs a table")


def binomial_tree_spec(horizon: int, p_up: float) -> dict:
    """Explicit (non-recombining) binomial tree; node ids spell the path
    (``root``, ``u``, ``d``, ``uu``, ...)."""
    nodes = [{"id": "root", "parent": None, "p": None}]
    level = [""]
    for _ in range(horizon):
        nxt = []
        for path in level:
            for step, p in (("u", p_up), ("d", 1.0 - p_up)):
                nodes.append({"id": path + step, "parent": path or "root", "p": p})
                nxt.append(path + step)
        level = nxt
    return {"horizon": horizon, "nodes": nodes}


def binomial_payoff(tree: ScenarioTree, spec: BinomialGenSpec) -> dict[str, float]:
    """American-style intrinsic value at every node."""
    out = {}
    for n in tree.ids:
        path = "" if n == "root" else n
        ups = path.count("u")
        s = spec.s0 * spec.up**ups * spec.down ** (len(path) - ups)
        if spec.kind == "put":
            out[n] = max(spec.strike - s, 0.0)
        elif spec.kind == "call":
            out[n] = max(s - spec.strike, 0.0)
        else:
            out[n] = float(spec.table[len(path)][ups])
    return out


def generate_binomial(spec: BinomialGenSpec) -> tuple[ScenarioTree, dict[str, float]]:
    tree = build_tree(binomial_tree_spec(spec.horizon, spec.p_up))
    return tree, binomial_payoff(tree, spec)


# -- random instances ------------------------------------------------------


def random_distribution(rng: np.random.Generator, k: int, *, floor: float = 0.02) -> np.ndarray:
    """Dirichlet draw with every entry >= ``floor`` (for k * floor < 1)."""
    w = rng.dirichlet(np.ones(k))
    w = floor + (1.0 - k * floor) * w
    w[-1] = 1.0 - w[:-1].sum()
    return w


def random_tree(
    rng: np.random.Generator,
    *,
    max_horizon: int = 4,
    max_branching: int = 3,
    max_rules: int | None = 5000,
) -> ScenarioTree:
    """Random tree with horizon in ``1..max_horizon`` and per-node branching
    in ``1..max_branching``, redrawn until it has at most ``max_rules``
    stopping times from the root."""
    while True:
        horizon = int(rng.integers(1, max_horizon + 1))
        nodes = [{"id": "n0", "parent": None, "p": None}]
        level, counter = ["n0"], 1
        for _ in range(horizon):
            nxt = []
            for par in level:
                k = int(rng.integers(1, max_branching + 1))
                for p in random_distribution(rng, k):
                    nid = f"n{counter}"
                    counter += 1
                    nodes.append({"id": nid, "parent": par, "p": float(p)})
                    nxt.append(nid)
            level = nxt
        tree = build_tree({"horizon": horizon, "nodes": nodes})
        if max_rules is None or count_stopping_times(tree, 0) <= max_rules:
            return tree


def random_payoff(rng: np.random.Generator, tree: ScenarioTree, low: float = 0.0, high: float = 10.0) -> dict[str, float]:
    return {n: float(rng.uniform(low, high)) for n in tree.ids}


def random_measure(rng: np.random.Generator, tree: ScenarioTree, *, floor: float = 0.02) -> TreeMeasure:
    return TreeMeasure({n: random_distribution(rng, len(tree.children(n)), floor=floor) for n in tree.internal_nodes})


def random_spec(
    rng: np.random.Generator,
    tree: ScenarioTree,
    kind: str,
    *,
    gamma: float = 1.0,
    max_entries: int = 2,
    max_beta: float = 2.0,
) -> OneStepRiskSpec:
    """Random one-step spec of the given kind on every internal node.

    Prior and penalty lists have 1..``max_entries`` strictly positive
    vectors; penalties are uniform on ``[0, max_beta]`` and normalized.
    """
    if kind == "expectation":
        return Expectation(random_measure(rng, tree))
    if kind == "entropic":
        return Entropic(gamma, random_measure(rng, tree))
    lists = {}
    for n in tree.internal_nodes:
        k = len(tree.children(n))
        m = int(rng.integers(1, max_entries + 1))
        lists[n] = [random_distribution(rng, k) for _ in range(m)]
    if kind == "worstcase":
        return WorstCase.build(lists)
    if kind == "penalized":
        return Penalized.build({n: [(q, float(rng.uniform(0, max_beta))) for q in v] for n, v in lists.items()})
    raise ValidationError(f"unknown risk kind {kind!r}")
