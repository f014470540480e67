"""Upper Snell envelopes and stopping times of maximal risk.

Sign convention: the risk of stopping ``H`` at ``theta`` is ``rho_t(-H_theta)``,
the risk of the liability ``-H_theta``.  The envelope is
``U_t = max_{theta >= t} rho_t(-H_theta)``, obtained by backward induction
``U_T = H_T``, ``U_t = max(H_t, rho_t(-U_{t+1}))``.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from riskmon.errors import BudgetExceeded, InconsistentInputs, ValidationError, ZeroMassAtom
from riskmon.filtration import ScenarioTree, TreeMeasure, check_process, node_masses
from riskmon.riskcore import (
    DynamicRiskMeasure,
    WorstCase,
    eval_at_atom,
    eval_dynamic,
    eval_one_step,
    parallel_map,
)

STOP_TOL = 1e-9
DEFAULT_ENUM_BUDGET = 10**6
DEFAULT_PASTING_BUDGET = 10**5
_CHUNK_ROWS = 1 << 15


def hits(h: float, u: float, rel_tol: float = STOP_TOL) -> bool:
    """Whether the payoff has reached the envelope (``H = U`` up to tolerance)."""
    return abs(h - u) <= rel_tol * max(1.0, abs(u))


@dataclass(frozen=True)
class StoppingRegion:
    """A stopping time ``theta >= start_depth`` given by the nodes where it stops."""

    stop_nodes: frozenset[str]
    start_depth: int

    def validate(self, tree: ScenarioTree) -> None:
        """Check that every path below depth ``start_depth`` meets exactly one stop node."""
        for n in self.stop_nodes:
            if tree.depth(n) < self.start_depth:
                raise ValidationError(f"stop node {n!r} above start depth {self.start_depth}")
        for leaf in tree.leaves:
            hit = [n for n in tree.path(leaf)[self.start_depth:] if n in self.stop_nodes]
            if len(hit) != 1:
                raise ValidationError(f"path to {leaf!r} meets {len(hit)} stop nodes")

    def stop_node(self, tree: ScenarioTree, leaf: str) -> str:
        for n in tree.path(leaf)[self.start_depth:]:
            if n in self.stop_nodes:
                return n
        raise ValidationError(f"path to {leaf!r} never stops")

    def stop_depths(self, tree: ScenarioTree) -> dict[str, int]:
        """Stopping date along the path to each leaf."""
        return {leaf: tree.depth(self.stop_node(tree, leaf)) for leaf in tree.leaves}


@dataclass
class SnellResult:
    envelope: dict[str, float]
    tau: StoppingRegion
    risk_at_start: dict[str, float]


def upper_snell(phi: DynamicRiskMeasure, H: Mapping[str, float], *, workers: int = 1) -> dict[str, float]:
    """Upper Snell envelope of the nonnegative process ``H`` under ``phi``."""
    tree = phi.tree
    H = check_process(tree, H, name="payoff", nonnegative=True)
    U = {leaf: H[leaf] for leaf in tree.leaves}
    for d in range(tree.horizon - 1, -1, -1):
        step = phi.steps[d]

        def value(n):
            cont = eval_one_step(step, n, [-U[c] for c in tree.children(n)])
            return max(H[n], cont)

        level = tree.level(d)
        U.update(zip(level, parallel_map(value, level, workers)))
    return {n: U[n] for n in tree.ids}


def maximal_risk_time(
    tree: ScenarioTree, U: Mapping[str, float], H: Mapping[str, float], t: int = 0, *, rel_tol: float = STOP_TOL
) -> StoppingRegion:
    """First time at or after ``t`` that ``H`` meets its envelope ``U``."""
    for n in tree.ids:
        if U[n] < H[n] and not hits(H[n], U[n], rel_tol):
            raise InconsistentInputs(f"envelope below payoff at {n!r}: U={U[n]!r} < H={H[n]!r}")
    stops = set()
    frontier = list(tree.level(t))
    while frontier:
        nxt = []
        for n in frontier:
            if tree.is_leaf(n) or hits(H[n], U[n], rel_tol):
                stops.add(n)
            else:
                nxt.extend(tree.children(n))
        frontier = nxt
    return StoppingRegion(frozenset(stops), t)


def snell(phi: DynamicRiskMeasure, H: Mapping[str, float], t: int = 0, *, workers: int = 1, rel_tol: float = STOP_TOL) -> SnellResult:
    U = upper_snell(phi, H, workers=workers)
    tau = maximal_risk_time(phi.tree, U, H, t, rel_tol=rel_tol)
    return SnellResult(U, tau, {a: U[a] for a in phi.tree.level(t)})


# -- exhaustive enumeration ------------------------------------------------


def _local_count(tree: ScenarioTree, node: str) -> int:
    if tree.is_leaf(node):
        return 1
    prod = 1
    for c in tree.children(node):
        prod *= _local_count(tree, c)
    return 1 + prod


def count_stopping_times(tree: ScenarioTree, t: int = 0) -> int:
    """Number of stopping times ``theta >= t`` (product over depth-``t`` atoms)."""
    total = 1
    for a in tree.level(t):
        total *= _local_count(tree, a)
    return total


def _local_assignments(tree: ScenarioTree, node: str) -> np.ndarray:
    """All stopping rules on the subtree at ``node``.

    Row ``i`` holds, for each leaf below ``node`` (in tree order), the index
    of the node where rule ``i`` stops.  Row 0 stops at ``node`` itself; the
    rest follow the lexicographic product of the children's rules.
    """
    n_leaves = len(tree.subtree_leaves(node))
    here = np.full((1, n_leaves), tree.index[node], dtype=np.int32)
    if tree.is_leaf(node):
        return here
    parts = [_local_assignments(tree, c) for c in tree.children(node)]
    grid = np.indices([len(p) for p in parts]).reshape(len(parts), -1)
    later = np.concatenate([p[g] for p, g in zip(parts, grid)], axis=1)
    return np.concatenate([here, later], axis=0)


def _region_from_rows(tree: ScenarioTree, rows: Sequence[np.ndarray], t: int) -> StoppingRegion:
    stops = {tree.ids[i] for row in rows for i in np.unique(row)}
    return StoppingRegion(frozenset(stops), t)


def enumerate_stopping_times(
    tree: ScenarioTree, t: int = 0, *, budget: int = DEFAULT_ENUM_BUDGET
) -> Iterator[StoppingRegion]:
    """Yield every stopping time ``theta >= t`` exactly once."""
    count = count_stopping_times(tree, t)
    if count > budget:
        raise BudgetExceeded(f"{count} stopping times exceed the budget of {budget}")
    per_atom = [_local_assignments(tree, a) for a in tree.level(t)]
    for combo in itertools.product(*[range(len(p)) for p in per_atom]):
        yield _region_from_rows(tree, [p[i] for p, i in zip(per_atom, combo)], t)


def stopped_payoff(tree: ScenarioTree, H: Mapping[str, float], theta: StoppingRegion) -> dict[str, float]:
    """``H_theta`` as a leaf variable: each leaf gets ``H`` at its stop node."""
    return {leaf: float(H[theta.stop_node(tree, leaf)]) for leaf in tree.leaves}


@dataclass
class BruteForceResult:
    values: dict[str, float]
    argmax: dict[str, StoppingRegion]
    glued: StoppingRegion
    count: int


def brute_force_max_risk(
    phi: DynamicRiskMeasure,
    H: Mapping[str, float],
    t: int = 0,
    *,
    budget: int = DEFAULT_ENUM_BUDGET,
    workers: int = 1,
) -> BruteForceResult:
    """Maximal risk ``max_theta rho_t(-H_theta)`` by trying every stopping time.

    By localization the risk on a depth-``t`` atom depends only on the
    rule below that atom, so each atom's rules are enumerated separately.
    ``argmax[a]`` stops immediately on every other atom; ``glued`` combines
    the per-atom maximizers.  Ties go to the first rule in enumeration
    order.
    """
    tree = phi.tree
    H = check_process(tree, H, name="payoff", nonnegative=True)
    atoms = tree.level(t)
    count = sum(_local_count(tree, a) for a in atoms)
    if count > budget:
        raise BudgetExceeded(f"{count} stopping rules exceed the budget of {budget}")
    h = np.array([H[n] for n in tree.ids])

    values, best_rows = {}, {}
    for a in atoms:
        rules = _local_assignments(tree, a)
        leaves = tree.subtree_leaves(a)
        chunks = [rules[i : i + _CHUNK_ROWS] for i in range(0, len(rules), _CHUNK_ROWS)]
        if workers > 1 and len(rules) > 1:
            # finer chunks only to share work; results are row-wise identical
            size = max(1, -(-len(rules) // (4 * workers)))
            chunks = [rules[i : i + size] for i in range(0, len(rules), size)]

        def risk(chunk, a=a, leaves=leaves):
            stopped = h[chunk]
            return np.atleast_1d(eval_at_atom(phi, a, {leaf: -stopped[:, j] for j, leaf in enumerate(leaves)}))

        risks = np.concatenate(parallel_map(risk, chunks, workers))
        i = int(np.argmax(risks))
        values[a] = float(risks[i])
        best_rows[a] = rules[i]

    argmax = {}
    for a in atoms:
        rows = [best_rows[a] if b == a else np.array([tree.index[b]]) for b in atoms]
        argmax[a] = _region_from_rows(tree, rows, t)
    glued = _region_from_rows(tree, list(best_rows.values()), t)
    return BruteForceResult(values, argmax, glued, count)


def risk_of_stopping(phi: DynamicRiskMeasure, H: Mapping[str, float], theta: StoppingRegion) -> dict[str, float]:
    """``rho_t(-H_theta)`` on each atom of the start depth of ``theta``."""
    paid = stopped_payoff(phi.tree, H, theta)
    return eval_dynamic(phi, {leaf: -v for leaf, v in paid.items()}, theta.start_depth)


# -- coherent measures -----------------------------------------------------


def per_prior_snell(
    tree: ScenarioTree, P: TreeMeasure, H: Mapping[str, float], t: int = 0, *, rel_tol: float = STOP_TOL
) -> tuple[dict[str, float], StoppingRegion]:
    """Classical Snell envelope under a single locally equivalent ``P``
    and its minimal optimal stopping time from ``t``."""
    if any(m == 0.0 for m in node_masses(tree, P).values()):
        raise ZeroMassAtom("per-prior Snell envelope needs a locally equivalent measure")
    H = check_process(tree, H, name="payoff", nonnegative=True)
    U = {leaf: H[leaf] for leaf in tree.leaves}
    for d in range(tree.horizon - 1, t - 1, -1):
        for n in tree.level(d):
            p = P.transition[n]
            cont = 0.0
            for c, w in zip(tree.children(n), p):
                cont = cont + w * U[c]
            U[n] = max(H[n], cont)
    stops = set()
    frontier = list(tree.level(t))
    while frontier:
        nxt = []
        for n in frontier:
            if tree.is_leaf(n) or H[n] >= U[n] or hits(H[n], U[n], rel_tol):
                stops.add(n)
            else:
                nxt.extend(tree.children(n))
        frontier = nxt
    return {n: U[n] for n in tree.ids if n in U}, StoppingRegion(frozenset(stops), t)


@dataclass
class DecompositionReport:
    passed: bool
    exhaustive: bool
    measures: int
    tau_up: dict[str, int]
    tau_max: dict[str, int]
    witness: str | None = None


def coherent_decomposition_check(
    tree: ScenarioTree,
    priors: WorstCase | Mapping[str, Sequence[Any]],
    H: Mapping[str, float],
    t: int = 0,
    *,
    budget: int = DEFAULT_PASTING_BUDGET,
    seed: int = 0,
    rel_tol: float = STOP_TOL,
) -> DecompositionReport:
    """Check that the minimal maximal-risk time of the worst case over a
    rectangular prior set is the pathwise maximum of the per-prior times.

    The family checked is every pasting (one listed vector per node).
    Nodes above depth ``t`` keep their first vector since they cannot
    influence anything from ``t`` on.  Beyond ``budget`` pastings a seeded
    random sample is used and the report is marked non-exhaustive.
    """
    spec = priors if isinstance(priors, WorstCase) else WorstCase.build(priors)
    for n in tree.internal_nodes:
        if np.any(spec.priors[n] <= 0.0):
            raise ZeroMassAtom(f"prior vectors at {n!r} must be strictly positive")
    phi = DynamicRiskMeasure.replicate(tree, spec)
    up = snell(phi, H, t, rel_tol=rel_tol)
    tau_up = up.tau.stop_depths(tree)

    free = [n for n in tree.internal_nodes if tree.depth(n) >= t]
    sizes = [len(spec.priors[n]) for n in free]
    total = int(np.prod(sizes)) if sizes else 1
    exhaustive = total <= budget
    if exhaustive:
        choices: Any = itertools.product(*[range(s) for s in sizes])
    else:
        rng = np.random.default_rng(seed)
        choices = (tuple(int(rng.integers(s)) for s in sizes) for _ in range(budget))

    fixed = {n: spec.priors[n][0] for n in tree.internal_nodes}
    tau_max = {leaf: t for leaf in tree.leaves}
    measures = 0
    for choice in choices:
        trans = dict(fixed)
        trans.update({n: spec.priors[n][i] for n, i in zip(free, choice)})
        _, tau_p = per_prior_snell(tree, TreeMeasure(trans), H, t, rel_tol=rel_tol)
        for leaf, d in tau_p.stop_depths(tree).items():
            tau_max[leaf] = max(tau_max[leaf], d)
        measures += 1

    witness = next((leaf for leaf in tree.leaves if tau_max[leaf] != tau_up[leaf]), None)
    return DecompositionReport(witness is None, exhaustive, measures, tau_up, tau_max, witness)


# -- comparing monitors ----------------------------------------------------


@dataclass
class ComparisonReport:
    direction: str  # "equal", "a<=b", "b<=a" or "none"
    U_a: dict[str, float]
    U_b: dict[str, float]
    tau_a: dict[str, int]
    tau_b: dict[str, int]
    envelope_ok: bool | None
    stopping_ok: bool | None
    max_one_step_diff: float
    min_one_step_diff: float
    notes: list[str] = field(default_factory=list)

    @property
    def no_order(self) -> bool:
        return self.direction == "none"

    @property
    def tau_a_le_tau_b(self) -> bool:
        return all(self.tau_a[k] <= self.tau_b[k] for k in self.tau_a)

    @property
    def tau_b_le_tau_a(self) -> bool:
        return all(self.tau_b[k] <= self.tau_a[k] for k in self.tau_a)

    @property
    def verdict(self) -> str:
        if self.direction == "none":
            return "NoOrder"
        ok = "PASS" if self.envelope_ok and self.stopping_ok else "FAIL"
        if self.direction == "equal":
            return f"equal; tau_a = tau_b: {ok}"
        lo, hi = ("a", "b") if self.direction == "a<=b" else ("b", "a")
        return f"{lo} <= {hi}; tau_{lo} <= tau_{hi}: {ok}"


def compare_monitors(
    phi_a: DynamicRiskMeasure,
    phi_b: DynamicRiskMeasure,
    H: Mapping[str, float],
    t: int = 0,
    *,
    samples: int = 200,
    seed: int = 0,
    tol: float = STOP_TOL,
    scale: float = 10.0,
    workers: int = 1,
) -> ComparisonReport:
    """Compare two monitors of the same payoff.

    One-step dominance is tested at every node on ``samples`` random child
    vectors plus the continuation values actually met by both envelopes.
    If ``rho_a <= rho_b`` then ``U_a <= U_b`` everywhere and, since
    ``U_b = H`` forces ``U_a = H``, the dominated monitor ``a`` stops no later
    than ``b`` on every path.
    """
    tree = phi_a.tree
    if phi_b.tree is not tree and phi_b.tree.to_spec() != tree.to_spec():
        raise ValidationError("monitors must share the same tree")
    U_a = upper_snell(phi_a, H, workers=workers)
    U_b = upper_snell(phi_b, H, workers=workers)
    rng = np.random.default_rng(seed)
    hi, lo = -np.inf, np.inf
    for n in tree.internal_nodes:
        k = len(tree.children(n))
        X = rng.uniform(-scale, scale, size=(samples, k))
        met = np.array([[-U[c] for c in tree.children(n)] for U in (U_a, U_b)])
        X = np.vstack([np.zeros((1, k)), met, X])
        diff = phi_a.one_step(n, X) - phi_b.one_step(n, X)
        hi, lo = max(hi, float(diff.max())), min(lo, float(diff.min()))
    a_le_b, b_le_a = hi <= tol, lo >= -tol
    direction = "equal" if a_le_b and b_le_a else "a<=b" if a_le_b else "b<=a" if b_le_a else "none"

    H = check_process(tree, H, name="payoff", nonnegative=True)
    tau_a = maximal_risk_time(tree, U_a, H, t, rel_tol=tol).stop_depths(tree)
    tau_b = maximal_risk_time(tree, U_b, H, t, rel_tol=tol).stop_depths(tree)

    def below(U1, U2):
        return all(U1[n] <= U2[n] + tol * max(1.0, abs(U2[n])) for n in tree.ids)

    env_ok = stop_ok = None
    notes = []
    if direction in ("a<=b", "equal"):
        env_ok = below(U_a, U_b)
        stop_ok = all(tau_a[l] <= tau_b[l] for l in tree.leaves)
    if direction in ("b<=a", "equal"):
        env_ok = below(U_b, U_a) and (env_ok is not False)
        stop_ok = all(tau_b[l] <= tau_a[l] for l in tree.leaves) and (stop_ok is not False)
    if direction == "none":
        notes.append("NoOrder: neither monitor dominates the other on the sampled inputs")
    return ComparisonReport(direction, U_a, U_b, tau_a, tau_b, env_ok, stop_ok, hi, lo, notes)
