"""Penalty functions and the robust (dual) representation.

Minimal penalties are computed node by node in closed form and can be
cross-checked with a brute-force grid search over payoffs.  Unbounded
penalties are reported as ``math.inf``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from riskmon.errors import GridTooLarge, NegativeInput, ValidationError, ZeroMassAtom
from riskmon.filtration import (
    ScenarioTree,
    TreeMeasure,
    check_distribution,
    cond_expect,
    node_masses,
)
from riskmon.riskcore import (
    DynamicRiskMeasure,
    Entropic,
    Expectation,
    OneStepRiskSpec,
    Penalized,
    WorstCase,
    eval_dynamic,
    generating_entries,
    parallel_map,
    weighted_sum,
)

INF = math.inf
MATCH_TOL = 1e-12
HULL_TOL = 1e-10
WEAK_DUALITY_TOL = 1e-9

DEFAULT_BOUND = 20.0
DEFAULT_GRID_STEPS = 81
DEFAULT_GRID_BUDGET = 10**7


def hull_penalty(vectors: np.ndarray, costs: np.ndarray, q: np.ndarray) -> float:
    """Lower convex envelope of the points ``(vectors[i], costs[i])`` at ``q``.

    Solves ``min sum_i lam_i costs_i`` over ``lam >= 0`` with
    ``sum_i lam_i vectors_i = q`` by enumerating basic solutions: an optimal
    vertex uses linearly independent vectors only, so at most ``k`` of them.
    Returns ``inf`` when ``q`` lies outside the convex hull.
    """
    vectors = np.asarray(vectors, dtype=float)
    costs = np.asarray(costs, dtype=float)
    m, k = vectors.shape
    best = INF
    for size in range(1, min(m, k) + 1):
        for subset in itertools.combinations(range(m), size):
            basis = vectors[list(subset)].T
            if np.linalg.matrix_rank(basis) < size:
                continue
            lam, *_ = np.linalg.lstsq(basis, q, rcond=None)
            if np.max(np.abs(basis @ lam - q)) > HULL_TOL or np.min(lam) < -HULL_TOL:
                continue
            lam = np.clip(lam, 0.0, None)
            best = min(best, float(lam @ costs[list(subset)]))
    return best


def minimal_penalty_one_step(spec: OneStepRiskSpec, node: str, q: Any) -> float:
    """Node-local minimal penalty ``sup_X {E_q[-X] - rho(X)}`` in closed form."""
    q = check_distribution(q, spec.arity(node), where=f"node {node!r}")
    if isinstance(spec, Expectation):
        p = spec._q(node)
        return 0.0 if np.max(np.abs(q - p)) <= MATCH_TOL else INF
    if isinstance(spec, Entropic):
        p = spec._p(node)
        total = 0.0
        for qc, pc in zip(q, p):
            if qc == 0.0:
                continue
            if pc == 0.0:
                return INF
            total += qc * math.log(qc / pc)
        return max(total, 0.0) / spec.gamma
    if isinstance(spec, (WorstCase, Penalized)):
        vectors, costs = generating_entries(spec, node)
        return hull_penalty(vectors, costs, q)
    raise TypeError(f"unsupported spec {type(spec).__name__}")


def _grid_sup(spec, node, q, bound, steps, workers):
    k = spec.arity(node)
    axis = np.linspace(-bound, bound, steps)
    if k > 1:
        rest = np.stack(np.meshgrid(*([axis] * (k - 1)), indexing="ij"), axis=-1).reshape(-1, k - 1)
    else:
        rest = np.empty((1, 0))

    # one slab per value of the first coordinate; max-reduction is order free
    def slab(x0):
        X = np.concatenate([np.full((len(rest), 1), x0), rest], axis=1)
        return float(np.max(-weighted_sum(X, q) - spec.evaluate(node, X)))

    return max(parallel_map(slab, list(axis), workers))


def minimal_penalty_oracle(
    spec: OneStepRiskSpec,
    node: str,
    q: Any,
    bound: float = DEFAULT_BOUND,
    grid_steps: int = DEFAULT_GRID_STEPS,
    *,
    budget: int = DEFAULT_GRID_BUDGET,
    detect_divergence: bool = False,
    workers: int = 1,
) -> float:
    """Brute-force lower bound for the node-local minimal penalty.

    Maximizes ``E_q[-X] - rho(X)`` over the grid ``[-bound, bound]^k``.
    With ``detect_divergence`` the sweep is repeated at ``2 * bound`` and
    ``inf`` is returned if the supremum moved by more than ``1e-3 * bound``.
    """
    if grid_steps < 3 or bound <= 0:
        raise ValidationError("need grid_steps >= 3 and bound > 0")
    k = spec.arity(node)
    if grid_steps**k > budget:
        raise GridTooLarge(f"{grid_steps}^{k} grid points exceed the budget of {budget}")
    q = check_distribution(q, k, where=f"node {node!r}")
    value = _grid_sup(spec, node, q, bound, grid_steps, workers)
    if detect_divergence:
        wider = _grid_sup(spec, node, q, 2 * bound, grid_steps, workers)
        if wider - value > 1e-3 * bound:
            return INF
    return value


@dataclass
class RepresentationRow:
    payoff: list[float]
    rho: float
    dual: float
    gap: float
    argmax: int


@dataclass
class RepresentationReport:
    node: str
    rows: list[RepresentationRow]

    @property
    def max_gap(self) -> float:
        return max(r.gap for r in self.rows)

    @property
    def min_gap(self) -> float:
        return min(r.gap for r in self.rows)


def generating_family(spec: OneStepRiskSpec, node: str, eps: float = 1e-9) -> list[np.ndarray]:
    """Generating vectors at ``node`` plus interior perturbations of those with zeros."""
    vectors, _ = generating_entries(spec, node)
    family = [v for v in vectors]
    k = vectors.shape[1]
    for v in vectors:
        if np.any(v == 0.0):
            family.append((1 - eps) * v + eps / k)
    return family


def verify_representation(
    spec: OneStepRiskSpec, node: str, test_payoffs: Sequence[Any], dual_family: Sequence[Any]
) -> RepresentationReport:
    """Compare ``rho(X)`` with ``max_q {E_q[-X] - alpha_min(q)}`` over a finite family."""
    if not dual_family:
        raise ValidationError("dual family must be non-empty")
    family = [check_distribution(q, spec.arity(node)) for q in dual_family]
    penalties = [minimal_penalty_one_step(spec, node, q) for q in family]
    rows = []
    for X in test_payoffs:
        X = np.asarray(X, dtype=float)
        rho = float(spec.evaluate(node, X))
        dual, arg = -INF, -1
        for i, (q, a) in enumerate(zip(family, penalties)):
            if a == INF:
                continue
            v = float(-weighted_sum(X, q)) - a
            if v > dual:
                dual, arg = v, i
        rows.append(RepresentationRow(X.tolist(), rho, dual, rho - dual, arg))
    return RepresentationReport(node, rows)


def acceptance_member(
    spec: OneStepRiskSpec | DynamicRiskMeasure, tree: ScenarioTree, X: Mapping[str, Any], t: int
) -> dict[str, bool]:
    """Whether ``X`` is acceptable (``rho_t(X) <= 0``) on each depth-``t`` atom."""
    phi = spec if isinstance(spec, DynamicRiskMeasure) else DynamicRiskMeasure.replicate(tree, spec)
    values = eval_dynamic(phi, X, t)
    return {a: bool(v <= WEAK_DUALITY_TOL) for a, v in values.items()}


@dataclass
class PenaltyEvaluation:
    Q: TreeMeasure
    t: int
    values: dict[str, float]


def minimal_penalty(phi: DynamicRiskMeasure, Q: TreeMeasure, t: int) -> PenaltyEvaluation:
    """Minimal penalty of ``rho_t`` at ``Q`` on each depth-``t`` atom.

    For a composition of one-step maps this is the ``Q``-conditional
    expectation of the accumulated node-local penalties from ``t`` to
    ``T - 1``.  Atoms of zero ``Q``-mass get ``inf``.
    """
    tree = phi.tree
    masses = node_masses(tree, Q)
    local = {}
    for n in tree.internal_nodes:
        if tree.depth(n) >= t and masses[n] > 0.0:
            local[n] = minimal_penalty_one_step(phi.step_at(n), n, Q.transition[n])
    values = {}
    for atom in tree.level(t):
        if masses[atom] == 0.0:
            values[atom] = INF
            continue
        total = 0.0
        for d in range(t, tree.horizon):
            for n in tree.descendants_at(atom, d):
                if masses[n] == 0.0:
                    continue
                if local[n] == INF:
                    total = INF
                    break
                total += masses[n] / masses[atom] * local[n]
            if total == INF:
                break
        values[atom] = total
    return PenaltyEvaluation(Q, t, values)


def conditional_norm(tree: ScenarioTree, Z: Mapping[str, float], q: float, t: int) -> dict[str, float]:
    """``(E_R[Z^q | F_t])^(1/q)`` for nonnegative ``Z`` on the leaves."""
    if q <= 1:
        raise ValidationError(f"exponent must be > 1, got {q}")
    if any(Z[leaf] < 0 for leaf in tree.leaves):
        raise NegativeInput("conditional norm needs Z >= 0")
    powered = {leaf: float(Z[leaf]) ** q for leaf in tree.leaves}
    if t == tree.horizon:
        moment = powered
    else:
        moment = cond_expect(tree, TreeMeasure.reference(tree), powered, t)
    return {a: float(v) ** (1.0 / q) for a, v in moment.items()}


def lp_norm(tree: ScenarioTree, X: Mapping[str, float], p: float) -> float:
    """Unconditional ``L^p(R)`` norm of a leaf variable."""
    r = node_masses(tree, TreeMeasure.reference(tree))
    return sum(r[leaf] * abs(float(X[leaf])) ** p for leaf in tree.leaves) ** (1.0 / p)


def coercivity_gap(
    tree: ScenarioTree,
    family: Sequence[tuple[TreeMeasure, Mapping[str, float]]],
    a: float,
    b: float,
    q: float,
    t: int = 0,
) -> list[float]:
    """Slack of the coercivity bound for each ``(Q, alpha)`` in ``family``.

    ``alpha`` holds penalty values on the depth-``t`` atoms.  The slack is
    ``E_R[alpha] - a - b * E_R[ceil(Z) / E_R[Z | F_t]]`` with ``Z = dQ/dR``
    and ``ceil(Z)`` the conditional ``q``-norm; a nonnegative slack means
    the bound holds for that measure.
    """
    if b <= 0:
        raise ValidationError("coercivity constant b must be > 0")
    R = TreeMeasure.reference(tree)
    r = node_masses(tree, R)
    gaps = []
    for Q, alpha in family:
        masses = node_masses(tree, Q)
        if any(m == 0.0 for m in masses.values()):
            raise ZeroMassAtom("coercivity gap needs a locally equivalent measure")
        Z = {leaf: masses[leaf] / r[leaf] for leaf in tree.leaves}
        norm = conditional_norm(tree, Z, q, t)
        cond_z = Z if t == tree.horizon else cond_expect(tree, R, Z, t)
        e_alpha = sum(r[A] * float(alpha[A]) for A in tree.level(t))
        e_ratio = sum(r[A] * norm[A] / cond_z[A] for A in tree.level(t))
        gaps.append(e_alpha - a - b * e_ratio)
    return gaps
