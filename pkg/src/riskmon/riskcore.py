"""One-step conditional risk mappings and their time-consistent composition.

A one-step specification assigns to every non-leaf node a map from the
vector of child values to a real number.  Sign convention: ``X`` is a
payoff (gain), so ``rho(X)`` is large when ``X`` is very negative and
``rho(-c) = c`` for constants.

All evaluations accept a leading batch axis: child values of shape
``(..., k)`` give results of shape ``(...)``.  Sums over children are
accumulated in a fixed order with elementwise operations, so batched and
unbatched evaluations agree bit for bit.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from riskmon.errors import ArityMismatch, DepthOrder, UnknownNode, ValidationError
from riskmon.filtration import ScenarioTree, TreeMeasure, check_distribution, slice_depth

AXIOM_TOL = 1e-9


def weighted_sum(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_c weights[c] * values[..., c]`` accumulated left to right."""
    acc = values[..., 0] * weights[0]
    for c in range(1, len(weights)):
        acc = acc + values[..., c] * weights[c]
    return acc


def _as_children(values: Any, arity: int, node: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != arity:
        got = arr.shape[-1] if arr.ndim else 0
        raise ArityMismatch(f"node {node!r} expects {arity} child values, got {got}")
    return arr


class OneStepRiskSpec:
    """Base class of the node-local risk mappings."""

    kind: str = ""

    def arity(self, node: str) -> int:
        raise NotImplementedError

    def nodes(self) -> Iterable[str]:
        raise NotImplementedError

    def evaluate(self, node: str, child_values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def covers(self, tree: ScenarioTree, nodes: Iterable[str]) -> None:
        """Raise unless the spec is defined, with matching arity, on ``nodes``."""
        known = set(self.nodes())
        for n in nodes:
            if n not in known:
                raise ValidationError(f"{self.kind} spec has no data for node {n!r}")
            if self.arity(n) != len(tree.children(n)):
                raise ArityMismatch(
                    f"{self.kind} spec at node {n!r} has arity {self.arity(n)}, "
                    f"tree has {len(tree.children(n))} children"
                )


@dataclass(frozen=True)
class Expectation(OneStepRiskSpec):
    """``rho(X | node) = E_Q[-X | node]``."""

    measure: TreeMeasure
    kind = "expectation"

    def arity(self, node):
        return len(self._q(node))

    def nodes(self):
        return self.measure.transition.keys()

    def _q(self, node):
        try:
            return self.measure.transition[node]
        except KeyError:
            raise UnknownNode(f"expectation spec has no data for node {node!r}") from None

    def evaluate(self, node, child_values):
        return -weighted_sum(child_values, self._q(node))


@dataclass(frozen=True)
class Entropic(OneStepRiskSpec):
    """``rho(X | node) = (1/gamma) * log sum_c p_c exp(-gamma X_c)``."""

    gamma: float
    base: TreeMeasure
    kind = "entropic"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"entropic gamma must be > 0, got {self.gamma}")

    def arity(self, node):
        return len(self._p(node))

    def nodes(self):
        return self.base.transition.keys()

    def _p(self, node):
        try:
            return self.base.transition[node]
        except KeyError:
            raise UnknownNode(f"entropic spec has no data for node {node!r}") from None

    def evaluate(self, node, child_values):
        p = self._p(node)
        support = [c for c in range(len(p)) if p[c] > 0.0]
        z = [-self.gamma * child_values[..., c] for c in support]
        top = z[0]
        for zc in z[1:]:
            top = np.maximum(top, zc)
        acc = p[support[0]] * np.exp(z[0] - top)
        for c, zc in zip(support[1:], z[1:]):
            acc = acc + p[c] * np.exp(zc - top)
        return (top + np.log(acc)) / self.gamma


def _max_entries(child_values: np.ndarray, vectors: np.ndarray, offsets: np.ndarray | None) -> np.ndarray:
    best = None
    for i, q in enumerate(vectors):
        v = -weighted_sum(child_values, q)
        if offsets is not None:
            v = v - offsets[i]
        best = v if best is None else np.maximum(best, v)
    return best


def _stack_vectors(vectors: Sequence[Any], node: str) -> np.ndarray:
    if len(vectors) == 0:
        raise ValidationError(f"empty prior list at node {node!r}")
    rows = [check_distribution(v, where=f"node {node!r}") for v in vectors]
    if len({r.size for r in rows}) != 1:
        raise ArityMismatch(f"prior vectors at node {node!r} have different lengths")
    arr = np.vstack(rows)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WorstCase(OneStepRiskSpec):
    """``rho(X | node) = max_q E_q[-X]`` over a finite list per node.

    The lists are node-rectangular: choices at different nodes are independent.
    """

    priors: Mapping[str, np.ndarray]
    kind = "worstcase"

    @classmethod
    def build(cls, priors: Mapping[str, Sequence[Any]]) -> WorstCase:
        return cls({n: _stack_vectors(v, n) for n, v in priors.items()})

    def arity(self, node):
        return self._vectors(node).shape[1]

    def nodes(self):
        return self.priors.keys()

    def _vectors(self, node):
        try:
            return self.priors[node]
        except KeyError:
            raise UnknownNode(f"worst-case spec has no data for node {node!r}") from None

    def evaluate(self, node, child_values):
        return _max_entries(child_values, self._vectors(node), None)


@dataclass(frozen=True)
class Penalized(OneStepRiskSpec):
    """``rho(X | node) = max_i {E_{q_i}[-X] - beta_i}``.

    :meth:`build` shifts the penalties at every node by their minimum so that
    ``rho(0) = 0``; the subtracted amounts are kept in ``shift``.
    """

    vectors: Mapping[str, np.ndarray]
    penalties: Mapping[str, np.ndarray]
    shift: Mapping[str, float] = field(default_factory=dict)
    kind = "penalized"

    @classmethod
    def build(cls, entries: Mapping[str, Sequence[tuple[Any, float]]], *, normalize: bool = True) -> Penalized:
        vectors, penalties, shift = {}, {}, {}
        for n, lst in entries.items():
            vectors[n] = _stack_vectors([q for q, _ in lst], n)
            beta = np.array([float(b) for _, b in lst])
            if not np.all(np.isfinite(beta)) or np.any(beta < 0.0):
                raise ValidationError(f"penalties at node {n!r} must be finite and >= 0: {beta.tolist()}")
            shift[n] = float(beta.min())
            if normalize:
                beta = beta - shift[n]
            beta.setflags(write=False)
            penalties[n] = beta
        return cls(vectors, penalties, shift if normalize else {})

    def arity(self, node):
        return self._entry(node)[0].shape[1]

    def nodes(self):
        return self.vectors.keys()

    def _entry(self, node):
        try:
            return self.vectors[node], self.penalties[node]
        except KeyError:
            raise UnknownNode(f"penalized spec has no data for node {node!r}") from None

    def evaluate(self, node, child_values):
        vecs, beta = self._entry(node)
        return _max_entries(child_values, vecs, beta)


def generating_entries(spec: OneStepRiskSpec, node: str) -> tuple[np.ndarray, np.ndarray]:
    """Finite list of (vectors, penalties) whose max gives the spec at ``node``.

    Undefined for the entropic variant, whose dual family is a continuum.
    """
    if isinstance(spec, Expectation):
        q = spec._q(node)
        return q[None, :], np.zeros(1)
    if isinstance(spec, WorstCase):
        v = spec._vectors(node)
        return v, np.zeros(len(v))
    if isinstance(spec, Penalized):
        return spec._entry(node)
    raise TypeError(f"{type(spec).__name__} has no finite generating family")


def eval_one_step(spec: OneStepRiskSpec, node: str, child_values: Any) -> Any:
    """Evaluate the node-local risk map on a vector (or batch) of child values."""
    arr = _as_children(child_values, spec.arity(node), node)
    out = spec.evaluate(node, arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class DynamicRiskMeasure:
    """Composition of one-step maps, ``steps[t]`` acting on depth-``t`` nodes.

    Time consistency holds by construction: ``rho_t`` is defined as
    ``rho_t = step_t(-rho_{t+1})`` with ``rho_T(X) = -X``.
    """

    tree: ScenarioTree
    steps: tuple[OneStepRiskSpec, ...]

    def __post_init__(self):
        if len(self.steps) != self.tree.horizon:
            raise ValidationError(f"need {self.tree.horizon} steps, got {len(self.steps)}")
        for t, step in enumerate(self.steps):
            step.covers(self.tree, self.tree.level(t))

    @classmethod
    def replicate(cls, tree: ScenarioTree, spec: OneStepRiskSpec) -> DynamicRiskMeasure:
        return cls(tree, (spec,) * tree.horizon)

    def step_at(self, node: str) -> OneStepRiskSpec:
        return self.steps[self.tree.depth(node)]

    def one_step(self, node: str, child_values: Any) -> Any:
        return eval_one_step(self.step_at(node), node, child_values)


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``list(map(fn, items))``, optionally on a thread pool; order preserved."""
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def compose(
    phi: DynamicRiskMeasure, neg: Mapping[str, Any], s: int, t: int, nodes_at: Callable[[int], Sequence[str]], workers: int = 1
) -> dict[str, Any]:
    """Backward pass from ``-rho_s`` values at depth ``s`` to ``rho_t``.

    ``neg`` holds ``rho_s(X) = -X`` on the depth-``s`` nodes in play.
    """
    tree = phi.tree
    vals = dict(neg)
    for d in range(s - 1, t - 1, -1):
        step = phi.steps[d]

        def node_value(n, step=step, vals=vals):
            kids = np.stack([-np.asarray(vals[c], dtype=float) for c in tree.children(n)], axis=-1)
            return step.evaluate(n, kids)

        level = list(nodes_at(d))
        vals = dict(zip(level, parallel_map(node_value, level, workers)))
    return vals


def eval_dynamic(phi: DynamicRiskMeasure, X: Mapping[str, Any], t: int, *, workers: int = 1) -> dict[str, Any]:
    """``rho_t(X)`` on every depth-``t`` atom, for ``X`` given on depth ``s >= t``.

    Values of ``X`` may be floats or equally shaped arrays (a batch).
    """
    tree = phi.tree
    s = slice_depth(tree, X)
    if t > s:
        raise DepthOrder(f"cannot evaluate rho_{t} of a depth-{s} variable")
    neg = {n: -np.asarray(v, dtype=float) for n, v in X.items()}
    out = compose(phi, neg, s, t, tree.level, workers)
    return {n: (float(v) if np.ndim(v) == 0 else v) for n, v in out.items()}


def eval_at_atom(phi: DynamicRiskMeasure, atom: str, leaf_values: Mapping[str, Any]) -> Any:
    """``rho_t(X)`` on the single atom ``atom`` (depth ``t``), from the
    values of ``X`` on the leaves below it."""
    tree = phi.tree
    t = tree.depth(atom)
    neg = {n: -np.asarray(leaf_values[n], dtype=float) for n in tree.subtree_leaves(atom)}
    out = compose(phi, neg, tree.horizon, t, lambda d: tree.descendants_at(atom, d))
    return out[atom]


# -- axiom checks -----------------------------------------------------------


@dataclass
class AxiomResult:
    passed: bool
    checks: int
    worst_violation: float
    witness: dict[str, Any] | None = None


@dataclass
class AxiomReport:
    results: dict[str, AxiomResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def lines(self) -> list[str]:
        return [
            f"{name}: {'PASS' if r.passed else 'FAIL'} checks={r.checks} worst={r.worst_violation:.3e}"
            for name, r in self.results.items()
        ]


AXIOMS = ("cash_invariance", "monotonicity", "convexity", "normalization", "localization")


def _lift(tree: ScenarioTree, t: int, per_atom: np.ndarray) -> np.ndarray:
    """Broadcast ``(B, n_atoms)`` depth-``t`` values to ``(B, n_leaves)``."""
    owner = [tree.level(t).index(tree.ancestor_at(leaf, t)) for leaf in tree.leaves]
    return per_atom[:, owner]


def _rho_batch(phi: DynamicRiskMeasure, t: int, leaf_matrix: np.ndarray) -> np.ndarray:
    tree = phi.tree
    X = {leaf: leaf_matrix[:, i] for i, leaf in enumerate(tree.leaves)}
    out = eval_dynamic(phi, X, t)
    return np.stack([np.asarray(out[a]) for a in tree.level(t)], axis=-1)


def check_axioms(
    spec: OneStepRiskSpec | DynamicRiskMeasure,
    tree: ScenarioTree,
    sample_count: int = 1000,
    seed: int = 0,
    *,
    tol: float = AXIOM_TOL,
    scale: float = 10.0,
) -> AxiomReport:
    """Randomized check of cash invariance, monotonicity, conditional
    convexity, normalization and localization of every ``rho_t``.

    Each axiom is checked ``sample_count`` times; the depth ``t`` of each
    check is drawn uniformly from ``0..T-1``.  Payoffs are uniform on
    ``[-scale, scale]``.
    """
    if sample_count < 1:
        raise ValidationError("sample_count must be >= 1")
    phi = spec if isinstance(spec, DynamicRiskMeasure) else DynamicRiskMeasure.replicate(tree, spec)
    rng = np.random.default_rng(seed)
    n_leaves = len(tree.leaves)
    depths = rng.integers(0, tree.horizon, size=sample_count)

    worst = {a: 0.0 for a in AXIOMS}
    witness: dict[str, dict | None] = {a: None for a in AXIOMS}

    def record(axiom, t, viol, **inputs):
        per_sample = viol.max(axis=-1)
        i = int(np.argmax(per_sample))
        if per_sample[i] > worst[axiom] or witness[axiom] is None:
            worst[axiom] = max(worst[axiom], float(per_sample[i]))
            witness[axiom] = {"t": int(t), **{k: np.asarray(v)[i].tolist() for k, v in inputs.items()}}

    for t in range(tree.horizon):
        b = int(np.sum(depths == t))
        if b == 0:
            continue
        m = len(tree.level(t))
        X = rng.uniform(-scale, scale, size=(b, n_leaves))
        Y = rng.uniform(-scale, scale, size=(b, n_leaves))
        rX, rY = _rho_batch(phi, t, X), _rho_batch(phi, t, Y)

        Z = rng.uniform(-scale, scale, size=(b, m))
        viol = np.abs(_rho_batch(phi, t, X + _lift(tree, t, Z)) - (rX - Z))
        record("cash_invariance", t, viol, X=X, Z=Z)

        bigger = X + rng.exponential(scale / 4, size=X.shape) * (rng.random(X.shape) < 0.7)
        viol = np.maximum(_rho_batch(phi, t, bigger) - rX, 0.0)
        record("monotonicity", t, viol, X=X, Y=bigger)

        lam = rng.random((b, m))
        lam[rng.random((b, m)) < 0.1] = 0.0
        lam[rng.random((b, m)) < 0.1] = 1.0
        L = _lift(tree, t, lam)
        viol = np.maximum(_rho_batch(phi, t, L * X + (1 - L) * Y) - (lam * rX + (1 - lam) * rY), 0.0)
        record("convexity", t, viol, X=X, Y=Y, lam=lam)

        viol = np.abs(_rho_batch(phi, t, np.zeros((b, n_leaves))))
        record("normalization", t, viol, X=np.zeros((b, n_leaves)))

        A = (rng.random((b, m)) < 0.5).astype(float)
        IA = _lift(tree, t, A)
        viol = np.abs(_rho_batch(phi, t, IA * X + (1 - IA) * Y) - (A * rX + (1 - A) * rY))
        record("localization", t, viol, X=X, Y=Y, A=A)

    results = {
        a: AxiomResult(worst[a] <= tol, sample_count, worst[a], witness[a]) for a in AXIOMS
    }
    return AxiomReport(results)
