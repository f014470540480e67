"""Finite filtered probability spaces encoded as rooted scenario trees.

The depth-``t`` nodes of a :class:`ScenarioTree` are the atoms of the
sigma-algebra ``F_t``; the leaves (all at depth ``T``) are the atoms of
``F_T = F`` and the root alone generates the trivial ``F_0``.  The reference
measure ``R`` is stored as strictly positive transition probabilities on
the edges, other measures as :class:`TreeMeasure` transition tables which may
contain zeros.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from riskmon.errors import (
    ArityMismatch,
    BadProbability,
    DepthOrder,
    IncompleteProcess,
    NegativePayoff,
    NonUniformDepth,
    OrphanNode,
    UnknownNode,
    ValidationError,
)

PROB_TOL = 1e-12
EQ_TOL = 1e-9


def _frozen(values: Iterable[float]) -> np.ndarray:
    arr = np.array(list(values), dtype=float)
    arr.setflags(write=False)
    return arr


def check_distribution(vec: Any, arity: int | None = None, *, strict: bool = False, where: str = "") -> np.ndarray:
    """Validate a transition vector and return it as a read-only array.

    ``strict`` demands every entry be > 0 (the reference measure), otherwise
    entries only need to be >= 0.
    """
    arr = _frozen(np.ravel(np.asarray(vec, dtype=float)))
    label = f" at {where}" if where else ""
    if arity is not None and arr.size != arity:
        raise ArityMismatch(f"transition vector{label} has {arr.size} entries, expected {arity}")
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise BadProbability(f"transition vector{label} is empty or not finite: {arr.tolist()}")
    if strict and np.any(arr <= 0.0):
        raise BadProbability(f"reference probabilities{label} must be > 0: {arr.tolist()}")
    if np.any(arr < 0.0):
        raise BadProbability(f"negative probability{label}: {arr.tolist()}")
    if abs(arr.sum() - 1.0) > PROB_TOL:
        raise BadProbability(f"probabilities{label} sum to {arr.sum()!r}, not 1")
    return arr


@dataclass(frozen=True)
class FiltrationLevel:
    t: int
    atoms: tuple[str, ...]


class ScenarioTree:
    """Immutable rooted tree with reference transition probabilities.

    Use :func:`build_tree` to construct one from a description; the
    constructor assumes validated input.
    """

    def __init__(
        self,
        horizon: int,
        parent: Mapping[str, str | None],
        children: Mapping[str, tuple[str, ...]],
        ref: Mapping[str, np.ndarray],
    ):
        self.horizon = horizon
        self._parent = dict(parent)
        self._children = dict(children)
        self._ref = dict(ref)
        root = [n for n, p in self._parent.items() if p is None]
        self.root = root[0]

        levels: list[tuple[str, ...]] = [(self.root,)]
        depth = {self.root: 0}
        for t in range(horizon):
            nxt = tuple(c for n in levels[t] for c in self._children[n])
            for c in nxt:
                depth[c] = t + 1
            levels.append(nxt)
        self._levels = tuple(levels)
        self._depth = depth
        self.ids = tuple(n for lvl in self._levels for n in lvl)
        self.index = {n: i for i, n in enumerate(self.ids)}

    def __repr__(self) -> str:
        return f"ScenarioTree(horizon={self.horizon}, nodes={len(self.ids)}, leaves={len(self.leaves)})"

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node: object) -> bool:
        return node in self._depth

    def _check(self, node: str) -> None:
        if node not in self._depth:
            raise UnknownNode(f"unknown node {node!r}")

    def depth(self, node: str) -> int:
        self._check(node)
        return self._depth[node]

    def parent(self, node: str) -> str | None:
        self._check(node)
        return self._parent[node]

    def children(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._children[node]

    def is_leaf(self, node: str) -> bool:
        return not self.children(node)

    def ref_transition(self, node: str) -> np.ndarray:
        self._check(node)
        return self._ref[node]

    def level(self, t: int) -> tuple[str, ...]:
        if not 0 <= t <= self.horizon:
            raise DepthOrder(f"depth {t} outside 0..{self.horizon}")
        return self._levels[t]

    @property
    def leaves(self) -> tuple[str, ...]:
        return self._levels[self.horizon]

    @property
    def internal_nodes(self) -> tuple[str, ...]:
        return tuple(n for n in self.ids if self._children[n])

    def filtration(self) -> list[FiltrationLevel]:
        return [FiltrationLevel(t, lvl) for t, lvl in enumerate(self._levels)]

    def path(self, node: str) -> list[str]:
        """Nodes from the root down to ``node`` inclusive."""
        self._check(node)
        out = [node]
        while self._parent[out[-1]] is not None:
            out.append(self._parent[out[-1]])
        return out[::-1]

    def ancestor_at(self, node: str, t: int) -> str:
        d = self.depth(node)
        if t > d:
            raise DepthOrder(f"node {node!r} at depth {d} has no ancestor at depth {t}")
        while d > t:
            node = self._parent[node]
            d -= 1
        return node

    def descendants_at(self, node: str, s: int) -> list[str]:
        d = self.depth(node)
        if s < d:
            raise DepthOrder(f"depth {s} is above node {node!r} (depth {d})")
        frontier = [node]
        for _ in range(s - d):
            frontier = [c for n in frontier for c in self._children[n]]
        return frontier

    def subtree_leaves(self, node: str) -> list[str]:
        return self.descendants_at(node, self.horizon)

    def to_spec(self) -> dict[str, Any]:
        """Canonical JSON-ready description (inverse of :func:`build_tree`)."""
        nodes: list[dict[str, Any]] = [{"id": self.root, "parent": None, "p": None}]
        for n in self.ids:
            for c, p in zip(self._children[n], self._ref.get(n, ())):
                nodes.append({"id": c, "parent": n, "p": float(p)})
        return {"horizon": self.horizon, "nodes": nodes}


def build_tree(spec: Mapping[str, Any]) -> ScenarioTree:
    """Validate a tree description and build the :class:`ScenarioTree`.

    ``spec`` has the shape ``{"horizon": T, "nodes": [{"id", "parent", "p"}, ...]}``
    where ``p`` is the reference probability of the edge from ``parent``.
    Children keep the order in which they are listed.
    """
    try:
        horizon = int(spec["horizon"])
        raw_nodes = list(spec["nodes"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"tree description needs 'horizon' and 'nodes': {exc}") from None
    if horizon < 1:
        raise NonUniformDepth(f"horizon must be >= 1, got {horizon}")

    parent: dict[str, str | None] = {}
    prob: dict[str, float] = {}
    for rec in raw_nodes:
        nid = rec.get("id")
        if not isinstance(nid, str) or not nid:
            raise ValidationError(f"node ids must be non-empty strings: {rec!r}")
        if nid in parent:
            raise ValidationError(f"duplicate node id {nid!r}")
        par = rec.get("parent")
        parent[nid] = par
        if par is not None:
            if rec.get("p") is None:
                raise BadProbability(f"edge {par!r} -> {nid!r} has no probability")
            prob[nid] = float(rec["p"])

    roots = [n for n, p in parent.items() if p is None]
    if len(roots) != 1:
        raise OrphanNode(f"expected exactly one root, found {len(roots)}: {roots}")
    children: dict[str, list[str]] = {n: [] for n in parent}
    for nid, par in parent.items():
        if par is None:
            continue
        if par not in parent:
            raise OrphanNode(f"node {nid!r} references unknown parent {par!r}")
        children[par].append(nid)

    # depth assignment doubles as the reachability (cycle) check
    depth = {roots[0]: 0}
    frontier = [roots[0]]
    while frontier:
        nxt = []
        for n in frontier:
            for c in children[n]:
                depth[c] = depth[n] + 1
                nxt.append(c)
        frontier = nxt
    unreachable = [n for n in parent if n not in depth]
    if unreachable:
        raise OrphanNode(f"nodes not connected to the root: {unreachable[:5]}")

    ref: dict[str, np.ndarray] = {}
    for n, kids in children.items():
        if depth[n] > horizon:
            raise NonUniformDepth(f"node {n!r} at depth {depth[n]} exceeds horizon {horizon}")
        if not kids:
            if depth[n] != horizon:
                raise NonUniformDepth(f"leaf {n!r} at depth {depth[n]}, expected {horizon}")
            continue
        ref[n] = check_distribution([prob[c] for c in kids], strict=True, where=f"node {n!r}")

    return ScenarioTree(horizon, parent, {n: tuple(k) for n, k in children.items()}, ref)


@dataclass(frozen=True)
class TreeMeasure:
    """Probability measure absolutely continuous w.r.t. the reference,
    given by one transition vector per non-leaf node."""

    transition: Mapping[str, np.ndarray]

    @classmethod
    def reference(cls, tree: ScenarioTree) -> TreeMeasure:
        return cls({n: tree.ref_transition(n) for n in tree.internal_nodes})

    @classmethod
    def from_transitions(
        cls, tree: ScenarioTree, transitions: Mapping[str, Any], *, fill_reference: bool = False
    ) -> TreeMeasure:
        out: dict[str, np.ndarray] = {}
        for n in transitions:
            tree._check(n)
            if tree.is_leaf(n):
                raise ValidationError(f"leaf {n!r} cannot carry a transition vector")
        for n in tree.internal_nodes:
            if n in transitions:
                out[n] = check_distribution(transitions[n], len(tree.children(n)), where=f"node {n!r}")
            elif fill_reference:
                out[n] = tree.ref_transition(n)
            else:
                raise IncompleteProcess(f"measure has no transition vector for node {n!r}")
        return cls(out)

    def mixture(self, other: TreeMeasure, weight: float, tree: ScenarioTree) -> TreeMeasure:
        """Transition table of ``weight * self + (1 - weight) * other``.

        Mixing globally is not the same as mixing transitions, so the result
        is computed from node masses.
        """
        ma, mb = node_masses(tree, self), node_masses(tree, other)
        out = {}
        for n in tree.internal_nodes:
            kids = tree.children(n)
            num = np.array([weight * ma[c] + (1 - weight) * mb[c] for c in kids])
            den = weight * ma[n] + (1 - weight) * mb[n]
            out[n] = _frozen(num / den if den > 0 else self.transition[n])
        return TreeMeasure(out)


def node_masses(tree: ScenarioTree, Q: TreeMeasure) -> dict[str, float]:
    masses = {tree.root: 1.0}
    for n in tree.ids:
        for c, q in zip(tree.children(n), Q.transition[n] if tree.children(n) else ()):
            masses[c] = masses[n] * float(q)
    return masses


def node_mass(tree: ScenarioTree, Q: TreeMeasure, node: str) -> float:
    """``Q(node)``: product of Q-transitions along the root path."""
    path = tree.path(node)
    mass = 1.0
    for par, child in zip(path, path[1:]):
        mass *= float(Q.transition[par][tree.children(par).index(child)])
    return mass


def density(tree: ScenarioTree, Q: TreeMeasure) -> dict[str, float]:
    """Radon-Nikodym density ``dQ/dR`` on the leaves."""
    q = node_masses(tree, Q)
    r = node_masses(tree, TreeMeasure.reference(tree))
    return {leaf: q[leaf] / r[leaf] for leaf in tree.leaves}


def slice_depth(tree: ScenarioTree, X: Mapping[str, Any]) -> int:
    """Common depth of the keys of a depth slice."""
    depths = {tree.depth(n) for n in X}
    if len(depths) != 1:
        raise IncompleteProcess(f"values span depths {sorted(depths)}, expected one level")
    s = depths.pop()
    missing = set(tree.level(s)) - set(X)
    if missing:
        raise IncompleteProcess(f"values missing for depth-{s} nodes {sorted(missing)[:5]}")
    return s


def cond_expect(tree: ScenarioTree, Q: TreeMeasure, X: Mapping[str, Any], t: int) -> dict[str, Any]:
    """``E_Q[X | F_t]`` for ``X`` given on a deeper level.

    Atoms of zero ``Q``-mass get exactly 0, the version fixed for measures
    that are only absolutely continuous.
    """
    s = slice_depth(tree, X)
    if t >= s:
        raise DepthOrder(f"conditioning depth {t} must be below the depth {s} of X")
    masses = node_masses(tree, Q)
    vals = dict(X)
    for d in range(s - 1, t - 1, -1):
        nxt = {}
        for n in tree.level(d):
            q = Q.transition[n]
            acc = 0.0
            for c, w in zip(tree.children(n), q):
                acc = acc + w * vals[c]
            nxt[n] = acc
        vals = nxt
    return {n: (vals[n] if masses[n] > 0.0 else np.zeros_like(vals[n]) + 0.0) for n in tree.level(t)}


def is_locally_equivalent(tree: ScenarioTree, Q: TreeMeasure) -> bool:
    """True iff ``E_R[Z^Q | F_t] > 0`` for all t, i.e. every node has positive mass."""
    return all(m > 0.0 for m in node_masses(tree, Q).values())


def check_process(
    tree: ScenarioTree, values: Mapping[str, Any], *, name: str = "process", nonnegative: bool = False
) -> dict[str, float]:
    """Validate an adapted process (one real per node) and return a float dict."""
    unknown = [n for n in values if n not in tree]
    if unknown:
        raise UnknownNode(f"{name} has values for unknown nodes {sorted(unknown)[:5]}")
    missing = [n for n in tree.ids if n not in values]
    if missing:
        raise IncompleteProcess(f"{name} missing values for nodes {missing[:5]}")
    out = {}
    for n in tree.ids:
        try:
            v = float(values[n])
        except (TypeError, ValueError):
            raise ValidationError(f"{name} value at {n!r} is not a number: {values[n]!r}") from None
        if not np.isfinite(v):
            raise ValidationError(f"{name} value at {n!r} is not finite")
        if nonnegative and v < 0.0:
            raise NegativePayoff(f"{name} is negative at {n!r}: {v}")
        out[n] = v
    return out
