import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskmon.errors import BadProbability, DepthOrder, NonUniformDepth, OrphanNode, UnknownNode
from riskmon.filtration import (
    TreeMeasure,
    build_tree,
    cond_expect,
    density,
    is_locally_equivalent,
    node_mass,
    node_masses,
)
from riskmon.generators import binomial_tree_spec, random_measure, random_tree

from conftest import measure


def test_one_period_tree(binomial):
    assert len(binomial) == 3
    assert binomial.horizon == 1
    assert binomial.children("root") == ("u", "d")
    assert binomial.leaves == ("u", "d")


def test_bad_probability_row_sum():
    spec = {
        "horizon": 1,
        "nodes": [
            {"id": "root", "parent": None},
            {"id": "u", "parent": "root", "p": 0.6},
            {"id": "d", "parent": "root", "p": 0.5},
        ],
    }
    with pytest.raises(BadProbability):
        build_tree(spec)


def test_zero_reference_probability_rejected():
    spec = binomial_tree_spec(1, 0.5)
    spec["nodes"][1]["p"], spec["nodes"][2]["p"] = 1.0, 0.0
    with pytest.raises(BadProbability):
        build_tree(spec)


def test_two_period_counts(two_period):
    # 1 + 2 + 4 by construction
    assert len(two_period) == 7
    assert len(two_period.leaves) == 4


def test_leaf_above_horizon():
    spec = binomial_tree_spec(2, 0.5)
    spec["nodes"] = [n for n in spec["nodes"] if not n["id"].startswith("d") or n["id"] == "d"]
    with pytest.raises(NonUniformDepth):
        build_tree(spec)


def test_orphan_and_two_roots():
    spec = binomial_tree_spec(1, 0.5)
    spec["nodes"].append({"id": "x", "parent": "nowhere", "p": 1.0})
    with pytest.raises(OrphanNode):
        build_tree(spec)
    spec = binomial_tree_spec(1, 0.5)
    spec["nodes"].append({"id": "x", "parent": None})
    with pytest.raises(OrphanNode):
        build_tree(spec)


def test_round_trip_is_canonical(two_period):
    assert build_tree(two_period.to_spec()).to_spec() == two_period.to_spec()


def test_node_mass(binomial):
    R = TreeMeasure.reference(binomial)
    assert node_mass(binomial, R, "root") == 1.0
    assert node_mass(binomial, R, "u") == 0.5
    assert node_mass(binomial, measure(binomial, root=[1, 0]), "d") == 0.0
    with pytest.raises(UnknownNode):
        node_mass(binomial, R, "nope")


def test_density(binomial):
    R = TreeMeasure.reference(binomial)
    assert density(binomial, R) == {"u": 1.0, "d": 1.0}
    assert density(binomial, measure(binomial, root=[1, 0])) == {"u": 2.0, "d": 0.0}


def test_cond_expect_examples(binomial):
    Q = measure(binomial, root=[0.8, 0.2])
    assert cond_expect(binomial, Q, {"u": 10.0, "d": 0.0}, 0)["root"] == pytest.approx(8.0, abs=1e-12)
    with pytest.raises(DepthOrder):
        cond_expect(binomial, Q, {"u": 10.0, "d": 0.0}, 1)


def test_cond_expect_zero_mass_atom_is_exactly_zero(two_period):
    Q = measure(two_period, root=[1.0, 0.0])
    X = {leaf: 7.0 for leaf in two_period.leaves}
    out = cond_expect(two_period, Q, X, 1)
    assert out["d"] == 0.0
    assert out["u"] == 7.0


def test_cond_expect_constants(two_period):
    R = TreeMeasure.reference(two_period)
    for t in (0, 1):
        assert set(cond_expect(two_period, R, {l: 3.5 for l in two_period.leaves}, t).values()) == {3.5}


def test_local_equivalence(two_period):
    R = TreeMeasure.reference(two_period)
    Q = measure(two_period, u=[1.0, 0.0])
    assert is_locally_equivalent(two_period, R)
    assert not is_locally_equivalent(two_period, Q)
    assert is_locally_equivalent(two_period, Q.mixture(R, 0.5, two_period))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_measure_properties(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_rules=None)
    Q = random_measure(rng, tree, floor=0.0)
    # knock out a transition entry now and then
    n = tree.internal_nodes[int(rng.integers(len(tree.internal_nodes)))]
    if len(tree.children(n)) > 1 and rng.random() < 0.5:
        q = np.zeros(len(tree.children(n)))
        q[0] = 1.0
        Q = TreeMeasure({**Q.transition, n: q})
    masses = node_masses(tree, Q)

    # flow conservation
    for m in tree.internal_nodes:
        assert masses[m] == pytest.approx(sum(masses[c] for c in tree.children(m)), abs=1e-12)

    # density integrates to one under R
    Z = density(tree, Q)
    r = node_masses(tree, TreeMeasure.reference(tree))
    assert sum(r[l] * Z[l] for l in tree.leaves) == pytest.approx(1.0, abs=1e-10)

    X = {l: float(rng.normal()) for l in tree.leaves}
    one = {l: 1.0 for l in tree.leaves}
    for t in range(tree.horizon):
        e1 = cond_expect(tree, Q, one, t)
        for a in tree.level(t):
            assert e1[a] == (pytest.approx(1.0, abs=1e-12) if masses[a] > 0 else 0.0)
        # explicit formula sum_d Q(d)/Q(A) X(d)
        direct = cond_expect(tree, Q, X, t)
        for a in tree.level(t):
            if masses[a] > 0:
                ref = sum(masses[l] / masses[a] * X[l] for l in tree.subtree_leaves(a))
                assert direct[a] == pytest.approx(ref, abs=1e-9)
        # tower property
        for s in range(t + 1, tree.horizon):
            inner = cond_expect(tree, Q, X, s)
            outer = cond_expect(tree, Q, inner, t)
            for a in tree.level(t):
                if masses[a] > 0:
                    assert outer[a] == pytest.approx(direct[a], abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, shift=st.floats(-5, 5), lam=st.floats(0, 3))
def test_cond_expect_linear_and_monotone(seed, shift, lam):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_rules=None)
    Q = random_measure(rng, tree)
    X = {l: float(rng.normal()) for l in tree.leaves}
    Y = {l: X[l] + abs(float(rng.normal())) for l in tree.leaves}
    t = int(rng.integers(tree.horizon))
    ex, ey = cond_expect(tree, Q, X, t), cond_expect(tree, Q, Y, t)
    lin = cond_expect(tree, Q, {l: lam * X[l] + shift for l in tree.leaves}, t)
    for a in tree.level(t):
        assert ex[a] <= ey[a] + 1e-12
        assert lin[a] == pytest.approx(lam * ex[a] + shift, abs=1e-9)
    assert not math.isnan(sum(ex.values()))
