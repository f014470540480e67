"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from riskmon.cli import main
from riskmon.duality import (
    generating_family,
    minimal_penalty,
    minimal_penalty_one_step,
    minimal_penalty_oracle,
    verify_representation,
)
from riskmon.filtration import TreeMeasure, build_tree, cond_expect
from riskmon.generators import random_distribution, random_payoff, random_spec, random_tree
from riskmon.io import dump_json
from riskmon.riskcore import DynamicRiskMeasure, Entropic, Penalized, WorstCase, check_axioms, eval_one_step
from riskmon.snell import (
    DEFAULT_ENUM_BUDGET,
    brute_force_max_risk,
    coherent_decomposition_check,
    compare_monitors,
    risk_of_stopping,
    snell,
)

pytestmark = pytest.mark.acceptance

MEASURES = [("expectation", 1.0), ("entropic", 0.5), ("entropic", 2.0), ("worstcase", 1.0), ("penalized", 1.0)]


def binary_node(p=(0.5, 0.5)):
    return build_tree({"horizon": 1, "nodes": [
        {"id": "r", "parent": None},
        {"id": "a", "parent": "r", "p": float(p[0])},
        {"id": "b", "parent": "r", "p": float(p[1])},
    ]})


@pytest.fixture(scope="module")
def corpus():
    """200 seeded random trees with payoffs, each under the five monitors."""
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(200):
        tree = random_tree(rng, max_horizon=4, max_branching=3, max_rules=DEFAULT_ENUM_BUDGET)
        H = random_payoff(rng, tree, 0.0, 10.0)
        for kind, gamma in MEASURES:
            out.append((tree, H, DynamicRiskMeasure.replicate(tree, random_spec(rng, tree, kind, gamma=gamma))))
    return out


def test_oracle_equivalence(corpus, acceptance):
    start = time.perf_counter()
    worst_env = worst_tau = 0.0
    for tree, H, phi in corpus:
        res = snell(phi, H)
        bf = brute_force_max_risk(phi, H)
        root = tree.root
        worst_env = max(worst_env, abs(res.risk_at_start[root] - bf.values[root]))
        worst_tau = max(worst_tau, abs(risk_of_stopping(phi, H, res.tau)[root] - bf.values[root]))
    elapsed = time.perf_counter() - start
    ok = worst_env <= 1e-9 and worst_tau <= 1e-9 and elapsed <= 60
    line = acceptance(
        1, "envelope and first hitting time match exhaustive search", ok,
        f"{len(corpus)} instances, envelope gap {worst_env:.2e}, tau gap {worst_tau:.2e}, {elapsed:.1f}s",
    )
    assert ok, line


def test_recursion_identity(corpus, acceptance):
    worst = 0.0
    for tree, H, phi in corpus:
        U = snell(phi, H).envelope
        for n in tree.internal_nodes:
            cont = float(eval_one_step(phi.step_at(n), n, [-U[c] for c in tree.children(n)]))
            worst = max(worst, abs(U[n] - max(H[n], cont)))
    ok = worst <= 1e-12
    line = acceptance(2, "backward recursion fixed point", ok, f"max residual {worst:.2e}")
    assert ok, line


def test_axiom_suite(acceptance):
    rng = np.random.default_rng(99)
    failures, worst = [], 0.0
    for kind in ("expectation", "entropic", "worstcase", "penalized"):
        tree = random_tree(rng, max_horizon=3, max_rules=None)
        spec = random_spec(rng, tree, kind, gamma=1.5, max_entries=3)
        rep = check_axioms(spec, tree, 1000, seed=int(rng.integers(2**31)))
        for name, r in rep.results.items():
            worst = max(worst, r.worst_violation)
            if not r.passed:
                failures.append(f"{kind}/{name}")
    ok = not failures
    line = acceptance(3, "axioms, 4 variants x 5 axioms x 1000 checks", ok,
                      f"worst violation {worst:.2e}" + (f", failed {failures}" if failures else ""))
    assert ok, line


def test_duality(acceptance):
    rng = np.random.default_rng(4)
    weak = math.inf
    for kind in ("expectation", "entropic", "worstcase", "penalized"):
        for _ in range(50):
            tree = random_tree(rng, max_horizon=1, max_rules=None)
            spec = random_spec(rng, tree, kind, gamma=float(rng.choice([0.5, 1.0, 2.0])), max_entries=3)
            k = len(tree.children(tree.root))
            family = [random_distribution(rng, k, floor=0.0) for _ in range(20)]
            if kind != "entropic":
                family += generating_family(spec, tree.root)
            rep = verify_representation(spec, tree.root, rng.uniform(-5, 5, size=(20, k)), family)
            weak = min(weak, rep.min_gap)

    exact = 0.0
    for kind in ("expectation", "worstcase", "penalized"):
        for _ in range(50):
            tree = random_tree(rng, max_horizon=1, max_rules=None)
            spec = random_spec(rng, tree, kind, max_entries=3)
            k = len(tree.children(tree.root))
            rep = verify_representation(spec, tree.root, rng.uniform(-5, 5, size=(20, k)), generating_family(spec, tree.root))
            exact = max(exact, max(abs(r.gap) for r in rep.rows))

    # entropic, gamma = 1, 201-point grid of binary transition vectors, |X| <= 5
    grid = [[j / 200, 1 - j / 200] for j in range(201)]
    grid_gap = 0.0
    for p in [(0.5, 0.5)] + [tuple(random_distribution(rng, 2)) for _ in range(4)]:
        tree = binary_node(p)
        spec = Entropic(1.0, TreeMeasure.reference(tree))
        grid_gap = max(grid_gap, verify_representation(spec, "r", rng.uniform(-5, 5, size=(200, 2)), grid).max_gap)

    # entropic closed form against the grid oracle at the reference grid
    oracle_gap = 0.0
    cases = [((0.5, 0.5), (1.0, 0.0))]
    cases += [(tuple(random_distribution(rng, 2)), tuple(random_distribution(rng, 2, floor=0.0))) for _ in range(20)]
    for p, q in cases:
        tree = binary_node(p)
        spec = Entropic(1.0, TreeMeasure.reference(tree))
        oracle_gap = max(oracle_gap, abs(minimal_penalty_one_step(spec, "r", q) - minimal_penalty_oracle(spec, "r", q)))

    ok = weak >= -1e-9 and exact <= 1e-6 and grid_gap <= 1e-4 and oracle_gap <= 1e-3
    line = acceptance(
        4, "dual representation", ok,
        f"weak duality min gap {weak:.2e}, generating-family gap {exact:.2e}, "
        f"entropic grid-dual gap {grid_gap:.2e} (limit 1e-4), "
        f"entropic oracle gap {oracle_gap:.2e} (limit 1e-3)",
    )
    assert ok, line


def test_coherent_decomposition(acceptance):
    rng = np.random.default_rng(5)
    failures = pastings = 0
    exhaustive = True
    for _ in range(200):
        tree = random_tree(rng, max_horizon=3, max_rules=None)
        t = int(rng.integers(tree.horizon + 1))
        rep = coherent_decomposition_check(tree, random_spec(rng, tree, "worstcase"), random_payoff(rng, tree), t)
        failures += not rep.passed
        exhaustive &= rep.exhaustive
        pastings += rep.measures
    ok = failures == 0 and exhaustive
    line = acceptance(5, "worst-case stopping time is the pathwise max over pasted priors", ok,
                      f"200 instances, {pastings} pasted measures, {failures} failures")
    assert ok, line


def test_detection_ordering(acceptance):
    """Penalized (a) against worst case over the same vectors (b).

    Checked as stated: the dominated measure's stopping time is pathwise at
    least the dominating one's.  The report also counts the reverse
    inequality, which is what the envelope ordering implies.
    """
    rng = np.random.default_rng(6)
    detected = envelope = literal = reverse = 0
    n = 100
    for _ in range(n):
        tree = random_tree(rng, max_rules=None)
        pen = random_spec(rng, tree, "penalized")
        wc = WorstCase({node: pen.vectors[node] for node in tree.internal_nodes})
        rep = compare_monitors(DynamicRiskMeasure.replicate(tree, pen), DynamicRiskMeasure.replicate(tree, wc), random_payoff(rng, tree))
        detected += rep.direction in ("a<=b", "equal")
        envelope += bool(rep.envelope_ok)
        literal += rep.tau_b_le_tau_a
        reverse += rep.tau_a_le_tau_b
    ok = detected == envelope == literal == n
    line = acceptance(
        6, "dominated monitor stops no earlier", ok,
        f"{n} instances: direction {detected}/{n}, U ordering {envelope}/{n}, "
        f"tau_dominated >= tau_dominating {literal}/{n}, tau_dominated <= tau_dominating {reverse}/{n}",
    )
    assert ok, line


def test_zero_mass_convention(two_period, acceptance):
    Q = TreeMeasure.from_transitions(two_period, {"root": [1.0, 0.0]}, fill_reference=True)
    X = {"uu": 3.0, "ud": 5.0, "du": math.inf, "dd": -7.0}
    ce = cond_expect(two_period, Q, X, 1)
    phi = DynamicRiskMeasure.replicate(two_period, Entropic(1.0, TreeMeasure.reference(two_period)))
    alpha = minimal_penalty(phi, Q, 1).values
    ok = ce["d"] == 0.0 and ce["u"] == 4.0 and alpha["d"] == math.inf and alpha["u"] == 0.0
    line = acceptance(7, "zero-mass atoms", ok, f"E_Q[X|d] = {ce['d']}, alpha(d) = {alpha['d']}")
    assert ok, line


def test_determinism(tmp_path, acceptance, capsys):
    rng = np.random.default_rng(8)
    mismatches, runs = [], 0
    for i in range(6):
        tree = random_tree(rng, max_rules=20000)
        spec = tree.to_spec()
        H = random_payoff(rng, tree)
        (tmp_path / f"tree{i}.json").write_text(dump_json(spec))
        (tmp_path / f"h{i}.json").write_text(dump_json(H))
        kind = ["entropic", "worstcase", "penalized"][i % 3]
        if kind == "entropic":
            risk = {"kind": kind, "gamma": 2.0}
        else:
            table = {}
            for n in tree.internal_nodes:
                k = len(tree.children(n))
                vecs = [random_distribution(rng, k).tolist() for _ in range(2)]
                table[n] = vecs if kind == "worstcase" else [{"q": v, "beta": float(rng.uniform(0, 1))} for v in vecs]
            risk = {"kind": kind, ("priors" if kind == "worstcase" else "entries"): table}
        (tmp_path / f"r{i}.json").write_text(dump_json(risk))
        (tmp_path / f"s{i}.json").write_text(dump_json({"kind": "entropic", "gamma": 0.5}))
        base = ["--tree", str(tmp_path / f"tree{i}.json"), "--payoff", str(tmp_path / f"h{i}.json"),
                "--risk", str(tmp_path / f"r{i}.json"), "--risk2", str(tmp_path / f"s{i}.json")]
        for cmd in ("envelope", "oracle", "compare"):
            for fmt in ("csv", "json"):
                outputs = []
                for workers in (1, 2, 8):
                    out = tmp_path / f"{cmd}-{i}-{fmt}-{workers}"
                    main([cmd, *base, "--format", fmt, "--workers", str(workers), "--out", str(out)])
                    outputs.append(out.read_bytes())
                runs += 1
                if len(set(outputs)) != 1:
                    mismatches.append(f"{cmd}/{fmt}/{i}")
    capsys.readouterr()
    ok = not mismatches
    line = acceptance(8, "reports byte-identical for 1, 2 and 8 workers", ok,
                      f"{runs} report comparisons" + (f", differing: {mismatches}" if mismatches else ""))
    assert ok, line
