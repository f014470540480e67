"""Time-consistent convex risk monitoring on finite scenario trees."""

from riskmon.duality import (
    acceptance_member,
    coercivity_gap,
    conditional_norm,
    minimal_penalty,
    minimal_penalty_one_step,
    minimal_penalty_oracle,
    verify_representation,
)
from riskmon.filtration import (
    ScenarioTree,
    TreeMeasure,
    build_tree,
    cond_expect,
    density,
    is_locally_equivalent,
    node_mass,
)
from riskmon.riskcore import (
    DynamicRiskMeasure,
    Entropic,
    Expectation,
    Penalized,
    WorstCase,
    check_axioms,
    eval_dynamic,
    eval_one_step,
)
from riskmon.snell import (
    StoppingRegion,
    brute_force_max_risk,
    coherent_decomposition_check,
    compare_monitors,
    enumerate_stopping_times,
    maximal_risk_time,
    per_prior_snell,
    stopped_payoff,
    upper_snell,
)

__version__ = "0.1.0"
