"""Bayesian risk-averse model predictive control.

Online Bayesian estimation of unknown physical parameters (particle filter),
credible-region ambiguity sets that only ever shrink, and receding-horizon
control that plans against the worst parameter in the current ambiguity set.
Includes the cart-pole swing-up benchmark comparing nominal, tube,
stochastic, and risk-averse controllers.
"""

from .ambiguity import (
    AmbiguitySet,
    credible_interval_eti,
    credible_interval_hpdi,
    radius,
    update_ambiguity,
)
from .bayes_filter import (
    ParticleSet,
    effective_sample_size,
    init_particles,
    posterior_summary,
    propagate,
    resample_inverse_transform,
    reweight,
)
from .config import ExperimentConfig, load_config, replace_config, validate_config
from .diagnostics import (
    BlindRegion,
    LikelihoodMatrix,
    blind_regions,
    combine_regions,
    descent_audit,
    kl_step,
    likelihood_matrix,
    three_theta_scenario,
)
from .dynamics import (
    SystemModel,
    cartpole_model,
    cartpole_rhs,
    first_order_model,
    rk4_step,
    step_stochastic,
    transition_density,
    transition_log_density,
)
from .harness import (
    METRICS,
    BenchmarkTable,
    EpisodeRecord,
    render_svg_summary,
    run_benchmark,
    run_episode,
    summarize,
    write_csv,
)
from .mpc import KINDS, PlanResult, improve_policy, plan, rollout_cost, shift_warm_start
from .risk import (
    CostSpec,
    DiscreteRiskMDP,
    ScenarioSet,
    box_candidates,
    delta_relaxed,
    dp_solve_discrete,
    draw_scenarios,
    empirical_cvar,
    empirical_var,
    evaluate_costs,
    expected_cost,
    worst_case_value,
)

__version__ = "0.1.0"
