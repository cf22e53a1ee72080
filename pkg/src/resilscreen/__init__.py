"""Reliability/redundancy screening toolkit for structural systems.

Evaluates disaster-resilience of structural systems by estimating a
reliability index (beta, likelihood of an initial disruption) and a
redundancy index (pi, likelihood of cascading system failure given the
disruption) for mutually exclusive, collectively exhaustive component
failure scenarios, and prescreens the scenario space with three
acceleration methods: sequential event search, uniform hypersphere
sampling, and surrogate-assisted adaptive sampling.
"""

from .probcore import (
    Marginal,
    NBallSpec,
    RandomModel,
    beta_from_prob,
    sample_lhs,
    sample_nball,
    std_normal_cdf,
    std_normal_inv_cdf,
)
from .scenarios import (
    EventSpec,
    FailurePattern,
    ResilienceIndices,
    ResilienceThreshold,
    check_resilient,
    check_trivial,
    enumerate_scenarios,
    event_contains,
    resilience_indices,
    system_failure_probability,
)
from .structmodels import (
    DanielsBar,
    DanielsConfig,
    DanielsSystem,
    ModelOutcome,
    ShearFrameConfig,
    ShearFrameModel,
    TrussConfig,
    TrussMember,
    TrussModel,
)
from .relengines import (
    EstimateResult,
    EventQuery,
    ce_ais_estimate,
    estimate_scenario_indices,
    mcs_estimate,
    mcs_survey,
    required_mcs_samples,
    subset_sim_estimate,
)
from .screening import (
    AdaptiveConfig,
    ScreeningReport,
    convergence_ratio,
    nball_screen,
    sequential_search,
    surrogate_adaptive_screen,
)
from .surrogate import SurrogateNet, train_surrogate

__version__ = "0.1.0"
