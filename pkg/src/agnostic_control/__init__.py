"""Agnostic control of dq = (aq + u)dt + dW with unknown drift a.

Closed-form costs, an Euler-Maruyama simulator, composable strategies,
and a Monte Carlo harness for costs, regrets and hitting frequencies.
"""

__version__ = "0.1.0"

from .analytics import (
    CostBreakdown, GainFunction, cg_cost, feedback_cost, j0, j0_asymptote, k_integral, kappa,
    phi_profile, xt_variance,
)
from .composite import (
    LasParams, LqsParams, SigmaStarParams, almost_optimal_strategy, bounded_regret_strategy,
    large_a_strategy, large_q_strategy, zero_start_strategy,
)
from .config import ExperimentConfig
from .errors import (
    AgnosticControlError, ContractViolation, Diverged, EstimationFailed, InvalidArgument,
    UnknownClaim, UnknownStrategy,
)
from .experiments import (
    CostEstimate, HittingLevels, RegretReport, estimate_cost, hitting_experiment, regret_curve,
    worst_case_regret,
)
from .registry import build_strategy
from .sde import BrownianPath, Trajectory, first_crossing, generate_brownian, simulate, simulate_batch
from .strategies import (
    AbarEstimate, Crossing, Strategy, assert_a_bounded, branch, constant_gain, estimate_abar,
    guard_with_lqs, mirror, optimal_known_a, rescale, simple_feedback,
)


def verify_claim(claim_id, cfg=None, **overrides):
    """Run a registered claim check (see :mod:`agnostic_control.claims`)."""
    from .claims import verify_claim as _verify

    return _verify(claim_id, cfg, **overrides)
