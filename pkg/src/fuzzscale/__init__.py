"""Time-slice schedulers for fuzzing many programs on a small core budget."""

from fuzzscale.bandit import (
    Arm,
    BanditParams,
    cycle_gamma,
    discounted_reward,
    ramp_epsilon,
    select_epsilon_greedy,
    simple_reward,
)
from fuzzscale.engine import (
    Actions,
    BoianPolicy,
    DiscountedMabPolicy,
    RoundRobinPolicy,
    SchedulerState,
    SimpleMabPolicy,
    make_policy,
    select_round_robin,
    startup,
    tick,
)
from fuzzscale.metrics import (
    CampaignResult,
    accumulative_delta,
    accumulative_metric,
    pairwise_table,
    voting_metric,
)

__version__ = "0.1.0"

__all__ = [
    "Actions",
    "Arm",
    "BanditParams",
    "BoianPolicy",
    "CampaignResult",
    "DiscountedMabPolicy",
    "RoundRobinPolicy",
    "SchedulerState",
    "SimpleMabPolicy",
    "accumulative_delta",
    "accumulative_metric",
    "cycle_gamma",
    "discounted_reward",
    "make_policy",
    "pairwise_table",
    "ramp_epsilon",
    "select_epsilon_greedy",
    "select_round_robin",
    "simple_reward",
    "startup",
    "tick",
    "voting_metric",
]
