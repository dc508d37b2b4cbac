"""distauction: distributed resource-allocation auctions without an auctioneer.

A deterministic simulator runs m rational providers through bid agreement,
input validation, a commit-reveal common coin, and data transfers to execute
double and standard (VCG) auctions; an empirical game-theoretic harness
checks that no bounded coalition profits from deviating.
"""

from .allocators import (
    AuctionSpec,
    ConfigError,
    MUTATIONS,
    StandardAuctionConfig,
    build_task_graph,
    double_auction,
    framework_machines,
    local_execute,
    parallel_allocator,
    standard_auction_allocate,
    vcg_payment,
)
from .blocks import (
    BOT,
    DistributionSpec,
    HONEST,
    Strategy,
    TransferSpec,
    combine_bits,
    rational_consensus,
)
from .core import (
    ABORT,
    Allocation,
    Bid,
    BidVector,
    Outcome,
    PaymentVector,
    ProviderBid,
    check_feasible,
    neutral_bid,
    social_welfare,
    utility,
)
from .fixedpoint import FP, ONE, SCALE, ZERO, fp
from .gametheory import (
    STRATEGY_LIBRARY,
    EquilibriumReport,
    check_k_resilience,
    global_outcome,
    run_framework,
    run_mutation_suite,
)
from .generate import Instance, InstanceParams, gen_equilibrium_instance, gen_instance
from .simnet import LivenessError, Schedule, World, gen_fair_schedule

__version__ = "0.1.0"

__all__ = [
    "ABORT",
    "Allocation",
    "AuctionSpec",
    "BOT",
    "Bid",
    "BidVector",
    "ConfigError",
    "DistributionSpec",
    "EquilibriumReport",
    "FP",
    "HONEST",
    "Instance",
    "InstanceParams",
    "LivenessError",
    "MUTATIONS",
    "ONE",
    "Outcome",
    "PaymentVector",
    "ProviderBid",
    "SCALE",
    "STRATEGY_LIBRARY",
    "Schedule",
    "StandardAuctionConfig",
    "Strategy",
    "TransferSpec",
    "World",
    "ZERO",
    "build_task_graph",
    "check_feasible",
    "check_k_resilience",
    "combine_bits",
    "double_auction",
    "fp",
    "framework_machines",
    "gen_equilibrium_instance",
    "gen_fair_schedule",
    "gen_instance",
    "global_outcome",
    "local_execute",
    "neutral_bid",
    "parallel_allocator",
    "rational_consensus",
    "run_framework",
    "run_mutation_suite",
    "social_welfare",
    "standard_auction_allocate",
    "utility",
    "vcg_payment",
]
