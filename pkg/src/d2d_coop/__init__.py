from d2d_coop.logger import logger
from d2d_coop.channel import (ChannelDraw, Geometry, LinkBudget, RatePair, cellular_rate, d2d_rate,
                              effective_cu_rate, path_gain, relay_rate, sample_fading)
from d2d_coop.policy import (UNACCEPTABLE, CooperationPolicy, PayoffMatrix, RateDistribution,
                             apply_policy, build_payoff_matrix, check_feasibility, estimate_pair,
                             expected_payoff, lp_oracle, solve_threshold)
from d2d_coop.matching import (UNMATCHED, Matching, auction_match, demand, is_epsilon_stable,
                               match_without_transfer, optimal_assignment, random_match, utilities)
from d2d_coop.sim import (Scheme, SimConfig, compute_eau, generate_scenario, outage_percentage,
                          run_experiment, run_frame)
from d2d_coop.config import ExperimentSpec, load_config
