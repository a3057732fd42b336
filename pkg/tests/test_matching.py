import itertools
from collections import Counter

import numpy as np
import pytest

from d2d_coop.channel import stream_rng
from d2d_coop.errors import AuctionDivergenceError, DomainError
from d2d_coop.matching import (UNMATCHED, Matching, auction_match, demand, is_epsilon_stable,
                               match_without_transfer, matching_value, max_auction_rounds,
                               optimal_assignment, random_match, utilities)
from d2d_coop.policy import UNACCEPTABLE, PayoffMatrix
from d2d_coop.verify import random_payoff_matrix


def payoff_matrix(values) -> PayoffMatrix:
    return PayoffMatrix.from_values(values)


def brute_force_optimum(payoffs: PayoffMatrix) -> float:
    num_cu, num_d2d = payoffs.shape
    best = 0.0
    for k in range(min(num_cu, num_d2d) + 1):
        for cus in itertools.combinations(range(num_cu), k):
            for d2ds in itertools.permutations(range(num_d2d), k):
                values = [payoffs.values[m, n] for m, n in zip(cus, d2ds)]
                if all(v >= 0 for v in values):
                    best = max(best, sum(values))
    return best


def validate_matching(matching: Matching, payoffs: PayoffMatrix, respect_acceptability: bool = True) -> None:
    for m, n in matching.pairs():
        assert matching.mu_d2d[n] == m
        if respect_acceptability:
            assert payoffs.values[m, n] >= 0
    for m, n in enumerate(matching.mu_cu):
        if n == UNMATCHED:
            assert matching.prices[m] == 0


@pytest.mark.parametrize("column, beta, expected", [
    ([3.0, 5.0], [0.0, 0.0], 1),
    ([3.0, 5.0], [0.0, 3.0], 0),
    ([UNACCEPTABLE, UNACCEPTABLE], [0.0, 0.0], None),
    ([4.0, 4.0], [0.0, 0.0], 0),
])
def test_demand(column, beta, expected):
    payoffs = payoff_matrix(np.array(column)[:, None])
    assert demand(0, np.array(beta), payoffs) == expected


def test_matching_rejects_inconsistent_maps():
    with pytest.raises(DomainError):
        Matching((0,), (UNMATCHED,), (0.0,))
    with pytest.raises(DomainError):
        Matching((UNMATCHED,), (UNMATCHED,), (1.0,))
    with pytest.raises(DomainError):
        Matching.from_pairs(2, 2, [(0, 0), (1, 0)])


def test_auction_nothing_acceptable():
    matching = auction_match(payoff_matrix([[UNACCEPTABLE]]), 1.0, stream_rng(0))
    assert matching.pairs() == []
    assert matching.prices == (0.0,)


def test_auction_single_pair_accepted_at_zero():
    matching = auction_match(payoff_matrix([[5.0]]), 1.0, stream_rng(0))
    assert matching.pairs() == [(0, 0)]
    assert matching.prices == (0.0,)


def test_auction_price_ascends_until_one_bidder():
    betas = []
    matching = auction_match(payoff_matrix([[4.0, 6.0]]), 1.0, stream_rng(0),
                             on_round=lambda state: betas.append(float(state.beta[0])))
    assert matching.pairs() == [(0, 1)]
    assert matching.prices == (5.0,)
    assert betas[:5] == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert is_epsilon_stable(matching, payoff_matrix([[4.0, 6.0]]), 1.0)


def test_auction_rejects_non_positive_epsilon():
    with pytest.raises(DomainError):
        auction_match(payoff_matrix([[1.0]]), 0.0, stream_rng(0))


def test_auction_round_cap():
    with pytest.raises(AuctionDivergenceError) as info:
        auction_match(payoff_matrix([[4.0, 6.0]]), 1.0, stream_rng(0), max_rounds=2)
    assert info.value.state.t == 3
    assert max_auction_rounds(payoff_matrix([[UNACCEPTABLE]]), 1.0) >= 1


@pytest.mark.parametrize("epsilon", [0.1, 1.0])
def test_auction_is_stable_and_near_optimal(epsilon):
    rng = stream_rng(2018, int(epsilon * 10))
    for _ in range(100):
        payoffs = random_payoff_matrix(rng)
        max_v = max(float(payoffs.values.max()), 0.0)
        peak = []
        matching = auction_match(payoffs, epsilon, rng,
                                 on_round=lambda state: peak.append(float(state.beta.max(initial=0.0))))
        validate_matching(matching, payoffs)
        report = is_epsilon_stable(matching, payoffs, epsilon)
        assert report.stable, report
        _, optimum = optimal_assignment(payoffs)
        assert matching_value(matching, payoffs) >= optimum - min(payoffs.shape) * epsilon - 1e-9
        assert max(peak) <= max_v + epsilon + 1e-9


def test_stability_examples():
    assert is_epsilon_stable(Matching.empty(2, 2), payoff_matrix([[UNACCEPTABLE] * 2] * 2), 1.0)
    five = payoff_matrix([[5.0]])
    assert is_epsilon_stable(Matching.from_pairs(1, 1, [(0, 0)]), five, 1.0)
    report = is_epsilon_stable(Matching.empty(1, 1), five, 1.0)
    assert not report
    assert report.violation == "pair"
    assert report.witness == (0, 0)
    assert report.slack == pytest.approx(-4.0)


def test_stability_detects_overpriced_pair():
    payoffs = payoff_matrix([[5.0]])
    report = is_epsilon_stable(Matching.from_pairs(1, 1, [(0, 0)], [6.0]), payoffs, 1.0)
    assert report.violation == "d2d"
    assert report.witness == (0,)


@pytest.mark.parametrize("values, pairs, total", [
    ([[3.0, 1.0], [2.0, 4.0]], [(0, 0), (1, 1)], 7.0),
    ([[UNACCEPTABLE, UNACCEPTABLE], [UNACCEPTABLE, UNACCEPTABLE]], [], 0.0),
    ([[4.0, 6.0]], [(0, 1)], 6.0),
])
def test_optimal_assignment_examples(values, pairs, total):
    matching, value = optimal_assignment(payoff_matrix(values))
    assert matching.pairs() == pairs
    assert value == pytest.approx(total)
    assert all(p == 0.0 for p in matching.prices)


def test_optimal_assignment_matches_brute_force():
    rng = stream_rng(7)
    for _ in range(60):
        payoffs = random_payoff_matrix(rng, max_size=4, unacceptable_share=0.3)
        matching, value = optimal_assignment(payoffs)
        validate_matching(matching, payoffs)
        assert value == pytest.approx(brute_force_optimum(payoffs), abs=1e-9)


def test_optimal_assignment_empty_shapes():
    matching, value = optimal_assignment(PayoffMatrix(values=np.zeros((0, 3))))
    assert matching.num_d2d == 3
    assert value == 0.0


def test_match_without_transfer_examples():
    single = match_without_transfer(payoff_matrix([[5.0]]), stream_rng(0))
    assert single.pairs() == [(0, 0)]

    square = payoff_matrix([[3.0, 1.0], [2.0, 4.0]])
    matching = match_without_transfer(square, stream_rng(0))
    assert matching_value(matching, square) == pytest.approx(7.0)

    contested = payoff_matrix([[3.0, 2.0]])
    totals = set()
    for seed in range(20):
        matching = match_without_transfer(contested, stream_rng(seed))
        assert matching.matched_count == 1
        totals.add(matching_value(matching, contested))
    assert totals <= {3.0, 2.0}
    assert len(totals) == 2


def test_match_without_transfer_is_stable_at_zero_prices():
    rng = stream_rng(8)
    for _ in range(50):
        payoffs = random_payoff_matrix(rng, max_size=6)
        matching = match_without_transfer(payoffs, rng)
        validate_matching(matching, payoffs)
        assert all(p == 0.0 for p in matching.prices)
        # 没有 D2D 对更偏好一个空闲且可接受的 CU
        for n in range(payoffs.num_d2d):
            current = payoffs.values[matching.mu_d2d[n], n] if matching.mu_d2d[n] != UNMATCHED else -np.inf
            for m in range(payoffs.num_cu):
                if matching.mu_cu[m] == UNMATCHED and payoffs.values[m, n] >= 0:
                    assert payoffs.values[m, n] <= current


def test_random_match_edge_cases():
    assert random_match(0, 3, stream_rng(0)).pairs() == []
    assert random_match(1, 1, stream_rng(0)).pairs() == [(0, 0)]
    assert random_match(3, 5, stream_rng(0)).matched_count == 3
    assert random_match(5, 3, stream_rng(0)).matched_count == 3


def test_random_match_is_uniform():
    rng = stream_rng(9)
    draws = 100_000
    counts = Counter(tuple(random_match(2, 2, rng).mu_cu) for _ in range(draws))
    assert set(counts) == {(0, 1), (1, 0)}
    for count in counts.values():
        assert count / draws == pytest.approx(0.5, abs=0.01)


def test_utilities_examples():
    empty = utilities(Matching.empty(2, 2), payoff_matrix([[3.0, 1.0], [2.0, 4.0]]))
    assert empty.theta == (0.0, 0.0)
    assert empty.delta == (0.0, 0.0)

    single = utilities(Matching.from_pairs(1, 1, [(0, 0)], [2.0]), payoff_matrix([[5.0]]))
    assert single.theta == (2.0,)
    assert single.delta == (3.0,)

    square = utilities(Matching.from_pairs(2, 2, [(0, 0), (1, 1)], [1.0, 2.0]),
                       payoff_matrix([[3.0, 1.0], [2.0, 4.0]]))
    assert square.theta == (1.0, 2.0)
    assert square.delta == (2.0, 2.0)


def test_assignment_matrix():
    matching = Matching.from_pairs(2, 3, [(0, 2), (1, 0)])
    assert matching.assignment_matrix().tolist() == [[0, 0, 1], [1, 0, 0]]


@pytest.mark.parametrize("epsilon", [0.25, 1.0])
def test_auction_prices_are_monotone_and_bounded(epsilon):
    rng = stream_rng(2019, int(epsilon * 100))
    for _ in range(100):
        payoffs = random_payoff_matrix(rng)
        num_cu, num_d2d = payoffs.shape
        row_max = np.maximum(payoffs.values, 0.0).max(axis=1, initial=0.0)
        rounds = []

        def on_round(state):
            assert np.all(state.beta >= state.prev_beta)
            assert np.all(state.beta <= epsilon + row_max + 1e-9)
            rounds.append(state.t)

        auction_match(payoffs, epsilon, rng, on_round=on_round)
        max_v = max(float(payoffs.values.max(initial=0.0)), 0.0)
        assert rounds[-1] <= num_cu * (max_v / epsilon + 2) + num_d2d + 1


def test_schemes_never_pair_unacceptable():
    rng = stream_rng(2020)
    for _ in range(100):
        payoffs = random_payoff_matrix(rng, max_size=6, unacceptable_share=0.5)
        schemes = [auction_match(payoffs, 1.0, rng), optimal_assignment(payoffs)[0],
                   match_without_transfer(payoffs, rng)]
        for matching in schemes:
            assert all(payoffs.values[m, n] >= 0 for m, n in matching.pairs())


def test_utilities_ignore_unacceptable_pairs():
    payoffs = payoff_matrix([[UNACCEPTABLE, 3.0]])
    forced = Matching.from_pairs(1, 2, [(0, 0)], [0.0])
    util = utilities(forced, payoffs)
    assert util.theta == (0.0,)
    assert util.delta == (0.0, 0.0)
    report = is_epsilon_stable(forced, payoffs, 1.0)
    assert report.violation == "d2d"
    assert report.witness == (0,)
