import math

import numpy as np
import pytest

from d2d_coop.channel import (LinkBudget, RatePair, cellular_rate, d2d_rate, dbm_to_watts,
                              effective_cu_rate, path_gain, rates_from_draw, relay_rate,
                              sample_channel_draw, sample_fading, sample_rate_pair, sample_rate_pairs,
                              stream_rng)
from d2d_coop.errors import DomainError


@pytest.mark.parametrize("distance, gamma, eta, expected", [
    (1.0, 4.0, 1.0, 1.0),
    (10.0, 4.0, 1.0, 1e-4),
    (250.0, 4.0, 0.7, 0.7 * 250.0 ** -4),
])
def test_path_gain(distance, gamma, eta, expected):
    assert path_gain(distance, gamma, eta) == pytest.approx(expected, rel=1e-12)


def test_path_gain_matches_log_domain():
    gain = path_gain(250.0, 4.0, 0.7)
    assert math.log(gain) == pytest.approx(math.log(0.7) - 4.0 * math.log(250.0), rel=1e-12)


def test_path_gain_underflow_uses_log_domain():
    gain = path_gain(1e80, 4.0, 1.0)
    assert 0.0 <= gain < 1e-300
    assert path_gain(np.array([1.0, 1e80]), 4.0, 1.0)[0] == pytest.approx(1.0)


@pytest.mark.parametrize("distance", [0.0, -5.0])
def test_path_gain_rejects_non_positive_distance(distance):
    with pytest.raises(DomainError):
        path_gain(distance, 4.0, 1.0)


def test_path_gain_rejects_negative_fading():
    with pytest.raises(DomainError):
        path_gain(10.0, 4.0, -0.1)


def test_sample_fading_statistics():
    eta = sample_fading(np.random.default_rng(1), size=1_000_000)
    assert np.all(eta >= 0)
    assert eta.mean() == pytest.approx(1.0, abs=0.01)
    assert np.mean(eta > 1.0) == pytest.approx(math.exp(-1.0), abs=0.01)


def test_sample_fading_is_deterministic():
    a = sample_fading(np.random.default_rng(5), size=100)
    b = sample_fading(np.random.default_rng(5), size=100)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("snr, expected", [(0.0, 0.0), (math.e - 1.0, 1.0), (math.e ** 2 - 1.0, 2.0)])
def test_cellular_rate(unit_budget, snr, expected):
    assert cellular_rate(snr, unit_budget) == pytest.approx(expected, abs=1e-12)


def test_cellular_rate_uses_power_over_noise(budget):
    h = (math.e - 1.0) * budget.noise / budget.p_cu
    assert cellular_rate(h, budget) == pytest.approx(1.0, rel=1e-12)


def test_relay_rate_examples(unit_budget):
    assert relay_rate(0.0, 3.0, 5.0, unit_budget) == 0.0
    assert relay_rate(2.0, 0.0, 0.0, unit_budget) == 0.0
    # 第二跳 e^2 - 1 拆成 h_mb 与 h_nb 两部分
    forward = math.e ** 2 - 1.0
    assert relay_rate(math.e ** 4 - 1.0, forward / 2, forward / 2, unit_budget) == pytest.approx(1.0)


@pytest.mark.parametrize("direct, relay, expected", [(2.0, 1.0, 2.0), (0.0, 0.0, 0.0), (1.3, 1.7, 1.7)])
def test_effective_cu_rate(direct, relay, expected):
    assert effective_cu_rate(direct, relay) == expected


@pytest.mark.parametrize("snr, expected", [(0.0, 0.0), (math.e - 1.0, 1.0), (math.e ** 3 - 1.0, 3.0)])
def test_d2d_rate(unit_budget, snr, expected):
    assert d2d_rate(snr, unit_budget) == pytest.approx(expected, abs=1e-12)


def test_link_budget_from_table_units():
    budget = LinkBudget.from_table_units(20.0, 20.0, -100.0)
    assert budget.p_cu == pytest.approx(0.02)
    assert budget.p_dt == pytest.approx(0.02)
    assert budget.noise == pytest.approx(1e-13)
    assert dbm_to_watts(30.0) == pytest.approx(1.0)


@pytest.mark.parametrize("kwargs", [
    {"p_cu": 0.0, "p_dt": 1.0, "noise": 1.0},
    {"p_cu": 1.0, "p_dt": -1.0, "noise": 1.0},
    {"p_cu": 1.0, "p_dt": 1.0, "noise": 0.0},
])
def test_link_budget_rejects_non_positive(kwargs):
    with pytest.raises(DomainError):
        LinkBudget(**kwargs)


def test_rate_pair_rejects_negative():
    with pytest.raises(DomainError):
        RatePair(-0.1, 1.0)


def test_sample_rate_pair_zero_fading(pair_geometry, budget, zero_rng):
    assert sample_rate_pair(pair_geometry, 0, 0, budget, zero_rng) == RatePair(0.0, 0.0)


def test_sample_rate_pair_unit_fading(pair_geometry, budget, unit_rng):
    d = pair_geometry.pair_distances(0, 0)

    def snr(power, distance):
        return power * distance ** -4.0 / budget.noise

    direct = math.log(1.0 + snr(budget.p_cu, d.d_mb))
    relay = 0.5 * min(math.log(1.0 + snr(budget.p_cu, d.d_mn)),
                      math.log(1.0 + snr(budget.p_cu, d.d_mb) + snr(budget.p_dt, d.d_nb)))
    expected_d2d = math.log(1.0 + snr(budget.p_dt, d.d_nn))

    pair = sample_rate_pair(pair_geometry, 0, 0, budget, unit_rng)
    assert pair.r_cu == pytest.approx(max(direct, relay), rel=1e-12)
    assert pair.r_d2d == pytest.approx(expected_d2d, rel=1e-12)


def test_sample_rate_pair_is_deterministic(pair_geometry, budget):
    a = sample_rate_pair(pair_geometry, 0, 0, budget, stream_rng(3, 0))
    b = sample_rate_pair(pair_geometry, 0, 0, budget, stream_rng(3, 0))
    assert a == b


def test_batch_sampling_matches_draw_composition(pair_geometry, budget):
    distances = pair_geometry.pair_distances(0, 0)
    draw = sample_channel_draw(distances, 4.0, stream_rng(9), size=50)
    expected_cu, expected_d2d = rates_from_draw(draw, budget)
    r_cu, r_d2d = sample_rate_pairs(pair_geometry, 0, 0, budget, stream_rng(9), 50)
    assert np.array_equal(r_cu, expected_cu)
    assert np.array_equal(r_d2d, expected_d2d)


def test_stream_rng_streams_are_independent():
    a = stream_rng(2018, 0, 1).random(5)
    b = stream_rng(2018, 1, 0).random(5)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, stream_rng(2018, 0, 1).random(5))


def test_rates_are_monotone_in_gains(unit_budget):
    rng = stream_rng(21)
    gains = rng.exponential(size=(500, 4)) * 10.0
    bumped = gains.copy()
    coordinate = rng.integers(0, 4, size=500)
    bumped[np.arange(500), coordinate] += rng.exponential(size=500)

    assert np.all(cellular_rate(bumped[:, 0], unit_budget) >= cellular_rate(gains[:, 0], unit_budget))
    assert np.all(relay_rate(bumped[:, 1], bumped[:, 0], bumped[:, 2], unit_budget)
                  >= relay_rate(gains[:, 1], gains[:, 0], gains[:, 2], unit_budget))
    assert np.all(d2d_rate(bumped[:, 3], unit_budget) >= d2d_rate(gains[:, 3], unit_budget))


def test_relay_rate_bounded_by_half_decode(unit_budget):
    rng = stream_rng(22)
    h_mn, h_mb, h_nb = rng.exponential(size=(3, 1000)) * 50.0
    relay = relay_rate(h_mn, h_mb, h_nb, unit_budget)
    assert np.all(relay <= 0.5 * np.log1p(h_mn) + 1e-12)
    assert np.all(relay <= 0.5 * np.log1p(h_mb + h_nb) + 1e-12)


def test_effective_rate_never_below_cellular(pair_geometry, budget):
    rng = stream_rng(23)
    draw = sample_channel_draw(pair_geometry.pair_distances(0, 0), pair_geometry.pathloss_exponent,
                               rng, size=2000)
    r_cu, _ = rates_from_draw(draw, budget)
    assert np.all(r_cu >= cellular_rate(draw.h_mb, budget))


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_path_gain_is_linear_in_fading(scale):
    eta = stream_rng(24).exponential(size=100)
    distances = np.linspace(10.0, 500.0, 100)
    assert np.allclose(path_gain(distances, 3.89, scale * eta), scale * path_gain(distances, 3.89, eta),
                       rtol=1e-12, atol=0.0)
