from dataclasses import replace

import numpy as np
import pytest

from d2d_coop.channel import Geometry, LinkBudget, RatePair
from d2d_coop.policy import RateDistribution
from d2d_coop.sim import SimConfig


class ConstantRng:
    """衰落恒为 value 的随机源，只实现 sample_fading 用到的接口"""

    def __init__(self, value: float = 0.0):
        self.value = value

    def exponential(self, scale=1.0, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))


@pytest.fixture
def zero_rng() -> ConstantRng:
    return ConstantRng(0.0)


@pytest.fixture
def unit_rng() -> ConstantRng:
    return ConstantRng(1.0)


@pytest.fixture
def budget() -> LinkBudget:
    return LinkBudget.from_table_units()


@pytest.fixture
def unit_budget() -> LinkBudget:
    """P / N_0 = 1，SNR 等于信道增益"""
    return LinkBudget(p_cu=1.0, p_dt=1.0, noise=1.0)


@pytest.fixture(name="two_state")
def two_state_distribution() -> RateDistribution:
    return RateDistribution.discrete([(RatePair(2.0, 1.0), 0.5), (RatePair(1.0, 3.0), 0.5)])


@pytest.fixture
def pair_geometry() -> Geometry:
    """一个边缘 CU、一个 D2D 对"""
    return Geometry(
        bs_position=np.zeros(2),
        cu_positions=np.array([[500.0, 0.0]]),
        dt_positions=np.array([[300.0, 0.0]]),
        dr_positions=np.array([[300.0, 20.0]]),
        cell_radius=500.0,
        pathloss_exponent=4.0,
    )


@pytest.fixture
def small_config() -> SimConfig:
    return replace(SimConfig(), num_cu=4, num_d2d=5, samples_per_pair=500, subframes=100, n_scenarios=3,
                   master_seed=7)
