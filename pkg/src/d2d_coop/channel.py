"""
信道模块：节点几何、快衰落采样以及瞬时速率计算

所有速率使用自然对数（nats/s/Hz）：
    r^C_m   = ln(1 + P_c h_mb / N_0)                                  直连
    r^R_mn  = 1/2 min{ln(1 + P_c h_mn / N_0), ln(1 + (P_c h_mb + P_d h_nb) / N_0)}   DF 中继
    r^C_mn  = max{r^C_m, r^R_mn}                                      CU 有效速率
    r^D_mn  = ln(1 + P_d h_nn / N_0)                                  D2D 速率
"""
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from d2d_coop.errors import DomainError

ArrayLike = Union[float, np.ndarray]
SeedLike = Union[int, np.random.SeedSequence]

# exp() 在该指数以下会下溢为次正规数/0，此时改用对数域计算
_MIN_LOG_GAIN = math.log(np.finfo(float).tiny)


def _to_output(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def stream_seed(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """
    从主种子派生独立的子种子流

    Args:
        seed: 主种子（整数）或已派生的 SeedSequence
        key: 流标识，例如 (场景编号, 用途)

    Returns:
        np.random.SeedSequence: 与 key 一一对应的种子序列，结果与线程数无关
    """
    key = tuple(int(k) for k in key)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    return np.random.SeedSequence(int(seed), spawn_key=key)


def stream_rng(seed: SeedLike, *key: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, *key))


@dataclass(frozen=True)
class LinkBudget:
    """发射功率与噪声，单位均为瓦特"""
    p_cu: float
    p_dt: float
    noise: float

    def __post_init__(self):
        for name in ("p_cu", "p_dt", "noise"):
            value = getattr(self, name)
            if not value > 0:
                raise DomainError(f"{name} 必须为正数, 当前为 {value}")

    @classmethod
    def from_table_units(cls, p_cu_mw: float = 20.0, p_dt_mw: float = 20.0,
                         noise_dbm: float = -100.0) -> "LinkBudget":
        """按 mW / dBm 构造（配置文件使用的单位）"""
        return cls(p_cu=p_cu_mw / 1000.0, p_dt=p_dt_mw / 1000.0, noise=dbm_to_watts(noise_dbm))


@dataclass(frozen=True)
class PairDistances:
    """CU m 与 D2D 对 n 组合时四条链路的距离（米）"""
    d_mb: float
    d_mn: float
    d_nb: float
    d_nn: float


@dataclass(frozen=True, eq=False)
class Geometry:
    """
    一个场景的节点位置

    Attributes:
        bs_position: 基站坐标 (2,)
        cu_positions: CU 坐标 (M, 2)
        dt_positions: D2D 发射端坐标 (N, 2)
        dr_positions: D2D 接收端坐标 (N, 2)
        cell_radius: 小区半径（米）
        pathloss_exponent: 路径损耗指数 gamma
    """
    bs_position: np.ndarray
    cu_positions: np.ndarray
    dt_positions: np.ndarray
    dr_positions: np.ndarray
    cell_radius: float
    pathloss_exponent: float

    def __post_init__(self):
        if not self.pathloss_exponent > 0:
            raise DomainError(f"pathloss_exponent 必须为正数, 当前为 {self.pathloss_exponent}")
        if len(self.dt_positions) != len(self.dr_positions):
            raise DomainError("dt_positions 与 dr_positions 长度不一致")

    @property
    def num_cu(self) -> int:
        return len(self.cu_positions)

    @property
    def num_d2d(self) -> int:
        return len(self.dt_positions)

    def cu_distances(self) -> np.ndarray:
        return np.linalg.norm(self.cu_positions - self.bs_position, axis=1)

    def dt_distances(self) -> np.ndarray:
        return np.linalg.norm(self.dt_positions - self.bs_position, axis=1)

    def d2d_distances(self) -> np.ndarray:
        return np.linalg.norm(self.dr_positions - self.dt_positions, axis=1)

    def pair_distances(self, m: int, n: int) -> PairDistances:
        cu, dt, dr = self.cu_positions[m], self.dt_positions[n], self.dr_positions[n]
        return PairDistances(
            d_mb=float(np.linalg.norm(cu - self.bs_position)),
            d_mn=float(np.linalg.norm(cu - dt)),
            d_nb=float(np.linalg.norm(dt - self.bs_position)),
            d_nn=float(np.linalg.norm(dr - dt)),
        )

    def check(self, dt_annulus: Tuple[float, float], d2d_distance: Tuple[float, float],
              tol: float = 1e-9) -> None:
        """
        校验几何约束：CU 位于小区边缘、DT 位于环形区域、D2D 链路距离在范围内

        Raises:
            DomainError: 任一约束不满足
        """
        if not np.allclose(self.cu_distances(), self.cell_radius, rtol=0.0, atol=tol):
            raise DomainError("存在不在小区边缘的 CU")
        dt = self.dt_distances()
        if np.any(dt < dt_annulus[0] - tol) or np.any(dt > dt_annulus[1] + tol):
            raise DomainError(f"存在不在 {dt_annulus} 环形区域内的 DT")
        d2d = self.d2d_distances()
        if np.any(d2d < d2d_distance[0] - tol) or np.any(d2d > d2d_distance[1] + tol):
            raise DomainError(f"存在 D2D 链路距离不在 {d2d_distance} 范围内")


@dataclass(frozen=True)
class ChannelDraw:
    """一次信道实现的四个线性增益（标量或等长数组）"""
    h_mb: ArrayLike
    h_mn: ArrayLike
    h_nb: ArrayLike
    h_nn: ArrayLike


@dataclass(frozen=True)
class RatePair:
    """状态 r_mn = (r^C_mn, r^D_mn)，单位 nats/s/Hz"""
    r_cu: float
    r_d2d: float

    def __post_init__(self):
        if not (self.r_cu >= 0 and self.r_d2d >= 0):
            raise DomainError(f"速率必须非负: ({self.r_cu}, {self.r_d2d})")


def path_gain(distance: ArrayLike, gamma: float, fading: ArrayLike) -> ArrayLike:
    """
    信道增益 h = eta * L^-gamma

    Raises:
        DomainError: 距离非正或衰落为负
    """
    d = np.asarray(distance, dtype=float)
    eta = np.asarray(fading, dtype=float)
    if np.any(d <= 0):
        raise DomainError(f"距离必须为正数: {distance}")
    if np.any(eta < 0):
        raise DomainError(f"衰落增益必须非负: {fading}")

    log_loss = -gamma * np.log(d)
    if np.all(log_loss > _MIN_LOG_GAIN):
        gain = eta * np.power(d, -gamma)
    else:
        with np.errstate(divide="ignore"):
            gain = np.exp(np.log(eta) + log_loss)
    return _to_output(gain)


def sample_fading(rng: np.random.Generator, size=None) -> ArrayLike:
    """均值为 1 的指数分布快衰落（瑞利功率增益）"""
    return rng.exponential(1.0, size=size)


def cellular_rate(h_mb: ArrayLike, budget: LinkBudget) -> ArrayLike:
    h = np.asarray(h_mb, dtype=float)
    return _to_output(np.log1p(budget.p_cu * h / budget.noise))


def relay_rate(h_mn: ArrayLike, h_mb: ArrayLike, h_nb: ArrayLike, budget: LinkBudget) -> ArrayLike:
    """解码转发 + 重复编码的中继速率，两跳各占一半时间"""
    h_mn = np.asarray(h_mn, dtype=float)
    h_mb = np.asarray(h_mb, dtype=float)
    h_nb = np.asarray(h_nb, dtype=float)
    decode = np.log1p(budget.p_cu * h_mn / budget.noise)
    forward = np.log1p(budget.p_cu * h_mb / budget.noise + budget.p_dt * h_nb / budget.noise)
    return _to_output(0.5 * np.minimum(decode, forward))


def effective_cu_rate(r_direct: ArrayLike, r_relay: ArrayLike) -> ArrayLike:
    return _to_output(np.maximum(np.asarray(r_direct, dtype=float), np.asarray(r_relay, dtype=float)))


def d2d_rate(h_nn: ArrayLike, budget: LinkBudget) -> ArrayLike:
    h = np.asarray(h_nn, dtype=float)
    return _to_output(np.log1p(budget.p_dt * h / budget.noise))


def draw_from_fading(distances: PairDistances, gamma: float, eta: np.ndarray) -> ChannelDraw:
    """eta 首维长度为 4，按 (h_mb, h_mn, h_nb, h_nn) 排列"""
    return ChannelDraw(
        h_mb=path_gain(distances.d_mb, gamma, eta[0]),
        h_mn=path_gain(distances.d_mn, gamma, eta[1]),
        h_nb=path_gain(distances.d_nb, gamma, eta[2]),
        h_nn=path_gain(distances.d_nn, gamma, eta[3]),
    )


def sample_channel_draw(distances: PairDistances, gamma: float, rng: np.random.Generator,
                        size=None) -> ChannelDraw:
    """按 (h_mb, h_mn, h_nb, h_nn) 的顺序抽取四个独立衰落"""
    shape = (4,) if size is None else (4, size)
    return draw_from_fading(distances, gamma, np.asarray(sample_fading(rng, size=shape), dtype=float))


def rates_from_draw(draw: ChannelDraw, budget: LinkBudget) -> Tuple[ArrayLike, ArrayLike]:
    """
    Returns:
        (r^C_mn, r^D_mn)
    """
    direct = cellular_rate(draw.h_mb, budget)
    relay = relay_rate(draw.h_mn, draw.h_mb, draw.h_nb, budget)
    return effective_cu_rate(direct, relay), d2d_rate(draw.h_nn, budget)


def sample_rate_pair(geometry: Geometry, m: int, n: int, budget: LinkBudget,
                     rng: np.random.Generator) -> RatePair:
    draw = sample_channel_draw(geometry.pair_distances(m, n), geometry.pathloss_exponent, rng)
    r_cu, r_d2d = rates_from_draw(draw, budget)
    return RatePair(r_cu=float(r_cu), r_d2d=float(r_d2d))


def pair_rates_from_fading(geometry: Geometry, m: int, n: int, budget: LinkBudget,
                           eta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """由给定的 (4, size) 衰落计算 (r^C, r^D) 数组"""
    draw = draw_from_fading(geometry.pair_distances(m, n), geometry.pathloss_exponent, eta)
    r_cu, r_d2d = rates_from_draw(draw, budget)
    return np.atleast_1d(r_cu), np.atleast_1d(r_d2d)


def sample_rate_pairs(geometry: Geometry, m: int, n: int, budget: LinkBudget,
                      rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """批量版本的 sample_rate_pair，返回长度为 size 的 (r^C, r^D) 数组"""
    eta = np.asarray(sample_fading(rng, size=(4, size)), dtype=float)
    return pair_rates_from_fading(geometry, m, n, budget, eta)


def direct_rates_from_fading(geometry: Geometry, m: int, budget: LinkBudget, eta: np.ndarray) -> np.ndarray:
    distance = float(geometry.cu_distances()[m])
    return np.atleast_1d(cellular_rate(path_gain(distance, geometry.pathloss_exponent, eta), budget))


def sample_direct_rates(geometry: Geometry, m: int, budget: LinkBudget,
                        rng: np.random.Generator, size: int) -> np.ndarray:
    """未匹配 CU 的直连速率样本"""
    return direct_rates_from_fading(geometry, m, budget, np.asarray(sample_fading(rng, size=size), dtype=float))
