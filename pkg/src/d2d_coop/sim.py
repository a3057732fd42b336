"""
两时间尺度仿真：场景生成、帧仿真以及 EAU / D2D 和速率 / CU 中断率统计
"""
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from d2d_coop.channel import (Geometry, LinkBudget, direct_rates_from_fading, pair_rates_from_fading,
                              sample_fading, stream_rng, stream_seed)
from d2d_coop.errors import DomainError, UsageError
from d2d_coop.logger import logger
from d2d_coop.matching import (UNMATCHED, Matching, Utilities, auction_match, match_without_transfer,
                               optimal_assignment, random_match, utilities)
from d2d_coop.policy import CooperationPolicy, PayoffMatrix, apply_policy_array, build_payoff_matrix

# 每个场景内的随机流编号
_GEOMETRY_STREAM = 0
_PAYOFF_STREAM = 1
_MATCHING_STREAM = 2
_FRAME_STREAM = 3


class Scheme(enum.Enum):
    AUCTION = "auction"
    OPTIMAL = "optimal"
    NO_TRANSFER = "no-transfer"
    RANDOM = "random"

    @property
    def code(self) -> int:
        return list(Scheme).index(self)


@dataclass(frozen=True)
class SimConfig:
    """
    仿真参数，默认 M = 15、单小区 500 m

    功率与噪声在 budget 中以瓦特表示。
    """
    num_cu: int = 15
    num_d2d: int = 20
    cell_radius: float = 500.0
    dt_annulus: Tuple[float, float] = (200.0, 400.0)
    d2d_distance: Tuple[float, float] = (10.0, 30.0)
    pathloss_exponent: float = 3.89
    budget: LinkBudget = field(default_factory=LinkBudget.from_table_units)
    r_th: float = 1.8
    epsilon: float = 1.0
    subframes: int = 1000
    samples_per_pair: int = 10000
    n_scenarios: int = 200
    master_seed: int = 2018
    outage_margin_se: float = 3.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            DomainError: 消息以出错的字段名开头
        """
        for name in ("num_cu", "num_d2d", "n_scenarios"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name}: 不能为负数")
        for name in ("subframes", "samples_per_pair"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name}: 必须 >= 1")
        if not self.cell_radius > 0:
            raise DomainError("cell_radius: 必须为正数")
        for name in ("dt_annulus", "d2d_distance"):
            low, high = getattr(self, name)
            if not 0 < low <= high:
                raise DomainError(f"{name}: 区间必须满足 0 < min <= max, 当前为 ({low}, {high})")
        if self.dt_annulus[1] > self.cell_radius:
            raise DomainError("dt_annulus: 外半径不能超过小区半径")
        if not self.pathloss_exponent > 0:
            raise DomainError("pathloss_exponent: 必须为正数")
        if not self.r_th >= 0:
            raise DomainError("r_th: 不能为负数")
        if not self.epsilon > 0:
            raise DomainError("epsilon: 必须为正数")
        if not self.outage_margin_se >= 0:
            raise DomainError("outage_margin_se: 不能为负数")


@dataclass(frozen=True)
class FrameTrace:
    """逐子帧记录，形状 (T_s, M)；未匹配 CU 的 alpha 为 nan"""
    alpha: np.ndarray
    r_cu: np.ndarray
    r_d2d: np.ndarray


@dataclass(frozen=True)
class FrameResult:
    realized_cu_rate: np.ndarray
    realized_d2d_rate: np.ndarray
    cu_rate_stderr: np.ndarray
    matching: Matching
    utilities: Optional[Utilities] = None
    trace: Optional[FrameTrace] = None


@dataclass(frozen=True)
class Metrics:
    """单个方案在 n_scenarios 个场景上的平均指标"""
    scheme: Scheme
    num_d2d: int
    n_scenarios: int = 0
    eau_cu: float = 0.0
    eau_d2d: float = 0.0
    d2d_sum_rate: float = 0.0
    d2d_sum_payoff: float = 0.0
    outage_fraction: float = 0.0
    matched_cus: float = 0.0
    matched_d2d: float = 0.0


@dataclass(frozen=True)
class ScenarioRow:
    """单个场景、单个方案的结果"""
    scenario: int
    scheme: Scheme
    num_cu: int
    num_d2d: int
    eau_cu: float
    eau_d2d: float
    d2d_sum_rate: float
    d2d_sum_payoff: float
    outage_fraction: float
    matched_cus: int
    matched_d2d: int
    mean_matched_cu_rate: float


@dataclass
class ExperimentResult:
    config: SimConfig
    metrics: Dict[Scheme, Metrics]
    rows: List[ScenarioRow]
    frames: Dict[Scheme, List[FrameResult]]
    # 按场景编号排列
    payoffs: List[PayoffMatrix] = field(default_factory=list)


def generate_scenario(config: SimConfig, rng: np.random.Generator) -> Geometry:
    """
    生成场景：CU 均匀分布在小区边缘；DT 在环形区域内按面积均匀分布；
    DR 位于 DT 的随机方向，距离在 d2d_distance 内均匀分布。基站位于原点。
    """
    cu_angle = rng.uniform(0.0, 2.0 * np.pi, size=config.num_cu)
    cu_positions = config.cell_radius * np.column_stack([np.cos(cu_angle), np.sin(cu_angle)])

    r_min, r_max = config.dt_annulus
    dt_radius = np.sqrt(rng.uniform(r_min ** 2, r_max ** 2, size=config.num_d2d))
    dt_angle = rng.uniform(0.0, 2.0 * np.pi, size=config.num_d2d)
    dt_positions = dt_radius[:, None] * np.column_stack([np.cos(dt_angle), np.sin(dt_angle)])

    link = rng.uniform(config.d2d_distance[0], config.d2d_distance[1], size=config.num_d2d)
    link_angle = rng.uniform(0.0, 2.0 * np.pi, size=config.num_d2d)
    dr_positions = dt_positions + link[:, None] * np.column_stack([np.cos(link_angle), np.sin(link_angle)])

    return Geometry(
        bs_position=np.zeros(2),
        cu_positions=cu_positions.reshape(config.num_cu, 2),
        dt_positions=dt_positions.reshape(config.num_d2d, 2),
        dr_positions=dr_positions.reshape(config.num_d2d, 2),
        cell_radius=config.cell_radius,
        pathloss_exponent=config.pathloss_exponent,
    )


def run_frame(geometry: Geometry, matching: Matching,
              policies: Mapping[Tuple[int, int], CooperationPolicy], config: SimConfig,
              rng: np.random.Generator, payoffs: Optional[PayoffMatrix] = None,
              record: bool = False) -> FrameResult:
    """
    仿真一帧（T_s 个子帧）

    匹配的组合每个子帧重新抽取衰落并按策略分配时间：CU 得到 (1 - alpha) r^C，
    D2D 对得到 alpha r^D；不可行策略的组合 alpha 恒为 0。未匹配的 CU 整个子帧直连，
    未匹配的 D2D 对速率为 0。

    衰落按 CU 编号依次抽取，每个 CU 一块 (4, T_s)；同一随机流下相同的组合得到相同的信道，
    因此各方案可以共用一个随机流做对比。

    Raises:
        UsageError: 匹配的组合缺少策略
    """
    num_cu, num_d2d = geometry.num_cu, geometry.num_d2d
    subframes = config.subframes
    cu_rates = np.zeros((subframes, num_cu))
    d2d_rates = np.zeros((subframes, num_d2d))
    alpha_log = np.full((subframes, num_cu), np.nan)
    r_cu_log = np.zeros((subframes, num_cu))
    r_d2d_log = np.zeros((subframes, num_cu))

    for m in range(num_cu):
        # 每个 CU 固定消耗 4 x T_s 个衰落，与是否匹配无关
        eta = np.asarray(sample_fading(rng, size=(4, subframes)), dtype=float)
        n = matching.mu_cu[m]
        if n == UNMATCHED:
            direct = direct_rates_from_fading(geometry, m, config.budget, eta[0])
            cu_rates[:, m] = direct
            r_cu_log[:, m] = direct
            continue
        policy = policies.get((m, n))
        if policy is None:
            raise UsageError(f"匹配组合 ({m}, {n}) 缺少协作策略")
        r_cu, r_d2d = pair_rates_from_fading(geometry, m, n, config.budget, eta)
        if policy.feasible:
            alpha = apply_policy_array(policy, r_cu, r_d2d)
        else:
            alpha = np.zeros(subframes)
        cu_rates[:, m] = (1.0 - alpha) * r_cu
        d2d_rates[:, n] = alpha * r_d2d
        alpha_log[:, m] = alpha
        r_cu_log[:, m] = r_cu
        r_d2d_log[:, m] = r_d2d

    if subframes > 1:
        stderr = cu_rates.std(axis=0, ddof=1) / math.sqrt(subframes)
    else:
        stderr = np.zeros(num_cu)
    return FrameResult(
        realized_cu_rate=cu_rates.mean(axis=0),
        realized_d2d_rate=d2d_rates.mean(axis=0),
        cu_rate_stderr=stderr,
        matching=matching,
        utilities=utilities(matching, payoffs) if payoffs is not None else None,
        trace=FrameTrace(alpha_log, r_cu_log, r_d2d_log) if record else None,
    )


def compute_eau(util: Utilities, matching: Matching,
                payoffs: Optional[PayoffMatrix] = None) -> Tuple[float, float]:
    """
    有效平均效用：匹配用户的效用和 / 匹配用户数，无匹配时为 0

    给出 payoffs 时，v < 0 的组合不计入匹配用户。
    """
    pairs = [(m, n) for m, n in matching.pairs() if payoffs is None or payoffs.acceptable(m, n)]
    matched_cu = [m for m, _ in pairs]
    matched_d2d = [n for _, n in pairs]
    eau_cu = sum(util.theta[m] for m in matched_cu) / len(matched_cu) if matched_cu else 0.0
    eau_d2d = sum(util.delta[n] for n in matched_d2d) / len(matched_d2d) if matched_d2d else 0.0
    return float(eau_cu), float(eau_d2d)


def outage_percentage(frame_results: Sequence[FrameResult], r_th: float,
                      margin_se: float = 0.0) -> float:
    """
    CU 中断比例：实际帧平均速率 < r_th - margin_se * stderr 的 (CU, 场景) 所占比例

    margin_se = 0 时即为按定义的严格比较。
    """
    total = 0
    outages = 0
    for result in frame_results:
        rates = np.asarray(result.realized_cu_rate, dtype=float)
        stderr = np.asarray(result.cu_rate_stderr, dtype=float)
        outages += int(np.count_nonzero(rates < r_th - margin_se * stderr))
        total += len(rates)
    return outages / total if total else 0.0


def select_matching(scheme: Scheme, payoffs: PayoffMatrix, config: SimConfig,
                    rng: np.random.Generator) -> Matching:
    if scheme is Scheme.AUCTION:
        return auction_match(payoffs, config.epsilon, rng)
    if scheme is Scheme.OPTIMAL:
        return optimal_assignment(payoffs)[0]
    if scheme is Scheme.NO_TRANSFER:
        return match_without_transfer(payoffs, rng)
    if scheme is Scheme.RANDOM:
        return random_match(payoffs.num_cu, payoffs.num_d2d, rng)
    raise UsageError(f"未知的配对方案: {scheme}")


def _payoff_total(matching: Matching, payoffs: PayoffMatrix) -> float:
    return float(sum(max(payoffs.values[m, n], 0.0) for m, n in matching.pairs()))


def run_scenario(config: SimConfig, index: int, schemes: Sequence[Scheme]
                 ) -> Tuple[PayoffMatrix, List[Tuple[ScenarioRow, FrameResult]]]:
    """生成第 index 个场景并在同一收益矩阵上评估所有方案，返回收益矩阵和各方案的结果"""
    seed = stream_seed(config.master_seed, index)
    geometry = generate_scenario(config, stream_rng(seed, _GEOMETRY_STREAM))
    payoffs = build_payoff_matrix(geometry, config.budget, config.r_th, config.samples_per_pair,
                                  stream_seed(seed, _PAYOFF_STREAM))
    outputs = []
    totals = {}
    for scheme in schemes:
        matching = select_matching(scheme, payoffs, config, stream_rng(seed, _MATCHING_STREAM, scheme.code))
        frame = run_frame(geometry, matching, payoffs.policy_map(matching.pairs()), config,
                          stream_rng(seed, _FRAME_STREAM), payoffs=payoffs)
        eau_cu, eau_d2d = compute_eau(frame.utilities, matching, payoffs)
        matched_rates = [frame.realized_cu_rate[m] for m, _ in matching.pairs()]
        row = ScenarioRow(
            scenario=index,
            scheme=scheme,
            num_cu=config.num_cu,
            num_d2d=config.num_d2d,
            eau_cu=eau_cu,
            eau_d2d=eau_d2d,
            d2d_sum_rate=float(frame.realized_d2d_rate.sum()),
            d2d_sum_payoff=_payoff_total(matching, payoffs),
            outage_fraction=outage_percentage([frame], config.r_th, config.outage_margin_se),
            matched_cus=matching.matched_count,
            matched_d2d=matching.matched_count,
            mean_matched_cu_rate=float(np.mean(matched_rates)) if matched_rates else 0.0,
        )
        totals[scheme] = row.d2d_sum_payoff
        outputs.append((row, frame))

    if Scheme.OPTIMAL in totals and Scheme.AUCTION in totals \
            and totals[Scheme.AUCTION] > totals[Scheme.OPTIMAL] + 1e-9:
        logger.warning(f"场景 {index}: 拍卖收益 {totals[Scheme.AUCTION]:.6g} 超过最优值 "
                       f"{totals[Scheme.OPTIMAL]:.6g}")
    return payoffs, outputs


def _aggregate(scheme: Scheme, config: SimConfig, rows: Sequence[ScenarioRow],
               frames: Sequence[FrameResult]) -> Metrics:
    if not rows:
        return Metrics(scheme=scheme, num_d2d=config.num_d2d)
    return Metrics(
        scheme=scheme,
        num_d2d=config.num_d2d,
        n_scenarios=len(rows),
        eau_cu=float(np.mean([row.eau_cu for row in rows])),
        eau_d2d=float(np.mean([row.eau_d2d for row in rows])),
        d2d_sum_rate=float(np.mean([row.d2d_sum_rate for row in rows])),
        d2d_sum_payoff=float(np.mean([row.d2d_sum_payoff for row in rows])),
        outage_fraction=outage_percentage(frames, config.r_th, config.outage_margin_se),
        matched_cus=float(np.mean([row.matched_cus for row in rows])),
        matched_d2d=float(np.mean([row.matched_d2d for row in rows])),
    )


def run_experiment(config: SimConfig, schemes: Optional[Sequence[Scheme]] = None,
                   workers: int = 1) -> ExperimentResult:
    """
    Monte Carlo 实验：对每个场景 生成 -> 收益矩阵 -> 配对 -> 帧仿真 -> 指标

    Args:
        config: 仿真参数
        schemes: 要评估的方案，默认全部
        workers: 场景并行线程数；每个场景使用由主种子派生的独立随机流，结果与线程数无关

    Returns:
        ExperimentResult: 每个方案的平均指标以及逐场景结果
    """
    schemes = list(schemes) if schemes is not None else list(Scheme)
    if not schemes:
        raise UsageError("schemes 不能为空")
    indices = range(config.n_scenarios)

    def evaluate(index: int) -> Tuple[PayoffMatrix, List[Tuple[ScenarioRow, FrameResult]]]:
        return run_scenario(config, index, schemes)

    if workers > 1 and config.n_scenarios > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_scenario = list(executor.map(evaluate, indices))
    else:
        per_scenario = [evaluate(index) for index in indices]

    rows: List[ScenarioRow] = []
    frames: Dict[Scheme, List[FrameResult]] = {scheme: [] for scheme in schemes}
    for _, outputs in per_scenario:
        for row, frame in outputs:
            rows.append(row)
            frames[row.scheme].append(frame)

    metrics = {
        scheme: _aggregate(scheme, config, [row for row in rows if row.scheme is scheme], frames[scheme])
        for scheme in schemes
    }
    logger.info(f"N={config.num_d2d}: 完成 {config.n_scenarios} 个场景, 方案 "
                f"{', '.join(scheme.value for scheme in schemes)}")
    return ExperimentResult(config=config, metrics=metrics, rows=rows, frames=frames,
                            payoffs=[payoffs for payoffs, _ in per_scenario])


def with_num_d2d(config: SimConfig, num_d2d: int) -> SimConfig:
    return replace(config, num_d2d=num_d2d)
