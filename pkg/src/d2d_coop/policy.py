"""
短时间尺度：单个 CU-D2D 组合的最优协作策略

问题：max E{pi(r) r^D}  s.t.  E{(1 - pi(r)) r^C} >= r_th,  pi(r) in [0, 1]
最优策略为阈值策略：
    pi*(r) = 0            若 lambda* r^C > r^D
             alpha_b      若 lambda* r^C = r^D
             1            若 lambda* r^C < r^D
lambda* = min{lambda : E{r^C 1(lambda r^C >= r^D)} >= r_th}。
alpha_b 取使约束取等的值；按约束等式推导得到的是 CU 份额 (1 - alpha_b)，
因此 alpha_b = 1 - (r_th - E{r^C 1(>)}) / E{r^C 1(=)}，截断到 [0, 1]。
"""
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from d2d_coop.channel import Geometry, LinkBudget, RatePair, SeedLike, sample_rate_pairs, stream_rng
from d2d_coop.errors import DomainError, InfeasibleError, UsageError
from d2d_coop.logger import logger

UNACCEPTABLE = -1.0
# lambda* r^C 与 r^D 判等的相对容差
TAU_EQ = 1e-12
_MASS_TOL = 1e-12
BISECTION_TOL = 1e-12

# 分类编码
_CELLULAR, _BOUNDARY, _D2D = 0, 1, 2


class DistributionKind(enum.Enum):
    DISCRETE = "discrete"
    EMPIRICAL = "empirical"


@dataclass(frozen=True, eq=False)
class RateDistribution:
    """
    状态 r_mn 的分布：离散支撑集（带概率）或经验样本（等权）

    Attributes:
        r_cu: r^C 取值
        r_d2d: r^D 取值
        weights: 概率，和为 1
        kind: 分布类型
    """
    r_cu: np.ndarray
    r_d2d: np.ndarray
    weights: np.ndarray
    kind: DistributionKind

    def __post_init__(self):
        if len(self.r_cu) == 0:
            raise DomainError("分布为空")
        if not (len(self.r_cu) == len(self.r_d2d) == len(self.weights)):
            raise DomainError("r_cu / r_d2d / weights 长度不一致")
        if np.any(self.r_cu < 0) or np.any(self.r_d2d < 0):
            raise DomainError("速率必须非负")
        if not (np.all(np.isfinite(self.r_cu)) and np.all(np.isfinite(self.r_d2d))):
            raise DomainError("速率必须有限")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise DomainError(f"概率必须非负且和为 1, 当前和为 {float(self.weights.sum())}")

    @classmethod
    def discrete(cls, support: Sequence[Tuple[RatePair, float]]) -> "RateDistribution":
        if len(support) == 0:
            raise DomainError("分布为空")
        return cls(
            r_cu=np.array([state.r_cu for state, _ in support], dtype=float),
            r_d2d=np.array([state.r_d2d for state, _ in support], dtype=float),
            weights=np.array([prob for _, prob in support], dtype=float),
            kind=DistributionKind.DISCRETE,
        )

    @classmethod
    def empirical(cls, samples: Sequence[RatePair]) -> "RateDistribution":
        if len(samples) == 0:
            raise DomainError("样本列表为空")
        return cls.from_arrays(
            np.array([s.r_cu for s in samples], dtype=float),
            np.array([s.r_d2d for s in samples], dtype=float),
        )

    @classmethod
    def from_arrays(cls, r_cu: np.ndarray, r_d2d: np.ndarray) -> "RateDistribution":
        r_cu = np.asarray(r_cu, dtype=float)
        r_d2d = np.asarray(r_d2d, dtype=float)
        if len(r_cu) == 0:
            raise DomainError("样本列表为空")
        weights = np.full(len(r_cu), 1.0 / len(r_cu))
        return cls(r_cu=r_cu, r_d2d=r_d2d, weights=weights, kind=DistributionKind.EMPIRICAL)

    def __len__(self) -> int:
        return len(self.r_cu)

    def states(self) -> Sequence[Tuple[RatePair, float]]:
        return [(RatePair(float(c), float(d)), float(w))
                for c, d, w in zip(self.r_cu, self.r_d2d, self.weights)]

    def mean_cu(self) -> float:
        return float(np.dot(self.weights, self.r_cu))

    def mean_d2d(self) -> float:
        return float(np.dot(self.weights, self.r_d2d))

    def constraint_mass(self, lam: float) -> float:
        """E{r^C 1(lambda r^C >= r^D)}，关于 lambda 单调不减"""
        codes = _classify(lam, self.r_cu, self.r_d2d)
        return float(np.dot(self.weights, self.r_cu * (codes != _D2D)))


@dataclass(frozen=True)
class CooperationPolicy:
    lambda_star: float
    alpha_boundary: float
    feasible: bool = True

    def __post_init__(self):
        if self.feasible:
            if not self.lambda_star >= 0:
                raise DomainError(f"lambda_star 必须非负: {self.lambda_star}")
            if not 0.0 <= self.alpha_boundary <= 1.0:
                raise DomainError(f"alpha_boundary 必须在 [0, 1] 内: {self.alpha_boundary}")

    @classmethod
    def infeasible(cls) -> "CooperationPolicy":
        return cls(lambda_star=float("nan"), alpha_boundary=0.0, feasible=False)


def _classify(lam: float, r_cu: np.ndarray, r_d2d: np.ndarray) -> np.ndarray:
    """
    把每个状态分为 CU 传输 / 边界 / D2D 传输三类

    r^C = 0 的状态比值视为 +inf，总是分给 D2D。
    """
    r_cu = np.asarray(r_cu, dtype=float)
    r_d2d = np.asarray(r_d2d, dtype=float)
    lhs = lam * r_cu
    close = np.abs(lhs - r_d2d) <= TAU_EQ * np.maximum(np.abs(lhs), np.abs(r_d2d))
    positive = r_cu > 0
    codes = np.full(np.shape(r_cu), _D2D, dtype=np.int8)
    codes[positive & close] = _BOUNDARY
    codes[positive & ~close & (lhs > r_d2d)] = _CELLULAR
    return codes


def check_feasibility(dist: RateDistribution, r_th: float) -> bool:
    """pi = 0 使约束左侧最大，因此可行当且仅当 E{r^C} >= r_th"""
    if len(dist) == 0:
        raise DomainError("分布为空")
    return dist.mean_cu() >= r_th - _MASS_TOL * max(1.0, abs(r_th))


def bisect_threshold(mass_fn: Callable[[float], float], r_th: float, upper: float,
                     tol: float = BISECTION_TOL) -> float:
    """
    二分搜索 min{lambda : mass_fn(lambda) >= r_th}，mass_fn 需单调不减且 mass_fn(upper) >= r_th

    用于连续分布的适配器；离散/经验分布走精确扫描。
    """
    if mass_fn(0.0) >= r_th:
        return 0.0
    lo, hi = 0.0, float(upper)
    if mass_fn(hi) < r_th:
        raise DomainError(f"上界 {upper} 处约束仍不满足")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mass_fn(mid) >= r_th:
            hi = mid
        else:
            lo = mid
    return hi


def _scan_threshold(dist: RateDistribution, r_th: float) -> float:
    # 阶跃函数只在 r^D/r^C 处跳变：按比值排序后对 w r^C 做前缀和
    positive = dist.r_cu > 0
    ratios = dist.r_d2d[positive] / dist.r_cu[positive]
    mass = (dist.weights * dist.r_cu)[positive]
    order = np.argsort(ratios, kind="stable")
    cumulative = np.cumsum(mass[order])
    target = r_th - _MASS_TOL * max(1.0, abs(r_th))
    idx = int(np.searchsorted(cumulative, target, side="left"))
    idx = min(idx, len(cumulative) - 1)
    return float(ratios[order][idx])


def _snap_to_ratio(dist: RateDistribution, lam: float, target: float) -> float:
    """
    把二分结果对齐到候选比值 r^D/r^C

    二分的 hi 停在 lambda* 上方若干 ulp 处，直接用来分类会把边界状态判成 CU 传输。
    区间 [hi - tol, hi] 内满足约束的最小候选比值即为 lambda*。
    """
    if lam <= 0:
        return 0.0
    positive = dist.r_cu > 0
    ratios = np.unique(dist.r_d2d[positive] / dist.r_cu[positive])
    low = lam - BISECTION_TOL * max(1.0, lam)
    high = lam * (1.0 + 2.0 * TAU_EQ)
    for ratio in ratios[(ratios >= low) & (ratios <= high)]:
        if dist.constraint_mass(float(ratio)) >= target:
            return float(ratio)
    return lam


def _boundary_alpha(dist: RateDistribution, lam: float, r_th: float) -> float:
    codes = _classify(lam, dist.r_cu, dist.r_d2d)
    weighted = dist.weights * dist.r_cu
    e_gt = float(weighted[codes == _CELLULAR].sum())
    e_eq = float(weighted[codes == _BOUNDARY].sum())
    if e_eq <= 0:
        return 0.0
    cu_share = float(np.clip((r_th - e_gt) / e_eq, 0.0, 1.0))
    return 1.0 - cu_share


def solve_threshold(dist: RateDistribution, r_th: float, method: str = "scan") -> CooperationPolicy:
    """
    求解最优阈值策略

    Args:
        dist: 状态分布
        r_th: CU 最低速率要求
        method: "scan" 精确扫描候选比值；"bisection" 二分搜索

    Returns:
        CooperationPolicy: 不可行时 feasible=False
    """
    if not check_feasibility(dist, r_th):
        return CooperationPolicy.infeasible()
    if r_th <= 0:
        lam = 0.0
    elif method == "scan":
        lam = _scan_threshold(dist, r_th)
    elif method == "bisection":
        positive = dist.r_cu > 0
        upper = float(np.max(dist.r_d2d[positive] / dist.r_cu[positive]))
        target = r_th - _MASS_TOL * max(1.0, abs(r_th))
        lam = bisect_threshold(dist.constraint_mass, target, max(upper, BISECTION_TOL))
        lam = _snap_to_ratio(dist, lam, target)
    else:
        raise UsageError(f"未知的求解方法: {method}")
    return CooperationPolicy(lambda_star=lam, alpha_boundary=_boundary_alpha(dist, lam, r_th))


def apply_policy_array(policy: CooperationPolicy, r_cu: np.ndarray, r_d2d: np.ndarray) -> np.ndarray:
    """向量化的 apply_policy，返回每个状态的 D2D 时间分配因子 alpha"""
    if not policy.feasible:
        raise UsageError("不可行的策略不能使用")
    codes = _classify(policy.lambda_star, r_cu, r_d2d)
    alpha = np.ones(np.shape(codes), dtype=float)
    alpha[codes == _CELLULAR] = 0.0
    alpha[codes == _BOUNDARY] = policy.alpha_boundary
    return alpha


def apply_policy(policy: CooperationPolicy, state: RatePair) -> float:
    return float(apply_policy_array(policy, np.array([state.r_cu]), np.array([state.r_d2d]))[0])


def expected_payoff(policy: CooperationPolicy, dist: RateDistribution) -> float:
    """v_mn = E{pi*(r) r^D}；不可行时为 -1"""
    if not policy.feasible:
        return UNACCEPTABLE
    alpha = apply_policy_array(policy, dist.r_cu, dist.r_d2d)
    return float(np.dot(dist.weights, alpha * dist.r_d2d))


def expected_cu_rate(policy: CooperationPolicy, dist: RateDistribution) -> float:
    """E{(1 - pi*(r)) r^C}，即 CU 的长期速率"""
    if not policy.feasible:
        raise UsageError("不可行的策略不能使用")
    alpha = apply_policy_array(policy, dist.r_cu, dist.r_d2d)
    return float(np.dot(dist.weights, (1.0 - alpha) * dist.r_cu))


def lagrangian_dual(dist: RateDistribution, r_th: float, lam: float) -> float:
    """对偶函数 g(lambda) = E{1(lambda r^C < r^D)(r^D - lambda r^C)} + lambda E{r^C} - lambda r_th"""
    gap = dist.r_d2d - lam * dist.r_cu
    return float(np.dot(dist.weights, np.where(gap > 0, gap, 0.0)) + lam * dist.mean_cu() - lam * r_th)


def lp_oracle(dist: RateDistribution, r_th: float) -> float:
    """
    线性规划的精确贪心解（分数背包形式）

    按 r^D/r^C 降序依次把状态分给 D2D，直到 CU 速率余量 E{r^C} - r_th 用完，
    枢轴状态取分数。

    Raises:
        UsageError: 非离散分布
        InfeasibleError: E{r^C} < r_th
    """
    if dist.kind is not DistributionKind.DISCRETE:
        raise UsageError("lp_oracle 只接受离散分布")
    if not check_feasibility(dist, r_th):
        raise InfeasibleError(dist.mean_cu(), r_th)

    budget = max(dist.mean_cu() - r_th, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(dist.r_cu > 0, dist.r_d2d / dist.r_cu, np.inf)
    order = np.argsort(-ratios, kind="stable")
    value = 0.0
    for k in order:
        cost = dist.weights[k] * dist.r_cu[k]
        gain = dist.weights[k] * dist.r_d2d[k]
        if cost <= budget:
            value += gain
            budget -= cost
        else:
            value += gain * budget / cost
            budget = 0.0
    return float(value)


@dataclass(frozen=True, eq=False)
class PayoffMatrix:
    """
    长期收益矩阵 V (M x N)，不可接受的组合为 -1

    Attributes:
        values: v_mn
        policies: 可选，生成 v_mn 时拟合的策略，policies[m][n]
    """
    values: np.ndarray
    policies: Optional[Tuple[Tuple[CooperationPolicy, ...], ...]] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DomainError(f"收益矩阵必须是二维的, 当前形状 {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("收益矩阵存在非有限值")
        if np.any((values < 0) & (values != UNACCEPTABLE)):
            raise DomainError("收益矩阵的负值只能是 -1")
        object.__setattr__(self, "values", values)
        if self.policies is not None:
            if len(self.policies) != values.shape[0] or any(len(row) != values.shape[1] for row in self.policies):
                raise DomainError("策略表与收益矩阵形状不一致")

    @classmethod
    def from_values(cls, values, policies=None) -> "PayoffMatrix":
        values = np.asarray(values, dtype=float)
        if values.size == 0 and values.ndim < 2:
            values = values.reshape(0, 0)
        return cls(values=values, policies=policies)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def num_cu(self) -> int:
        return self.values.shape[0]

    @property
    def num_d2d(self) -> int:
        return self.values.shape[1]

    def acceptable(self, m: int, n: int) -> bool:
        return bool(self.values[m, n] >= 0)

    def policy(self, m: int, n: int) -> CooperationPolicy:
        if self.policies is None:
            raise UsageError("收益矩阵没有附带策略")
        return self.policies[m][n]

    def policy_map(self, pairs: Sequence[Tuple[int, int]]) -> Dict[Tuple[int, int], CooperationPolicy]:
        return {(m, n): self.policy(m, n) for m, n in pairs}


def estimate_pair(geometry: Geometry, m: int, n: int, budget: LinkBudget, r_th: float,
                  samples: int, rng: np.random.Generator) -> Tuple[CooperationPolicy, float]:
    """用 samples 个训练样本拟合 (m, n) 的策略并计算 v_mn"""
    r_cu, r_d2d = sample_rate_pairs(geometry, m, n, budget, rng, samples)
    dist = RateDistribution.from_arrays(r_cu, r_d2d)
    policy = solve_threshold(dist, r_th)
    return policy, expected_payoff(policy, dist)


def build_payoff_matrix(geometry: Geometry, budget: LinkBudget, r_th: float,
                        samples_per_pair: int, seed: SeedLike,
                        max_workers: int = 1) -> PayoffMatrix:
    """
    计算全部 M x N 组合的长期收益

    Args:
        geometry: 场景几何
        budget: 功率与噪声
        r_th: CU 最低速率要求
        samples_per_pair: 每个组合的训练样本数
        seed: 主种子；组合 (m, n) 使用派生流 (m, n)，结果与线程数无关
        max_workers: 线程数

    Returns:
        PayoffMatrix: 附带每个组合拟合的策略
    """
    if samples_per_pair < 1:
        raise DomainError(f"samples_per_pair 必须 >= 1, 当前为 {samples_per_pair}")
    num_cu, num_d2d = geometry.num_cu, geometry.num_d2d
    pairs = [(m, n) for m in range(num_cu) for n in range(num_d2d)]

    def evaluate(pair: Tuple[int, int]) -> Tuple[CooperationPolicy, float]:
        m, n = pair
        return estimate_pair(geometry, m, n, budget, r_th, samples_per_pair, stream_rng(seed, m, n))

    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            results = list(executor.map(evaluate, pairs))
    else:
        results = [evaluate(pair) for pair in pairs]

    values = np.full((num_cu, num_d2d), UNACCEPTABLE)
    policies = [[CooperationPolicy.infeasible()] * num_d2d for _ in range(num_cu)]
    for (m, n), (policy, payoff) in zip(pairs, results):
        values[m, n] = payoff
        policies[m][n] = policy
    acceptable = int(np.count_nonzero(values >= 0))
    logger.debug(f"收益矩阵 {num_cu}x{num_d2d}: 可接受组合 {acceptable}/{len(pairs)}")
    return PayoffMatrix(values=values, policies=tuple(tuple(row) for row in policies))
