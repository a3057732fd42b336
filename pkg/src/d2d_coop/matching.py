"""
长时间尺度：CU 与 D2D 对的配对

- auction_match: 带转移支付的升价拍卖，输出 epsilon-稳定匹配
- is_epsilon_stable: 稳定性证书
- optimal_assignment: 匈牙利算法求最优配对
- match_without_transfer / random_match: 对比方案
"""
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from d2d_coop.errors import AuctionDivergenceError, DomainError
from d2d_coop.logger import logger
from d2d_coop.policy import PayoffMatrix

UNMATCHED = -1
STABILITY_TOL = 1e-9


@dataclass(frozen=True)
class Matching:
    """
    匹配 Phi = (mu, p)

    Attributes:
        mu_cu: 每个 CU 的 D2D 伙伴编号，未匹配为 UNMATCHED
        mu_d2d: 每个 D2D 对的 CU 伙伴编号，未匹配为 UNMATCHED
        prices: 每个 CU 收取的价格，未匹配 CU 价格为 0
    """
    mu_cu: Tuple[int, ...]
    mu_d2d: Tuple[int, ...]
    prices: Tuple[float, ...]

    def __post_init__(self):
        if len(self.prices) != len(self.mu_cu):
            raise DomainError("prices 与 mu_cu 长度不一致")
        for m, n in enumerate(self.mu_cu):
            if n != UNMATCHED and not (0 <= n < len(self.mu_d2d) and self.mu_d2d[n] == m):
                raise DomainError(f"mu_cu[{m}]={n} 与 mu_d2d 不一致")
            if n == UNMATCHED and self.prices[m] != 0:
                raise DomainError(f"未匹配的 CU {m} 价格必须为 0")
            if self.prices[m] < 0:
                raise DomainError(f"CU {m} 价格为负: {self.prices[m]}")
        for n, m in enumerate(self.mu_d2d):
            if m != UNMATCHED and not (0 <= m < len(self.mu_cu) and self.mu_cu[m] == n):
                raise DomainError(f"mu_d2d[{n}]={m} 与 mu_cu 不一致")

    @classmethod
    def empty(cls, num_cu: int, num_d2d: int) -> "Matching":
        return cls((UNMATCHED,) * num_cu, (UNMATCHED,) * num_d2d, (0.0,) * num_cu)

    @classmethod
    def from_pairs(cls, num_cu: int, num_d2d: int, pairs: Sequence[Tuple[int, int]],
                   prices: Optional[Sequence[float]] = None) -> "Matching":
        mu_cu = [UNMATCHED] * num_cu
        mu_d2d = [UNMATCHED] * num_d2d
        for m, n in pairs:
            if mu_cu[m] != UNMATCHED or mu_d2d[n] != UNMATCHED:
                raise DomainError(f"组合 ({m}, {n}) 违反一对一约束")
            mu_cu[m], mu_d2d[n] = n, m
        prices = tuple(float(p) for p in prices) if prices is not None else (0.0,) * num_cu
        return cls(tuple(mu_cu), tuple(mu_d2d), prices)

    @property
    def num_cu(self) -> int:
        return len(self.mu_cu)

    @property
    def num_d2d(self) -> int:
        return len(self.mu_d2d)

    def pairs(self) -> List[Tuple[int, int]]:
        return [(m, n) for m, n in enumerate(self.mu_cu) if n != UNMATCHED]

    @property
    def matched_count(self) -> int:
        return sum(1 for n in self.mu_cu if n != UNMATCHED)

    def assignment_matrix(self) -> np.ndarray:
        """x_mn = 1 当且仅当 mu_cu[m] = n"""
        x = np.zeros((self.num_cu, self.num_d2d), dtype=int)
        for m, n in self.pairs():
            x[m, n] = 1
        return x


@dataclass(frozen=True)
class Utilities:
    theta: Tuple[float, ...]
    delta: Tuple[float, ...]


@dataclass(frozen=True)
class StabilityReport:
    """
    epsilon-稳定性检查结果

    Attributes:
        stable: 是否稳定
        violation: "cu" / "d2d"（个体理性）或 "pair"（阻塞对），稳定时为 None
        witness: 违反条件的 CU / D2D / (m, n)
        slack: 违反量（负数）
    """
    stable: bool
    violation: Optional[str] = None
    witness: Tuple[int, ...] = ()
    slack: float = 0.0

    def __bool__(self) -> bool:
        return self.stable


@dataclass
class AuctionState:
    """拍卖过程的可变状态；beta 为当前轮的价格要求 beta^t"""
    t: int
    beta: np.ndarray
    prev_beta: np.ndarray
    proposals: np.ndarray
    prev_proposals: np.ndarray
    mu_cu: List[int]
    mu_d2d: List[int]
    prices: List[float]
    proposal_count: int = 0

    @classmethod
    def initial(cls, num_cu: int, num_d2d: int) -> "AuctionState":
        return cls(
            t=0,
            beta=np.zeros(num_cu),
            prev_beta=np.zeros(num_cu),
            proposals=np.zeros((num_cu, num_d2d), dtype=bool),
            prev_proposals=np.zeros((num_cu, num_d2d), dtype=bool),
            mu_cu=[UNMATCHED] * num_cu,
            mu_d2d=[UNMATCHED] * num_d2d,
            prices=[0.0] * num_cu,
        )

    def match(self, m: int, n: int, price: float) -> None:
        self.mu_cu[m] = n
        self.mu_d2d[n] = m
        self.prices[m] = float(price)

    def unmatch(self, m: int) -> int:
        n = self.mu_cu[m]
        if n != UNMATCHED:
            self.mu_d2d[n] = UNMATCHED
        self.mu_cu[m] = UNMATCHED
        self.prices[m] = 0.0
        return n

    def current(self) -> Matching:
        return Matching(tuple(self.mu_cu), tuple(self.mu_d2d), tuple(self.prices))


def demand(n: int, beta: np.ndarray, payoffs: PayoffMatrix) -> Optional[int]:
    """
    D2D 对 n 在价格要求 beta 下的需求：argmax_m (v_mn - beta_m)，最大净值为负时返回 None

    多个最大值时取编号最小的 CU。
    """
    if payoffs.num_cu == 0:
        return None
    column = payoffs.values[:, n]
    net = np.where(column >= 0, column - beta, -np.inf)
    m = int(np.argmax(net))
    return m if net[m] >= 0 else None


def max_auction_rounds(payoffs: PayoffMatrix, epsilon: float) -> int:
    num_cu, num_d2d = payoffs.shape
    max_v = max(float(payoffs.values.max()), 0.0) if payoffs.values.size else 0.0
    return max(10 * (num_cu * math.ceil(max_v / epsilon) + num_cu + num_d2d), 1)


def auction_match(payoffs: PayoffMatrix, epsilon: float, rng: np.random.Generator,
                  on_round: Optional[Callable[[AuctionState], None]] = None,
                  max_rounds: Optional[int] = None) -> Matching:
    """
    升价拍卖，输出 epsilon-稳定匹配

    每轮：未匹配的 D2D 对按需求函数提出申请；随后 CU 依次处理
      情形 1：CU 未匹配、本轮无申请、上一轮有申请 -> 随机选择上一轮的申请者，价格 beta^{t-1}，
              并撤销该申请者本轮发往其他 CU 的申请
      情形 2：恰有一个申请且 CU 未匹配或现价 < beta^t -> 以 beta^t 匹配
      情形 3：有申请但不满足情形 2 -> 解除匹配；若原伙伴付的是 beta^t 则保留其申请；beta 加 epsilon
      情形 4：保持不变
    某一轮没有任何申请时结束。

    Args:
        payoffs: 收益矩阵
        epsilon: 价格步长，必须为正
        rng: 情形 1 随机选择使用的随机数发生器
        on_round: 每轮结束后的回调，参数为拍卖状态
        max_rounds: 轮数上限，默认见 max_auction_rounds

    Raises:
        AuctionDivergenceError: 超过轮数上限
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon 必须为正数, 当前为 {epsilon}")
    num_cu, num_d2d = payoffs.shape
    cap = max_rounds if max_rounds is not None else max_auction_rounds(payoffs, epsilon)
    state = AuctionState.initial(num_cu, num_d2d)

    while True:
        state.t += 1
        if state.t > cap:
            raise AuctionDivergenceError(state, cap)

        g = np.zeros((num_cu, num_d2d), dtype=bool)
        for n in range(num_d2d):
            if state.mu_d2d[n] != UNMATCHED:
                continue
            m = demand(n, state.beta, payoffs)
            if m is not None:
                g[m, n] = True
        state.proposal_count = int(np.count_nonzero(g))
        next_beta = state.beta.copy()

        # 情形 1
        for m in range(num_cu):
            if g[m].any() or not state.prev_proposals[m].any() or state.mu_cu[m] != UNMATCHED:
                continue
            candidates = np.flatnonzero(state.prev_proposals[m])
            n_star = int(rng.choice(candidates))
            state.match(m, n_star, state.prev_beta[m])
            m_star = demand(n_star, state.beta, payoffs)
            if m_star is not None:
                g[m_star, n_star] = False

        # 情形 2 - 4
        for m in range(num_cu):
            count = int(np.count_nonzero(g[m]))
            partner = state.mu_cu[m]
            if count == 1 and (partner == UNMATCHED or state.prices[m] < state.beta[m]):
                n_star = int(np.flatnonzero(g[m])[0])
                state.unmatch(m)
                state.match(m, n_star, state.beta[m])
            elif count >= 1:
                paid_full = partner != UNMATCHED and state.prices[m] == state.beta[m]
                state.unmatch(m)
                if paid_full:
                    g[m, partner] = True
                next_beta[m] = state.beta[m] + epsilon

        state.proposals = g
        state.prev_proposals = g
        state.prev_beta = state.beta
        state.beta = next_beta
        if on_round is not None:
            on_round(state)
        if state.proposal_count == 0:
            break

    result = state.current()
    logger.debug(f"拍卖在第 {state.t} 轮结束, 匹配数 {result.matched_count}")
    return result


def utilities(matching: Matching, payoffs: PayoffMatrix) -> Utilities:
    """
    theta_m = p_m；delta_n = v_{mu(n) n} - p_{mu(n)}；未匹配者为 0

    不可接受的组合（v < 0，只会出现在随机配对中）不构成协作，双方效用均为 0。
    """
    theta = tuple(float(p) if n != UNMATCHED and payoffs.acceptable(m, n) else 0.0
                  for m, (p, n) in enumerate(zip(matching.prices, matching.mu_cu)))
    delta = tuple(float(payoffs.values[m, n] - matching.prices[m])
                  if m != UNMATCHED and payoffs.acceptable(m, n) else 0.0
                  for n, m in enumerate(matching.mu_d2d))
    return Utilities(theta=theta, delta=delta)


def is_epsilon_stable(matching: Matching, payoffs: PayoffMatrix, epsilon: float,
                      tol: float = STABILITY_TOL) -> StabilityReport:
    """
    检查 epsilon-稳定性：
      (1) 个体理性 theta_m >= 0, delta_n >= 0
      (2) 对所有 v_mn >= 0 的组合，theta_m + delta_n >= v_mn - epsilon
    """
    for m, n in matching.pairs():
        if not payoffs.acceptable(m, n):
            return StabilityReport(False, "d2d", (n,), float(payoffs.values[m, n] - matching.prices[m]))
    util = utilities(matching, payoffs)
    for m, theta in enumerate(util.theta):
        if theta < -tol:
            return StabilityReport(False, "cu", (m,), theta)
    for n, delta in enumerate(util.delta):
        if delta < -tol:
            return StabilityReport(False, "d2d", (n,), delta)
    theta = np.asarray(util.theta, dtype=float)
    delta = np.asarray(util.delta, dtype=float)
    slack = theta[:, None] + delta[None, :] - (payoffs.values - epsilon)
    slack = np.where(payoffs.values >= 0, slack, np.inf)
    if slack.size and slack.min() < -tol:
        m, n = np.unravel_index(int(np.argmin(slack)), slack.shape)
        return StabilityReport(False, "pair", (int(m), int(n)), float(slack[m, n]))
    return StabilityReport(True)


def matching_value(matching: Matching, payoffs: PayoffMatrix) -> float:
    """匹配组合的收益和 sum x_mn v_mn"""
    return float(sum(payoffs.values[m, n] for m, n in matching.pairs()))


def optimal_assignment(payoffs: PayoffMatrix) -> Tuple[Matching, float]:
    """
    匈牙利算法求解 max sum x_mn v_mn（一对一），不可接受的组合不匹配

    Returns:
        (Matching, 总收益)，价格全为 0
    """
    num_cu, num_d2d = payoffs.shape
    size = max(num_cu, num_d2d)
    if size == 0 or num_cu == 0 or num_d2d == 0:
        return Matching.empty(num_cu, num_d2d), 0.0
    # 补零成方阵；不可接受的组合权重为 0，等价于不匹配
    weights = np.zeros((size, size))
    weights[:num_cu, :num_d2d] = np.where(payoffs.values >= 0, payoffs.values, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    pairs = [(int(m), int(n)) for m, n in zip(rows, cols)
             if m < num_cu and n < num_d2d and payoffs.values[m, n] >= 0]
    matching = Matching.from_pairs(num_cu, num_d2d, pairs)
    return matching, matching_value(matching, payoffs)


def match_without_transfer(payoffs: PayoffMatrix, rng: np.random.Generator) -> Matching:
    """
    零价格下 D2D 发起的延迟接受算法

    D2D 对按 v_mn 降序依次向可接受的 CU 申请；CU 对可接受的 D2D 对无差别，
    保留第一个申请者并拒绝之后的申请。D2D 的申请顺序随机。
    """
    num_cu, num_d2d = payoffs.shape
    preferences = []
    for n in range(num_d2d):
        column = payoffs.values[:, n]
        order = np.argsort(-column, kind="stable")
        preferences.append([int(m) for m in order if column[m] >= 0])

    mu_cu = [UNMATCHED] * num_cu
    mu_d2d = [UNMATCHED] * num_d2d
    next_choice = [0] * num_d2d
    queue = [int(n) for n in rng.permutation(num_d2d)]
    while queue:
        n = queue.pop(0)
        if next_choice[n] >= len(preferences[n]):
            continue
        m = preferences[n][next_choice[n]]
        next_choice[n] += 1
        if mu_cu[m] == UNMATCHED:
            mu_cu[m], mu_d2d[n] = n, m
        else:
            queue.append(n)
    return Matching(tuple(mu_cu), tuple(mu_d2d), (0.0,) * num_cu)


def random_match(num_cu: int, num_d2d: int, rng: np.random.Generator) -> Matching:
    """均匀随机的最大基数配对，不考虑可接受性"""
    if num_cu <= num_d2d:
        partners = rng.permutation(num_d2d)[:num_cu]
        pairs = [(m, int(n)) for m, n in enumerate(partners)]
    else:
        partners = rng.permutation(num_cu)[:num_d2d]
        pairs = [(int(m), n) for n, m in enumerate(partners)]
    return Matching.from_pairs(num_cu, num_d2d, pairs)
