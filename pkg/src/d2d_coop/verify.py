"""
验收检查：策略与 LP 的一致性、拍卖稳定性、近似最优界、仿真趋势、可复现性

每项检查输出 CriterionResult（是否通过 + 实测值），失败不抛异常。
"""
import math
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from d2d_coop.channel import RatePair, stream_rng
from d2d_coop.config import ExperimentSpec
from d2d_coop.logger import logger
from d2d_coop.matching import (Matching, auction_match, is_epsilon_stable, matching_value,
                               optimal_assignment)
from d2d_coop.policy import (PayoffMatrix, RateDistribution, UNACCEPTABLE, expected_cu_rate,
                             expected_payoff, lp_oracle, solve_threshold)
from d2d_coop.results import AGGREGATE_FILE, SCENARIO_FILE, write_results
from d2d_coop.sim import ExperimentResult, Scheme, SimConfig, run_experiment, with_num_d2d
from d2d_coop.utils.file import FileUtils

ORACLE_TOL = 1e-9
# 各检查使用的随机流编号
_POLICY_STREAM = 101
_MATCHING_STREAM = 102
_FAULT_STREAM = 103


@dataclass
class CriterionResult:
    name: str
    passed: bool
    measured: Dict[str, Any] = field(default_factory=dict)
    detail: str = ""
    seconds: float = 0.0


@dataclass
class VerificationReport:
    seed: int
    criteria: List[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.criteria)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "passed": self.passed,
            "criteria": [asdict(item) for item in self.criteria],
        }


def random_discrete_distribution(rng: np.random.Generator, max_states: int = 10,
                                 max_rate: float = 5.0) -> RateDistribution:
    states = int(rng.integers(1, max_states + 1))
    probs = rng.dirichlet(np.ones(states))
    rates = rng.uniform(0.0, max_rate, size=(states, 2))
    return RateDistribution.discrete([(RatePair(float(c), float(d)), float(p))
                                      for (c, d), p in zip(rates, probs)])


def random_payoff_matrix(rng: np.random.Generator, max_size: int = 10, max_value: float = 10.0,
                         unacceptable_share: float = 0.2) -> PayoffMatrix:
    num_cu = int(rng.integers(1, max_size + 1))
    num_d2d = int(rng.integers(1, max_size + 1))
    values = rng.uniform(0.0, max_value, size=(num_cu, num_d2d))
    values[rng.random((num_cu, num_d2d)) < unacceptable_share] = UNACCEPTABLE
    return PayoffMatrix(values=values)


def _timed(check: Callable[[], Any]) -> List[CriterionResult]:
    start = time.perf_counter()
    outcome = check()
    elapsed = round(time.perf_counter() - start, 3)
    results = [outcome] if isinstance(outcome, CriterionResult) else list(outcome)
    for result in results:
        result.seconds = elapsed
        status = "PASS" if result.passed else "FAIL"
        logger.info(f"[{status}] {result.name} ({elapsed}s) {result.measured}")
    return results


def check_policy_oracle(seed: int, instances: int = 100) -> Tuple[CriterionResult, CriterionResult]:
    rng = stream_rng(seed, _POLICY_STREAM)
    payoff_gap = 0.0
    equality_gap = 0.0
    feasible = 0
    for _ in range(instances):
        dist = random_discrete_distribution(rng)
        r_th = float(rng.uniform(0.0, dist.mean_cu()))
        policy = solve_threshold(dist, r_th)
        payoff_gap = max(payoff_gap, abs(expected_payoff(policy, dist) - lp_oracle(dist, r_th)))
        if policy.feasible:
            feasible += 1
            equality_gap = max(equality_gap, abs(expected_cu_rate(policy, dist) - r_th))
    oracle = CriterionResult(
        name="policy_lp_oracle_equivalence",
        passed=payoff_gap <= ORACLE_TOL,
        measured={"instances": instances, "max_abs_gap": payoff_gap},
    )
    equality = CriterionResult(
        name="constraint_equality",
        passed=equality_gap <= ORACLE_TOL and feasible == instances,
        measured={"feasible_instances": feasible, "max_abs_gap": equality_gap},
    )
    return oracle, equality


def check_auction(seed: int, instances: int = 100) -> Tuple[CriterionResult, CriterionResult]:
    rng = stream_rng(seed, _MATCHING_STREAM)
    stable = 0
    bounded = 0
    worst_gap = 0.0
    witnesses = []
    for index in range(instances):
        payoffs = random_payoff_matrix(rng)
        epsilon = (0.1, 1.0)[index % 2]
        matching = auction_match(payoffs, epsilon, rng)
        report = is_epsilon_stable(matching, payoffs, epsilon)
        if report.stable:
            stable += 1
        else:
            witnesses.append({"instance": index, "violation": report.violation, "witness": list(report.witness)})
        _, optimum = optimal_assignment(payoffs)
        total = matching_value(matching, payoffs)
        allowance = min(payoffs.shape) * epsilon
        if total >= optimum - allowance - 1e-9:
            bounded += 1
        worst_gap = max(worst_gap, (optimum - total) / allowance)
    stability = CriterionResult(
        name="epsilon_stability",
        passed=stable == instances,
        measured={"instances": instances, "stable": stable, "failures": witnesses[:5]},
    )
    optimality = CriterionResult(
        name="near_optimality_bound",
        passed=bounded == instances,
        measured={"instances": instances, "within_bound": bounded,
                  "worst_gap_over_allowance": worst_gap},
    )
    return stability, optimality


def check_certifier_fault(seed: int) -> CriterionResult:
    rng = stream_rng(seed, _FAULT_STREAM)
    payoffs = PayoffMatrix(values=rng.uniform(1.0, 10.0, size=(4, 4)))
    matching = auction_match(payoffs, 1.0, rng)
    m, n = matching.pairs()[0]
    prices = list(matching.prices)
    # 价格超过收益使 D2D 效用为负
    prices[m] = float(payoffs.values[m, n]) + 1.0
    faulty = Matching(matching.mu_cu, matching.mu_d2d, tuple(prices))
    report = is_epsilon_stable(faulty, payoffs, 1.0)
    return CriterionResult(
        name="certifier_fault_injection",
        passed=(not report.stable) and report.violation == "d2d" and report.witness == (n,),
        measured={"perturbed_pair": [m, n], "violation": report.violation,
                  "witness": list(report.witness)},
    )


def _standard_error(values: Sequence[float]) -> float:
    if len(values) < 2:
        return float("inf")
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def _scheme_rows(result: ExperimentResult, scheme: Scheme, attribute: str) -> List[float]:
    return [getattr(row, attribute) for row in result.rows if row.scheme is scheme]


def _has_matches(result: ExperimentResult, scheme: Scheme) -> bool:
    return any(row.matched_cus > 0 for row in result.rows if row.scheme is scheme)


def check_eau_trend(results: Dict[int, ExperimentResult], low: int = 10, high: int = 30) -> CriterionResult:
    measured: Dict[str, Any] = {}
    if not (_has_matches(results[low], Scheme.AUCTION) and _has_matches(results[high], Scheme.AUCTION)):
        return CriterionResult(name="eau_trend", passed=False, detail="拍卖方案没有任何匹配")
    passed = True
    for attribute, direction in (("eau_cu", 1), ("eau_d2d", -1)):
        a = _scheme_rows(results[low], Scheme.AUCTION, attribute)
        b = _scheme_rows(results[high], Scheme.AUCTION, attribute)
        diff = (float(np.mean(b)) - float(np.mean(a))) * direction
        se = math.hypot(_standard_error(a), _standard_error(b))
        measured[attribute] = {f"N={low}": float(np.mean(a)), f"N={high}": float(np.mean(b)),
                               "separation_se": diff / se if se > 0 else 0.0}
        # 标准误为 0 时要求严格的正向差值
        passed = passed and diff > 0.0 and diff > 2.0 * se
    return CriterionResult(name="eau_trend", passed=passed, measured=measured)


def check_sum_rate_ordering(results: Dict[int, ExperimentResult]) -> CriterionResult:
    order = (Scheme.OPTIMAL, Scheme.AUCTION, Scheme.NO_TRANSFER, Scheme.RANDOM)
    measured: Dict[str, Any] = {}
    passed = bool(results)
    for num_d2d, result in sorted(results.items()):
        rates = {scheme.value: result.metrics[scheme].d2d_sum_rate for scheme in order}
        values = [rates[scheme.value] for scheme in order]
        # 拍卖可以恰好达到最优，其余相邻方案要求严格有序
        ordered = values[0] >= values[1] and all(x > y for x, y in zip(values[1:], values[2:]))
        matched = _has_matches(result, Scheme.AUCTION) and values[0] > 0
        gap = 1.0 - rates["auction"] / rates["optimal"] if rates["optimal"] > 0 else 1.0
        measured[f"N={num_d2d}"] = {**rates, "auction_vs_optimal_gap": gap}
        passed = passed and matched and ordered and gap <= 0.05
    return CriterionResult(name="sum_rate_ordering", passed=passed, measured=measured)


def check_outage(results: Dict[int, ExperimentResult], num_d2d: int = 20) -> CriterionResult:
    result = results[num_d2d]
    auction = result.metrics[Scheme.AUCTION].outage_fraction
    random_scheme = result.metrics[Scheme.RANDOM].outage_fraction
    return CriterionResult(
        name="outage",
        passed=auction < 0.05 and random_scheme > 0.40,
        measured={"N": num_d2d, "auction": auction, "random": random_scheme,
                  "all": {scheme.value: item.outage_fraction for scheme, item in result.metrics.items()}},
    )


def check_determinism(base: SimConfig) -> CriterionResult:
    config = replace(base, n_scenarios=min(base.n_scenarios, 4) or 1,
                     samples_per_pair=min(base.samples_per_pair, 2000),
                     subframes=min(base.subframes, 200), num_d2d=min(base.num_d2d, 10))
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for workers in (1, 1, 3):
            out = Path(tmp) / f"run{len(digests)}"
            result = run_experiment(config, workers=workers)
            write_results(out, [result], "")
            digests.append((FileUtils.get_file_md5(str(out / AGGREGATE_FILE)),
                            FileUtils.get_file_md5(str(out / SCENARIO_FILE))))
    return CriterionResult(
        name="determinism",
        passed=len(set(digests)) == 1,
        measured={"aggregate_md5": [d[0] for d in digests], "workers": [1, 1, 3]},
    )


def check_realized_rate(base: SimConfig, subframes: int = 10000, scenarios: int = 5) -> CriterionResult:
    config = replace(base, subframes=subframes, n_scenarios=scenarios)
    result = run_experiment(config, schemes=[Scheme.AUCTION])
    rates = []
    variances = []
    for frame in result.frames[Scheme.AUCTION]:
        for m, _ in frame.matching.pairs():
            rates.append(float(frame.realized_cu_rate[m]))
            variances.append(float(frame.cu_rate_stderr[m]) ** 2)
    if not rates:
        return CriterionResult(name="realized_rate_consistency", passed=False, detail="没有匹配的 CU")
    mean = float(np.mean(rates))
    se = math.sqrt(sum(variances)) / len(rates)
    return CriterionResult(
        name="realized_rate_consistency",
        passed=abs(mean - config.r_th) <= 3.0 * se,
        measured={"matched_cus": len(rates), "mean_rate": mean, "r_th": config.r_th, "stderr": se,
                  "deviation_se": (mean - config.r_th) / se if se > 0 else 0.0},
    )


def run_verification(spec: ExperimentSpec, simulation: bool = True,
                     workers: Optional[int] = None) -> VerificationReport:
    """
    运行全部验收检查

    Args:
        spec: 实验配置；仿真类检查使用 spec.base 的参数
        simulation: 为 False 时跳过耗时的仿真趋势检查
        workers: 场景并行线程数，默认取 spec.workers
    """
    seed = spec.seed
    workers = workers or spec.workers
    criteria: List[CriterionResult] = []

    criteria.extend(_timed(lambda: check_policy_oracle(seed)))
    criteria.extend(_timed(lambda: check_auction(seed)))
    criteria.extend(_timed(lambda: check_certifier_fault(seed)))
    criteria.extend(_timed(lambda: check_determinism(spec.base)))

    if simulation:
        results = {}
        for num_d2d in (10, 20, 30):
            results[num_d2d] = run_experiment(with_num_d2d(spec.base, num_d2d), workers=workers)
        criteria.extend(_timed(lambda: check_eau_trend(results)))
        criteria.extend(_timed(lambda: check_sum_rate_ordering(results)))
        criteria.extend(_timed(lambda: check_outage(results)))
        criteria.extend(_timed(lambda: check_realized_rate(spec.base)))

    report = VerificationReport(seed=seed, criteria=criteria)
    logger.info(f"验收检查完成: {sum(item.passed for item in criteria)}/{len(criteria)} 通过")
    return report
