"""
测试夹具与诊断输出用的表格文本格式，每行一个状态/元素

    分布:     r_cu,r_d2d,prob
    收益矩阵: m,n,v          （首行 "# shape,M,N"）
    匹配:     m,n,price      （首行 "# shape,M,N"，只列出匹配的组合）
"""
from typing import List

import numpy as np

from d2d_coop.channel import RatePair
from d2d_coop.errors import DomainError
from d2d_coop.matching import Matching
from d2d_coop.policy import UNACCEPTABLE, PayoffMatrix, RateDistribution


def _lines(text: str) -> List[List[str]]:
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if line:
            rows.append([cell.strip() for cell in line.split(",")])
    return rows


def _shape(rows: List[List[str]]):
    if not rows or rows[0][0] != "# shape" or len(rows[0]) != 3:
        raise DomainError("缺少 '# shape,M,N' 首行")
    return int(rows[0][1]), int(rows[0][2])


def dump_distribution(dist: RateDistribution) -> str:
    return "".join(f"{float(c)!r},{float(d)!r},{float(w)!r}\n"
                   for c, d, w in zip(dist.r_cu, dist.r_d2d, dist.weights))


def load_distribution(text: str) -> RateDistribution:
    rows = _lines(text)
    support = []
    for row in rows:
        if len(row) != 3:
            raise DomainError(f"分布行需要 3 列: {row}")
        support.append((RatePair(float(row[0]), float(row[1])), float(row[2])))
    return RateDistribution.discrete(support)


def dump_payoff_matrix(payoffs: PayoffMatrix) -> str:
    num_cu, num_d2d = payoffs.shape
    lines = [f"# shape,{num_cu},{num_d2d}\n"]
    for m in range(num_cu):
        for n in range(num_d2d):
            lines.append(f"{m},{n},{float(payoffs.values[m, n])!r}\n")
    return "".join(lines)


def load_payoff_matrix(text: str) -> PayoffMatrix:
    rows = _lines(text)
    num_cu, num_d2d = _shape(rows)
    values = np.full((num_cu, num_d2d), UNACCEPTABLE)
    for row in rows[1:]:
        values[int(row[0]), int(row[1])] = float(row[2])
    return PayoffMatrix(values=values)


def dump_matching(matching: Matching) -> str:
    lines = [f"# shape,{matching.num_cu},{matching.num_d2d}\n"]
    for m, n in matching.pairs():
        lines.append(f"{m},{n},{float(matching.prices[m])!r}\n")
    return "".join(lines)


def load_matching(text: str) -> Matching:
    rows = _lines(text)
    num_cu, num_d2d = _shape(rows)
    pairs = [(int(row[0]), int(row[1])) for row in rows[1:]]
    prices = [0.0] * num_cu
    for row in rows[1:]:
        prices[int(row[0])] = float(row[2])
    return Matching.from_pairs(num_cu, num_d2d, pairs, prices)
