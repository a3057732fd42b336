"""结果文件：aggregate.csv / scenarios.csv / run_config.txt，以及可选的逐场景诊断文本"""
from pathlib import Path
from typing import Dict, List, Sequence

from d2d_coop.sim import ExperimentResult, Metrics, ScenarioRow
from d2d_coop.utils.file import FileUtils
from d2d_coop.utils.tabular import dump_matching, dump_payoff_matrix

AGGREGATE_FILE = "aggregate.csv"
SCENARIO_FILE = "scenarios.csv"
CONFIG_FILE = "run_config.txt"
DIAGNOSTICS_DIR = "diagnostics"

AGGREGATE_HEADER = ("N", "scheme", "eau_cu", "eau_d2d", "d2d_sum_rate", "outage_fraction",
                    "matched_cus", "matched_d2d")
SCENARIO_HEADER = ("N", "scenario", "scheme", "eau_cu", "eau_d2d", "d2d_sum_rate", "d2d_sum_payoff",
                   "outage_fraction", "matched_cus", "matched_d2d", "mean_matched_cu_rate")


def aggregate_row(metrics: Metrics) -> tuple:
    return (metrics.num_d2d, metrics.scheme.value, metrics.eau_cu, metrics.eau_d2d, metrics.d2d_sum_rate,
            metrics.outage_fraction, metrics.matched_cus, metrics.matched_d2d)


def scenario_row(row: ScenarioRow) -> tuple:
    return (row.num_d2d, row.scenario, row.scheme.value, row.eau_cu, row.eau_d2d, row.d2d_sum_rate,
            row.d2d_sum_payoff, row.outage_fraction, row.matched_cus, row.matched_d2d,
            row.mean_matched_cu_rate)


def collect(results: Sequence[ExperimentResult]) -> Dict[str, List]:
    """按扫描点顺序、方案顺序展开所有结果"""
    metrics = [item for result in results for item in result.metrics.values()]
    rows = [row for result in results for row in result.rows]
    return {"metrics": metrics, "rows": rows}


def write_results(output_dir: Path, results: Sequence[ExperimentResult], config_text: str) -> Dict[str, Path]:
    """
    写出汇总表、逐场景表和解析后的配置

    Returns:
        文件名 -> 路径
    """
    output_dir = Path(output_dir)
    FileUtils.ensure_dir(str(output_dir))
    collected = collect(results)
    paths = {
        AGGREGATE_FILE: output_dir / AGGREGATE_FILE,
        SCENARIO_FILE: output_dir / SCENARIO_FILE,
        CONFIG_FILE: output_dir / CONFIG_FILE,
    }
    FileUtils.write_csv(str(paths[AGGREGATE_FILE]), AGGREGATE_HEADER,
                        (aggregate_row(item) for item in collected["metrics"]))
    FileUtils.write_csv(str(paths[SCENARIO_FILE]), SCENARIO_HEADER,
                        (scenario_row(row) for row in collected["rows"]))
    with open(paths[CONFIG_FILE], "w", encoding="utf-8", newline="\n") as f:
        f.write(config_text)
    return paths


def write_diagnostics(output_dir: Path, results: Sequence[ExperimentResult]) -> Path:
    """
    逐场景写出收益矩阵和各方案的匹配：

        diagnostics/N{N}/scenario_{k}_payoffs.txt
        diagnostics/N{N}/scenario_{k}_{scheme}.txt

    Returns:
        诊断目录
    """
    root = Path(output_dir) / DIAGNOSTICS_DIR
    for result in results:
        directory = root / f"N{result.config.num_d2d}"
        FileUtils.ensure_dir(str(directory))
        for index, payoffs in enumerate(result.payoffs):
            _write_text(directory / f"scenario_{index:04d}_payoffs.txt", dump_payoff_matrix(payoffs))
        for scheme, frames in result.frames.items():
            for index, frame in enumerate(frames):
                _write_text(directory / f"scenario_{index:04d}_{scheme.value}.txt", dump_matching(frame.matching))
    return root


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
