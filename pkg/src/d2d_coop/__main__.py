import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

from d2d_coop.config import ExperimentSpec, load_config
from d2d_coop.db import ResultStore, RunStatus
from d2d_coop.errors import ConfigError
from d2d_coop.logger import logger
from d2d_coop.results import collect, write_diagnostics, write_results
from d2d_coop.sim import ExperimentResult, run_experiment, with_num_d2d
from d2d_coop.verify import run_verification

VERIFY_FILE = "verify.json"


class ExperimentRunner:
    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self._store: Optional[ResultStore] = None

    @property
    def store(self) -> Optional[ResultStore]:
        """db_path 为空时不写数据库"""
        if self._store is None and self.spec.db_path:
            self._store = ResultStore(str(self.spec.output_dir / self.spec.db_path))
        return self._store

    def close(self):
        if self._store is not None:
            self._store.close()
            self._store = None

    def _start(self, command: str) -> Optional[int]:
        if self.store is None:
            return None
        return self.store.start_run(command, self.spec.seed, self.spec.to_text(), str(self.spec.output_dir))

    def _finish(self, run_id: Optional[int], status: RunStatus, error_message: Optional[str] = None):
        if run_id is not None:
            self.store.finish_run(run_id, status, error_message)

    def run(self, dump_diagnostics: bool = False) -> List[ExperimentResult]:
        """
        对扫描列表中的每个 N 运行全部方案并写出结果文件

        Args:
            dump_diagnostics: 同时写出每个场景的收益矩阵和匹配
        """
        run_id = self._start("run")
        try:
            results = []
            for num_d2d in self.spec.sweep:
                logger.info(f"开始 N={num_d2d}")
                start = time.perf_counter()
                result = run_experiment(with_num_d2d(self.spec.base, num_d2d), self.spec.schemes,
                                        self.spec.workers)
                logger.info(f"N={num_d2d} 完成, 耗时 {time.perf_counter() - start:.1f}s")
                results.append(result)

            paths = write_results(self.spec.output_dir, results, self.spec.to_text())
            if dump_diagnostics:
                logger.info(f"诊断文件已写入: {write_diagnostics(self.spec.output_dir, results)}")
            if run_id is not None:
                collected = collect(results)
                self.store.add_aggregate_rows(run_id, collected["metrics"])
                self.store.add_scenario_rows(run_id, collected["rows"])
            self._finish(run_id, RunStatus.COMPLETED)
        except Exception as e:
            self._finish(run_id, RunStatus.FAILED, str(e))
            raise

        self.summarize(results)
        logger.info(f"结果已写入: {', '.join(str(path) for path in paths.values())}")
        return results

    @staticmethod
    def summarize(results: Sequence[ExperimentResult]) -> None:
        logger.info(f"{'N':>4} {'scheme':<12} {'eau_cu':>9} {'eau_d2d':>9} {'sum_rate':>9} {'outage':>8}")
        for result in results:
            for metrics in result.metrics.values():
                logger.info(f"{metrics.num_d2d:>4} {metrics.scheme.value:<12} {metrics.eau_cu:>9.4f} "
                            f"{metrics.eau_d2d:>9.4f} {metrics.d2d_sum_rate:>9.4f} "
                            f"{metrics.outage_fraction:>8.2%}")

    def verify(self, quick: bool = False) -> Path:
        """运行验收检查，报告写入 output_dir/verify.json；检查失败不影响退出码"""
        run_id = self._start("verify")
        try:
            report = run_verification(self.spec, simulation=not quick)
            path = self.spec.output_dir / VERIFY_FILE
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(report.to_dict(), f, ensure_ascii=False, indent=2, sort_keys=False)
                f.write("\n")
            self._finish(run_id, RunStatus.COMPLETED)
        except Exception as e:
            self._finish(run_id, RunStatus.FAILED, str(e))
            raise
        failed = [item.name for item in report.criteria if not item.passed]
        if failed:
            logger.warning(f"未通过的检查: {', '.join(failed)}")
        logger.info(f"验收报告已写入: {path}")
        return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="d2d-coop", description="协作 D2D 两时间尺度资源分配仿真")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser):
        sub.add_argument("--config", "-c", default=None, help="key = value 配置文件，缺省使用默认参数")
        sub.add_argument("--output-dir", "-o", default=None, help="覆盖配置中的 output_dir")
        sub.add_argument("--seed", type=int, default=None, help="覆盖主种子（优先于环境变量）")
        sub.add_argument("--workers", "-j", type=int, default=None, help="场景并行线程数")

    run_parser = subparsers.add_parser("run", help="按 N 扫描运行全部方案并写出结果表")
    add_common(run_parser)
    run_parser.add_argument("--dump-diagnostics", action="store_true", help="写出每个场景的收益矩阵和匹配")
    verify_parser = subparsers.add_parser("verify", help="运行验收检查并输出 verify.json")
    add_common(verify_parser)
    verify_parser.add_argument("--quick", action="store_true", help="跳过耗时的仿真趋势检查")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.output_dir,
                                                       workers=args.workers)
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        return 2

    logger.set_level(spec.log_level)
    logger.add_file_handler(str(spec.output_dir / "logs"))
    runner = ExperimentRunner(spec)
    try:
        if args.command == "run":
            runner.run(dump_diagnostics=args.dump_diagnostics)
        else:
            runner.verify(quick=args.quick)
        return 0
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        return 2
    except Exception as e:
        logger.exception(f"{args.command} 失败: {e}")
        return 1
    finally:
        runner.close()
        logger.remove_file_handlers()


if __name__ == "__main__":
    sys.exit(main())
