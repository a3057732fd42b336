from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple
import os

from d2d_coop.channel import LinkBudget
from d2d_coop.errors import (ConfigFileNotFoundError, ConfigParseError, ConfigValidationError,
                             DomainError)
from d2d_coop.logger import logger
from d2d_coop.sim import Scheme, SimConfig

SEED_ENV = "D2D_COOP_SEED"


def _to_int(value: str) -> int:
    return int(value)


def _to_float(value: str) -> float:
    return float(value)


def _to_str(value: str) -> str:
    return value


def _to_int_list(value: str) -> Tuple[int, ...]:
    return tuple(int(item) for item in value.split(",") if item.strip())


def _to_schemes(value: str) -> Tuple[Scheme, ...]:
    return tuple(Scheme(item.strip()) for item in value.split(",") if item.strip())


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(item) for item in value)
    if isinstance(value, Scheme):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


# 键 -> 解析函数
_SCHEMA: Dict[str, Callable[[str], Any]] = {
    "num_cu": _to_int,
    "num_d2d": _to_int_list,
    "cell_radius_m": _to_float,
    "dt_min_m": _to_float,
    "dt_max_m": _to_float,
    "d2d_min_m": _to_float,
    "d2d_max_m": _to_float,
    "pathloss_exponent": _to_float,
    "p_cu_mw": _to_float,
    "p_dt_mw": _to_float,
    "noise_dbm": _to_float,
    "r_th": _to_float,
    "epsilon": _to_float,
    "subframes": _to_int,
    "samples_per_pair": _to_int,
    "n_scenarios": _to_int,
    "seed": _to_int,
    "schemes": _to_schemes,
    "workers": _to_int,
    "outage_margin_se": _to_float,
    "output_dir": _to_str,
    "db_path": _to_str,
    "log_level": _to_str,
}

# SimConfig 字段 -> 出错时报告的配置键
_FIELD_KEYS = {
    "cell_radius": "cell_radius_m",
    "dt_annulus": "dt_min_m",
    "d2d_distance": "d2d_min_m",
    "master_seed": "seed",
}


@dataclass(frozen=True)
class ExperimentSpec:
    """
    一次实验的完整描述

    Attributes:
        base: 基础仿真参数（num_d2d 取扫描列表的第一个值）
        sweep: N 的扫描列表
        schemes: 要运行的配对方案
        output_dir: 结果目录
        db_path: 结果数据库文件，相对于 output_dir；为空表示不写数据库
        workers: 场景并行线程数
        log_level: 日志级别
        settings: 解析后的全部配置项，用于记录实验来源
    """
    base: SimConfig
    sweep: Tuple[int, ...]
    schemes: Tuple[Scheme, ...]
    output_dir: Path
    db_path: str
    workers: int
    log_level: str
    settings: Tuple[Tuple[str, str], ...]

    @property
    def seed(self) -> int:
        return self.base.master_seed

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       workers: Optional[int] = None) -> "ExperimentSpec":
        settings = dict(self.settings)
        spec = self
        if seed is not None:
            settings["seed"] = str(seed)
            spec = replace(spec, base=replace(spec.base, master_seed=int(seed)))
        if output_dir is not None:
            settings["output_dir"] = str(output_dir)
            spec = replace(spec, output_dir=Path(output_dir))
        if workers is not None:
            if workers < 1:
                raise ConfigValidationError("workers", "必须 >= 1")
            settings["workers"] = str(workers)
            spec = replace(spec, workers=int(workers))
        return replace(spec, settings=tuple(settings.items()))

    def to_text(self) -> str:
        """按 key = value 格式输出解析后的完整配置，可被 load_config 重新读入"""
        return "".join(f"{key} = {value}\n" for key, value in self.settings)


class Config:
    def __init__(self, config_path: Optional[str] = None):
        self.config_path = config_path
        self.config: Dict[str, Any] = {}
        self.default_config: Dict[str, Any] = {
            "num_cu": 15,
            "num_d2d": (10, 15, 20, 25, 30),
            "cell_radius_m": 500.0,
            "dt_min_m": 200.0,
            "dt_max_m": 400.0,
            "d2d_min_m": 10.0,
            "d2d_max_m": 30.0,
            # 标定值：边缘 CU 直连达不到 r_th，与 DT 方向相近的组合经中继可以达到
            "pathloss_exponent": 3.89,
            "p_cu_mw": 20.0,
            "p_dt_mw": 20.0,
            "noise_dbm": -100.0,
            "r_th": 1.8,
            "epsilon": 1.0,
            "subframes": 1000,
            "samples_per_pair": 10000,
            "n_scenarios": 200,
            "seed": 2018,
            "schemes": tuple(Scheme),
            "workers": 1,
            "outage_margin_se": 3.0,
            "output_dir": "output",
            "db_path": "results.db",
            "log_level": "INFO",
        }

        if config_path is not None:
            self.load_config()
        else:
            self.config = dict(self.default_config)

    @staticmethod
    def parse_text(text: str) -> Dict[str, str]:
        """
        解析 key = value 文本

        Raises:
            ConfigParseError: 行格式错误或键重复
            ConfigValidationError: 未知的键
        """
        entries: Dict[str, str] = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigParseError(f"缺少 '=': {raw.strip()}", line_no)
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigParseError("键名为空", line_no)
            if key not in _SCHEMA:
                raise ConfigValidationError(key, "未知的配置项")
            if key in entries:
                raise ConfigParseError(f"重复的配置项: {key}", line_no)
            entries[key] = value
        return entries

    def load_config(self) -> None:
        """从配置文件加载配置，未指定的键取默认值"""
        path = Path(self.config_path)
        if not path.is_file():
            raise ConfigFileNotFoundError(f"配置文件不存在: {path}")
        entries = self.parse_text(path.read_text(encoding="utf-8"))
        loaded: Dict[str, Any] = {}
        for key, value in entries.items():
            loaded[key] = self._convert(key, value)
        # 合并默认配置和加载的配置
        self.config = {**self.default_config, **loaded}
        logger.debug(f"加载配置文件成功: {path}")

    @staticmethod
    def _convert(key: str, value: str) -> Any:
        try:
            return _SCHEMA[key](value)
        except ValueError as e:
            raise ConfigValidationError(key, f"无法解析 {value!r}: {e}") from e

    def get(self, key: str, default: Any = None) -> Any:
        """获取配置项，如果不存在则返回默认值"""
        return self.config.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """设置配置项，字符串值按配置文件规则解析"""
        if key not in _SCHEMA:
            raise ConfigValidationError(key, "未知的配置项")
        self.config[key] = self._convert(key, value) if isinstance(value, str) else value

    def build_spec(self) -> ExperimentSpec:
        """
        校验并生成 ExperimentSpec

        Raises:
            ConfigValidationError: 任一配置项不合法，错误中包含键名
        """
        sweep = tuple(self.get("num_d2d"))
        if not sweep:
            raise ConfigValidationError("num_d2d", "扫描列表不能为空")
        if any(n < 0 for n in sweep):
            raise ConfigValidationError("num_d2d", "不能为负数")
        schemes = tuple(self.get("schemes"))
        if not schemes:
            raise ConfigValidationError("schemes", "方案列表不能为空")
        if self.get("workers") < 1:
            raise ConfigValidationError("workers", "必须 >= 1")
        if not str(self.get("output_dir")).strip():
            raise ConfigValidationError("output_dir", "不能为空")
        level = str(self.get("log_level")).upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigValidationError("log_level", f"未知的日志级别 {level}")

        try:
            budget = LinkBudget.from_table_units(self.get("p_cu_mw"), self.get("p_dt_mw"),
                                                 self.get("noise_dbm"))
        except DomainError as e:
            key = "p_cu_mw" if "p_cu" in str(e) else "p_dt_mw" if "p_dt" in str(e) else "noise_dbm"
            raise ConfigValidationError(key, str(e)) from e

        try:
            base = SimConfig(
                num_cu=self.get("num_cu"),
                num_d2d=sweep[0],
                cell_radius=self.get("cell_radius_m"),
                dt_annulus=(self.get("dt_min_m"), self.get("dt_max_m")),
                d2d_distance=(self.get("d2d_min_m"), self.get("d2d_max_m")),
                pathloss_exponent=self.get("pathloss_exponent"),
                budget=budget,
                r_th=self.get("r_th"),
                epsilon=self.get("epsilon"),
                subframes=self.get("subframes"),
                samples_per_pair=self.get("samples_per_pair"),
                n_scenarios=self.get("n_scenarios"),
                master_seed=self.get("seed"),
                outage_margin_se=self.get("outage_margin_se"),
            )
        except DomainError as e:
            field_name = str(e).split(":", 1)[0]
            key = _FIELD_KEYS.get(field_name, field_name)
            if field_name == "dt_annulus" and "外半径" in str(e):
                key = "dt_max_m"
            raise ConfigValidationError(key, str(e)) from e

        settings = tuple((key, _format(self.get(key))) for key in _SCHEMA)
        return ExperimentSpec(
            base=base,
            sweep=sweep,
            schemes=schemes,
            output_dir=Path(self.get("output_dir")),
            db_path=str(self.get("db_path")),
            workers=int(self.get("workers")),
            log_level=level,
            settings=settings,
        )


def load_config(path: Optional[str] = None, environ: Optional[Dict[str, str]] = None) -> ExperimentSpec:
    """
    读取配置文件并生成 ExperimentSpec；环境变量 D2D_COOP_SEED 覆盖文件中的 seed

    Args:
        path: 配置文件路径，为 None 时使用全部默认值
        environ: 环境变量，默认 os.environ

    Raises:
        ConfigFileNotFoundError / ConfigParseError / ConfigValidationError
    """
    config = Config(path)
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV):
        config.set("seed", env[SEED_ENV])
    return config.build_spec()
