from typing import Any, Optional


class D2DCoopError(Exception):
    """d2d_coop 所有异常的基类"""


class DomainError(D2DCoopError, ValueError):
    """数值输入不合法（距离非正、空分布、概率不归一等）"""


class UsageError(D2DCoopError, RuntimeError):
    """接口使用错误（对不可行策略调用 apply_policy、匹配对缺少策略等）"""


class InfeasibleError(D2DCoopError):
    """LP 问题不可行：E{r^C} < r_th"""

    def __init__(self, mean_cu_rate: float, r_th: float):
        self.mean_cu_rate = mean_cu_rate
        self.r_th = r_th
        super().__init__(f"不可行: E{{r^C}}={mean_cu_rate:.6g} < r_th={r_th:.6g}")


class AuctionDivergenceError(D2DCoopError):
    """拍卖超过轮数上限，携带当时的拍卖状态用于诊断"""

    def __init__(self, state: Any, max_rounds: int):
        self.state = state
        self.max_rounds = max_rounds
        super().__init__(f"拍卖在 {max_rounds} 轮内未收敛 (t={getattr(state, 't', '?')})")


class ConfigError(D2DCoopError):
    """配置错误基类"""


class ConfigFileNotFoundError(ConfigError, FileNotFoundError):
    """配置文件不存在"""


class ConfigParseError(ConfigError):
    """配置文件格式错误"""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        prefix = f"第 {line_no} 行: " if line_no is not None else ""
        super().__init__(f"{prefix}{message}")


class ConfigValidationError(ConfigError):
    """配置项取值不合法，消息中包含出错的键名"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
