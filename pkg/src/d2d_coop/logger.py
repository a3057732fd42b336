import logging
from logging.handlers import TimedRotatingFileHandler
import os
from typing import Optional, Union
import sys


class Logger:
    def __init__(
        self,
        name: str = "d2d_coop",
        log_dir: Optional[str] = None,
        level: int = logging.INFO,
        console: bool = True,
        max_days: int = 30
    ):
        """
        初始化日志器

        Args:
            name: 日志器名称
            log_dir: 日志文件目录，为 None 时只输出到控制台
            level: 日志级别
            console: 是否输出到控制台
            max_days: 日志文件保留天数
        """
        self.name = name
        self.logger = logging.getLogger(name)
        self.logger.setLevel(level)
        self.formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        # 如果已经配置过处理器，则不再重复配置
        if self.logger.handlers:
            return

        if console:
            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setFormatter(self.formatter)
            self.logger.addHandler(console_handler)

        if log_dir:
            self.add_file_handler(log_dir, max_days)

    def add_file_handler(self, log_dir: str, max_days: int = 30) -> str:
        """
        添加按天轮转的文件处理器，同一文件只添加一次

        Returns:
            str: 日志文件路径
        """
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.abspath(os.path.join(log_dir, f"{self.name}.log"))
        for handler in self.logger.handlers:
            if isinstance(handler, TimedRotatingFileHandler) and handler.baseFilename == log_file:
                return log_file

        file_handler = TimedRotatingFileHandler(
            log_file,
            when='midnight',
            interval=1,
            backupCount=max_days,
            encoding='utf-8'
        )
        file_handler.setFormatter(self.formatter)
        self.logger.addHandler(file_handler)
        return log_file

    def remove_file_handlers(self) -> None:
        """关闭并移除所有文件处理器"""
        for handler in list(self.logger.handlers):
            if isinstance(handler, TimedRotatingFileHandler):
                handler.close()
                self.logger.removeHandler(handler)

    def set_level(self, level: Union[int, str]) -> None:
        """设置日志级别，支持 "DEBUG"/"INFO" 等名称"""
        if isinstance(level, str):
            resolved = logging.getLevelName(level.upper())
            if not isinstance(resolved, int):
                raise ValueError(f"未知的日志级别: {level}")
            level = resolved
        self.logger.setLevel(level)

    def debug(self, msg: str, *args, **kwargs) -> None:
        """输出调试日志"""
        self.logger.debug(msg, *args, **kwargs)

    def info(self, msg: str, *args, **kwargs) -> None:
        """输出信息日志"""
        self.logger.info(msg, *args, **kwargs)

    def warning(self, msg: str, *args, **kwargs) -> None:
        """输出警告日志"""
        self.logger.warning(msg, *args, **kwargs)

    def error(self, msg: str, *args, **kwargs) -> None:
        """输出错误日志"""
        self.logger.error(msg, *args, **kwargs)

    def critical(self, msg: str, *args, **kwargs) -> None:
        """输出严重错误日志"""
        self.logger.critical(msg, *args, **kwargs)

    def exception(self, msg: str, *args, **kwargs) -> None:
        """输出异常日志"""
        self.logger.exception(msg, *args, **kwargs)


logger = Logger(
    name="d2d_coop",
    log_dir=None,
    level=logging.INFO,
    console=True,
    max_days=30
)
