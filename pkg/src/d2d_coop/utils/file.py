import csv
import hashlib
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence
import os
from d2d_coop.logger import logger


class FileUtils:
    @staticmethod
    def get_file_md5(file_path: str, chunk_size: int = 8192) -> Optional[str]:
        """
        计算文件的MD5值

        Args:
            file_path: 文件路径
            chunk_size: 每次读取的块大小，默认8KB

        Returns:
            文件的MD5值，如果文件不存在或读取失败则返回None
        """
        try:
            file_path = Path(file_path)
            if not file_path.is_file():
                logger.error(f"文件不存在: {file_path}")
                return None

            md5_hash = hashlib.md5()
            with open(file_path, 'rb') as f:
                while chunk := f.read(chunk_size):
                    md5_hash.update(chunk)

            return md5_hash.hexdigest()
        except OSError as e:
            logger.error(f"计算文件MD5失败: {e}")
            return None

    @staticmethod
    def ensure_dir(directory: str) -> bool:
        """
        确保目录存在，如果不存在则创建

        Returns:
            是否成功
        """
        try:
            os.makedirs(directory, exist_ok=True)
            return True
        except OSError as e:
            logger.error(f"创建目录失败: {e}")
            return False

    @staticmethod
    def format_value(value: Any) -> str:
        """数值格式化：浮点数用 repr 保证可逆且与区域设置无关"""
        if isinstance(value, bool):
            return str(int(value))
        if isinstance(value, float):
            return repr(float(value))
        return str(value)

    @staticmethod
    def write_csv(file_path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
        """
        写入逗号分隔文件：首行为表头，LF 换行

        Returns:
            写入的数据行数
        """
        parent = os.path.dirname(str(file_path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        count = 0
        with open(file_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([FileUtils.format_value(value) for value in row])
                count += 1
        return count

    @staticmethod
    def read_csv(file_path: str):
        """
        读取逗号分隔文件

        Returns:
            (表头, 数据行列表)
        """
        with open(file_path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            rows = list(reader)
        if not rows:
            return [], []
        return rows[0], rows[1:]
