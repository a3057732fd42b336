from sqlalchemy import create_engine, Column, Integer, String, DateTime, Text, Enum, Float, ForeignKey
from sqlalchemy.orm import declarative_base, sessionmaker, scoped_session
from sqlalchemy.pool import QueuePool
from datetime import datetime
import enum
from typing import Optional, List, Any, Sequence
import os
from d2d_coop.logger import logger
from d2d_coop.sim import Metrics, ScenarioRow


# 定义实验运行状态枚举
class RunStatus(enum.Enum):
    PENDING = "pending"       # 等待运行
    RUNNING = "running"       # 运行中
    COMPLETED = "completed"   # 已完成
    FAILED = "failed"         # 运行失败


Base = declarative_base()


class ExperimentRun(Base):
    """实验运行表"""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(32), nullable=False)
    master_seed = Column(Integer, nullable=False)
    config_text = Column(Text, default="", nullable=False)
    output_dir = Column(String(512), default="", nullable=False)
    status = Column(Enum(RunStatus), default=RunStatus.PENDING, nullable=False)
    error_message = Column(Text)  # 存储运行失败时的错误信息
    created_at = Column(DateTime, default=datetime.now)
    updated_at = Column(DateTime, default=datetime.now, onupdate=datetime.now)


class AggregateRecord(Base):
    """每个 (N, 方案) 的平均指标"""
    __tablename__ = 'aggregate_rows'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False, index=True)
    num_d2d = Column(Integer, nullable=False)
    scheme = Column(String(32), nullable=False)
    n_scenarios = Column(Integer, nullable=False)
    eau_cu = Column(Float, nullable=False)
    eau_d2d = Column(Float, nullable=False)
    d2d_sum_rate = Column(Float, nullable=False)
    outage_fraction = Column(Float, nullable=False)
    matched_cus = Column(Float, nullable=False)
    matched_d2d = Column(Float, nullable=False)


class ScenarioRecord(Base):
    """逐场景结果"""
    __tablename__ = 'scenario_rows'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False, index=True)
    num_d2d = Column(Integer, nullable=False)
    scenario = Column(Integer, nullable=False)
    scheme = Column(String(32), nullable=False)
    eau_cu = Column(Float, nullable=False)
    eau_d2d = Column(Float, nullable=False)
    d2d_sum_rate = Column(Float, nullable=False)
    d2d_sum_payoff = Column(Float, nullable=False)
    outage_fraction = Column(Float, nullable=False)
    matched_cus = Column(Integer, nullable=False)
    matched_d2d = Column(Integer, nullable=False)
    mean_matched_cu_rate = Column(Float, nullable=False)


class ResultStore:
    def __init__(self, db_path: str = "output/results.db"):
        """
        初始化结果数据库（SQLite）

        Args:
            db_path: 数据库文件路径
        """
        self.db_path = db_path
        self.engine = self._create_engine(db_path)
        self.Session = scoped_session(sessionmaker(bind=self.engine, expire_on_commit=False))

        # 创建表
        Base.metadata.create_all(self.engine)

    @staticmethod
    def _create_engine(db_path: str) -> Any:
        """创建数据库引擎"""
        parent = os.path.dirname(db_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return create_engine(
            f'sqlite:///{db_path}',
            poolclass=QueuePool,
            pool_size=5,
            max_overflow=10,
            pool_timeout=30,
            pool_recycle=1800
        )

    def start_run(self, command: str, master_seed: int, config_text: str, output_dir: str = "") -> int:
        """
        新建一条运行记录，状态为 RUNNING

        Returns:
            int: 运行编号
        """
        session = self.Session()
        try:
            run = ExperimentRun(
                command=command,
                master_seed=master_seed,
                config_text=config_text,
                output_dir=output_dir,
                status=RunStatus.RUNNING,
            )
            session.add(run)
            session.commit()
            logger.info(f"新建运行记录: id={run.id}, command={command}, seed={master_seed}")
            return run.id
        except Exception as e:
            session.rollback()
            logger.error(f"新建运行记录失败: {e}")
            raise
        finally:
            session.close()

    def add_aggregate_rows(self, run_id: int, metrics: Sequence[Metrics]) -> int:
        """写入平均指标，返回写入的行数"""
        records = [
            AggregateRecord(
                run_id=run_id,
                num_d2d=item.num_d2d,
                scheme=item.scheme.value,
                n_scenarios=item.n_scenarios,
                eau_cu=item.eau_cu,
                eau_d2d=item.eau_d2d,
                d2d_sum_rate=item.d2d_sum_rate,
                outage_fraction=item.outage_fraction,
                matched_cus=item.matched_cus,
                matched_d2d=item.matched_d2d,
            )
            for item in metrics
        ]
        return self._add_all(records)

    def add_scenario_rows(self, run_id: int, rows: Sequence[ScenarioRow]) -> int:
        """写入逐场景结果，返回写入的行数"""
        records = [
            ScenarioRecord(
                run_id=run_id,
                num_d2d=row.num_d2d,
                scenario=row.scenario,
                scheme=row.scheme.value,
                eau_cu=row.eau_cu,
                eau_d2d=row.eau_d2d,
                d2d_sum_rate=row.d2d_sum_rate,
                d2d_sum_payoff=row.d2d_sum_payoff,
                outage_fraction=row.outage_fraction,
                matched_cus=row.matched_cus,
                matched_d2d=row.matched_d2d,
                mean_matched_cu_rate=row.mean_matched_cu_rate,
            )
            for row in rows
        ]
        return self._add_all(records)

    def _add_all(self, records: List[Base]) -> int:
        session = self.Session()
        try:
            session.add_all(records)
            session.commit()
            return len(records)
        except Exception as e:
            session.rollback()
            logger.error(f"写入结果失败: {e}")
            raise
        finally:
            session.close()

    def finish_run(self, run_id: int, status: RunStatus = RunStatus.COMPLETED,
                   error_message: Optional[str] = None) -> Optional[ExperimentRun]:
        """更新运行状态"""
        session = self.Session()
        try:
            run = session.query(ExperimentRun).filter_by(id=run_id).first()
            if run:
                run.status = status
                run.error_message = error_message
                session.commit()
            return run
        except Exception as e:
            session.rollback()
            logger.error(f"更新运行记录失败: {e}")
            raise
        finally:
            session.close()

    def get_run(self, run_id: int) -> Optional[ExperimentRun]:
        """获取运行记录"""
        session = self.Session()
        try:
            return session.query(ExperimentRun).filter_by(id=run_id).first()
        finally:
            session.close()

    def list_runs(self, status: Optional[RunStatus] = None, limit: int = 100) -> List[ExperimentRun]:
        """列出运行记录，最新的在前"""
        session = self.Session()
        try:
            query = session.query(ExperimentRun)
            if status:
                query = query.filter_by(status=status)
            return query.order_by(ExperimentRun.id.desc()).limit(limit).all()
        finally:
            session.close()

    def get_aggregate_rows(self, run_id: int) -> List[AggregateRecord]:
        session = self.Session()
        try:
            return session.query(AggregateRecord).filter_by(run_id=run_id).order_by(AggregateRecord.id).all()
        finally:
            session.close()

    def get_scenario_rows(self, run_id: int) -> List[ScenarioRecord]:
        session = self.Session()
        try:
            return session.query(ScenarioRecord).filter_by(run_id=run_id).order_by(ScenarioRecord.id).all()
        finally:
            session.close()

    def close(self):
        """关闭数据库连接"""
        self.Session.remove()
        self.engine.dispose()
