#!/usr/bin/env python3
"""
Run ledger for the causal lab: one row per CLI invocation plus headline metrics
"""

import json
import logging
import os
import uuid
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

logger = logging.getLogger(__name__)

Base = declarative_base()


class ExperimentRun(Base):
    __tablename__ = 'experiment_runs'

    id = Column(Integer, primary_key=True)
    run_id = Column(String(36), unique=True, nullable=False)
    command = Column(String(20), nullable=False)  # generate, train, evaluate, adequacy
    seed = Column(Integer, nullable=True)
    config_json = Column(Text)
    output_dir = Column(String(500))
    status = Column(String(10), default='running', nullable=False)  # running, done, failed
    error_message = Column(Text, nullable=True)
    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)
    duration_seconds = Column(Float, nullable=True)

    metrics = relationship("RunMetric", back_populates="run", cascade="all, delete-orphan")

    @staticmethod
    def new_run_id():
        return str(uuid.uuid4())


class RunMetric(Base):
    __tablename__ = 'run_metrics'

    id = Column(Integer, primary_key=True)
    experiment_run_id = Column(Integer, ForeignKey('experiment_runs.id'), nullable=False)
    name = Column(String(50), nullable=False)
    value = Column(Float, nullable=True)

    run = relationship("ExperimentRun", back_populates="metrics")


# Database setup
DATABASE_URL = os.environ.get("CAUSAL_LAB_DB_URL", "sqlite:///causal_lab.db")
LEDGER_ENABLED = os.environ.get("CAUSAL_LAB_LEDGER", "1") != "0"

_engines = {}


def get_engine(url=None):
    url = url or DATABASE_URL
    if url not in _engines:
        _engines[url] = create_engine(url)
    return _engines[url]


def init_db(url=None):
    """Initialize the database"""
    Base.metadata.create_all(bind=get_engine(url))


def get_db(url=None):
    """Get database session; the caller closes it"""
    init_db(url)
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))()


class RunLedger:
    """Records one CLI run; every method is a no-op when the ledger is disabled"""

    def __init__(self, command, seed=None, config=None, output_dir=None, url=None, enabled=None):
        self.enabled = LEDGER_ENABLED if enabled is None else enabled
        self.url = url
        self.command = command
        self.seed = seed
        self.config = config or {}
        self.output_dir = output_dir
        self.run_id = ExperimentRun.new_run_id()
        self._started = None

    def start(self):
        if not self.enabled:
            return self
        self._started = datetime.utcnow()
        db = get_db(self.url)
        try:
            db.add(ExperimentRun(
                run_id=self.run_id,
                command=self.command,
                seed=self.seed,
                config_json=json.dumps(self.config, sort_keys=True, default=str),
                output_dir=str(self.output_dir) if self.output_dir else None,
                status='running',
                started_at=self._started,
            ))
            db.commit()
        except Exception as e:
            db.rollback()
            logger.warning("Ledger disabled for this run: %s", e)
            self.enabled = False
        finally:
            db.close()
        return self

    def finish(self, metrics=None, error=None):
        if not self.enabled:
            return
        db = get_db(self.url)
        try:
            run = db.query(ExperimentRun).filter_by(run_id=self.run_id).first()
            if run is None:
                return
            run.finished_at = datetime.utcnow()
            run.duration_seconds = (run.finished_at - self._started).total_seconds()
            run.status = 'failed' if error else 'done'
            run.error_message = str(error) if error else None
            for name, value in (metrics or {}).items():
                run.metrics.append(RunMetric(name=name, value=None if value is None else float(value)))
            db.commit()
        except Exception as e:
            db.rollback()
            logger.warning("Could not finalize ledger entry %s: %s", self.run_id, e)
        finally:
            db.close()


def recent_runs(limit=10, url=None):
    """Most recent runs as plain dicts, newest first"""
    db = get_db(url)
    try:
        runs = db.query(ExperimentRun).order_by(ExperimentRun.id.desc()).limit(limit).all()
        return [{
            'run_id': r.run_id,
            'command': r.command,
            'seed': r.seed,
            'status': r.status,
            'duration_seconds': r.duration_seconds,
            'metrics': {m.name: m.value for m in r.metrics},
        } for r in runs]
    finally:
        db.close()


if __name__ == "__main__":
    init_db()
    print("Database initialized!")
