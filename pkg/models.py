"""Database models for the experiment run ledger."""
from __future__ import annotations

import json
import os
from contextlib import contextmanager
from datetime import datetime
from typing import Dict, Iterator, Optional

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

from config import Config

Base = declarative_base()

_engines: Dict[str, sessionmaker] = {}


class ExperimentRun(Base):
    """One invocation of run, sweep or reproduce."""

    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True)
    kind = Column(String(60), nullable=False, index=True)
    name = Column(String(120))
    output_dir = Column(String(500), nullable=False)
    seed = Column(Integer)
    status = Column(String(20), nullable=False, default="ok")
    exit_code = Column(Integer, nullable=False, default=0)
    wall_time = Column(Float)
    message = Column(Text)
    config_json = Column(Text)
    code_version = Column(String(20), default=Config.CODE_VERSION)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)

    points = relationship(
        "SweepPoint",
        back_populates="run",
        cascade="all, delete-orphan",
        order_by="SweepPoint.id",
    )

    def to_dict(self) -> Dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "name": self.name,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "status": self.status,
            "exit_code": self.exit_code,
            "wall_time": self.wall_time,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }

    def __repr__(self) -> str:
        return f"<ExperimentRun {self.id} {self.kind} {self.status}>"


class SweepPoint(Base):
    """One grid point of a sweep."""

    __tablename__ = "sweep_points"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False, index=True)
    label = Column(String(200), nullable=False)
    params_json = Column(Text)
    status = Column(String(20), nullable=False, default="ok")
    message = Column(Text)
    output_dir = Column(String(500))

    run = relationship("ExperimentRun", back_populates="points")

    @property
    def params(self) -> Dict:
        return json.loads(self.params_json or "{}")

    def __repr__(self) -> str:
        return f"<SweepPoint {self.label} {self.status}>"


def init_db(url: Optional[str] = None) -> sessionmaker:
    """Session factory for the ledger, creating tables on first use."""
    url = url or Config.DATABASE_URL
    if url not in _engines:
        if url.startswith("sqlite:///"):
            folder = os.path.dirname(url[len("sqlite:///"):])
            if folder:
                os.makedirs(folder, exist_ok=True)
        engine = create_engine(url, future=True)
        Base.metadata.create_all(engine)
        _engines[url] = sessionmaker(bind=engine, expire_on_commit=False, future=True)
    return _engines[url]


@contextmanager
def db_session(url: Optional[str] = None) -> Iterator:
    session = init_db(url)()
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def record_run(
    kind: str,
    output_dir: str,
    status: str = "ok",
    exit_code: int = 0,
    seed: Optional[int] = None,
    wall_time: Optional[float] = None,
    message: str = "",
    config: Optional[Dict] = None,
    name: Optional[str] = None,
    points=(),
    url: Optional[str] = None,
) -> int:
    """Store a run (and its sweep points as dicts with label/params/status/message/output_dir)."""
    with db_session(url) as session:
        run = ExperimentRun(
            kind=kind,
            name=name,
            output_dir=output_dir,
            seed=seed,
            status=status,
            exit_code=exit_code,
            wall_time=wall_time,
            message=message,
            config_json=json.dumps(config, sort_keys=True, default=str) if config is not None else None,
        )
        for point in points:
            run.points.append(
                SweepPoint(
                    label=point["label"],
                    params_json=json.dumps(point.get("params", {}), sort_keys=True),
                    status=point.get("status", "ok"),
                    message=point.get("message", ""),
                    output_dir=point.get("output_dir"),
                )
            )
        session.add(run)
        session.flush()
        return run.id


def recent_runs(limit: int = 20, url: Optional[str] = None):
    with db_session(url) as session:
        rows = session.query(ExperimentRun).order_by(ExperimentRun.id.desc()).limit(limit).all()
        return [row.to_dict() for row in rows]
