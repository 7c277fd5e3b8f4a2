from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from app.database import Base


class ExperimentRun(Base):
    """
    One executed experiment: the spec it ran, where its files went and the
    aggregate verdict. Per-seed numbers live in SeedRun.
    """
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    scenario = Column(String(100), nullable=False, index=True)
    total_iterations = Column(Integer, nullable=False)
    num_seeds = Column(Integer, nullable=False)
    passed = Column(Boolean, nullable=False)
    out_dir = Column(String(500), nullable=False)
    spec_json = Column(Text, nullable=False)
    summary_json = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now(), nullable=False)

    seeds = relationship("SeedRun", back_populates="experiment", cascade="all, delete-orphan", order_by="SeedRun.id")


class SeedRun(Base):
    __tablename__ = "seed_runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    experiment_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False, index=True)
    seed = Column(String(20), nullable=False)  # 64-bit unsigned does not fit a signed INTEGER
    error = Column(Text, nullable=True)
    final_consensus_penalty = Column(Float, nullable=True)
    final_primal_error = Column(Float, nullable=True)
    final_gap_proxy = Column(Float, nullable=True)
    block_spread = Column(Float, nullable=True)
    w_error = Column(Float, nullable=True)
    empirical_c = Column(Float, nullable=True)

    experiment = relationship("ExperimentRun", back_populates="seeds")
