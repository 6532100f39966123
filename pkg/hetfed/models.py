from sqlalchemy import Column, Integer, String, Float, DateTime, ForeignKey, BigInteger
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import relationship
from datetime import datetime

Base = declarative_base()


class ExperimentRun(Base):
    """One finished training run"""
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, unique=True, index=True)
    mode = Column(String, index=True)
    config_hash = Column(String, index=True)
    seed = Column(Integer)
    num_clients = Column(Integer)
    rounds = Column(Integer)
    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)
    final_accuracy = Column(Float, nullable=True)

    # Relationships
    round_records = relationship("RoundRecord", back_populates="run", order_by="RoundRecord.round")
    client_records = relationship("ClientRoundRecord", back_populates="run")


class RoundRecord(Base):
    """Per-round averages and costs"""
    __tablename__ = "round_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, ForeignKey("experiment_runs.run_id"), index=True)
    round = Column(Integer, index=True)
    average_accuracy = Column(Float)
    params_down = Column(BigInteger)
    params_up = Column(BigInteger)
    cumulative_params = Column(BigInteger)
    flops = Column(BigInteger)
    cumulative_flops = Column(BigInteger)
    wall_time = Column(Float)

    # Relationships
    run = relationship("ExperimentRun", back_populates="round_records")


class ClientRoundRecord(Base):
    """One client's accuracy and losses in one round"""
    __tablename__ = "client_round_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, ForeignKey("experiment_runs.run_id"), index=True)
    round = Column(Integer, index=True)
    client = Column(Integer, index=True)
    variant = Column(Integer)
    test_accuracy = Column(Float)
    val_accuracy = Column(Float)
    model_loss = Column(Float, nullable=True)
    extractor_loss = Column(Float, nullable=True)

    # Relationships
    run = relationship("ExperimentRun", back_populates="client_records")
