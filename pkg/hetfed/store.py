"""Persist finished runs into the results database."""
import logging
from datetime import datetime
from typing import Optional, Sequence

from sqlalchemy.orm import Session

from . import models
from .errors import ArgumentError
from .schemas import ExperimentConfig, RoundReport

logger = logging.getLogger(__name__)


def save_run(db: Session, run_id: str, config: ExperimentConfig, config_hash: str,
             reports: Sequence[RoundReport], variants: Sequence[int],
             started_at: Optional[datetime] = None) -> models.ExperimentRun:
    """Store one run with every round and per-client record"""
    if db.query(models.ExperimentRun).filter(models.ExperimentRun.run_id == run_id).first():
        raise ArgumentError(f"run {run_id} is already stored")

    db_run = models.ExperimentRun(
        run_id=run_id,
        mode=config.mode.value,
        config_hash=config_hash,
        seed=config.seed,
        num_clients=config.num_clients,
        rounds=config.rounds,
        started_at=started_at or datetime.utcnow(),
        finished_at=datetime.utcnow(),
        final_accuracy=reports[-1].average_accuracy if reports else None,
    )
    db.add(db_run)

    for report in reports:
        db.add(models.RoundRecord(
            run_id=run_id,
            round=report.round,
            average_accuracy=report.average_accuracy,
            params_down=report.params_down,
            params_up=report.params_up,
            cumulative_params=report.cumulative_params,
            flops=report.flops,
            cumulative_flops=report.cumulative_flops,
            wall_time=report.wall_time,
        ))
        for client, accuracy in enumerate(report.accuracies):
            db.add(models.ClientRoundRecord(
                run_id=run_id,
                round=report.round,
                client=client,
                variant=variants[client],
                test_accuracy=accuracy,
                val_accuracy=report.val_accuracies[client],
                model_loss=report.model_losses[client],
                extractor_loss=report.extractor_losses[client],
            ))

    try:
        db.commit()
    except Exception:
        db.rollback()
        raise
    db.refresh(db_run)
    logger.info(f"Stored run {run_id} ({len(reports)} rounds)")
    return db_run
