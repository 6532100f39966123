from fastapi import APIRouter, Depends, HTTPException, Query, status
from sqlalchemy.orm import Session
from typing import List

from . import models, schemas, database
from .metrics import cost_to_target

router = APIRouter(prefix="/api")


def get_run_or_404(run_id: str, db: Session) -> models.ExperimentRun:
    db_run = db.query(models.ExperimentRun).filter(models.ExperimentRun.run_id == run_id).first()
    if not db_run:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="Run not found"
        )
    return db_run


# Runs endpoints
@router.get("/runs", response_model=List[schemas.RunResponse])
def list_runs(mode: str = None, db: Session = Depends(database.get_db)):
    """List stored runs, newest first"""
    query = db.query(models.ExperimentRun)
    if mode:
        query = query.filter(models.ExperimentRun.mode == mode)
    return query.order_by(models.ExperimentRun.id.desc()).all()


@router.get("/runs/{run_id}", response_model=schemas.RunResponse)
def get_run(run_id: str, db: Session = Depends(database.get_db)):
    """Get one run"""
    return get_run_or_404(run_id, db)


@router.get("/runs/{run_id}/rounds", response_model=List[schemas.RoundResponse])
def get_rounds(run_id: str, db: Session = Depends(database.get_db)):
    """Per-round averages and costs of a run"""
    return get_run_or_404(run_id, db).round_records


@router.get("/runs/{run_id}/clients", response_model=List[schemas.ClientRoundResponse])
def get_client_rounds(run_id: str, client: int = None, db: Session = Depends(database.get_db)):
    """Per-client records of a run, optionally for one client"""
    get_run_or_404(run_id, db)
    query = db.query(models.ClientRoundRecord).filter(models.ClientRoundRecord.run_id == run_id)
    if client is not None:
        query = query.filter(models.ClientRoundRecord.client == client)
    return query.order_by(models.ClientRoundRecord.round, models.ClientRoundRecord.client).all()


@router.get("/runs/{run_id}/cost", response_model=schemas.CostToTarget)
def get_cost(run_id: str, target: float = Query(0.9, ge=0, le=1), db: Session = Depends(database.get_db)):
    """Rounds, parameters and FLOPs spent until the average accuracy first reaches the target"""
    return cost_to_target(get_run_or_404(run_id, db).round_records, target)
