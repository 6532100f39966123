from pydantic import BaseModel, Field, validator
from typing import Optional, List, Tuple
from datetime import datetime
from enum import Enum


class Mode(str, Enum):
    PFEDES = "pfedes"
    STANDALONE = "standalone"
    FEDAVG = "fedavg"


class DatasetKind(str, Enum):
    SYNTHETIC = "synthetic"
    CIFAR10 = "cifar10"
    CIFAR100 = "cifar100"
    IDX = "idx"


DATASET_CLASSES = {DatasetKind.CIFAR10: 10, DatasetKind.CIFAR100: 100, DatasetKind.IDX: 10}


# Experiment configuration; field order matters for the cross-field validators
class ExperimentConfig(BaseModel):
    mode: Mode
    dataset: DatasetKind
    dataset_path: str = ""
    idx_images: str = ""
    idx_labels: str = ""
    synthetic_classes: int = Field(10, ge=2)
    synthetic_per_class: int = Field(200, ge=1)
    synthetic_shape: Tuple[int, int, int] = (1, 16, 16)
    synthetic_sigma: float = Field(0.15, ge=0)
    num_clients: int = Field(..., ge=1)
    fraction: float = 1.0
    rounds: int = Field(..., ge=1)
    local_epochs: int = Field(1, ge=1)
    extractor_epochs: int = Field(5, ge=1)
    lr_model: float = 0.01
    lr_extractor: float = 0.01
    mu: float = 0.2
    batch_size: int = Field(64, ge=1)
    classes_per_client: int = Field(2, ge=1)
    variants: str = "uniform"
    extractor_kernel: int = Field(3, ge=1)
    extractor_channels: int = Field(16, ge=1)
    seed: int = Field(..., ge=0)
    targets: List[float] = [0.9]
    workers: int = Field(1, ge=1)
    output_dir: str = "runs"

    class Config:
        extra = "forbid"
        validate_assignment = True

    @validator("dataset_path", always=True)
    def path_for_cifar(cls, v, values):
        if values.get("dataset") in (DatasetKind.CIFAR10, DatasetKind.CIFAR100) and not v:
            raise ValueError("required for CIFAR datasets")
        return v

    @validator("idx_labels", always=True)
    def files_for_idx(cls, v, values):
        if values.get("dataset") == DatasetKind.IDX and not (v and values.get("idx_images")):
            raise ValueError("idx_images and idx_labels are required for IDX datasets")
        return v

    @validator("synthetic_shape")
    def positive_shape(cls, v):
        if any(d < 1 for d in v):
            raise ValueError("dimensions must be positive")
        return v

    @validator("fraction")
    def fraction_range(cls, v):
        if not 0 < v <= 1:
            raise ValueError("must lie in (0, 1]")
        return v

    @validator("lr_model", "lr_extractor")
    def positive_rate(cls, v):
        if v <= 0:
            raise ValueError("learning rates must be positive")
        return v

    @validator("mu")
    def mu_range(cls, v):
        if not 0 < v <= 0.5:
            raise ValueError("must lie in (0, 0.5]")
        return v

    @validator("classes_per_client")
    def classes_fit_dataset(cls, v, values):
        kind = values.get("dataset")
        available = values.get("synthetic_classes") if kind == DatasetKind.SYNTHETIC else DATASET_CLASSES.get(kind)
        if available is not None and v > available:
            raise ValueError(f"cannot exceed the {available} dataset classes")
        return v

    @validator("variants", always=True)
    def variant_rule(cls, v, values):
        if v != "uniform" and v not in {"1", "2", "3", "4", "5"}:
            raise ValueError("must be 'uniform' or a variant id 1..5")
        if v == "uniform" and values.get("mode") == Mode.FEDAVG:
            raise ValueError("fedavg needs every client on the same variant")
        return v

    @validator("extractor_kernel")
    def odd_kernel(cls, v):
        if v % 2 == 0:
            raise ValueError("same padding needs an odd kernel size")
        return v

    @validator("targets", each_item=True)
    def target_range(cls, v):
        if not 0 <= v <= 1:
            raise ValueError("target accuracies must lie in [0, 1]")
        return v

    @property
    def clients_per_round(self) -> int:
        return max(1, int(round(self.fraction * self.num_clients)))


# Round reports
class RoundReport(BaseModel):
    round: int
    selected: List[int]
    accuracies: List[float]
    val_accuracies: List[float]
    average_accuracy: float
    min_accuracy: float
    max_accuracy: float
    model_losses: List[Optional[float]]
    extractor_losses: List[Optional[float]]
    enhanced_losses: List[Optional[float]] = []
    original_losses: List[Optional[float]] = []
    params_down: int
    params_up: int
    cumulative_params: int
    flops: int
    cumulative_flops: int
    wall_time: float = 0.0


class CostToTarget(BaseModel):
    target: float
    reached: bool
    round: Optional[int] = None
    cumulative_params: Optional[int] = None
    cumulative_flops: Optional[int] = None


# Results API schemas
class RunResponse(BaseModel):
    run_id: str
    mode: str
    config_hash: str
    seed: int
    num_clients: int
    rounds: int
    started_at: datetime
    finished_at: Optional[datetime] = None
    final_accuracy: Optional[float] = None

    class Config:
        orm_mode = True


class RoundResponse(BaseModel):
    round: int
    average_accuracy: float
    params_down: int
    params_up: int
    cumulative_params: int
    flops: int
    cumulative_flops: int
    wall_time: float

    class Config:
        orm_mode = True


class ClientRoundResponse(BaseModel):
    round: int
    client: int
    variant: int
    test_accuracy: float
    val_accuracy: float
    model_loss: Optional[float] = None
    extractor_loss: Optional[float] = None

    class Config:
        orm_mode = True
