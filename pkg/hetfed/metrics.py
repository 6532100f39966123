"""
Accuracy evaluation, the communication/computation ledger, convergence
monitoring and report export.

CSV columns, in order: round, average_accuracy, min_accuracy, max_accuracy,
params_down, params_up, cumulative_params, flops, cumulative_flops,
mean_model_loss, mean_enhanced_loss, mean_original_loss, mean_extractor_loss,
then acc_client_<k> for every client. The enhanced and original losses are
the two terms of the client-model objective and stay empty for the baselines.
Wall time is kept out of the CSV so that reruns are byte-identical.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from PIL import Image

from .data import Dataset
from .errors import ArgumentError
from .network import predict
from .schemas import CostToTarget, RoundReport
from .zoo import Model

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "round", "average_accuracy", "min_accuracy", "max_accuracy",
    "params_down", "params_up", "cumulative_params",
    "flops", "cumulative_flops", "mean_model_loss", "mean_enhanced_loss", "mean_original_loss",
    "mean_extractor_loss",
]
EVAL_BATCH = 256


def evaluate(model: Model, indices, dataset: Dataset, enhancer: Optional[Model] = None) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index"""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ArgumentError("cannot evaluate on an empty test set")
    correct = 0
    for start in range(0, indices.size, EVAL_BATCH):
        images, labels = dataset.batch(indices[start:start + EVAL_BATCH])
        if enhancer is not None:
            images = predict(enhancer, images)
        correct += int(np.sum(np.argmax(predict(model, images), axis=1) == labels))
    return correct / indices.size


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    params_down: int
    params_up: int
    flops: int
    cumulative_params: int
    cumulative_flops: int


@dataclass
class CostLedger:
    """Append-only per-round cost record; one writer per run"""

    entries: List[LedgerEntry] = field(default_factory=list)

    def record(self, round_index: int, params_down: int, params_up: int, flops: int) -> LedgerEntry:
        previous = self.entries[-1] if self.entries else None
        entry = LedgerEntry(
            round=round_index,
            params_down=params_down,
            params_up=params_up,
            flops=flops,
            cumulative_params=(previous.cumulative_params if previous else 0) + params_down + params_up,
            cumulative_flops=(previous.cumulative_flops if previous else 0) + flops,
        )
        self.entries.append(entry)
        return entry

    @property
    def total_params(self) -> int:
        return self.entries[-1].cumulative_params if self.entries else 0

    @property
    def total_flops(self) -> int:
        return self.entries[-1].cumulative_flops if self.entries else 0


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def record_round(ledger: CostLedger, round_index: int, selected: Sequence[int],
                 accuracies: Sequence[float], val_accuracies: Sequence[float],
                 model_losses: Sequence[Optional[float]], extractor_losses: Sequence[Optional[float]],
                 params_down: int, params_up: int, flops: int, wall_time: float = 0.0,
                 enhanced_losses: Optional[Sequence[Optional[float]]] = None,
                 original_losses: Optional[Sequence[Optional[float]]] = None) -> RoundReport:
    entry = ledger.record(round_index, params_down, params_up, flops)
    idle = [None] * len(accuracies)
    return RoundReport(
        round=round_index,
        selected=list(selected),
        accuracies=list(accuracies),
        val_accuracies=list(val_accuracies),
        average_accuracy=float(np.mean(accuracies)),
        min_accuracy=float(np.min(accuracies)),
        max_accuracy=float(np.max(accuracies)),
        model_losses=list(model_losses),
        extractor_losses=list(extractor_losses),
        enhanced_losses=list(enhanced_losses) if enhanced_losses is not None else idle,
        original_losses=list(original_losses) if original_losses is not None else idle,
        params_down=entry.params_down,
        params_up=entry.params_up,
        cumulative_params=entry.cumulative_params,
        flops=entry.flops,
        cumulative_flops=entry.cumulative_flops,
        wall_time=wall_time,
    )


def cost_to_target(reports: Sequence[RoundReport], target: float) -> CostToTarget:
    for report in reports:
        if report.average_accuracy >= target:
            return CostToTarget(
                target=target,
                reached=True,
                round=report.round,
                cumulative_params=report.cumulative_params,
                cumulative_flops=report.cumulative_flops,
            )
    return CostToTarget(target=target, reached=False)


@dataclass(frozen=True)
class ConvergenceResult:
    passed: bool
    first_mean: float
    last_mean: float
    slope: float

    @property
    def relative_drop(self) -> float:
        return (self.first_mean - self.last_mean) / self.first_mean if self.first_mean else 0.0


def default_window(rounds: int) -> int:
    return max(3, rounds // 10)


def convergence_check(series: Sequence[float], window: int) -> ConvergenceResult:
    """Passes when the mean of the last ``window`` values is below that of the first"""
    values = np.asarray(series, dtype=np.float64)
    if window < 1 or values.size < 2 * window:
        raise ArgumentError(f"need at least {2 * window} values for window {window}, got {values.size}")
    first = float(values[:window].mean())
    last = float(values[-window:].mean())
    slope = float(np.polyfit(np.arange(values.size), values, 1)[0])
    return ConvergenceResult(last < first, first, last, slope)


def reports_frame(reports: Sequence[RoundReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        row = {
            "round": report.round,
            "average_accuracy": report.average_accuracy,
            "min_accuracy": report.min_accuracy,
            "max_accuracy": report.max_accuracy,
            "params_down": report.params_down,
            "params_up": report.params_up,
            "cumulative_params": report.cumulative_params,
            "flops": report.flops,
            "cumulative_flops": report.cumulative_flops,
            "mean_model_loss": _mean(report.model_losses),
            "mean_enhanced_loss": _mean(report.enhanced_losses),
            "mean_original_loss": _mean(report.original_losses),
            "mean_extractor_loss": _mean(report.extractor_losses),
        }
        row.update({f"acc_client_{k}": acc for k, acc in enumerate(report.accuracies)})
        rows.append(row)
    num_clients = len(reports[0].accuracies) if reports else 0
    return pd.DataFrame(rows, columns=CSV_COLUMNS + [f"acc_client_{k}" for k in range(num_clients)])


def export_csv(reports: Sequence[RoundReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    reports_frame(reports).to_csv(path, index=False)
    logger.info(f"Wrote {len(reports)} round reports to {path}")
    return path


def normalize_image(image: np.ndarray) -> np.ndarray:
    """[C,H,W] float image -> [H,W,3] uint8 after per-image min-max scaling"""
    image = np.asarray(image, dtype=np.float64)
    low, high = image.min(), image.max()
    scaled = (image - low) / (high - low) if high > low else np.zeros_like(image)
    pixels = np.rint(scaled * 255).astype(np.uint8).transpose(1, 2, 0)
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return np.ascontiguousarray(pixels)


def write_ppm(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    Image.fromarray(normalize_image(image)).save(path, format="PPM")
    return path


def read_ppm(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def export_enhanced_images(extractor: Model, samples: np.ndarray, directory: Union[str, Path]) -> List[Path]:
    """Write each sample and its enhanced counterpart as binary PPM files"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    enhanced = predict(extractor, samples)
    written = []
    for i, (original, boosted) in enumerate(zip(samples, enhanced)):
        written.append(write_ppm(original, directory / f"sample_{i}_original.ppm"))
        written.append(write_ppm(boosted, directory / f"sample_{i}_enhanced.ppm"))
    logger.info(f"Wrote {len(written)} images to {directory}")
    return written
