"""
Command-line entry point.

    python -m hetfed run --config exp.cfg [--seed 3] [--out runs] [--workers 4] [--store]
    python -m hetfed partition --config exp.cfg [--out runs]
    python -m hetfed export-enhanced --config exp.cfg --payload extractor.bin [--samples 5]
    python -m hetfed serve [--host 0.0.0.0] [--port 8000]
"""
import argparse
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from . import seeding
from .config import LOG_LEVEL, build_config, config_hash, emit_config, load_dataset, parse_config
from .data import audit_partitions
from .errors import ConfigError, HetfedError
from .metrics import convergence_check, cost_to_target, default_window, export_csv, export_enhanced_images
from .protocol import TrainingResult, make_partitions, run_training
from .schemas import ExperimentConfig
from .zoo import Model, build_extractor, deserialize_params, serialize_params

logger = logging.getLogger("hetfed")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = parse_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if overrides:
        config = build_config({**config.dict(), **overrides})
    return config


def run_directory(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / f"{config.mode.value}-{config_hash(config)[:12]}"


def write_artifacts(config: ExperimentConfig, result: TrainingResult, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    export_csv(result.reports, directory / "rounds.csv")
    if result.extractor is not None:
        (directory / "extractor.bin").write_bytes(serialize_params(result.extractor))
    for client in result.clients:
        (directory / f"client_{client.client}.bin").write_bytes(serialize_params(client.model.params))

    manifest = {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "mode": config.mode.value,
        "variants": [c.variant for c in result.clients],
        "config": emit_config(config, include_non_semantic=False),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    window = default_window(config.rounds)
    convergence = {}
    for client in result.clients:
        series = result.model_loss_series(client.client)
        if len(series) >= 2 * window:
            check = convergence_check(series, window)
            convergence[str(client.client)] = {
                "passed": check.passed,
                "first_mean": check.first_mean,
                "last_mean": check.last_mean,
                "slope": check.slope,
            }
    summary = {
        "final_average_accuracy": result.reports[-1].average_accuracy,
        "total_params": result.ledger.total_params,
        "total_flops": result.ledger.total_flops,
        "targets": [cost_to_target(result.reports, t).dict() for t in config.targets],
        "convergence_window": window,
        "convergence": convergence,
    }
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_run(config: ExperimentConfig, store: bool = False) -> Path:
    started_at = datetime.utcnow()
    dataset = load_dataset(config)
    result = run_training(config.mode, config, dataset, workers=config.workers)
    directory = run_directory(config)
    write_artifacts(config, result, directory)
    for target in config.targets:
        cost = cost_to_target(result.reports, target)
        if not cost.reached:
            logger.warning(f"Target accuracy {target} not reached in {config.rounds} rounds")
    if store:
        from .database import create_tables, session_scope
        from .store import save_run

        create_tables()
        with session_scope() as db:
            save_run(db, f"{directory.name}-{started_at:%Y%m%d%H%M%S}", config, config_hash(config),
                     result.reports, [c.variant for c in result.clients], started_at)
    logger.info(f"Run artifacts written to {directory}")
    return directory


def cmd_partition(config: ExperimentConfig) -> List[str]:
    dataset = load_dataset(config)
    partitions = make_partitions(config, dataset)
    rows = []
    for part in partitions:
        for split, indices in (("train", part.train), ("val", part.val), ("test", part.test)):
            classes, counts = np.unique(dataset.labels[indices], return_counts=True)
            rows.extend(
                {"client": part.client, "split": split, "class": int(c), "count": int(n)}
                for c, n in zip(classes, counts)
            )
    directory = Path(config.output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=["client", "split", "class", "count"]).to_csv(directory / "partition.csv", index=False)

    problems = audit_partitions(dataset, partitions, config.classes_per_client)
    total = sum(p.num_samples for p in partitions)
    for problem in problems:
        logger.error(problem)
    logger.info(
        f"Partitioned {total} of {len(dataset)} samples over {len(partitions)} clients; "
        f"audit {'passed' if not problems else 'failed'}"
    )
    return problems


def cmd_export_enhanced(config: ExperimentConfig, payload: Path, samples: int) -> List[Path]:
    dataset = load_dataset(config)
    spec = build_extractor(dataset.image_shape, config.extractor_kernel, config.extractor_channels)
    extractor = Model(spec, deserialize_params(Path(payload).read_bytes(), spec.manifest))
    rng = seeding.derive_rng(config.seed, seeding.EXPORT)
    chosen = np.sort(rng.choice(len(dataset), size=min(samples, len(dataset)), replace=False))
    images, _ = dataset.batch(chosen)
    return export_enhanced_images(extractor, images, Path(config.output_dir) / "enhanced")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetfed", description="Heterogeneous personalized FL simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and write reports and final parameters")
    partition = sub.add_parser("partition", help="write the per-client partition audit")
    export = sub.add_parser("export-enhanced", help="write original/enhanced sample images")
    for p in (run, partition, export):
        p.add_argument("--config", required=True, help="flat key = value experiment file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
    run.add_argument("--workers", type=int, help="parallel client workers")
    run.add_argument("--store", action="store_true", help="also save the run to DATABASE_URL")
    export.add_argument("--payload", required=True, help="serialized extractor parameters")
    export.add_argument("--samples", type=int, default=5)

    serve = sub.add_parser("serve", help="serve stored runs over HTTP")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            import uvicorn

            uvicorn.run("hetfed.main:app", host=args.host, port=args.port)
            return 0
        config = load_config(args)
        if args.command == "run":
            cmd_run(config, store=args.store)
            return 0
        if args.command == "partition":
            return 1 if cmd_partition(config) else 0
        cmd_export_enhanced(config, Path(args.payload), args.samples)
        return 0
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except (HetfedError, OSError) as e:
        logger.error(str(e))
        return 1
