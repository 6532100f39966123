import json

import pandas as pd
import pytest

from hetfed.cli import main
from hetfed.config import load_dataset, parse_config
from hetfed.protocol import make_partitions

CONFIG = """
mode = {mode}
dataset = synthetic
synthetic_classes = 4
synthetic_per_class = 30
synthetic_shape = 1,16,16
synthetic_sigma = 0.1
num_clients = 3
rounds = 2
extractor_epochs = 1
batch_size = 16
variants = {variants}
seed = 5
targets = 0.0, 1.0
output_dir = {out}
"""


@pytest.fixture
def config_file(tmp_path):
    def write(mode="pfedes", variants="uniform", name="exp.cfg"):
        path = tmp_path / name
        path.write_text(CONFIG.format(mode=mode, variants=variants, out=tmp_path / "runs"))
        return path
    return write


def artifacts(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def only_run(tmp_path):
    (directory,) = (tmp_path / "runs").iterdir()
    return directory


def test_run_writes_artifacts(tmp_path, config_file):
    assert main(["run", "--config", str(config_file())]) == 0
    directory = only_run(tmp_path)
    assert directory.name.startswith("pfedes-")
    names = set(artifacts(directory))
    assert {"rounds.csv", "extractor.bin", "manifest.json", "summary.json"} <= names
    assert {f"client_{k}.bin" for k in range(3)} <= names
    assert len(pd.read_csv(directory / "rounds.csv")) == 2

    manifest = json.loads((directory / "manifest.json").read_text())
    assert manifest["seed"] == 5 and len(manifest["variants"]) == 3
    summary = json.loads((directory / "summary.json").read_text())
    reached = {t["target"]: t["reached"] for t in summary["targets"]}
    assert reached[0.0] is True and set(reached) == {0.0, 1.0}


def test_rerun_is_byte_identical_across_worker_counts(tmp_path, config_file):
    path = str(config_file())
    assert main(["run", "--config", path, "--workers", "1"]) == 0
    first = artifacts(only_run(tmp_path))
    assert main(["run", "--config", path, "--workers", "4"]) == 0
    second = artifacts(only_run(tmp_path))
    assert first == second


def test_seed_override_changes_the_run(tmp_path, config_file):
    path = str(config_file())
    main(["run", "--config", path])
    main(["run", "--config", path, "--seed", "6"])
    assert len(list((tmp_path / "runs").iterdir())) == 2


def test_standalone_run_has_no_extractor(tmp_path, config_file):
    assert main(["run", "--config", str(config_file(mode="standalone"))]) == 0
    directory = only_run(tmp_path)
    assert not (directory / "extractor.bin").exists()
    frame = pd.read_csv(directory / "rounds.csv")
    assert frame["cumulative_params"].tolist() == [0, 0]


def test_partition_writes_audit(tmp_path, config_file):
    path = config_file()
    assert main(["partition", "--config", str(path)]) == 0
    frame = pd.read_csv(tmp_path / "runs" / "partition.csv")
    assert list(frame.columns) == ["client", "split", "class", "count"]
    assert frame["count"].sum() == 120
    per_client = frame.groupby("client")["class"].nunique()
    assert (per_client == 2).all()


def test_export_enhanced(tmp_path, config_file):
    path = config_file()
    main(["run", "--config", str(path)])
    payload = only_run(tmp_path) / "extractor.bin"
    assert main(["export-enhanced", "--config", str(path), "--payload", str(payload), "--samples", "3"]) == 0
    images = sorted((tmp_path / "runs" / "enhanced").iterdir())
    assert len(images) == 6


def test_export_rejects_foreign_payload(tmp_path, config_file):
    path = config_file()
    main(["run", "--config", str(path)])
    payload = only_run(tmp_path) / "client_0.bin"
    assert main(["export-enhanced", "--config", str(path), "--payload", str(payload)]) == 1


def test_config_error_exit_code(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("mode = pfedes\ndataset = synthetic\nnum_clients = 2\nrounds = 1\nseed = 0\nmu = 0.9\n")
    assert main(["run", "--config", str(path)]) == 2


def test_missing_config_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_fedavg_with_uniform_variants_is_a_config_error(config_file):
    assert main(["run", "--config", str(config_file(mode="fedavg"))]) == 2


def test_partition_matches_protocol_partition(config_file):
    config = parse_config(config_file())
    parts = make_partitions(config, load_dataset(config))
    assert sum(p.num_samples for p in parts) == 120
