import pytest

from conftest import synthetic_config
from hetfed.config import build_config, config_hash, emit_config, load_dataset, parse_config, parse_config_text
from hetfed.errors import ConfigError
from hetfed.schemas import DatasetKind, Mode

MINIMAL = """
# smallest useful experiment
mode = pfedes
dataset = synthetic
num_clients = 10
rounds = 20
seed = 1
"""


def test_defaults():
    config = parse_config_text(MINIMAL)
    assert config.mode == Mode.PFEDES and config.dataset == DatasetKind.SYNTHETIC
    assert config.fraction == 1.0 and config.clients_per_round == 10
    assert (config.local_epochs, config.extractor_epochs) == (1, 5)
    assert (config.lr_model, config.lr_extractor, config.mu) == (0.01, 0.01, 0.2)
    assert config.batch_size == 64 and config.classes_per_client == 2
    assert config.synthetic_shape == (1, 16, 16) and config.synthetic_sigma == 0.15
    assert (config.extractor_kernel, config.extractor_channels) == (3, 16)
    assert config.targets == [0.9]


def test_lists_and_comments():
    config = parse_config_text(MINIMAL + "targets = 0.5, 0.8  # two targets\nsynthetic_shape = 3,8,8\n")
    assert config.targets == [0.5, 0.8]
    assert config.synthetic_shape == (3, 8, 8)


@pytest.mark.parametrize("fraction,k", [(0.1, 1), (0.25, 2), (0.04, 1), (1.0, 10)])
def test_clients_per_round(fraction, k):
    assert parse_config_text(MINIMAL + f"fraction = {fraction}\n").clients_per_round == k


@pytest.mark.parametrize("line,key", [
    ("mu = 0.7", "mu"),
    ("mu = 0", "mu"),
    ("fraction = 0", "fraction"),
    ("fraction = 1.5", "fraction"),
    ("lr_model = 0", "lr_model"),
    ("batch_size = 0", "batch_size"),
    ("extractor_kernel = 4", "extractor_kernel"),
    ("classes_per_client = 11", "classes_per_client"),
    ("variants = 7", "variants"),
    ("targets = 1.5", "targets"),
])
def test_out_of_range_values(line, key):
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(MINIMAL + line + "\n")
    assert excinfo.value.key == key


def test_unknown_key():
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(MINIMAL + "momentum = 0.9\n")
    assert excinfo.value.key == "momentum"


def test_duplicate_key():
    with pytest.raises(ConfigError, match="more than once"):
        parse_config_text(MINIMAL + "seed = 2\n")


def test_line_without_assignment():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("mode = pfedes\ndataset = synthetic\nrounds\n")


def test_missing_required_key():
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text("mode = pfedes\ndataset = synthetic\nnum_clients = 2\nrounds = 1\n")
    assert excinfo.value.key == "seed"


def test_cifar_needs_a_path():
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(MINIMAL.replace("synthetic", "cifar10"))
    assert excinfo.value.key == "dataset_path"


def test_fedavg_needs_a_single_variant():
    text = MINIMAL.replace("pfedes", "fedavg")
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(text)
    assert excinfo.value.key == "variants"
    assert parse_config_text(text + "variants = 5\n").variants == "5"


def test_emit_parse_round_trip():
    config = parse_config_text(MINIMAL + "targets = 0.5,0.75\nmu = 0.35\nworkers = 3\n")
    assert parse_config_text(emit_config(config)) == config


def test_emitted_keys_are_sorted():
    keys = [line.split(" = ")[0] for line in emit_config(parse_config_text(MINIMAL)).splitlines()]
    assert keys == sorted(keys)


def test_hash_ignores_workers_and_output_dir():
    base = parse_config_text(MINIMAL)
    assert config_hash(base) == config_hash(build_config({**base.dict(), "workers": 8, "output_dir": "/tmp/x"}))
    assert config_hash(base) != config_hash(build_config({**base.dict(), "seed": 2}))


def test_parse_config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(MINIMAL)
    assert parse_config(path).num_clients == 10


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")


def test_load_synthetic_dataset():
    config = synthetic_config()
    dataset = load_dataset(config)
    assert len(dataset) == 160 and dataset.num_classes == 4
    assert dataset.image_shape == (1, 16, 16)
