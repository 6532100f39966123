import numpy as np
import pytest

from hetfed.errors import ArgumentError, CodecError, DimensionError
from hetfed.params import ParamEntry, ParamSet, manifest_text
from hetfed.zoo import (
    BYTES_PER_PARAM,
    HEADER_SIZE,
    Conv,
    Linear,
    ModelSpec,
    build_cnn,
    build_extractor,
    count_params,
    deserialize_params,
    estimate_flops,
    init_params,
    model_size_mib,
    serialize_params,
)

# Reference sizes in MiB at 4 bytes per parameter
REFERENCE_MIB = {1: 10.00, 2: 6.92, 3: 5.04, 5: 2.55}
PARAM_COUNTS = {1: 2_621_558, 2: 1_815_142, 3: 1_320_558, 4: 1_060_358, 5: 670_058}


@pytest.mark.parametrize("variant", sorted(PARAM_COUNTS))
def test_param_counts(variant):
    assert count_params(build_cnn(variant, 10, (3, 32, 32))) == PARAM_COUNTS[variant]


@pytest.mark.parametrize("variant", sorted(REFERENCE_MIB))
def test_model_size_matches_reference(variant):
    size = model_size_mib(build_cnn(variant))
    assert abs(size - REFERENCE_MIB[variant]) / REFERENCE_MIB[variant] < 0.01


def test_cnn4_size_follows_its_layers():
    assert count_params(build_cnn(4)) == 1_060_358
    assert model_size_mib(build_cnn(4)) == pytest.approx(4.045, abs=1e-3)


@pytest.mark.parametrize("variant,width", [(1, 800), (2, 400), (3, 800), (4, 800), (5, 800)])
def test_flatten_width(variant, width):
    spec = build_cnn(variant)
    assert spec.shapes[6] == (width // 25, 5, 5)
    assert spec.manifest[4] == ParamEntry("fc1", "weight", (spec.layers[6].out_features, width))


def test_cnn_for_hundred_classes():
    spec = build_cnn(1, 100)
    assert spec.output_shape == (100,)
    assert count_params(spec) == PARAM_COUNTS[1] + 90 * 501


def test_unknown_variant():
    with pytest.raises(ArgumentError):
        build_cnn(6)


def test_mismatched_classifier_width():
    with pytest.raises(DimensionError):
        ModelSpec("bad", (4,), (Linear("fc", 3),), num_classes=10)


def test_extractor_default_size():
    spec = build_extractor((3, 32, 32))
    assert count_params(spec) == 883 == 3 * 3 * 3 * 16 + 16 + 3 * 3 * 16 * 3 + 3


@pytest.mark.parametrize("shape", [(3, 32, 32), (1, 28, 28), (1, 8, 8), (3, 16, 16), (1, 16, 28), (2, 5, 7)])
def test_extractor_preserves_shape(shape):
    assert build_extractor(shape).output_shape == shape


def test_extractor_kernel_and_width_are_configurable():
    spec = build_extractor((1, 16, 16), kernel=5, hidden=8)
    assert count_params(spec) == 25 * 8 + 8 + 25 * 8 + 1


def test_extractor_is_a_small_fraction_of_cnn1():
    assert count_params(build_extractor()) / count_params(build_cnn(1)) < 0.01


def test_empty_spec():
    spec = ModelSpec("empty", (3, 32, 32))
    assert count_params(spec) == 0
    assert estimate_flops(spec) == 0


def test_flops_linear():
    assert estimate_flops(ModelSpec("fc", (800,), (Linear("fc", 500),))) == 800_000


def test_flops_conv():
    spec = ModelSpec("conv", (3, 32, 32), (Conv("conv", 5, 16),))
    assert estimate_flops(spec) == 2 * 25 * 3 * 16 * 28 * 28 == 1_881_600


def test_flops_with_other_input_shape():
    spec = ModelSpec("conv", (3, 32, 32), (Conv("conv", 5, 16),))
    assert estimate_flops(spec, (3, 8, 8)) == 2 * 25 * 3 * 16 * 4 * 4


def test_flops_cnn1_counts_every_layer():
    spec = build_cnn(1)
    expected = (
        2 * 25 * 3 * 16 * 28 * 28 + 16 * 28 * 28 + 16 * 28 * 28
        + 2 * 25 * 16 * 32 * 10 * 10 + 32 * 10 * 10 + 32 * 10 * 10
        + 2 * 800 * 2000 + 2000 + 2 * 2000 * 500 + 500 + 2 * 500 * 10
    )
    assert estimate_flops(spec) == expected


def test_init_is_deterministic():
    spec = build_cnn(5)
    assert init_params(spec, 3) == init_params(spec, 3)
    assert init_params(spec, 3) != init_params(spec, 4)


def test_init_biases_zero():
    params = init_params(build_cnn(2), 0)
    for entry, array in params.items():
        if entry.role == "bias":
            assert not array.any()


def test_init_weight_variance():
    params = init_params(build_cnn(1), 11)
    for layer in ("fc1", "fc2"):
        weight = params.get(layer, "weight")
        expected = 1.0 / (3 * weight.shape[1])
        assert abs(weight.var() - expected) / expected < 0.2
        assert np.abs(weight).max() <= 1.0 / np.sqrt(weight.shape[1])


def test_params_are_read_only():
    params = init_params(build_extractor(), 0)
    with pytest.raises(ValueError):
        params.values[0] = 1.0


def test_payload_size():
    params = init_params(build_cnn(1), 0)
    payload = serialize_params(params)
    assert HEADER_SIZE == 46
    assert len(payload) == HEADER_SIZE + BYTES_PER_PARAM * 2_621_558 == HEADER_SIZE + 10_486_232


def test_payload_round_trip_after_narrowing():
    params = init_params(build_extractor(), 5)
    decoded = deserialize_params(serialize_params(params), params.manifest)
    np.testing.assert_array_equal(decoded.values, params.values.astype(np.float32).astype(np.float64))
    assert serialize_params(decoded) == serialize_params(params)


def test_payload_manifest_mismatch():
    payload = serialize_params(init_params(build_cnn(5), 0))
    with pytest.raises(CodecError):
        deserialize_params(payload, build_cnn(4).manifest)


def test_payload_same_count_other_layout():
    manifest_a = (ParamEntry("a", "weight", (2, 3)),)
    manifest_b = (ParamEntry("a", "weight", (3, 2)),)
    payload = serialize_params(ParamSet(np.arange(6), manifest_a))
    with pytest.raises(CodecError):
        deserialize_params(payload, manifest_b)


@pytest.mark.parametrize("keep", [0, 10, HEADER_SIZE, HEADER_SIZE + 5, -3])
def test_truncated_payload(keep):
    params = init_params(build_extractor(), 0)
    with pytest.raises(CodecError):
        deserialize_params(serialize_params(params)[:keep], params.manifest)


def test_bad_magic():
    params = init_params(build_extractor(), 0)
    with pytest.raises(CodecError):
        deserialize_params(b"XXXX" + serialize_params(params)[4:], params.manifest)


def test_manifest_text():
    spec = build_extractor((1, 8, 8), hidden=4)
    assert manifest_text(spec.manifest) == (
        "conv1/kernel:4x1x3x3;conv1/bias:4;conv2/kernel:1x4x3x3;conv2/bias:1"
    )
