import json

import numpy as np
import pytest

from protoscope import tensor as T
from protoscope.data import gen_blobs
from protoscope.errors import ConfigurationError, DimensionError, FormatError
from protoscope.network import (
    ConvLayer,
    NetworkSpec,
    build_model,
    extract_features,
    forward_full,
    load_model,
    model_to_dict,
    save_model,
)
from protoscope.trainer import test_accuracy


@pytest.fixture
def model():
    return build_model(NetworkSpec(5, 8, 3, (16, 12), seed=11))


def test_same_seed_same_parameters():
    spec = NetworkSpec(4, 8, 3, (16,), seed=9)
    a, b = build_model(spec), build_model(spec)
    assert a.params.keys() == b.params.keys()
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()


def test_different_seed_differs():
    a = build_model(NetworkSpec(4, 8, 3, (16,), seed=1))
    b = build_model(NetworkSpec(4, 8, 3, (16,), seed=2))
    assert not np.array_equal(a.classifier_weights, b.classifier_weights)


def test_classifier_shape():
    m = build_model(NetworkSpec(2, 8, 2, (16,)))
    assert m.classifier_weights.shape == (2, 8)
    assert m.classifier_bias.shape == (2,)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(input_dim=4, feature_dim=2, num_classes=3),  # q < k
        dict(input_dim=4, feature_dim=8, num_classes=1),
        dict(input_dim=0, feature_dim=8, num_classes=2),
        dict(input_dim=4, feature_dim=8, num_classes=2, hidden=(0,)),
        dict(input_dim=4, feature_dim=8, num_classes=2, hidden=(ConvLayer(2, 3),)),  # no input_shape
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigurationError):
        NetworkSpec(**kwargs)


def test_fresh_model_is_near_chance():
    ds = gen_blobs(2, 250, 4, separation=10, spread=0.5, seed=3)
    accs = [test_accuracy(build_model(NetworkSpec(4, 8, 2, (16,), seed=s)), ds) for s in range(5)]
    # chance is 0.5; a random net may lean to one class, so check the average
    assert abs(np.mean(accs) - 0.5) <= 0.15


def test_features_nonnegative_and_length(model):
    x = np.random.default_rng(0).normal(size=(50, 5)) * 10
    v = extract_features(model, x).data
    assert v.shape == (50, 8)
    assert v.min() >= 0


def test_zero_last_extractor_layer_gives_relu_bias(model):
    m = model.copy()
    m.params["layer2.weight"] = np.zeros_like(m.params["layer2.weight"])
    m.params["layer2.bias"] = np.linspace(-1, 1, 8)
    v = extract_features(m, np.ones(5)).data
    np.testing.assert_array_equal(v, np.maximum(np.linspace(-1, 1, 8), 0))


def test_forward_is_composition(model):
    rng = np.random.default_rng(1)
    for x in rng.normal(size=(20, 5)):
        direct = forward_full(model, x).data
        composed = T.softmax(
            T.affine(extract_features(model, x), model.classifier_weights, model.classifier_bias)
        ).data
        assert direct.tobytes() == composed.tobytes()


def test_forward_outputs_probabilities(model):
    rng = np.random.default_rng(2)
    P = forward_full(model, rng.normal(size=(100, 5))).data
    assert np.all(np.abs(P.sum(axis=1) - 1) <= 1e-12)
    assert set(np.argmax(P, axis=1)) <= {0, 1, 2}


def test_wrong_input_length(model):
    with pytest.raises(DimensionError):
        forward_full(model, np.zeros(4))


def test_save_load_round_trip(model, tmp_path):
    path = tmp_path / "m.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.spec == model.spec
    for name in model.params:
        assert loaded.params[name].tobytes() == model.params[name].tobytes()
    xs = np.random.default_rng(3).normal(size=(100, 5))
    assert forward_full(loaded, xs).data.tobytes() == forward_full(model, xs).data.tobytes()


def test_truncated_file(model, tmp_path):
    path = tmp_path / "m.json"
    save_model(model, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        load_model(path)


def test_wrong_version_and_missing_param(model, tmp_path):
    doc = model_to_dict(model)
    doc["version"] = 2
    path = tmp_path / "v.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="version"):
        load_model(path)

    doc = model_to_dict(model)
    del doc["params"]["classifier.bias"]
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="classifier.bias"):
        load_model(path)

    doc = model_to_dict(model)
    doc["params"]["layer0.weight"] = doc["params"]["layer0.weight"][:-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="layer0.weight"):
        load_model(path)


def test_file_with_q_below_k_is_rejected(model, tmp_path):
    doc = model_to_dict(model)
    doc["spec"]["q"] = 2  # k = 3
    path = tmp_path / "q.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigurationError):
        load_model(path)


def test_conv_model_round_trip_and_shapes(tmp_path):
    spec = NetworkSpec(1 * 6 * 6, 8, 3, (ConvLayer(2, 3, 1), 10), seed=4, input_shape=(1, 6, 6))
    m = build_model(spec)
    assert m.params["layer0.weight"].shape == (2, 9)
    assert m.params["layer1.weight"].shape == (10, 2 * 4 * 4)
    x = np.random.default_rng(5).normal(size=36)
    assert extract_features(m, x).data.min() >= 0
    save_model(m, tmp_path / "c.json")
    loaded = load_model(tmp_path / "c.json")
    assert loaded.spec == spec
    assert forward_full(loaded, x).data.tobytes() == forward_full(m, x).data.tobytes()
